"""Capacity and diversity measures for trees and forests."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataio import Dataset


class ComplexityError(ValueError):
    pass


def asymptotic_rademacher(n_nodes: int, d_used: int, N: int) -> float:
    """sqrt(2 n ln(n + d) / N), natural log."""
    if N <= 0:
        raise ComplexityError("N must be positive")
    if n_nodes < 1 or d_used < 1:
        raise ComplexityError("n_nodes and d_used must be >= 1")
    return math.sqrt(2.0 * n_nodes * math.log(n_nodes + d_used) / N)


def mansour_vc_bound(n_nodes: int, d: int) -> float:
    """(2n + 1) log2(d + 1) for a tree with n nodes over d binary features."""
    if n_nodes < 1 or d < 1:
        raise ComplexityError("n_nodes and d must be >= 1")
    return (2 * n_nodes + 1) * math.log2(d + 1)


def vc_to_rademacher(D: float, N: int) -> float:
    if D < 0 or N < 1:
        raise ComplexityError("need D >= 0 and N >= 1")
    return math.sqrt(2.0 * D / N)


@dataclass
class ComplexityReport:
    per_tree: list[dict]
    ensemble_rademacher: float
    avg_height: float
    N: int
    node_count_convention: str = "all_nodes"
    log_base: str = "e"

    @property
    def avg_nodes(self) -> float:
        return float(np.mean([t["n_nodes"] for t in self.per_tree]))

    def margin_complexity_term(self, rho: float) -> float:
        """(4 / rho) * sum_i w_i R(h_i), the capacity term of the convex-combination bound."""
        if rho <= 0:
            raise ComplexityError("rho must be positive")
        return 4.0 / rho * self.ensemble_rademacher

    def to_dict(self) -> dict:
        return asdict(self)


def ensemble_rademacher(model, N: int) -> ComplexityReport:
    """Weighted average of per-tree asymptotic Rademacher values.

    ``model`` is a Forest or a single DecisionTree (weight 1).
    """
    trees = getattr(model, "trees", None) or [model]
    weights = getattr(model, "weights", np.ones(1))
    per_tree = [{"n_nodes": t.n_nodes, "height": t.height,
                 "rademacher": asymptotic_rademacher(t.n_nodes, t.d_used, N)} for t in trees]
    value = float(sum(w * p["rademacher"] for w, p in zip(weights, per_tree)))
    avg_height = float(np.dot(weights, [t.height for t in trees]))
    return ComplexityReport(per_tree, value, avg_height, int(N))


def margin_loss(scores, y, rho: float) -> float:
    """Fraction of points with margin y * f(x) <= rho."""
    scores = np.asarray(scores, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if scores.size == 0:
        raise ComplexityError("margin loss of an empty sample")
    if scores.shape != y.shape:
        raise ComplexityError("scores and labels differ in shape")
    return float(np.mean(y * scores <= rho))


@dataclass
class DiversityReport:
    avg_member_mse: float
    diversity: float
    ensemble_mse: float
    avg_member_01: float = float("nan")
    cbound: float = float("nan")
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def decompose(outputs, Y) -> tuple[float, float, float]:
    """(avg member MSE, diversity, ensemble MSE) for an M x N x C output stack.

    Squared errors sum over the C output coordinates and average over points.
    """
    H = np.asarray(outputs, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if H.ndim == 2:
        H = H[:, :, None]
        Y = Y[:, None] if Y.ndim == 1 else Y
    f = H.mean(axis=0)
    member = np.mean(np.sum((H - Y) ** 2, axis=2))
    diversity = np.mean(np.sum((H - f) ** 2, axis=2))
    ensemble = np.mean(np.sum((f - Y) ** 2, axis=1))
    return float(member), float(diversity), float(ensemble)


def ambiguity_decomposition(forest, ds: Dataset, idx=None) -> DiversityReport:
    if not forest.uniform:
        raise ComplexityError("the ambiguity decomposition needs uniform weights")
    idx = np.arange(ds.N) if idx is None else np.asarray(idx)
    return DiversityReport(*decompose(forest.member_outputs(ds.X[idx]), ds.Y[idx]))


def avg_member_error(forest, ds: Dataset, idx=None) -> float:
    idx = np.arange(ds.N) if idx is None else np.asarray(idx)
    H = forest.member_outputs(ds.X[idx])
    return float(np.mean(np.argmax(H, axis=2) != ds.labels[idx][None, :]))


def cbound_estimate(avg_member_01: float, covariance: float) -> float:
    """1 - max(0, avg member 0-1 loss)^2 / min(1, covariance), sample-size terms dropped.

    The numerator is the average member 0-1 loss rather than the first margin
    moment used by the classical C-bound.
    """
    if not (math.isfinite(avg_member_01) and math.isfinite(covariance)):
        raise ComplexityError("inputs must be finite")
    if covariance <= 0:
        raise ComplexityError("C-bound undefined for non-positive covariance")
    return 1.0 - max(0.0, avg_member_01) ** 2 / min(1.0, covariance)
