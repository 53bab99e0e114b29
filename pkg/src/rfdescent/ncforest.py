"""Negative Correlation Forest: gradient refinement of leaf predictions.

Split structure stays fixed; only the leaf vectors of every tree are trained
on the negative correlation objective

    l_lambda = 1/M sum_i ||h_i - y||^2 - lambda/(2M) sum_i d_i^T D d_i,
    d_i = h_i - f,  D = 2 I,

so lambda = 0 trains the members independently, lambda = 1 trains only the
ensemble output and lambda > 1 rewards disagreement.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .complexity import (DiversityReport, avg_member_error, cbound_estimate,
                         decompose)
from .dataio import Dataset
from .forest import Forest


class NclError(ValueError):
    pass


@dataclass(frozen=True)
class NclConfig:
    lam: float = 0.0
    step_size: float = 1e-3
    batch_size: int = 64
    epochs: int = 50
    optimizer: str = "adam"
    betas: tuple[float, float] = (0.9, 0.999)
    eps_hat: float = 1e-8
    seed: int = 0
    # scale leaf gradients by an extra w_i = 1/M (per-leaf weighted form)
    literal_weight_factor: bool = False

    def __post_init__(self):
        if self.step_size <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise NclError("need step_size > 0, batch_size >= 1 and epochs >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise NclError(f"unknown optimizer {self.optimizer!r}")


def d_matrix(C: int) -> np.ndarray:
    return 2.0 * np.eye(C)


def ncl_loss(member_outputs, y, lam: float) -> float:
    """NCL objective of one point for an M x C stack of member outputs (M-vector when C = 1)."""
    H = np.asarray(member_outputs, dtype=np.float64)
    if H.ndim == 1:
        H = H[:, None]
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if H.shape[0] == 0:
        raise NclError("empty ensemble")
    if H.shape[1] != y.shape[0]:
        raise NclError("member outputs and target differ in length")
    M = H.shape[0]
    f = H.mean(axis=0)
    D = d_matrix(y.shape[0])
    dev = H - f
    penalty = np.einsum("ic,cd,id->", dev, D, dev)
    return float(np.sum((H - y) ** 2) / M - lam / (2 * M) * penalty)


def ncl_loss_batch(outputs, Y, lam: float) -> float:
    """Mean NCL objective over points for an M x N x C output stack."""
    H = np.asarray(outputs, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    f = H.mean(axis=0)
    member = np.sum((H - Y) ** 2, axis=2).mean(axis=0)
    spread = np.sum((H - f) ** 2, axis=2).mean(axis=0)
    return float(np.mean(member - lam * spread))


def ncl_member_gradient(h, f, y, lam: float, M: int) -> np.ndarray:
    """Total derivative of the objective w.r.t. member output h_i (uniform weights)."""
    h, f, y = (np.asarray(a, dtype=np.float64) for a in (h, f, y))
    return 2.0 / M * ((h - y) - lam * (h - f))


# -- leaf parameters ----------------------------------------------------------

def get_leaf_params(forest: Forest) -> list[np.ndarray]:
    return [t.leaf_values for t in forest.trees]


def set_leaf_params(forest: Forest, params) -> None:
    for t, p in zip(forest.trees, params, strict=True):
        t.set_leaf_values(p)


class _Routing:
    """Leaf ids of every (point, tree) pair flattened into one parameter table."""

    def __init__(self, forest: Forest, X):
        sizes = np.array([t.n_leaves for t in forest.trees])
        self.offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        self.sizes = sizes
        self.n_params = int(sizes.sum())
        self.slots = np.stack([t.leaf_index(X) for t in forest.trees], axis=1) + self.offsets

    def split(self, flat) -> list[np.ndarray]:
        return [flat[o:o + s].copy() for o, s in zip(self.offsets, self.sizes)]


@numba.njit(cache=True)
def _flat_gradient(beta, slots, Y, lam, M, weight_factor):
    """Mean over the batch of per-point member gradients, scattered to leaves."""
    B = slots.shape[0]
    C = beta.shape[1]
    grad = np.zeros_like(beta)
    f = np.empty(C)
    scale = 2.0 / M / B * weight_factor
    for b in range(B):
        f[:] = 0.0
        for i in range(M):
            for c in range(C):
                f[c] += beta[slots[b, i], c]
        f /= M
        for i in range(M):
            s = slots[b, i]
            for c in range(C):
                h = beta[s, c]
                grad[s, c] += scale * ((h - Y[b, c]) - lam * (h - f[c]))
    return grad


@numba.njit(cache=True)
def _adam_step(beta, grad, m, v, t, lr, b1, b2, eps):
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p in range(beta.shape[0]):
        for c in range(beta.shape[1]):
            g = grad[p, c]
            m[p, c] = b1 * m[p, c] + (1.0 - b1) * g
            v[p, c] = b2 * v[p, c] + (1.0 - b2) * g * g
            beta[p, c] -= lr * (m[p, c] / c1) / (np.sqrt(v[p, c] / c2) + eps)


@numba.njit(cache=True)
def _routed_decomposition(beta, slots, Y):
    N, M = slots.shape
    C = beta.shape[1]
    member = 0.0
    spread = 0.0
    ensemble = 0.0
    f = np.empty(C)
    for n in range(N):
        f[:] = 0.0
        for i in range(M):
            for c in range(C):
                f[c] += beta[slots[n, i], c]
        f /= M
        for i in range(M):
            for c in range(C):
                h = beta[slots[n, i], c]
                member += (h - Y[n, c]) ** 2
                spread += (h - f[c]) ** 2
        for c in range(C):
            ensemble += (f[c] - Y[n, c]) ** 2
    return member / (N * M), spread / (N * M), ensemble / N


def leaf_gradient(forest: Forest, X, Y, lam: float, literal_weight_factor: bool = False):
    """Gradient of the batch-mean objective w.r.t. every leaf vector, per tree."""
    if not forest.uniform:
        raise NclError("leaf refinement assumes uniform weights")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if X.shape[0] == 0:
        raise NclError("empty batch")
    routing = _Routing(forest, X)
    beta = np.vstack(get_leaf_params(forest))
    wf = 1.0 / forest.M if literal_weight_factor else 1.0
    return routing.split(_flat_gradient(beta, routing.slots, Y, float(lam), forest.M, wf))


class _Adam:
    def __init__(self, shape, lr, betas, eps):
        self.lr, (self.b1, self.b2), self.eps = lr, betas, eps
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, beta, grad):
        self.t += 1
        _adam_step(beta, grad, self.m, self.v, self.t, self.lr, self.b1, self.b2, self.eps)


class _Sgd:
    def __init__(self, lr):
        self.lr = lr

    def step(self, beta, grad):
        beta -= self.lr * grad


@dataclass
class RefineResult:
    forest: Forest
    trace: list[dict] = field(default_factory=list)


def _trace_row(epoch, lam, beta, slots, Y):
    member, diversity, ensemble = _routed_decomposition(beta, slots, Y)
    return {"epoch": epoch, "lambda": float(lam), "ncl_loss": member - lam * diversity,
            "avg_member_mse": member, "diversity": diversity, "ensemble_mse": ensemble}


def refine(forest: Forest, ds: Dataset, idx, cfg: NclConfig, inplace: bool = False) -> RefineResult:
    """Mini-batch descent on the leaf vectors; returns the refined forest and a per-epoch trace.

    The trace's first row (epoch 0) describes the starting forest.
    """
    if not forest.uniform:
        raise NclError("leaf refinement assumes uniform weights")
    target = forest if inplace else forest.copy()
    idx = np.asarray(idx, dtype=np.int64)
    X, Y = ds.X[idx], ds.Y[idx]
    routing = _Routing(target, X)
    beta = np.vstack(get_leaf_params(target))
    M = target.M
    wf = 1.0 / M if cfg.literal_weight_factor else 1.0
    lam = float(cfg.lam)
    if cfg.optimizer == "adam":
        opt = _Adam(beta.shape, cfg.step_size, cfg.betas, cfg.eps_hat)
    else:
        opt = _Sgd(cfg.step_size)
    rng = np.random.default_rng(cfg.seed)
    trace = [_trace_row(0, cfg.lam, beta, routing.slots, Y)]
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(idx.size)
        for s in range(0, idx.size, cfg.batch_size):
            b = order[s:s + cfg.batch_size]
            opt.step(beta, _flat_gradient(beta, routing.slots[b], Y[b], lam, M, wf))
        trace.append(_trace_row(epoch, cfg.lam, beta, routing.slots, Y))
    set_leaf_params(target, routing.split(beta))
    return RefineResult(target, trace)


def diversity_report(forest: Forest, ds: Dataset, idx=None, lam: float | None = None) -> DiversityReport:
    idx = np.arange(ds.N) if idx is None else np.asarray(idx)
    if not forest.uniform:
        raise NclError("diversity decomposition assumes uniform weights")
    member, diversity, ensemble = decompose(forest.member_outputs(ds.X[idx]), ds.Y[idx])
    member01 = avg_member_error(forest, ds, idx)
    # a forest of identical trees has no covariance and the bound is undefined
    cb = cbound_estimate(member01, diversity) if diversity > 0 else float("nan")
    meta = {} if lam is None else {"lambda": float(lam)}
    return DiversityReport(member, diversity, ensemble, member01, cb, meta)
