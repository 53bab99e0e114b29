"""Bootstrap random forests as uniform convex combinations of trees."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed

from .dataio import Dataset
from .tree import DecisionTree, GrowConfig, grow_tree


class ForestError(ValueError):
    pass


@dataclass(frozen=True)
class ForestConfig:
    M: int = 256
    grow: GrowConfig = field(default_factory=GrowConfig)
    bootstrap: bool = True
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        if self.M < 1:
            raise ForestError("M must be >= 1")


class Forest:
    def __init__(self, trees, weights=None):
        trees = list(trees)
        if not trees:
            raise ForestError("a forest needs at least one tree")
        if weights is None:
            weights = np.full(len(trees), 1.0 / len(trees))
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (len(trees),):
            raise ForestError("one weight per tree")
        if np.any(weights < 0) or np.any(weights > 1) or abs(weights.sum() - 1.0) > 1e-12:
            raise ForestError("weights must lie in [0, 1] and sum to 1")
        if len({(t.n_features, t.n_classes) for t in trees}) != 1:
            raise ForestError("trees disagree on feature or class count")
        self.trees = trees
        self.weights = weights

    @property
    def M(self) -> int:
        return len(self.trees)

    @property
    def n_features(self) -> int:
        return self.trees[0].n_features

    @property
    def n_classes(self) -> int:
        return self.trees[0].n_classes

    @property
    def uniform(self) -> bool:
        return bool(np.allclose(self.weights, 1.0 / self.M, rtol=0, atol=1e-15))

    def member_outputs(self, X) -> np.ndarray:
        """M x N x C stack of member predictions."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return np.stack([t.predict_proba(X) for t in self.trees])

    def predict_proba(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        if np.atleast_2d(X).shape[1] != self.n_features:
            raise ForestError(f"expected {self.n_features} features")
        out = np.tensordot(self.weights, self.member_outputs(X), axes=1)
        return out[0] if single else out

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=-1)

    def copy(self) -> "Forest":
        return Forest([t.copy() for t in self.trees], self.weights.copy())

    def truncate(self, max_leaf_nodes: int) -> "Forest":
        return Forest([t.truncate(max_leaf_nodes) for t in self.trees], self.weights.copy())

    def to_json(self) -> str:
        return json.dumps({"weights": self.weights.tolist(),
                           "trees": [t.to_dict() for t in self.trees]})

    @classmethod
    def from_json(cls, text: str) -> "Forest":
        doc = json.loads(text)
        return cls([DecisionTree.from_dict(t) for t in doc["trees"]], doc["weights"])

    def __repr__(self):
        return f"Forest(M={self.M}, avg_leaves={np.mean([t.n_leaves for t in self.trees]):.1f})"


def default_feature_budget(d: int) -> int:
    return max(1, math.ceil(math.sqrt(d)))


def bootstrap_sample(n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1:
        raise ForestError("bootstrap of an empty set")
    return rng.integers(0, n, size=n)


def _tree_stream(seed: int, i: int) -> np.random.Generator:
    # spawn_key pins the stream to the tree index, not to scheduling order
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))


def _train_member(ds, sample, cfg: ForestConfig, i: int) -> DecisionTree:
    rng = _tree_stream(cfg.seed, i)
    if cfg.bootstrap:
        sample = sample[bootstrap_sample(sample.size, rng)]
    tree_seed = int(rng.integers(0, 2**32))
    return grow_tree(ds, sample, replace(cfg.grow, seed=tree_seed))


def train_rf(ds: Dataset, sample, cfg: ForestConfig) -> Forest:
    """Grow ``cfg.M`` trees on bootstrap draws of ``sample`` with weights 1/M.

    ``cfg.grow.feature_sample_size`` of None means ceil(sqrt(d)) here; pass
    ``ds.d`` explicitly for a plain bagged ensemble.
    """
    sample = np.asarray(sample, dtype=np.int64)
    if sample.size == 0:
        raise ForestError("cannot train on an empty sample")
    if cfg.grow.feature_sample_size is None:
        cfg = replace(cfg, grow=replace(cfg.grow, feature_sample_size=default_feature_budget(ds.d)))
    if cfg.n_jobs == 1:
        trees = [_train_member(ds, sample, cfg, i) for i in range(cfg.M)]
    else:
        trees = Parallel(n_jobs=cfg.n_jobs)(
            delayed(_train_member)(ds, sample, cfg, i) for i in range(cfg.M))
    return Forest(trees)


def binary_score(model, X):
    """p(class 1) - p(class 0), clipped to [-1, 1] for refined (unconstrained) leaves."""
    p = model.predict_proba(X)
    if p.shape[-1] != 2:
        raise ForestError("binary_score needs exactly two classes")
    return np.clip(p[..., 1] - p[..., 0], -1.0, 1.0)


def zero_one_error(model, ds: Dataset, idx=None) -> float:
    """Argmax 0-1 error; np.argmax breaks ties toward the lower class."""
    X, labels = (ds.X, ds.labels) if idx is None else (ds.X[idx], ds.labels[idx])
    return float(np.mean(model.predict(X) != labels))
