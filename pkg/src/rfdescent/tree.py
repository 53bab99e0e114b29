"""Axis-aligned CART trees grown best-first under a leaf budget.

Growth happens in a single numba kernel. Every node draws its feature subset
and evaluates its best split when it is created, and the frontier is expanded
in order of weighted gini decrease (``n_node * decrease``), ties going to the
older node. Because the random stream is consumed in creation order, a tree
grown with budget ``b`` is exactly the first ``b - 1`` expansions of the same
tree grown with any larger budget; :meth:`DecisionTree.truncate` relies on it.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass

import numba
import numpy as np

from .dataio import Dataset

LEAF = -1
_MIN_GAIN = 1e-12


class TreeError(ValueError):
    pass


@dataclass(frozen=True)
class Split:
    feature: int
    threshold: float


@dataclass(frozen=True)
class GrowConfig:
    max_leaf_nodes: int = 2**30
    feature_sample_size: int | None = None  # None: all features
    min_samples_leaf: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.max_leaf_nodes < 1:
            raise TreeError("max_leaf_nodes must be >= 1")
        if self.feature_sample_size is not None and self.feature_sample_size < 1:
            raise TreeError("feature_sample_size must be >= 1")
        if self.min_samples_leaf < 1:
            raise TreeError("min_samples_leaf must be >= 1")


def gini(counts) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    if counts.size == 0 or counts.sum() <= 0:
        raise TreeError("gini of an empty node")
    p = counts / counts.sum()
    return float(1.0 - np.sum(p * p))


# -- kernels ----------------------------------------------------------------

@numba.njit(cache=True)
def _split_node(X, y, C, idx, start, end, feats, min_leaf):
    """Best (feature, threshold, decrease) over ``feats`` for ``idx[start:end]``."""
    n = end - start
    total = np.zeros(C)
    for i in range(start, end):
        total[y[idx[i]]] += 1.0
    sq = 0.0
    for c in range(C):
        sq += total[c] * total[c]
    parent = 1.0 - sq / (n * n)

    best_f = -1
    best_t = 0.0
    best_gain = 0.0
    vals = np.empty(n)
    labs = np.empty(n, dtype=np.int64)
    left = np.zeros(C)
    for f in feats:
        for i in range(n):
            vals[i] = X[idx[start + i], f]
        order = np.argsort(vals, kind="mergesort")
        if vals[order[0]] == vals[order[n - 1]]:
            continue
        for i in range(n):
            labs[i] = y[idx[start + order[i]]]
        left[:] = 0.0
        lsq = 0.0
        rsq = sq
        for i in range(n - 1):
            c = labs[i]
            lsq += 2.0 * left[c] + 1.0
            rsq -= 2.0 * (total[c] - left[c]) - 1.0
            left[c] += 1.0
            nl = i + 1
            nr = n - nl
            if nl < min_leaf or nr < min_leaf:
                continue
            a = vals[order[i]]
            b = vals[order[i + 1]]
            if a == b:
                continue
            # weighted child gini = (nl*gl + nr*gr)/n
            child = (nl - lsq / nl + nr - rsq / nr) / n
            gain = parent - child
            if gain > best_gain + _MIN_GAIN:
                t = 0.5 * (a + b)
                if t >= b:
                    t = a
                best_f = f
                best_t = t
                best_gain = gain
    return best_f, best_t, best_gain


@numba.njit(cache=True)
def _sample_features(d, k):
    perm = np.arange(d)
    if k >= d:
        return perm
    for i in range(k):
        j = i + np.random.randint(d - i)
        tmp = perm[i]
        perm[i] = perm[j]
        perm[j] = tmp
    return perm[:k].copy()


@numba.njit(cache=True)
def _grow(X, y, C, sample, max_leaves, k_feat, min_leaf, seed):
    np.random.seed(seed)
    n = sample.shape[0]
    d = X.shape[1]
    cap = 2 * min(max_leaves, n) - 1
    idx = sample.copy()
    start = np.zeros(cap, dtype=np.int64)
    end = np.zeros(cap, dtype=np.int64)
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    counts = np.zeros((cap, C))
    cand_f = np.full(cap, -1, dtype=np.int64)
    cand_t = np.zeros(cap)
    cand_g = np.zeros(cap)
    rank = np.full(cap, -1, dtype=np.int64)

    heap = [(0.0, np.int64(0))]
    heap.pop()
    n_nodes = 0
    n_leaves = 0
    # node 0 and every child pair are created by the same code path
    pending_s = np.array([0], dtype=np.int64)
    pending_e = np.array([n], dtype=np.int64)
    expanded = 0
    while True:
        for p in range(pending_s.shape[0]):
            node = n_nodes
            n_nodes += 1
            n_leaves += 1
            s = pending_s[p]
            e = pending_e[p]
            start[node] = s
            end[node] = e
            for i in range(s, e):
                counts[node, y[idx[i]]] += 1.0
            m = e - s
            pure = False
            for c in range(C):
                if counts[node, c] == m:
                    pure = True
            if pure or m < 2 * min_leaf:
                continue
            feats = _sample_features(d, k_feat)
            f, t, g = _split_node(X, y, C, idx, s, e, feats, min_leaf)
            if f >= 0:
                cand_f[node] = f
                cand_t[node] = t
                cand_g[node] = g
                heapq.heappush(heap, (-g * m, node))
        if n_leaves >= max_leaves or len(heap) == 0:
            break
        _, node = heapq.heappop(heap)
        f = cand_f[node]
        t = cand_t[node]
        s = start[node]
        e = end[node]
        # stable in-place partition: x <= t to the left
        buf = idx[s:e].copy()
        lo = s
        for i in range(buf.shape[0]):
            if X[buf[i], f] <= t:
                idx[lo] = buf[i]
                lo += 1
        hi = lo
        for i in range(buf.shape[0]):
            if X[buf[i], f] > t:
                idx[hi] = buf[i]
                hi += 1
        feature[node] = f
        threshold[node] = t
        left[node] = n_nodes
        right[node] = n_nodes + 1
        rank[node] = expanded
        expanded += 1
        n_leaves -= 1
        pending_s = np.array([s, lo], dtype=np.int64)
        pending_e = np.array([lo, e], dtype=np.int64)
    return (feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes],
            counts[:n_nodes], rank[:n_nodes])


@numba.njit(cache=True)
def _apply(X, feature, threshold, left, right):
    out = np.empty(X.shape[0], dtype=np.int64)
    for r in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[r, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] = node
    return out


# -- tree -------------------------------------------------------------------

class DecisionTree:
    """Array-backed binary tree.

    ``value[node]`` is the prediction vector of a leaf; for inner nodes it
    holds the class frequencies of the node's samples, which :meth:`truncate`
    uses as the prediction once the node becomes a leaf.
    """

    def __init__(self, feature, threshold, left, right, value, n_samples,
                 expand_rank=None, d_used=None, n_features=None):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.array(value, dtype=np.float64)
        self.n_samples = np.asarray(n_samples, dtype=np.int64)
        n = self.feature.shape[0]
        if expand_rank is None:
            expand_rank = np.where(self.feature >= 0, np.arange(n), -1)
        self.expand_rank = np.asarray(expand_rank, dtype=np.int64)
        self.n_features = int(n_features if n_features is not None else self.feature.max(initial=0) + 1)
        self.d_used = int(d_used if d_used is not None else self.n_features)
        self.leaves = np.flatnonzero(self.feature == LEAF)
        self.leaf_of_node = np.full(n, -1, dtype=np.int64)
        self.leaf_of_node[self.leaves] = np.arange(self.leaves.size)
        depth = np.zeros(n, dtype=np.int64)
        for node in range(n):
            if self.feature[node] >= 0:
                depth[self.left[node]] = depth[node] + 1
                depth[self.right[node]] = depth[node] + 1
        self.depth = depth

    @property
    def n_nodes(self) -> int:
        return int(self.feature.shape[0])

    @property
    def n_leaves(self) -> int:
        return int(self.leaves.size)

    @property
    def height(self) -> int:
        return int(self.depth.max())

    @property
    def n_classes(self) -> int:
        return int(self.value.shape[1])

    @property
    def leaf_values(self) -> np.ndarray:
        """View-free copy of the L x C leaf prediction matrix."""
        return self.value[self.leaves].copy()

    def set_leaf_values(self, values) -> None:
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (self.n_leaves, self.n_classes):
            raise TreeError(f"expected leaf values of shape {(self.n_leaves, self.n_classes)}")
        self.value[self.leaves] = values

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.n_features:
            raise TreeError(f"expected {self.n_features} features, got {X.shape[1]}")
        return X, single

    def apply(self, X) -> np.ndarray:
        """Node id of the leaf each row of ``X`` reaches."""
        X, single = self._check(X)
        out = _apply(X, self.feature, self.threshold, self.left, self.right)
        return out[0] if single else out

    def leaf_index(self, X):
        """Leaf ordinal in ``[0, n_leaves)`` for each row (or a single vector)."""
        return self.leaf_of_node[self.apply(X)]

    def predict_proba(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=-1)

    def splits(self) -> list[tuple[int, Split]]:
        return [(int(i), Split(int(self.feature[i]), float(self.threshold[i])))
                for i in np.flatnonzero(self.feature >= 0)]

    def copy(self) -> "DecisionTree":
        return DecisionTree(self.feature.copy(), self.threshold.copy(), self.left.copy(),
                            self.right.copy(), self.value.copy(), self.n_samples.copy(),
                            self.expand_rank.copy(), self.d_used, self.n_features)

    def truncate(self, max_leaf_nodes: int) -> "DecisionTree":
        """Tree obtained by stopping growth after ``max_leaf_nodes - 1`` expansions.

        Only meaningful for unrefined trees, where inner ``value`` rows hold
        class frequencies.
        """
        keep_inner = (self.feature >= 0) & (self.expand_rank < max_leaf_nodes - 1)
        n = self.n_nodes
        reachable = np.zeros(n, dtype=bool)
        reachable[0] = True
        for node in range(n):
            if reachable[node] and keep_inner[node]:
                reachable[self.left[node]] = True
                reachable[self.right[node]] = True
        old = np.flatnonzero(reachable)
        remap = np.full(n, -1, dtype=np.int64)
        remap[old] = np.arange(old.size)
        inner = keep_inner[old]
        feature = np.where(inner, self.feature[old], LEAF)
        threshold = np.where(inner, self.threshold[old], 0.0)
        left = np.where(inner, remap[self.left[old]], -1)
        right = np.where(inner, remap[self.right[old]], -1)
        rank = np.where(inner, self.expand_rank[old], -1)
        return DecisionTree(feature, threshold, left, right, self.value[old].copy(),
                            self.n_samples[old], rank, self.d_used, self.n_features)

    def structure_equal(self, other: "DecisionTree") -> bool:
        return (self.n_nodes == other.n_nodes
                and np.array_equal(self.feature, other.feature)
                and np.array_equal(self.threshold, other.threshold)
                and np.array_equal(self.left, other.left)
                and np.array_equal(self.right, other.right))

    def to_dict(self) -> dict:
        def node(i):
            if self.feature[i] == LEAF:
                return {"id": int(i), "leaf": int(self.leaf_of_node[i]), "prediction": self.value[i].tolist(),
                        "n_samples": int(self.n_samples[i])}
            return {"id": int(i), "feature": int(self.feature[i]), "threshold": float(self.threshold[i]),
                    "n_samples": int(self.n_samples[i]), "class_frequency": self.value[i].tolist(),
                    "expand_rank": int(self.expand_rank[i]),
                    "left": node(self.left[i]), "right": node(self.right[i])}

        return {"n_features": self.n_features, "d_used": self.d_used,
                "n_classes": self.n_classes, "root": node(0)}

    @classmethod
    def from_dict(cls, doc: dict) -> "DecisionTree":
        nodes = {}
        stack = [doc["root"]]
        while stack:
            nd = stack.pop()
            nodes[nd["id"]] = nd
            if "left" in nd:
                stack.extend((nd["left"], nd["right"]))
        n = len(nodes)
        if sorted(nodes) != list(range(n)):
            raise TreeError("node ids must be 0..n-1")
        feature = np.full(n, LEAF, dtype=np.int64)
        threshold = np.zeros(n)
        left = np.full(n, -1, dtype=np.int64)
        right = np.full(n, -1, dtype=np.int64)
        value = np.zeros((n, doc["n_classes"]))
        n_samples = np.zeros(n, dtype=np.int64)
        rank = np.full(n, -1, dtype=np.int64)
        for i, nd in nodes.items():
            n_samples[i] = nd.get("n_samples", 0)
            if "prediction" in nd:
                value[i] = nd["prediction"]
                continue
            feature[i], threshold[i] = nd["feature"], nd["threshold"]
            left[i], right[i] = nd["left"]["id"], nd["right"]["id"]
            value[i] = nd.get("class_frequency", value[i])
            rank[i] = nd.get("expand_rank", i)
        return cls(feature, threshold, left, right, value, n_samples, rank,
                   doc.get("d_used"), doc["n_features"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "DecisionTree":
        return cls.from_dict(json.loads(text))

    def __repr__(self):
        return (f"DecisionTree(n_nodes={self.n_nodes}, n_leaves={self.n_leaves}, "
                f"height={self.height}, d_used={self.d_used})")


def _feature_budget(cfg: GrowConfig, d: int) -> int:
    k = d if cfg.feature_sample_size is None else cfg.feature_sample_size
    if not 1 <= k <= d:
        raise TreeError(f"feature_sample_size {k} outside [1, {d}]")
    return k


def best_split(samples, ds: Dataset, features, min_samples_leaf: int = 1):
    """Best gini split of ``samples`` over ``features``.

    Returns ``(Split, decrease)`` where decrease is the drop from the node's
    gini to the size-weighted gini of its children, or None when no
    threshold gives a positive decrease.
    """
    idx = np.asarray(samples, dtype=np.int64)
    feats = np.asarray(features, dtype=np.int64)
    if idx.size < 2:
        return None
    if feats.size == 0:
        raise TreeError("no features to split on")
    f, t, g = _split_node(ds.X, ds.labels.astype(np.int64), ds.C, idx, 0, idx.size, feats,
                          min_samples_leaf)
    if f < 0:
        return None
    return Split(int(f), float(t)), float(g)


def grow_tree(ds: Dataset, sample, cfg: GrowConfig) -> DecisionTree:
    """Grow a tree on ``sample`` (an index multiset into ``ds``)."""
    sample = np.asarray(sample, dtype=np.int64)
    if sample.size == 0:
        raise TreeError("cannot grow a tree on an empty sample")
    k = _feature_budget(cfg, ds.d)
    budget = int(min(cfg.max_leaf_nodes, sample.size))
    feature, threshold, left, right, counts, rank = _grow(
        ds.X, ds.labels.astype(np.int64), ds.C, sample, max(budget, 1), k,
        cfg.min_samples_leaf, np.uint32(cfg.seed % 2**32))
    n_samples = counts.sum(axis=1)
    value = counts / n_samples[:, None]
    return DecisionTree(feature, threshold, left, right, value, n_samples.astype(np.int64),
                        rank, k, ds.d)
