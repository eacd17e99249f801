"""Bagged CART regression forest.

Trees are grown with variance-reduction splits; each node scores ``mtry``
candidate features. All randomness (bootstrap rows, feature draws) is
generated up front from the tree's own seed stream, so the compiled builder
is deterministic and holds no RNG state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba as nb
import numpy as np

from ..numerics import DimensionMismatchError, FloatArray, RngSeed, as_matrix, as_vector
from .base import PredictionModel


@dataclass(frozen=True)
class RandomForestConfig:
    n_trees: int = 100
    min_leaf: int = 5
    mtry: int | None = None  # None -> max(1, q // 3)
    bootstrap: bool = True
    seed: RngSeed = field(default_factory=lambda: RngSeed(0, 0))

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")

    def resolved_mtry(self, q: int) -> int:
        mtry = max(1, q // 3) if self.mtry is None else self.mtry
        if not 1 <= mtry <= q:
            raise ValueError(f"mtry must lie in [1, {q}], got {mtry}")
        return mtry


@nb.njit(cache=True)
def _grow_tree(X, y, rows, min_leaf, mtry, feature_keys):
    n = rows.shape[0]
    q = X.shape[1]
    cap = 2 * n + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)

    idx = rows.copy()
    stack_node = np.empty(cap, dtype=np.int64)
    stack_lo = np.empty(cap, dtype=np.int64)
    stack_hi = np.empty(cap, dtype=np.int64)
    top = 0
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = n
    top = 1
    n_nodes = 1

    xs = np.empty(n)
    ys = np.empty(n)

    while top > 0:
        top -= 1
        node = stack_node[top]
        lo = stack_lo[top]
        hi = stack_hi[top]
        size = hi - lo

        total = 0.0
        for i in range(lo, hi):
            total += y[idx[i]]
        value[node] = total / size
        if size < 2 * min_leaf:
            continue

        order = np.argsort(feature_keys[node])
        best_gain = 1e-12 * size
        best_feat = -1
        best_thr = 0.0
        base = total * total / size
        for c in range(mtry):
            j = order[c]
            seg = idx[lo:hi]
            xv = np.empty(size)
            for i in range(size):
                xv[i] = X[seg[i], j]
            srt = np.argsort(xv, kind="mergesort")
            for i in range(size):
                xs[i] = xv[srt[i]]
                ys[i] = y[seg[srt[i]]]
            s_left = 0.0
            for i in range(size - min_leaf):
                s_left += ys[i]
                n_left = i + 1
                if n_left < min_leaf:
                    continue
                if xs[i] >= xs[i + 1]:
                    continue
                s_right = total - s_left
                gain = s_left * s_left / n_left + s_right * s_right / (size - n_left) - base
                if gain > best_gain:
                    best_gain = gain
                    best_feat = j
                    best_thr = 0.5 * (xs[i] + xs[i + 1])

        if best_feat < 0:
            continue

        # partition idx[lo:hi] in place around the threshold
        i = lo
        k = hi - 1
        while i <= k:
            if X[idx[i], best_feat] <= best_thr:
                i += 1
            else:
                tmp = idx[i]
                idx[i] = idx[k]
                idx[k] = tmp
                k -= 1
        feature[node] = best_feat
        threshold[node] = best_thr
        left[node] = n_nodes
        right[node] = n_nodes + 1
        stack_node[top] = n_nodes
        stack_lo[top] = lo
        stack_hi[top] = i
        top += 1
        stack_node[top] = n_nodes + 1
        stack_lo[top] = i
        stack_hi[top] = hi
        top += 1
        n_nodes += 2

    return feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes], value[:n_nodes]


@nb.njit(cache=True)
def _predict_forest(X, feature, threshold, left, right, value, offsets):
    m = X.shape[0]
    n_trees = offsets.shape[0] - 1
    out = np.zeros(m)
    for r in range(m):
        acc = 0.0
        for t in range(n_trees):
            base = offsets[t]
            node = 0
            while feature[base + node] >= 0:
                if X[r, feature[base + node]] <= threshold[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            acc += value[base + node]
        out[r] = acc / n_trees
    return out


class RandomForestModel(PredictionModel):
    kind = "random_forest"

    def __init__(self, trees, n_features: int):
        self.n_features = n_features
        self.n_trees = len(trees)
        sizes = [len(t[0]) for t in trees]
        self._offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        self._feature = np.concatenate([t[0] for t in trees])
        self._threshold = np.concatenate([t[1] for t in trees])
        self._left = np.concatenate([t[2] for t in trees])
        self._right = np.concatenate([t[3] for t in trees])
        self._value = np.concatenate([t[4] for t in trees])

    def _predict(self, Z):
        return _predict_forest(
            np.ascontiguousarray(Z),
            self._feature,
            self._threshold,
            self._left,
            self._right,
            self._value,
            self._offsets,
        )


def train_random_forest(Z, y, config: RandomForestConfig | None = None) -> RandomForestModel:
    config = config or RandomForestConfig()
    Z = np.ascontiguousarray(as_matrix(Z, "Z"))
    y = as_vector(y, "y")
    n, q = Z.shape
    if y.shape[0] != n:
        raise DimensionMismatchError(f"Z has {n} rows but y has length {y.shape[0]}")
    if n < 2 * config.min_leaf:
        raise ValueError(f"need at least {2 * config.min_leaf} training rows, got {n}")
    mtry = config.resolved_mtry(q)

    trees = []
    for t in range(config.n_trees):
        rng = config.seed.child(t).generator()
        if config.bootstrap:
            rows = rng.integers(0, n, size=n).astype(np.int64)
        else:
            rows = np.arange(n, dtype=np.int64)
        keys = rng.random((2 * n + 1, q))
        trees.append(_grow_tree(Z, y, rows, config.min_leaf, mtry, keys))
    return RandomForestModel(trees, q)
