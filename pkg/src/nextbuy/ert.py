"""Extremely randomized trees with multi-output leaves, grown in minibatches.

Each split draws one uniform threshold for each of K randomly chosen
non-constant features and keeps the candidate with the largest multi-output
Gini impurity reduction. Trees are appended to the ensemble in increments
of ``trees_per_iteration``, each increment trained on a fresh batch of
players with labels generated on the fly, so the full sample set is never
materialized.
"""

from __future__ import annotations

import base64
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from numba import njit

from .data_model import ItemCatalog, PlayerTimeSeries
from .features import FeatureConfig, FeatureVector
from .sampling import SamplerConfig, draw_sample_matrix

MODEL_SCHEMA_VERSION = 1

# features are cached per (player, cutoff) across increments; past this many
# entries the cache is dropped to bound memory (it only affects speed)
FEATURE_CACHE_MAX_ENTRIES = 200_000


class ModelError(ValueError):
    """Raised on invalid model state or mismatched inputs."""


@dataclass(frozen=True)
class ErtParams:
    trees_per_iteration: int = 20
    iterations: int = 30
    k_features: int | None = None  # None -> ceil(sqrt(F))
    min_samples_leaf: int = 5
    max_depth: int | None = None
    batch_users: int = 10000
    seed: int = 0

    def __post_init__(self):
        for name in ("trees_per_iteration", "iterations", "min_samples_leaf", "batch_users"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.k_features is not None and self.k_features < 1:
            raise ValueError("k_features must be >= 1")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")

    def resolve_k(self, n_features: int) -> int:
        if self.k_features is not None:
            return min(self.k_features, n_features)
        return min(int(np.ceil(np.sqrt(n_features))), n_features)


@dataclass
class Tree:
    """Flattened binary tree. feature[i] == -1 marks a leaf.

    ``value`` holds one row per node; only leaf rows are meaningful and
    store per-item label frequencies of the training samples that reached
    the leaf.
    """

    feature: np.ndarray  # (nodes,) int
    threshold: np.ndarray  # (nodes,) float
    left: np.ndarray  # (nodes,) int
    right: np.ndarray  # (nodes,) int
    value: np.ndarray  # (nodes, M) float

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Route rows of X to leaves; returns (n, M) leaf vectors."""
        cur = np.zeros(len(X), dtype=np.int64)
        while True:
            feats = self.feature[cur]
            active = np.flatnonzero(feats >= 0)
            if len(active) == 0:
                break
            nodes = cur[active]
            go_left = X[active, feats[active]] <= self.threshold[nodes]
            cur[active] = np.where(go_left, self.left[nodes], self.right[nodes])
        return self.value[cur]


@njit(cache=True)
def _decide_split(XT, Y, order, s, e, depth, rng, msl, k_target, max_depth, seen, colsums):
    """Split decision for the node holding rows order[s:e]; (-1, 0.0) = leaf.

    ``colsums`` must already hold the node's per-item positive label counts.
    Candidate features are found by rejection sampling: ids are proposed
    uniformly in chunks and a proposal is dropped if already seen or
    constant within the node, which yields a uniform draw without
    replacement among the non-constant features while touching only ~K
    columns instead of scanning all F. One uniform threshold per accepted
    candidate; lowest mean-Gini child impurity wins, ties to the earliest
    accepted, candidates with an empty child excluded.
    """
    n = e - s
    if n < 2 * msl:
        return -1, 0.0
    if max_depth >= 0 and depth >= max_depth:
        return -1, 0.0
    n_outputs = Y.shape[1]
    # binary labels: the node is pure iff every output column is constant
    pure = True
    for m in range(n_outputs):
        if colsums[m] != 0.0 and colsums[m] != n:
            pure = False
            break
    if pure:
        return -1, 0.0
    n_features = XT.shape[0]
    chunk_size = k_target + 2
    ids = np.empty(k_target, np.int64)
    mns = np.empty(k_target)
    mxs = np.empty(k_target)
    n_ids = 0
    n_rejected = 0
    for f in range(n_features):
        seen[f] = False
    while n_ids < k_target and n_ids + n_rejected < n_features:
        chunk = rng.integers(0, n_features, size=chunk_size)
        for pos in range(chunk_size):
            if n_ids == k_target:
                break
            j = chunk[pos]
            if seen[j]:
                continue
            seen[j] = True
            mn = XT[j, order[s]]
            mx = mn
            for i in range(s + 1, e):
                v = XT[j, order[i]]
                if v < mn:
                    mn = v
                elif v > mx:
                    mx = v
            if mx > mn:
                ids[n_ids] = j
                mns[n_ids] = mn
                mxs[n_ids] = mx
                n_ids += 1
            else:
                n_rejected += 1
    if n_ids == 0:
        return -1, 0.0
    thresholds = np.empty(n_ids)
    for c in range(n_ids):
        thresholds[c] = rng.uniform(mns[c], mxs[c])

    best = -1
    best_score = np.inf
    pos_left = np.empty(n_outputs)
    for c in range(n_ids):
        j = ids[c]
        thr = thresholds[c]
        n_left = 0
        for m in range(n_outputs):
            pos_left[m] = 0.0
        for i in range(s, e):
            r = order[i]
            if XT[j, r] <= thr:
                n_left += 1
                for m in range(n_outputs):
                    pos_left[m] += Y[r, m]
        n_right = n - n_left
        # uniform(min, max) can round up to max, leaving an empty right
        # child; such degenerate candidates are scored out of contention
        if n_left == 0 or n_right == 0:
            continue
        gini_left = 0.0
        gini_right = 0.0
        for m in range(n_outputs):
            p = pos_left[m] / n_left
            gini_left += 2.0 * p * (1.0 - p)
            q = (colsums[m] - pos_left[m]) / n_right
            gini_right += 2.0 * q * (1.0 - q)
        score = (
            n_left * (gini_left / n_outputs) + n_right * (gini_right / n_outputs)
        ) / n
        if score < best_score:
            best_score = score
            best = c
    if best < 0:
        return -1, 0.0
    return ids[best], thresholds[best]


@njit(cache=True)
def _node_colsums(Y, order, s, e, colsums):
    for m in range(Y.shape[1]):
        colsums[m] = 0.0
    for i in range(s, e):
        r = order[i]
        for m in range(Y.shape[1]):
            colsums[m] += Y[r, m]


@njit(cache=True)
def _build_tree_core(XT, Y, rng, msl, k_target, max_depth):
    """Grow one tree; returns flattened node arrays (truncated to size)."""
    n_samples = XT.shape[1]
    n_outputs = Y.shape[1]
    n_features = XT.shape[0]
    max_nodes = 2 * n_samples + 1
    feature = np.full(max_nodes, -1, np.int64)
    threshold = np.zeros(max_nodes)
    left = np.full(max_nodes, -1, np.int64)
    right = np.full(max_nodes, -1, np.int64)
    value = np.zeros((max_nodes, n_outputs))
    order = np.arange(n_samples)
    tmp = np.empty(n_samples, np.int64)
    seen = np.zeros(n_features, np.bool_)
    colsums = np.zeros(n_outputs)
    # manual LIFO stack of (start, end, depth, parent, is_right_child);
    # the right child is pushed first so the left child is processed next,
    # making traversal order (and hence RNG consumption) deterministic
    st_s = np.empty(max_nodes, np.int64)
    st_e = np.empty(max_nodes, np.int64)
    st_d = np.empty(max_nodes, np.int64)
    st_p = np.empty(max_nodes, np.int64)
    st_r = np.empty(max_nodes, np.int64)
    top = 0
    st_s[0] = 0
    st_e[0] = n_samples
    st_d[0] = 0
    st_p[0] = -1
    st_r[0] = 0
    top = 1
    n_nodes = 0
    while top > 0:
        top -= 1
        s = st_s[top]
        e = st_e[top]
        depth = st_d[top]
        parent = st_p[top]
        is_right = st_r[top]
        node_id = n_nodes
        n_nodes += 1
        if parent >= 0:
            if is_right == 1:
                right[parent] = node_id
            else:
                left[parent] = node_id
        _node_colsums(Y, order, s, e, colsums)
        f, thr = _decide_split(
            XT, Y, order, s, e, depth, rng, msl, k_target, max_depth, seen, colsums
        )
        if f < 0:
            n = e - s
            for m in range(n_outputs):
                value[node_id, m] = colsums[m] / n
            continue
        feature[node_id] = f
        threshold[node_id] = thr
        # stable partition of order[s:e] into left then right rows
        w = 0
        for i in range(s, e):
            r = order[i]
            if XT[f, r] <= thr:
                tmp[w] = r
                w += 1
        n_left = w
        for i in range(s, e):
            r = order[i]
            if XT[f, r] > thr:
                tmp[w] = r
                w += 1
        for i in range(e - s):
            order[s + i] = tmp[i]
        st_s[top] = s + n_left
        st_e[top] = e
        st_d[top] = depth + 1
        st_p[top] = node_id
        st_r[top] = 1
        top += 1
        st_s[top] = s
        st_e[top] = s + n_left
        st_d[top] = depth + 1
        st_p[top] = node_id
        st_r[top] = 0
        top += 1
    return (
        feature[:n_nodes],
        threshold[:n_nodes],
        left[:n_nodes],
        right[:n_nodes],
        value[:n_nodes],
    )


@njit(cache=True)
def _split_one(XT, Y, rng, msl, k_target, max_depth, depth):
    n_samples = XT.shape[1]
    order = np.arange(n_samples)
    seen = np.zeros(XT.shape[0], np.bool_)
    colsums = np.zeros(Y.shape[1])
    _node_colsums(Y, order, 0, n_samples, colsums)
    return _decide_split(
        XT, Y, order, 0, n_samples, depth, rng, msl, k_target, max_depth, seen, colsums
    )


def split_node(
    X: np.ndarray,
    Y: np.ndarray,
    rng: np.random.Generator,
    params: ErtParams,
    depth: int = 0,
) -> tuple[int, float] | None:
    """Pick a random-threshold split, or None for a leaf. Y must be binary.

    Candidate features are drawn without replacement among features that
    are non-constant within the node; each candidate gets a single uniform
    threshold in (min, max) and the one minimizing weighted child impurity
    wins (ties to the earliest draw).
    """
    XT = np.ascontiguousarray(np.asarray(X, dtype=np.float64).T)
    Yc = np.ascontiguousarray(np.asarray(Y, dtype=np.float64))
    max_depth = -1 if params.max_depth is None else params.max_depth
    f, thr = _split_one(
        XT, Yc, rng, params.min_samples_leaf, params.resolve_k(X.shape[1]),
        max_depth, depth,
    )
    if f < 0:
        return None
    return int(f), float(thr)


def build_tree(
    X: np.ndarray, Y: np.ndarray, rng: np.random.Generator, params: ErtParams
) -> Tree:
    """Grow one tree by recursive application of split_node."""
    if len(X) == 0:
        raise ModelError("cannot build a tree from zero samples")
    XT = np.ascontiguousarray(np.asarray(X, dtype=np.float64).T)
    Yc = np.ascontiguousarray(np.asarray(Y, dtype=np.float64))
    max_depth = -1 if params.max_depth is None else params.max_depth
    feature, threshold, left, right, value = _build_tree_core(
        XT, Yc, rng, params.min_samples_leaf, params.resolve_k(X.shape[1]), max_depth
    )
    # the core returns views into oversized buffers; compact them
    return Tree(
        feature=feature.copy(),
        threshold=threshold.copy(),
        left=left.copy(),
        right=right.copy(),
        value=value.copy(),
    )


@dataclass
class ErtEnsemble:
    trees: list[Tree]
    catalog: ItemCatalog
    layout: tuple[str, ...]
    params: ErtParams = field(default_factory=ErtParams)

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def predict_matrix(self, X: np.ndarray) -> np.ndarray:
        """(n, M) mean of leaf vectors across all trees."""
        if self.n_trees == 0:
            raise ModelError("ensemble has no trees")
        if X.shape[1] != len(self.layout):
            raise ModelError(
                f"feature width {X.shape[1]} does not match model layout "
                f"({len(self.layout)})"
            )
        total = np.zeros((len(X), self.catalog.size))
        for tree in self.trees:
            total += tree.predict(X)
        return total / self.n_trees

    def predict(self, features: FeatureVector) -> np.ndarray:
        if features.layout != self.layout:
            raise ModelError("feature layout does not match the trained model")
        return self.predict_matrix(features.values[None, :])[0]

    def save(self, path: str | Path) -> None:
        doc = {
            "schema_version": MODEL_SCHEMA_VERSION,
            "kind": "ert",
            "catalog": list(self.catalog.items),
            "layout": list(self.layout),
            "params": {
                "trees_per_iteration": self.params.trees_per_iteration,
                "iterations": self.params.iterations,
                "k_features": self.params.k_features,
                "min_samples_leaf": self.params.min_samples_leaf,
                "max_depth": self.params.max_depth,
                "batch_users": self.params.batch_users,
                "seed": self.params.seed,
            },
            "trees": [
                {
                    "feature": tree.feature.tolist(),
                    "threshold": _encode(tree.threshold),
                    "left": tree.left.tolist(),
                    "right": tree.right.tolist(),
                    "value": _encode(tree.value),
                    "n_items": tree.value.shape[1],
                }
                for tree in self.trees
            ],
        }
        Path(path).write_text(json.dumps(doc, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "ErtEnsemble":
        doc = json.loads(Path(path).read_text())
        if doc.get("schema_version") != MODEL_SCHEMA_VERSION or doc.get("kind") != "ert":
            raise ModelError(f"unsupported model file {path}")
        trees = [
            Tree(
                feature=np.array(t["feature"], dtype=np.int64),
                threshold=_decode(t["threshold"]),
                left=np.array(t["left"], dtype=np.int64),
                right=np.array(t["right"], dtype=np.int64),
                value=_decode(t["value"]).reshape(-1, t["n_items"]),
            )
            for t in doc["trees"]
        ]
        params = ErtParams(**doc["params"])
        return cls(
            trees=trees,
            catalog=ItemCatalog(tuple(doc["catalog"])),
            layout=tuple(doc["layout"]),
            params=params,
        )


def _encode(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype=np.float64).tobytes()).decode()


def _decode(blob: str) -> np.ndarray:
    return np.frombuffer(base64.b64decode(blob), dtype=np.float64).copy()


def train_increment(
    ensemble: ErtEnsemble,
    players: list[PlayerTimeSeries],
    sampler_config: SamplerConfig,
    fconfig: FeatureConfig,
    increment_index: int,
    n_threads: int = 1,
    feature_cache: dict | None = None,
) -> ErtEnsemble:
    """Append ``trees_per_iteration`` trees trained on one player batch.

    The batch's samples are drawn fresh for this increment; trees differ
    through per-tree RNG streams so building them serially or concurrently
    yields the identical ensemble.
    """
    if not players:
        raise ModelError("training batch is empty")
    params = ensemble.params
    sample_seed = int(
        np.random.SeedSequence([params.seed, 1, increment_index]).generate_state(1)[0]
    )
    X, Y = draw_sample_matrix(
        players, sampler_config, fconfig, ensemble.catalog, sample_seed, feature_cache
    )
    if len(X) == 0:
        raise ModelError(f"increment {increment_index}: batch produced no training samples")
    tree_seeds = np.random.SeedSequence([params.seed, 2, increment_index]).spawn(
        params.trees_per_iteration
    )

    def _build(ss):
        return build_tree(X, Y, np.random.default_rng(ss), params)

    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            new_trees = list(pool.map(_build, tree_seeds))
    else:
        new_trees = [_build(ss) for ss in tree_seeds]
    return replace(ensemble, trees=ensemble.trees + new_trees)


def train_ert(
    players: list[PlayerTimeSeries],
    catalog: ItemCatalog,
    fconfig: FeatureConfig,
    sampler_config: SamplerConfig,
    params: ErtParams,
    n_threads: int = 1,
) -> ErtEnsemble:
    """Full minibatch training loop: iterations × trees_per_iteration trees.

    Players are drawn without replacement into batches of ``batch_users``
    and reshuffled once each epoch is exhausted.
    """
    if not players:
        raise ModelError("no players to train on")
    ensemble = ErtEnsemble(trees=[], catalog=catalog, layout=fconfig.layout(), params=params)
    batch_rng = np.random.default_rng(np.random.SeedSequence([params.seed, 0]))
    order: list[int] = []
    feature_cache: dict = {}
    for it in range(params.iterations):
        if len(order) < min(params.batch_users, len(players)):
            order = list(batch_rng.permutation(len(players)))
        take = min(params.batch_users, len(players))
        batch = [players[i] for i in order[:take]]
        order = order[take:]
        ensemble = train_increment(
            ensemble, batch, sampler_config, fconfig, it, n_threads, feature_cache
        )
        if len(feature_cache) > FEATURE_CACHE_MAX_ENTRIES:
            feature_cache.clear()
    return ensemble
