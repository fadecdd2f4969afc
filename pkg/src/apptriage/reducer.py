"""Segment reduction: greedy max-min subsampling plus isolation-forest anomaly scoring."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, OutlierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_embeddings
from .corpus import Segment
from .embedding import embed_batch

EULER_GAMMA = 0.5772156649


def average_path_length(m) -> np.ndarray:
    """Expected path length of an unsuccessful BST search over ``m`` points.

    c(m) = 2 H(m-1) - 2 (m-1) / m with H(i) = ln(i) + gamma; c(1) = 0, c(2) = 1.
    """
    m = np.asarray(m, dtype=np.float64)
    out = np.zeros_like(m)
    out[m == 2] = 1.0
    big = m > 2
    mb = m[big]
    out[big] = 2.0 * (np.log(mb - 1.0) + EULER_GAMMA) - 2.0 * (mb - 1.0) / mb
    return out


def _pairwise_to(X: np.ndarray, x: np.ndarray, metric: str) -> np.ndarray:
    if metric == "euclidean":
        return np.sqrt(((X - x) ** 2).sum(axis=1))
    if metric == "cosine":
        return 1.0 - X @ x
    raise ValueError(f"unknown metric {metric!r}")


def _unit_rows(X: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    return np.divide(X, norms, out=np.zeros_like(X), where=norms > 0)


def subsample_maxmin(embeddings, k: int, metric: str = "euclidean") -> list[int]:
    """Greedy max-min selection, returned in selection order.

    Starts at the point nearest the centroid, then repeatedly takes the point
    whose distance to its nearest selected point is largest. Ties go to the
    lowest index. Returns ``min(k, n)`` distinct indices.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    X = check_embeddings(embeddings)
    if metric == "cosine":
        X = _unit_rows(X)
    n = X.shape[0]
    k = min(k, n)
    centroid = X.mean(axis=0)
    if metric == "cosine":
        centroid = _unit_rows(centroid[None, :])[0]
    first = int(np.argmin(_pairwise_to(X, centroid, metric)))
    selected = [first]
    taken = np.zeros(n, dtype=bool)
    taken[first] = True
    min_dist = _pairwise_to(X, X[first], metric)
    while len(selected) < k:
        candidates = np.where(taken, -np.inf, min_dist)
        nxt = int(np.argmax(candidates))
        if metric == "euclidean" and candidates[nxt] == 0.0:
            # only exact duplicates remain: every candidate ties at zero and
            # stays there, so the lowest untaken indices follow in order
            selected.extend(np.flatnonzero(~taken)[: k - len(selected)].tolist())
            break
        selected.append(nxt)
        taken[nxt] = True
        np.minimum(min_dist, _pairwise_to(X, X[nxt], metric), out=min_dist)
    return selected


class MaxMinSampler(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`subsample_maxmin`.

    ``fit`` stores ``selected_indices_`` (selection order) and
    ``min_distances_`` (the max-min distance achieved at each step after the
    first); ``transform`` returns the selected rows.
    """

    def __init__(self, n_samples: int = 500, metric: str = "euclidean"):
        self.n_samples = n_samples
        self.metric = metric

    def fit(self, X, y=None):
        X = check_embeddings(X)
        self.selected_indices_ = np.asarray(subsample_maxmin(X, self.n_samples, self.metric), dtype=np.intp)
        Z = _unit_rows(X) if self.metric == "cosine" else X
        steps = []
        for i in range(1, len(self.selected_indices_)):
            chosen = Z[self.selected_indices_[:i]]
            target = Z[self.selected_indices_[i]]
            steps.append(min(_pairwise_to(chosen, target, self.metric)))
        self.min_distances_ = np.asarray(steps)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "selected_indices_")
        X = check_embeddings(X)
        return X[np.sort(self.selected_indices_)]


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    subsample_size: int = 256
    contamination: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.subsample_size < 2:
            raise ValueError("subsample_size must be >= 2")
        if not 0.0 < self.contamination <= 0.5:
            raise ValueError("contamination must be in (0, 0.5]")


@dataclass
class _Forest:
    roots: np.ndarray
    feature: np.ndarray  # -1 marks an external node
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    depth: np.ndarray
    size: np.ndarray


_REJECTION_ROUNDS = 6


def _choose_split_features(X: np.ndarray, pts: np.ndarray, local: np.ndarray, counts: np.ndarray,
                           rng: np.random.Generator):
    """Per node, a coordinate drawn uniformly among those varying within the node.

    Rejection sampling on single columns (cheap gathers) handles almost every
    node; the few still pending after a handful of rounds get an exact
    full-width min/max pass. Returns ``(pick, lo, hi)`` with ``pick = -1`` for
    nodes that cannot be split.
    """
    n_nodes = counts.size
    d = X.shape[1]
    nonempty = counts > 0
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))[nonempty]
    pick = np.full(n_nodes, -1, dtype=np.intp)
    lo = np.zeros(n_nodes)
    hi = np.zeros(n_nodes)
    pending = counts > 1
    for _ in range(_REJECTION_ROUNDS):
        if not pending.any():
            return pick, lo, hi
        cand = rng.integers(d, size=n_nodes)
        vals = X[pts, cand[local]]
        mn = np.full(n_nodes, np.inf)
        mx = np.full(n_nodes, -np.inf)
        mn[nonempty] = np.minimum.reduceat(vals, starts)
        mx[nonempty] = np.maximum.reduceat(vals, starts)
        hit = pending & (mx > mn)
        pick[hit], lo[hit], hi[hit] = cand[hit], mn[hit], mx[hit]
        pending &= ~hit
    if pending.any():
        sel = pending[local]
        sub = X[pts[sel]]
        nodes = np.flatnonzero(pending)
        sub_counts = counts[nodes]
        sub_starts = np.concatenate(([0], np.cumsum(sub_counts)[:-1]))
        mins = np.minimum.reduceat(sub, sub_starts, axis=0)
        maxs = np.maximum.reduceat(sub, sub_starts, axis=0)
        varying = maxs > mins
        draws = rng.random((nodes.size, d))
        draws[~varying] = -1.0
        choice = np.argmax(draws, axis=1)
        ok = varying.any(axis=1)
        r = np.arange(nodes.size)
        pick[nodes[ok]] = choice[ok]
        lo[nodes[ok]] = mins[r, choice][ok]
        hi[nodes[ok]] = maxs[r, choice][ok]
    return pick, lo, hi


def _grow_forest(X: np.ndarray, n_trees: int, m: int, rng: np.random.Generator) -> _Forest:
    """Grow all trees level by level in one vectorised pass.

    Each internal node picks a coordinate uniformly among those that are not
    constant within the node and splits at a uniform value inside the node's
    range; nodes with one point, no varying coordinate or at the height limit
    become external nodes.
    """
    n, d = X.shape
    limit = math.ceil(math.log2(m))
    samples = np.stack([rng.choice(n, size=m, replace=False) for _ in range(n_trees)])

    feature, threshold, left, right, depth, size = [], [], [], [], [], []
    # points are kept grouped by node id; node ids of one level are contiguous
    pts = samples.reshape(-1)
    node_of = np.repeat(np.arange(n_trees), m)
    level_start, level_count = 0, n_trees
    for lvl in range(limit + 1):
        local = node_of - level_start
        counts = np.bincount(local, minlength=level_count)
        feat = np.full(level_count, -1, dtype=np.intp)
        thr = np.zeros(level_count)
        lchild = np.full(level_count, -1, dtype=np.intp)
        rchild = np.full(level_count, -1, dtype=np.intp)
        if lvl < limit and pts.size:
            pick, lo, hi = _choose_split_features(X, pts, local, counts, rng)
            u = 1.0 - rng.random(level_count)
            cand_thr = lo + u * (hi - lo)
            splittable = pick >= 0
            pick = np.maximum(pick, 0)
            go_left = X[pts, pick[local]] < cand_thr[local]
            n_left = np.bincount(local, weights=go_left, minlength=level_count)
            splittable &= (n_left > 0) & (n_left < counts)
            feat[splittable] = pick[splittable]
            thr[splittable] = cand_thr[splittable]
            n_split = int(splittable.sum())
            next_start = level_start + level_count
            order_of_split = np.cumsum(splittable) - 1
            lchild[splittable] = next_start + 2 * order_of_split[splittable]
            rchild[splittable] = lchild[splittable] + 1
            keep = splittable[local]
            child = np.where(go_left, lchild[local], rchild[local])[keep]
            pts = pts[keep]
            order = np.argsort(child, kind="stable")
            pts, node_of = pts[order], child[order]
        else:
            n_split = 0
            next_start = level_start + level_count
        feature.append(feat)
        threshold.append(thr)
        left.append(lchild)
        right.append(rchild)
        depth.append(np.full(level_count, lvl))
        size.append(counts)
        level_start, level_count = next_start, 2 * n_split
        if level_count == 0:
            break
    return _Forest(
        roots=np.arange(n_trees),
        feature=np.concatenate(feature),
        threshold=np.concatenate(threshold),
        left=np.concatenate(left),
        right=np.concatenate(right),
        depth=np.concatenate(depth).astype(np.float64),
        size=np.concatenate(size),
    )


def _path_lengths(forest: _Forest, X: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Mean corrected path length h(x) over trees, for each row of X."""
    correction = average_path_length(forest.size)
    out = np.empty(X.shape[0])
    for start in range(0, X.shape[0], chunk):
        block = X[start:start + chunk]
        cols = np.arange(block.shape[0])[None, :]
        cur = np.repeat(forest.roots[:, None], block.shape[0], axis=1)
        while True:
            feat = forest.feature[cur]
            internal = feat >= 0
            if not internal.any():
                break
            values = block[cols, np.where(internal, feat, 0)]
            nxt = np.where(values < forest.threshold[cur], forest.left[cur], forest.right[cur])
            cur = np.where(internal, nxt, cur)
        h = forest.depth[cur] + correction[cur]
        out[start:start + block.shape[0]] = h.mean(axis=0)
    return out


class IsolationForestScorer(OutlierMixin, BaseEstimator):
    """Isolation forest over embedding vectors.

    ``score_samples`` returns s(x) = 2 ** (-E[h(x)] / c(m)) in (0, 1); larger
    means more anomalous (note: the opposite sign convention to
    ``sklearn.ensemble.IsolationForest.score_samples``).
    """

    def __init__(self, n_trees: int = 100, subsample_size: int = 256, contamination: float = 0.05,
                 random_state: int = 0):
        self.n_trees = n_trees
        self.subsample_size = subsample_size
        self.contamination = contamination
        self.random_state = random_state

    def fit(self, X, y=None):
        self._fit(X)
        return self

    def _fit(self, X) -> np.ndarray:
        ForestParams(self.n_trees, self.subsample_size, self.contamination, 0)
        X = check_embeddings(X, min_samples=2)
        rng = np.random.default_rng(self.random_state)
        self.max_samples_ = min(self.subsample_size, X.shape[0])
        self.forest_ = _grow_forest(X, self.n_trees, self.max_samples_, rng)
        self.n_features_in_ = X.shape[1]
        train = self.score_samples(X)
        n_flag = math.ceil(self.contamination * X.shape[0])
        ranked = np.sort(train)[::-1]
        # constant scores carry no ranking information, so nothing is flagged
        self.offset_ = np.inf if ranked[0] == ranked[-1] else ranked[n_flag - 1]
        return train

    def score_samples(self, X) -> np.ndarray:
        check_is_fitted(self, "forest_")
        X = check_embeddings(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        c = float(average_path_length(self.max_samples_))
        return np.power(2.0, -_path_lengths(self.forest_, X) / c)

    def decision_function(self, X) -> np.ndarray:
        return self.offset_ - self.score_samples(X)

    def predict(self, X) -> np.ndarray:
        return np.where(self.score_samples(X) >= self.offset_, -1, 1)


def anomaly_scores(embeddings, params: ForestParams) -> np.ndarray:
    scorer = IsolationForestScorer(params.n_trees, params.subsample_size, params.contamination, params.seed)
    X = check_embeddings(embeddings, min_samples=2)
    return scorer._fit(X)


def top_anomalies(scores: np.ndarray, contamination: float) -> list[int]:
    """Indices of the ceil(contamination * n) highest scores; none if scores are all equal."""
    scores = np.asarray(scores)
    if scores.size == 0 or scores.max() == scores.min():
        return []
    n_flag = math.ceil(contamination * scores.size)
    order = np.lexsort((np.arange(scores.size), -scores))
    return sorted(int(i) for i in order[:n_flag])


@dataclass
class ReducedSegment:
    app_id: str
    index: int
    kept: list  # [(record index, LogRecord)], chronological
    anomalies: list  # [(record index, score)], flagged records only
    method_trace: dict = field(default_factory=dict)

    @property
    def records(self) -> list:
        return [rec for _, rec in self.kept]


def reduce_segment(segment: Segment, provider, target_k: int, params: ForestParams,
                   metric: str = "euclidean") -> ReducedSegment:
    records = list(segment.records)
    if not records:
        raise ValueError("segment is empty")
    if target_k < 1:
        raise ValueError("target_k must be >= 1")
    n = len(records)
    trace = {"subsample_applied": False, "target_k": target_k, "forest_params": asdict(params),
             "metric": metric, "n_records": n}
    flagged: list = []
    scores = None
    if n >= 2:
        X = embed_batch(provider, records)
        scores = anomaly_scores(X, params)
        flagged = top_anomalies(scores, params.contamination)
    if n <= target_k:
        kept_idx = list(range(n))
    else:
        trace["subsample_applied"] = True
        chosen = set(subsample_maxmin(X, target_k, metric))
        kept_idx = sorted(chosen.union(flagged))
    kept_idx.sort(key=lambda i: (records[i].ts, i))
    trace["n_kept"] = len(kept_idx)
    return ReducedSegment(
        app_id=segment.app_id,
        index=segment.index,
        kept=[(i, records[i]) for i in kept_idx],
        anomalies=[(i, float(scores[i])) for i in flagged],
        method_trace=trace,
    )
