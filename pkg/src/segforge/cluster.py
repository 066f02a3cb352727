"""Gower dissimilarities and Ward agglomerative clustering.

Ward merge costs are maintained with the Lance-Williams recurrence on
squared dissimilarities. Gower space is not Euclidean, so the costs are not
literally variance increases of some centroid embedding; they are twice the
increase of the pairwise within-cluster dispersion (see ``within_dispersion``),
which is how the recurrence behaves on any squared dissimilarity.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import errors
from .features import FEATURE_KINDS, FeatureKind


def feature_ranges(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    return values.max(axis=0) - values.min(axis=0)


def _active_features(ranges, kinds):
    return [f for f in range(len(ranges)) if ranges[f] > 0]


def _check_schema(width, ranges, kinds):
    if len(ranges) != width or len(kinds) != width:
        raise errors.MismatchedSchema(
            f"{width} feature values but {len(ranges)} ranges and {len(kinds)} kinds")


def gower_distance(a, b, ranges, kinds: Sequence[FeatureKind] = FEATURE_KINDS, clip: bool = False) -> float:
    """Gower dissimilarity of two vectors given per-feature ranges.

    Zero-range features are left out of both sum and denominator. With
    ``clip`` each numeric term is capped at 1, for vectors that fall outside
    the population the ranges came from.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise errors.MismatchedSchema(f"vectors of length {a.size} and {b.size}")
    _check_schema(a.size, ranges, kinds)
    total = 0.0
    count = 0
    for f in _active_features(ranges, kinds):
        if kinds[f] is FeatureKind.BINARY:
            term = float(a[f] != b[f])
        else:
            term = abs(float(a[f]) - float(b[f])) / float(ranges[f])
            if clip:
                term = min(term, 1.0)
        total += term
        count += 1
    return total / count if count else 0.0


def gower_to_many(block: np.ndarray, b, ranges, kinds=FEATURE_KINDS, clip: bool = False) -> np.ndarray:
    """Gower dissimilarity of every row of ``block`` to ``b``.

    Terms are accumulated feature by feature in the same order as
    ``gower_distance`` so the two agree to the last bit.
    """
    block = np.asarray(block, dtype=float)
    b = np.asarray(b, dtype=float)
    if block.ndim != 2 or block.shape[1] != b.size:
        raise errors.MismatchedSchema(f"block {block.shape} against vector of length {b.size}")
    _check_schema(b.size, ranges, kinds)
    acc = np.zeros(block.shape[0])
    active = _active_features(ranges, kinds)
    for f in active:
        if kinds[f] is FeatureKind.BINARY:
            acc += (block[:, f] != b[f]).astype(float)
        else:
            term = np.abs(block[:, f] - b[f]) / float(ranges[f])
            if clip:
                term = np.minimum(term, 1.0)
            acc += term
    return acc / len(active) if active else acc


def condensed_index(n: int, i: int, j: int) -> int:
    if i == j:
        raise IndexError("diagonal is not stored")
    if i > j:
        i, j = j, i
    return n * i - i * (i + 1) // 2 + (j - i - 1)


def _row_indices(n: int, i: int) -> np.ndarray:
    """Condensed positions of (i, j) for every j; the entry at j == i is a dummy 0."""
    j = np.arange(n)
    lower = n * j - j * (j + 1) // 2 + (i - j - 1)
    upper = n * i - i * (i + 1) // 2 + (j - i - 1)
    idx = np.where(j < i, lower, upper)
    idx[i] = 0
    return idx


@dataclass(frozen=True)
class DistanceMatrix:
    n: int
    condensed: np.ndarray
    ranges: np.ndarray
    kinds: tuple[FeatureKind, ...] = FEATURE_KINDS

    def __getitem__(self, ij) -> float:
        i, j = ij
        return 0.0 if i == j else float(self.condensed[condensed_index(self.n, i, j)])

    def row(self, i: int) -> np.ndarray:
        out = self.condensed[_row_indices(self.n, i)]
        out[i] = 0.0
        return out

    def square(self) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        iu = np.triu_indices(self.n, 1)
        out[iu] = self.condensed
        out[(iu[1], iu[0])] = self.condensed
        return out


def distance_matrix(values: np.ndarray, kinds: Sequence[FeatureKind] = FEATURE_KINDS,
                    ranges: np.ndarray | None = None) -> DistanceMatrix:
    """All pairwise Gower dissimilarities, condensed (row-major upper triangle)."""
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    if n < 2:
        raise ValueError("distance_matrix needs at least two vectors")
    if ranges is None:
        ranges = feature_ranges(values)
    out = np.empty(n * (n - 1) // 2)
    pos = 0
    for i in range(n - 1):
        m = n - i - 1
        out[pos:pos + m] = gower_to_many(values[i + 1:], values[i], ranges, kinds)
        pos += m
    return DistanceMatrix(n, out, np.asarray(ranges, dtype=float), tuple(kinds))


class Merge(NamedTuple):
    left: int
    right: int
    height: float
    size: int


@dataclass(frozen=True)
class Dendrogram:
    """Merge ``s`` creates node ``n + s``; leaves are nodes ``0 .. n-1``."""

    n: int
    merges: tuple[Merge, ...]

    @property
    def heights(self) -> np.ndarray:
        return np.array([m.height for m in self.merges])

    def linkage_matrix(self) -> np.ndarray:
        return np.array(self.merges, dtype=float).reshape(-1, 4)


def ward_cluster(matrix: DistanceMatrix) -> Dendrogram:
    """Agglomerate with Ward's criterion until one cluster remains.

    Ties on the minimal cost go to the pair with the lexicographically smallest
    (min index, max index), where a cluster's index is its smallest member.
    Uses the generic algorithm with a cached nearest neighbour per cluster.
    """
    n = matrix.n
    D = np.asarray(matrix.condensed, dtype=float) ** 2
    size = np.ones(n)
    active = np.ones(n, dtype=bool)
    node = np.arange(n)
    rows = [None] * n  # lazily cached index vectors

    def index(i):
        if rows[i] is None:
            rows[i] = _row_indices(n, i)
        return rows[i]

    def masked_row(i):
        r = D[index(i)]
        r[~active] = np.inf
        r[i] = np.inf
        return r

    nn_dist = np.full(n, np.inf)
    nn_idx = np.zeros(n, dtype=int)
    for i in range(n):
        r = masked_row(i)
        nn_idx[i] = int(np.argmin(r))
        nn_dist[i] = r[nn_idx[i]]

    merges = []
    for step in range(n - 1):
        a = int(np.argmin(np.where(active, nn_dist, np.inf)))
        b = int(nn_idx[a])
        a, b = min(a, b), max(a, b)
        h = float(D[condensed_index(n, a, b)])
        left, right = sorted((int(node[a]), int(node[b])))
        merges.append(Merge(left, right, h, int(size[a] + size[b])))

        row_a = D[index(a)]
        row_b = D[index(b)]
        others = active.copy()
        others[[a, b]] = False
        ks = np.flatnonzero(others)
        nk = size[ks]
        new = ((size[a] + nk) * row_a[ks] + (size[b] + nk) * row_b[ks] - nk * h) / (size[a] + size[b] + nk)
        D[index(a)[ks]] = new

        active[b] = False
        size[a] += size[b]
        node[a] = n + step
        nn_dist[b] = np.inf
        rows[b] = None
        if ks.size == 0:
            continue

        r = masked_row(a)
        nn_idx[a] = int(np.argmin(r))
        nn_dist[a] = r[nn_idx[a]]

        stale = (nn_idx[ks] == a) | (nn_idx[ks] == b)
        for k in ks[stale]:
            r = masked_row(k)
            nn_idx[k] = int(np.argmin(r))
            nn_dist[k] = r[nn_idx[k]]
        fresh = ks[~stale]
        new_fresh = new[~stale]
        closer = (new_fresh < nn_dist[fresh]) | ((new_fresh == nn_dist[fresh]) & (a < nn_idx[fresh]))
        nn_dist[fresh[closer]] = new_fresh[closer]
        nn_idx[fresh[closer]] = a
    return Dendrogram(n, tuple(merges))


@dataclass(frozen=True)
class ClusterAssignment:
    """Labels ``1..k``, numbered by each cluster's smallest member index."""

    k: int
    labels: np.ndarray

    def members(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.labels == label)


def cut(dendrogram: Dendrogram, k: int) -> ClusterAssignment:
    """Undo the last ``k - 1`` merges."""
    n = dendrogram.n
    if not 1 <= k <= n:
        raise errors.KOutOfRange(f"k={k} outside 1..{n}")
    parent = np.arange(2 * n - 1)
    for s, m in enumerate(dendrogram.merges[: n - k]):
        parent[m.left] = n + s
        parent[m.right] = n + s
    # merges only point forward, so resolving nodes in reverse order is a single pass
    root = parent.copy()
    for node in range(2 * n - 2, -1, -1):
        root[node] = root[root[node]] if root[node] != node else node
    leaf_roots = root[:n]
    labels = np.zeros(n, dtype=int)
    seen: dict[int, int] = {}
    for i, r in enumerate(leaf_roots.tolist()):
        if r not in seen:
            seen[r] = len(seen) + 1
        labels[i] = seen[r]
    return ClusterAssignment(k, labels)


def within_dispersion(matrix: DistanceMatrix, assignment: ClusterAssignment) -> float:
    """Sum over clusters of (1 / 2n_c) * sum_{i,j in c} d_ij^2."""
    labels = np.asarray(assignment.labels)
    if labels.size != matrix.n:
        raise errors.MismatchedSchema(f"{labels.size} labels for a matrix of {matrix.n} points")
    n = matrix.n
    pair_sums = np.zeros(labels.max() + 1)
    pos = 0
    for i in range(n - 1):
        m = n - i - 1
        d = matrix.condensed[pos:pos + m]
        same = labels[i + 1:] == labels[i]
        if same.any():
            pair_sums[labels[i]] += float(np.dot(d[same], d[same]))
        pos += m
    counts = np.bincount(labels, minlength=pair_sums.size)
    nz = counts > 0
    return float(np.sum(pair_sums[nz] / counts[nz]))


def write_merges(dendrogram: Dendrogram, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "left", "right", "height", "size"])
        for s, m in enumerate(dendrogram.merges, start=1):
            w.writerow([s, m.left, m.right, f"{m.height:.6f}", m.size])
