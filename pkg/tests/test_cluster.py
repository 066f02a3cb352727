import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from segforge import errors
from segforge.cluster import (DistanceMatrix, condensed_index, cut, distance_matrix, feature_ranges, gower_distance,
                              gower_to_many, ward_cluster, within_dispersion, write_merges)
from segforge.features import FEATURE_KINDS, FeatureKind

from . import oracles

N, P, B = FeatureKind.NUMERIC, FeatureKind.PERCENTAGE, FeatureKind.BINARY
MIXED = (N, P, B, N, B)


def mixed_vectors(rng, n, kinds=MIXED):
    cols = []
    for k in kinds:
        if k is B:
            cols.append(rng.integers(0, 2, n).astype(float))
        elif k is P:
            cols.append(rng.random(n))
        else:
            cols.append(rng.normal(0, 10, n))
    return np.column_stack(cols)


def member_sets(dendrogram):
    nodes = {i: frozenset([i]) for i in range(dendrogram.n)}
    out = []
    for s, m in enumerate(dendrogram.merges):
        merged = nodes[m.left] | nodes[m.right]
        nodes[dendrogram.n + s] = merged
        out.append((merged, m.height))
    return out


# --- Gower -------------------------------------------------------------------

def test_gower_examples():
    a = np.zeros(25)
    b = a.copy()
    ranges = np.ones(25)
    assert gower_distance(a, a, ranges) == 0.0
    b[12] = 1  # RepeatBinary
    assert gower_distance(a, b, ranges) == pytest.approx(0.04)
    assert gower_distance([2.0], [7.0], [10.0], (N,)) == 0.5


def test_gower_zero_range_leaves_denominator():
    assert gower_distance([1.0, 0.0], [1.0, 1.0], [0.0, 1.0], (N, B)) == 1.0
    assert gower_distance([1.0, 1.0], [1.0, 1.0], [0.0, 0.0], (N, B)) == 0.0


def test_gower_clip():
    assert gower_distance([0.0], [30.0], [10.0], (N,)) == 3.0
    assert gower_distance([0.0], [30.0], [10.0], (N,), clip=True) == 1.0


def test_gower_schema():
    with pytest.raises(errors.MismatchedSchema):
        gower_distance([1.0, 2.0], [1.0], [1.0, 1.0], (N, N))
    with pytest.raises(errors.MismatchedSchema):
        gower_distance([1.0, 2.0], [1.0, 2.0], [1.0], (N,))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_gower_vector_path_matches_scalar(seed):
    rng = np.random.default_rng(seed)
    x = mixed_vectors(rng, 12)
    r = feature_ranges(x)
    many = gower_to_many(x, x[0], r, MIXED)
    for i in range(12):
        assert many[i] == gower_distance(x[i], x[0], r, MIXED) == oracles.gower(x[i], x[0], r, MIXED)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 4))
def test_agreeing_feature_never_increases_distance(seed, col):
    rng = np.random.default_rng(seed)
    x = mixed_vectors(rng, 6)
    r = feature_ranges(x)
    a, b = x[0].copy(), x[1].copy()
    base = gower_distance(a, b, r, MIXED)
    wider_a, wider_b = np.append(a, 1.0), np.append(b, 1.0)
    assert gower_distance(wider_a, wider_b, np.append(r, 1.0), MIXED + (N,)) <= base + 1e-15


# --- distance matrix ---------------------------------------------------------------

def test_identical_vectors_give_zero_matrix():
    dm = distance_matrix(np.ones((5, 3)), (N, P, B))
    assert np.all(dm.condensed == 0)


def test_two_vectors():
    x = np.array([[0.0, 0.2, 1.0], [4.0, 0.6, 0.0]])
    dm = distance_matrix(x, (N, P, B))
    assert dm.condensed.tolist() == [gower_distance(x[0], x[1], feature_ranges(x), (N, P, B))]


def test_random_matrix_against_per_pair_oracle():
    rng = np.random.default_rng(50)
    x = mixed_vectors(rng, 50)
    dm = distance_matrix(x, MIXED)
    assert np.all((dm.condensed >= 0) & (dm.condensed <= 1))
    sq = dm.square()
    assert np.array_equal(sq, sq.T) and np.all(np.diag(sq) == 0)
    for i, j in rng.integers(0, 50, size=(200, 2)):
        assert dm[i, j] == oracles.gower(x[i], x[j], dm.ranges, MIXED)
    for i in range(50):
        assert np.array_equal(dm.row(i), sq[i])


def test_condensed_index():
    n = 5
    pos = [condensed_index(n, i, j) for i in range(n) for j in range(i + 1, n)]
    assert pos == list(range(10))
    assert condensed_index(n, 3, 1) == condensed_index(n, 1, 3)
    with pytest.raises(IndexError):
        condensed_index(n, 2, 2)


# --- Ward ---------------------------------------------------------------------------------

def test_line_merges_nearest_pair_first():
    dm = distance_matrix(np.array([[0.0], [1.0], [5.0]]), (N,))
    dend = ward_cluster(dm)
    assert (dend.merges[0].left, dend.merges[0].right) == (0, 1)


def test_lance_williams_example():
    # d(i,j)^2 = 1, d(i,k)^2 = 25, d(j,k)^2 = 16; points 0, 1, 5 on a line
    dm = DistanceMatrix(3, np.array([1.0, 5.0, 4.0]), np.ones(1), (N,))
    dend = ward_cluster(dm)
    assert dend.merges[1].height == pytest.approx(27.0)
    coords = np.array([0.0, 1.0, 5.0])
    ss = lambda c: float(((c - c.mean()) ** 2).sum())  # noqa: E731
    assert 2 * (ss(coords) - ss(coords[:2]) - ss(coords[2:])) == pytest.approx(27.0)


@pytest.mark.parametrize("seed", range(10))
def test_ward_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    x = mixed_vectors(rng, 8)
    dm = distance_matrix(x, MIXED)
    got = member_sets(ward_cluster(dm))
    want = oracles.ward_merges(dm.square() ** 2)
    assert [s for s, _ in got] == [s for s, _ in want]
    assert np.allclose([h for _, h in got], [c for _, c in want], rtol=1e-9, atol=0)


def test_ward_heights_match_scipy():
    hierarchy = pytest.importorskip("scipy.cluster.hierarchy")
    rng = np.random.default_rng(3)
    x = mixed_vectors(rng, 60)
    dm = distance_matrix(x, MIXED)
    ours = ward_cluster(dm)
    theirs = hierarchy.linkage(dm.condensed, method="ward")
    assert np.allclose(np.sqrt(ours.heights), theirs[:, 2], rtol=1e-9)
    assert np.array_equal(np.array([m.size for m in ours.merges]), theirs[:, 3].astype(int))


def test_ward_tie_break_smallest_pair():
    # four equidistant points: every pair ties, so (0, 1) merges first; the
    # updated cost of {0,1} to 2 equals d(2,3)^2, and (0, 2) beats (2, 3)
    dm = DistanceMatrix(4, np.full(6, 0.5), np.ones(1), (N,))
    dend = ward_cluster(dm)
    assert (dend.merges[0].left, dend.merges[0].right) == (0, 1)
    assert dend.merges[1].height == pytest.approx(0.25)
    assert (dend.merges[1].left, dend.merges[1].right) == (2, 4)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(3, 40))
def test_dendrogram_invariants(seed, n):
    rng = np.random.default_rng(seed)
    dm = distance_matrix(mixed_vectors(rng, n), MIXED)
    dend = ward_cluster(dm)
    assert len(dend.merges) == n - 1
    assert np.all(np.diff(dend.heights) >= -1e-12)
    assert dend.merges[-1].size == n
    leaves = [c for m in dend.merges for c in (m.left, m.right) if c < n]
    assert sorted(leaves) == list(range(n))
    w = [within_dispersion(dm, cut(dend, k)) for k in range(1, n + 1)]
    assert np.all(np.diff(w) <= 1e-12) and w[-1] == 0.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(4, 30), st.integers(1, 4))
def test_permutation_preserves_partition(seed, n, k):
    rng = np.random.default_rng(seed)
    x = mixed_vectors(rng, n)
    perm = rng.permutation(n)
    a = cut(ward_cluster(distance_matrix(x, MIXED)), k).labels
    b = cut(ward_cluster(distance_matrix(x[perm], MIXED)), k).labels
    part = lambda lab, ids: sorted(sorted(ids[lab == c].tolist()) for c in np.unique(lab))  # noqa: E731
    assert part(a, np.arange(n)) == part(b, perm)


# --- cut and dispersion -----------------------------------------------------------

def test_cut_extremes_and_nesting():
    rng = np.random.default_rng(7)
    n = 20
    dend = ward_cluster(distance_matrix(mixed_vectors(rng, n), MIXED))
    assert set(cut(dend, 1).labels) == {1}
    assert sorted(cut(dend, n).labels) == list(range(1, n + 1))
    for k in range(2, n + 1):
        fine, coarse = cut(dend, k).labels, cut(dend, k - 1).labels
        assert len(set(fine)) == k
        for c in set(fine):
            assert len(set(coarse[fine == c])) == 1  # each fine cluster sits inside one coarse cluster
    with pytest.raises(errors.KOutOfRange):
        cut(dend, 0)
    with pytest.raises(errors.KOutOfRange):
        cut(dend, n + 1)


def test_labels_numbered_by_first_member():
    dm = distance_matrix(np.array([[9.0], [0.0], [9.1], [0.1]]), (N,))
    assert cut(ward_cluster(dm), 2).labels.tolist() == [1, 2, 1, 2]


def test_within_dispersion_cases():
    dm = DistanceMatrix(2, np.array([0.3]), np.ones(1), (N,))
    dend = ward_cluster(dm)
    assert within_dispersion(dm, cut(dend, 2)) == 0.0
    assert within_dispersion(dm, cut(dend, 1)) == pytest.approx(0.3 ** 2 / 2)


def test_two_blobs_reduce_dispersion():
    rng = np.random.default_rng(11)
    x = np.vstack([rng.normal(0, 1, (30, 2)), rng.normal(20, 1, (30, 2))])
    dm = distance_matrix(x, (N, N))
    dend = ward_cluster(dm)
    w1, w2 = within_dispersion(dm, cut(dend, 1)), within_dispersion(dm, cut(dend, 2))
    assert w2 < w1
    assert sorted(np.bincount(cut(dend, 2).labels)[1:].tolist()) == [30, 30]


def test_merges_csv(tmp_path):
    dend = ward_cluster(distance_matrix(np.array([[0.0], [1.0], [5.0]]), (N,)))
    write_merges(dend, tmp_path / "merges.csv")
    lines = (tmp_path / "merges.csv").read_text().splitlines()
    assert lines[0] == "step,left,right,height,size"
    assert lines[1].startswith("1,0,1,") and lines[2].startswith("2,2,3,1.080000,3")


def test_full_schema_defaults():
    rng = np.random.default_rng(0)
    x = rng.integers(0, 2, (10, 25)).astype(float)
    dm = distance_matrix(x)
    assert dm.kinds == FEATURE_KINDS and dm.condensed.size == 45
