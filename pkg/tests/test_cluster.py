import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.cluster.hierarchy import linkage
from scipy.spatial.distance import squareform
from sklearn.metrics import adjusted_rand_score

from trajforge import synth
from trajforge.cluster import (
    MergeStep,
    QualityScore,
    average_linkage,
    auto_k,
    cluster_group,
    cut,
    medoid,
    quality_score,
    representative_count,
    save_result,
)
from trajforge.dtw import DistanceMatrix
from trajforge.errors import ClusterError
from trajforge._jsonio import load_file


def naive_average_linkage(values):
    """Recompute every inter-cluster average from the leaf distances at each step."""
    n = len(values)
    clusters = {i: [i] for i in range(n)}
    out = []
    for step in range(n - 1):
        best = None
        ids = sorted(clusters)
        for x in range(len(ids)):
            for y in range(x + 1, len(ids)):
                a, b = ids[x], ids[y]
                d = np.mean([values[i, j] for i in clusters[a] for j in clusters[b]])
                if best is None or d < best[0] - 1e-12:
                    best = (d, a, b)
        d, a, b = best
        clusters[n + step] = clusters.pop(a) + clusters.pop(b)
        out.append((a, b, d))
    return out


def random_matrix(n, rng):
    pts = rng.normal(size=(n, 2))
    v = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    return DistanceMatrix(tuple(f"e{i:02d}" for i in range(n)), v)


def heights(hs):
    return [MergeStep(0, 0, h, 0, 0) for h in hs]


def test_linkage_trivial():
    assert average_linkage(DistanceMatrix(("a",), np.zeros((1, 1)))) == []
    m = average_linkage(DistanceMatrix(("a", "b"), np.array([[0, 0.7], [0.7, 0]])))
    assert len(m) == 1 and m[0].height == 0.7 and (m[0].left, m[0].right, m[0].new_id, m[0].size) == (0, 1, 2, 2)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 12), st.integers(0, 2**32 - 1))
def test_linkage_matches_naive_oracle(n, seed):
    dm = random_matrix(n, np.random.default_rng(seed))
    got = average_linkage(dm)
    ref = naive_average_linkage(dm.values)
    assert [(m.left, m.right) for m in got] == [(a, b) for a, b, _ in ref]
    np.testing.assert_allclose([m.height for m in got], [d for _, _, d in ref], rtol=0, atol=1e-12)
    hs = [m.height for m in got]
    assert all(y >= x for x, y in zip(hs, hs[1:]))
    assert got[-1].size == n


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 15), st.integers(0, 2**32 - 1))
def test_linkage_heights_match_scipy(n, seed):
    dm = random_matrix(n, np.random.default_rng(seed))
    ours = [m.height for m in average_linkage(dm)]
    theirs = linkage(squareform(dm.values, checks=False), method="average")[:, 2]
    np.testing.assert_allclose(ours, theirs, atol=1e-12)


def test_linkage_planted_four():
    v = np.array([[0, 1, 5, 6], [1, 0, 5.5, 6.5], [5, 5.5, 0, 2], [6, 6.5, 2, 0]], dtype=float)
    m = average_linkage(DistanceMatrix(tuple("abcd"), v))
    assert [(x.left, x.right, x.height) for x in m] == [(0, 1, 1.0), (2, 3, 2.0), (4, 5, 5.75)]


def test_linkage_tie_break_smallest_pair():
    v = np.ones((4, 4)) - np.eye(4)
    m = average_linkage(DistanceMatrix(tuple("abcd"), v))
    assert [(x.left, x.right) for x in m] == [(0, 1), (2, 3), (4, 5)]


def test_auto_k_examples():
    assert auto_k(heights([0.5, 0.5, 0.5])) == 1
    assert auto_k(heights([0.1, 0.12, 0.9])) == 2
    assert auto_k(heights([0.7])) == 1
    assert auto_k([]) == 1
    # zero heights use epsilon in the denominator
    assert auto_k(heights([0.0, 0.0, 1.0, 1.0])) == 3


def test_auto_k_planted_three():
    dm, truth = synth.planted_matrix([4, 5, 3], within=0.1, between=1.0, rng=3)
    m = average_linkage(dm)
    k = auto_k(m)
    assert k == 3
    labels = cut(m, k)
    assert adjusted_rand_score([truth[i] for i in dm.ids], labels) == 1.0


@settings(max_examples=40, deadline=None)
@given(
    # the gap rule needs at least one within-cluster merge height to contrast with
    st.lists(st.integers(1, 8), min_size=2, max_size=5).filter(lambda s: max(s) >= 2),
    st.integers(0, 2**32 - 1),
)
def test_planted_recovery_ari_one(sizes, seed):
    dm, truth = synth.planted_matrix(sizes, within=0.1, between=1.0, rng=seed)
    res = cluster_group(dm)
    assert res.k == len(sizes)
    assert adjusted_rand_score([truth[i] for i in res.ids], [res.labels[i] for i in res.ids]) == 1.0


def test_cut_examples():
    dm = random_matrix(6, np.random.default_rng(1))
    m = average_linkage(dm)
    assert cut(m, 1) == [0] * 6
    assert cut(m, 6) == list(range(6))
    with pytest.raises(ClusterError):
        cut(m, 0)
    with pytest.raises(ClusterError):
        cut(m, 7)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**32 - 1), st.data())
def test_cut_has_exactly_k_components(n, seed, data):
    m = average_linkage(random_matrix(n, np.random.default_rng(seed)))
    k = data.draw(st.integers(1, n))
    labels = cut(m, k)
    assert sorted(set(labels)) == list(range(k))
    # labels ordered by smallest member
    firsts = [labels.index(c) for c in range(k)]
    assert firsts == sorted(firsts)


def test_medoid_examples():
    pts = {"p0": 0.0, "p1": 1.0, "p10": 10.0}
    ids = tuple(pts)
    v = np.array([[abs(pts[a] - pts[b]) for b in ids] for a in ids])
    dm = DistanceMatrix(ids, v)
    assert medoid(["p0", "p1", "p10"], dm) == "p1"
    assert medoid(["p10"], dm) == "p10"
    pair = DistanceMatrix(("x", "w"), np.array([[0, 2.0], [2.0, 0]]))
    assert medoid(["x", "w"], pair) == "w"
    with pytest.raises(ClusterError):
        medoid([], dm)


def test_quality_score_examples():
    const = synth.episode("c", [synth.series("a", "action", "non_eef", "abs", "joint", np.ones((6, 2)))])
    ramp = synth.episode(
        "r",
        [synth.series("a", "action", "non_eef", "abs", "joint", np.outer(np.arange(6.0), [1.0, -2.0]))],
        frame_stats=[(50.0, True)] * 6,
    )
    q = quality_score(const)
    assert (q.smoothness, q.validity, q.combined) == (1.0, 1.0, 1.0)
    q = quality_score(ramp)
    assert q.smoothness == pytest.approx(1.0, abs=1e-15) and q.validity == 1.0
    jagged = synth.episode(
        "j",
        [synth.series("a", "action", "non_eef", "abs", "joint", np.array([[0.0], [1.0], [0.0], [1.0]]))],
        frame_stats=[(50.0, True), (50.0, False), (50.0, True), (50.0, True)],
    )
    q = quality_score(jagged)
    # second differences of [0,1,0,1] are -2, 2
    assert q.smoothness == pytest.approx(np.exp(-2.0)) and q.validity == 0.75
    assert q.combined == pytest.approx(0.5 * np.exp(-2.0) + 0.375)
    short = synth.episode("s", [synth.series("a", "action", "non_eef", "abs", "joint", np.array([[0.0], [5.0]]))])
    assert quality_score(short).smoothness == 1.0


def test_representative_count_rule():
    assert [representative_count(s) for s in (1, 2, 5, 9, 10, 12)] == [1, 2, 2, 2, 3, 3]


def test_representatives_hand_ranked_five():
    # points on a line at 0, 1, 2, 3, 10; summed distances 16, 13, 12, 13, 34 -> medoid "c"
    pos = {"a": 0.0, "b": 1.0, "c": 2.0, "d": 3.0, "e": 10.0}
    ids = tuple(pos)
    dm = DistanceMatrix(ids, np.array([[abs(pos[x] - pos[y]) for y in ids] for x in ids]))
    quality = {"a": 0.9, "b": 0.2, "c": 0.1, "d": 0.6, "e": 1.0}
    scores = {i: QualityScore(i, q, q, q) for i, q in quality.items()}
    res = cluster_group(dm, scores, k=1)
    assert res.medoids == {0: "c"}
    # proximity 1 - d/8: a .75, b .875, c 1, d .875, e 0
    # score: a .825, b .5375, c .55, d .7375, e .5
    assert res.representatives == {0: ("a", "d")}


def test_representatives_singleton_and_twelve():
    dm, _ = synth.planted_matrix([12, 1], rng=0)
    res = cluster_group(dm)
    assert res.k == 2
    sizes = {c: len(res.members(c)) for c in range(2)}
    for c, reps in res.representatives.items():
        assert len(reps) == (3 if sizes[c] == 12 else 1)
        assert set(reps) <= set(res.members(c))
        assert res.medoids[c] in res.members(c)


def test_cluster_group_permutation_invariant():
    dm, _ = synth.planted_matrix([4, 3, 5], rng=7)
    base = cluster_group(dm).to_dict()
    rng = np.random.default_rng(0)
    for _ in range(5):
        perm = list(dm.ids)
        rng.shuffle(perm)
        assert cluster_group(dm.reordered(perm)).to_dict() == base


def test_save_result_layout(tmp_path):
    dm, _ = synth.planted_matrix([2, 2], rng=1)
    res = cluster_group(dm)
    save_result(res, tmp_path / "r.json")
    d = load_file(tmp_path / "r.json")
    assert set(d) == {"k", "merges", "labels", "medoids", "representatives"}
    assert set(d["merges"][0]) == {"left", "right", "height", "size"}
    assert d["k"] == 2 and d["medoids"].keys() == {"0", "1"}
