"""Average-linkage clustering of DTW matrices and representative selection.

Node ids follow the usual dendrogram convention: leaves are ``0..N-1`` in the
order of the (id-sorted) distance matrix, and the merge at step ``s`` creates
node ``N + s``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _jsonio
from .dtw import DistanceMatrix, minmax_normalize
from .errors import ClusterError

DEFAULT_EPSILON = 1e-9


@dataclass(frozen=True)
class MergeStep:
    left: int
    right: int
    height: float
    new_id: int
    size: int


@dataclass(frozen=True)
class QualityScore:
    episode_id: str
    smoothness: float
    validity: float
    combined: float


@dataclass(frozen=True)
class ClusterResult:
    ids: tuple
    merges: tuple
    k: int
    labels: dict
    medoids: dict = field(default_factory=dict)
    representatives: dict = field(default_factory=dict)

    def members(self, c):
        return sorted(i for i, lab in self.labels.items() if lab == c)

    def to_dict(self):
        return {
            "k": self.k,
            "merges": [{"left": m.left, "right": m.right, "height": m.height, "size": m.size} for m in self.merges],
            "labels": dict(self.labels),
            "medoids": {str(c): e for c, e in self.medoids.items()},
            "representatives": {str(c): list(r) for c, r in self.representatives.items()},
        }


def save_result(result, path):
    _jsonio.dump_file(result.to_dict(), path)


def average_linkage(D):
    """Agglomerative clustering with average linkage.

    Accepts a :class:`DistanceMatrix` or a square array. Cluster distances are
    updated with the Lance-Williams rule
    ``d(A+B, C) = (|A| d(A, C) + |B| d(B, C)) / (|A| + |B|)``; ties between
    equally close pairs go to the smallest ``(left, right)`` id pair.
    """
    values = D.values if isinstance(D, DistanceMatrix) else np.asarray(D, dtype=np.float64)
    n = values.shape[0]
    if values.shape != (n, n) or n < 1:
        raise ClusterError(f"need a non-empty square matrix, got shape {values.shape}")
    dist = {}
    for i in range(n):
        for j in range(i + 1, n):
            dist[(i, j)] = float(values[i, j])
    size = {i: 1 for i in range(n)}
    active = list(range(n))
    merges = []
    for step in range(n - 1):
        (a, b), h = min(dist.items(), key=lambda kv: (kv[1], kv[0]))
        new = n + step
        na, nb = size[a], size[b]
        active.remove(a)
        active.remove(b)
        for c in active:
            dac = dist.pop((min(a, c), max(a, c)))
            dbc = dist.pop((min(b, c), max(b, c)))
            dist[(c, new)] = (na * dac + nb * dbc) / (na + nb)
        del dist[(a, b)]
        active.append(new)
        size[new] = na + nb
        merges.append(MergeStep(a, b, h, new, na + nb))
    heights = [m.height for m in merges]
    if any(y < x - 1e-12 * max(1.0, abs(x)) for x, y in zip(heights, heights[1:])):
        raise ClusterError("merge heights decreased; average linkage should be monotone")
    return merges


def auto_k(merges, epsilon=DEFAULT_EPSILON):
    """Cluster count at the largest relative gap between consecutive merge heights.

    With heights ``h_1 <= ... <= h_{N-1}`` the gap after merge ``i`` is
    ``(h_{i+1} - h_i) / max(h_i, epsilon)``; cutting there leaves ``N - i``
    clusters. No positive gap means a single cluster.
    """
    n = len(merges) + 1
    if n <= 2:
        return 1
    h = [m.height for m in merges]
    best_i, best_gap = 0, 0.0
    for i in range(1, n - 1):
        gap = (h[i] - h[i - 1]) / max(h[i - 1], epsilon)
        if gap > best_gap:
            best_i, best_gap = i, gap
    if best_i == 0:
        return 1
    return n - best_i


def cut(merges, k):
    """Labels for the ``k`` clusters left after undoing the last ``k - 1`` merges.

    Labels are numbered by each component's smallest leaf index.
    """
    n = len(merges) + 1
    if not 1 <= k <= n:
        raise ClusterError(f"k must lie in [1, {n}], got {k}")
    parent = list(range(2 * n - 1))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for m in merges[: n - k]:
        parent[find(m.left)] = m.new_id
        parent[find(m.right)] = m.new_id
    roots = {}
    labels = []
    for leaf in range(n):
        r = find(leaf)
        if r not in roots:
            roots[r] = len(roots)
        labels.append(roots[r])
    return labels


def medoid(members, D):
    """Member with the smallest summed distance to the others; ties go to the smallest id."""
    if not members:
        raise ClusterError("medoid of an empty cluster")
    idx = [D.index(m) for m in members]
    sub = D.values[np.ix_(idx, idx)]
    totals = sub.sum(axis=1)
    return min(zip(totals, members), key=lambda t: (t[0], t[1]))[1]


def quality_score(ep, w_smooth=0.5, w_valid=0.5):
    """Action smoothness and video validity of a canonicalized episode.

    Smoothness is ``exp(-mean ||a[t+1] - 2 a[t] + a[t-1]||)`` over the
    episode's action fields after per-episode min-max scaling; validity is
    the fraction of frames marked valid.
    """
    actions = [ep.fields[n].values for n in ep.field_names(role="action")]
    if ep.frame_count < 3 or not actions:
        smooth = 1.0
    else:
        (a,), _ = minmax_normalize([np.concatenate(actions, axis=1)])
        second = a[2:] - 2.0 * a[1:-1] + a[:-2]
        smooth = math.exp(-float(np.linalg.norm(second, axis=1).mean()))
    if ep.frame_stats is None or len(ep.frame_stats) == 0:
        valid = 1.0
    else:
        valid = sum(fs.valid for fs in ep.frame_stats) / len(ep.frame_stats)
    return QualityScore(ep.episode_id, smooth, valid, w_smooth * smooth + w_valid * valid)


def representative_count(size, size_cutoff=10):
    return 3 if size >= size_cutoff else min(2, size)


def select_representatives(result, D, scores, size_cutoff=10, w_proximity=0.5, w_quality=0.5):
    """Rank each cluster's members by medoid proximity and quality; keep the top 2 or 3."""
    reps = {}
    for c in range(result.k):
        members = result.members(c)
        med = result.medoids[c]
        dists = {m: D.d(m, med) for m in members}
        far = max(dists.values())
        ranked = []
        for m in members:
            prox = 1.0 if far == 0 else 1.0 - dists[m] / far
            q = scores[m].combined if m in scores else 0.0
            ranked.append((-(w_proximity * prox + w_quality * q), m))
        ranked.sort()
        reps[c] = tuple(m for _, m in ranked[: representative_count(len(members), size_cutoff)])
    return replace(result, representatives=reps)


def cluster_group(D, scores=None, epsilon=DEFAULT_EPSILON, size_cutoff=10, w_proximity=0.5, w_quality=0.5, k=None):
    """Cluster one task group end to end.

    The matrix is reordered by episode id first so that the result does not
    depend on the order episodes were listed in.
    """
    D = D.reordered(sorted(D.ids))
    merges = average_linkage(D)
    if k is None:
        k = auto_k(merges, epsilon)
    labels = cut(merges, k)
    label_map = dict(zip(D.ids, labels))
    result = ClusterResult(ids=D.ids, merges=tuple(merges), k=k, labels=label_map)
    medoids = {c: medoid(result.members(c), D) for c in range(k)}
    result = replace(result, medoids=medoids)
    return select_representatives(result, D, scores or {}, size_cutoff, w_proximity, w_quality)
