"""Average-linkage agglomerative clustering of filter columns under cosine
similarity, with a strict stop threshold tau.

Merging uses the exact arithmetic-average Lance-Williams update

    sim(Ca+Cb, Cc) = (|Ca| * sim(Ca, Cc) + |Cb| * sim(Cb, Cc)) / (|Ca| + |Cb|)

so cluster-pair averages never have to be recomputed from scratch, giving
O(n^2 log n) with a lazy-deletion heap. Average linkage is reducible, so the
merge-similarity sequence is non-increasing and a single dendrogram can be
cut at any tau.

Conventions:
  - merges happen only while the best pair's average similarity is
    strictly greater than tau (duplicates do not merge at tau = 1);
  - a zero-norm column has similarity 0 against everything;
  - ties are broken by the lexicographically smallest
    (min member index, max member index) over the two clusters' members;
  - all similarity arithmetic is float64 even though weights are float32.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .featurize import FilterMatrix


def cosine_sim(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"length mismatch: {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


@dataclass
class SimilarityMatrix:
    entries: np.ndarray  # (n, n) float64, symmetric

    @property
    def n(self) -> int:
        return self.entries.shape[0]


def similarity_matrix(fm: FilterMatrix) -> SimilarityMatrix:
    """Pairwise cosine similarities of the filter columns."""
    cols = fm.columns.astype(np.float64)
    norms = np.linalg.norm(cols, axis=0)
    nonzero = norms > 0.0
    safe = np.where(nonzero, norms, 1.0)
    unit = cols / safe
    gram = unit.T @ unit
    gram[~nonzero, :] = 0.0
    gram[:, ~nonzero] = 0.0
    np.clip(gram, -1.0, 1.0, out=gram)
    idx = np.where(nonzero)[0]
    gram[idx, idx] = 1.0
    gram = (gram + gram.T) / 2.0
    return SimilarityMatrix(entries=gram)


def avg_cluster_sim(ca, cb, sim: SimilarityMatrix) -> float:
    """Mean pairwise similarity between two disjoint, non-empty index sets."""
    a, b = sorted(set(ca)), sorted(set(cb))
    if not a or not b:
        raise ValueError("clusters must be non-empty")
    if set(a) & set(b):
        raise ValueError("clusters must be disjoint")
    return float(sim.entries[np.ix_(a, b)].mean())


@dataclass
class Dendrogram:
    """Full merge history, independent of any threshold.

    merges[t] = (id_a, id_b, sim); initial clusters carry ids 0..n-1 and the
    merge at step t creates cluster n+t (scipy linkage numbering).
    """
    n: int
    merges: list[tuple[int, int, float]] = field(default_factory=list)


@dataclass
class Clustering:
    tau: float
    assignments: np.ndarray  # filter index -> cluster id (min member index)
    merge_log: list[tuple[int, int, float]]
    n_f: int

    def clusters(self) -> list[list[int]]:
        """Member lists ordered by cluster id (= min member index)."""
        groups: dict[int, list[int]] = {}
        for i, cid in enumerate(self.assignments):
            groups.setdefault(int(cid), []).append(i)
        return [groups[cid] for cid in sorted(groups)]


def build_dendrogram(sim: SimilarityMatrix) -> Dendrogram:
    """Run agglomeration to a single cluster, recording every merge."""
    n = sim.n
    dendro = Dendrogram(n=n)
    if n <= 1:
        return dendro

    S = sim.entries.copy()
    size = [1] * n
    lo = list(range(n))          # min member index per active slot
    hi = list(range(n))          # max member index per active slot
    linkage_id = list(range(n))  # slot -> dendrogram cluster id
    version = [0] * n
    active = [True] * n

    heap: list[tuple[float, int, int, int, int, int, int]] = []
    for i in range(n):
        row = S[i].tolist()
        for j in range(i + 1, n):
            heap.append((-row[j], i, j, i, 0, j, 0))
    heapq.heapify(heap)
    push = heapq.heappush

    for step in range(n - 1):
        while True:
            negsim, _, _, a, va, b, vb = heapq.heappop(heap)
            if active[a] and active[b] and version[a] == va and version[b] == vb:
                break
        sim_ab = -negsim

        dendro.merges.append((linkage_id[a], linkage_id[b], sim_ab))

        # keep the slot holding the smaller min member index
        if lo[b] < lo[a]:
            a, b = b, a
        idx = [c for c in range(n) if active[c] and c != a and c != b]
        if idx:
            S[a, idx] = (size[a] * S[a, idx] + size[b] * S[b, idx]) / (size[a] + size[b])
            S[idx, a] = S[a, idx]
        size[a] += size[b]
        hi[a] = max(hi[a], hi[b])
        active[b] = False
        version[a] += 1
        linkage_id[a] = n + step

        va, la, ha = version[a], lo[a], hi[a]
        sims = S[a, idx].tolist() if idx else []
        for c, s_ac in zip(idx, sims):
            m1 = la if la < lo[c] else lo[c]
            m2 = ha if ha > hi[c] else hi[c]
            if a < c:
                push(heap, (-s_ac, m1, m2, a, va, c, version[c]))
            else:
                push(heap, (-s_ac, m1, m2, c, version[c], a, va))
    return dendro


def cut_dendrogram(dendro: Dendrogram, tau: float) -> Clustering:
    """Partition induced by applying merges while their similarity is > tau."""
    n = dendro.n
    parent = list(range(n))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    cluster_of: dict[int, int] = {i: i for i in range(n)}  # dendrogram id -> a member
    merge_log = []
    for t, (ida, idb, s) in enumerate(dendro.merges):
        if not s > tau:
            break
        ra, rb = find(cluster_of[ida]), find(cluster_of[idb])
        parent[rb] = ra
        cluster_of[n + t] = ra
        merge_log.append((ida, idb, s))

    roots = np.array([find(i) for i in range(n)])
    assignments = np.empty(n, dtype=np.int64)
    for root in np.unique(roots):
        members = np.where(roots == root)[0]
        assignments[members] = members.min()
    return Clustering(
        tau=tau,
        assignments=assignments,
        merge_log=merge_log,
        n_f=len(np.unique(assignments)),
    )


def agglomerate(fm: FilterMatrix, tau: float) -> Clustering:
    """Cluster the columns of fm, merging while avg similarity exceeds tau."""
    if not -1.0 <= tau <= 1.0:
        raise ValueError(f"tau {tau} outside [-1, 1]")
    sim = similarity_matrix(fm)
    return cut_dendrogram(build_dendrogram(sim), tau)


def sweep(fm: FilterMatrix, taus: list[float]) -> list[tuple[float, int]]:
    """(tau, n_f) per requested tau, from one dendrogram cut repeatedly."""
    if not taus:
        raise ValueError("taus must be non-empty")
    dendro = build_dendrogram(similarity_matrix(fm))
    return [(tau, cut_dendrogram(dendro, tau).n_f) for tau in taus]
