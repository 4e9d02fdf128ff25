"""Multistage binary k-means with correlation distance, plus baselines.

Lloyd iterations run on normalized rows (centred, unit norm): the distance
from a row to a centroid is ``1 - z . c`` and the centroid update is the mean
of the member rows renormalized to unit length. Split and merge decisions
correlate these normalized-space centroids; the representative series kept
on every node and reported in a :class:`Parcellation` is the plain mean of the
member rows in the input units.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.cluster import hierarchy

from .core import TimeSeriesMatrix, make_rng, normalize_rows
from .errors import InvalidInput, ResourceLimit
from .volio import LabelVolume

HIERARCHICAL_MAX_N = 20000


@dataclass
class KMeansConfig:
    k: int = 2
    max_iters: int = 100
    replicates: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.k < 1 or self.max_iters < 1 or self.replicates < 1:
            raise InvalidInput("k, max_iters and replicates must be positive")


@dataclass
class MultistageConfig:
    ct: float = 0.7
    ns: int = 7
    max_iters: int = 100
    replicates: int = 5
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if not 0 < self.ct < 1:
            raise InvalidInput("correlation threshold must lie in (0, 1)")
        if self.ns < 1:
            raise InvalidInput("number of stages must be at least 1")

    def kmeans(self):
        return KMeansConfig(2, self.max_iters, self.replicates, self.seed)


@dataclass
class KMeansResult:
    labels: np.ndarray  # 1..k per row
    centroids: np.ndarray  # k x T raw-space member means (zeros for an empty cluster)
    unit_centroids: np.ndarray  # k x T normalized-space centroids
    objective: float
    iters_used: int
    distance_ops: int
    best_replicate: int
    replicate_ops: list = field(default_factory=list)
    replicate_iters: list = field(default_factory=list)
    objective_history: list = field(default_factory=list)
    seeding_ops: int = 0

    @property
    def sizes(self):
        return np.bincount(self.labels - 1, minlength=self.centroids.shape[0])


def _seed_distances(z, c):
    return 1.0 - np.clip(z @ c, -1.0, 1.0)



def kmeans_pp_seed(z, k, rng):
    """k-means++ seeding on normalized rows; returns ``(row indices, distance evaluations)``.

    The first seed is uniform. Each following seed is drawn with probability
    proportional to the squared correlation distance to the nearest chosen
    seed; when every unchosen row has distance 0 the draw is uniform over
    the unchosen rows.
    """
    n = z.shape[0]
    if not 1 <= k <= n:
        raise InvalidInput(f"cannot seed {k} centroids from {n} rows")
    chosen = [int(rng.integers(n))]
    taken = np.zeros(n, dtype=bool)
    taken[chosen[0]] = True
    nearest = _seed_distances(z, z[chosen[0]])
    ops = n
    for _ in range(1, k):
        weights = np.where(taken, 0.0, nearest**2)
        total = weights.sum()
        if total > 0:
            cum = np.cumsum(weights)
            pick = int(np.searchsorted(cum, rng.random() * total, side="right"))
            # u * total can round up to cum[-1]
            pick = min(pick, int(np.flatnonzero(weights)[-1]))
        else:
            free = np.flatnonzero(~taken)
            pick = int(free[rng.integers(free.size)])
        chosen.append(pick)
        taken[pick] = True
        nearest = np.minimum(nearest, _seed_distances(z, z[pick]))
        ops += n
    return np.array(chosen, dtype=np.int64), ops


def _member_sums(x, labels, k):
    onehot = np.zeros((k, x.shape[0]))
    onehot[labels, np.arange(x.shape[0])] = 1.0
    return onehot @ x


def _unit_means(z, labels, k):
    sums = _member_sums(z, labels, k)
    norms = np.sqrt(np.einsum("ij,ij->i", sums, sums))
    ok = norms > 0
    sums[ok] /= norms[ok, None]
    sums[~ok] = 0.0
    return sums


def _distances(z, centroids):
    d = z @ centroids.T
    np.minimum(d, 1.0, out=d)
    np.maximum(d, -1.0, out=d)
    np.subtract(1.0, d, out=d)
    return d


def _lloyd(z, k, max_iters, rng):
    """One replicate. Returns labels (0-based), unit centroids, objective, iters, history."""
    seeds, seed_ops = kmeans_pp_seed(z, k, rng)
    centroids = z[seeds]
    prev = None
    history = []
    for it in range(1, max_iters + 1):
        dist = _distances(z, centroids)
        labels = dist.argmin(axis=1)
        row_dist = dist.min(axis=1)
        history.append(float(row_dist.sum()))
        if prev is not None and np.array_equal(labels, prev):
            break
        prev = labels
        if it == max_iters:
            break
        centroids = _unit_means(z, labels, k)
        counts = np.bincount(labels, minlength=k)
        if counts.min() == 0:
            # re-seed each empty centroid at the worst-fitting row (lowest index on ties)
            order = np.argsort(-row_dist, kind="stable")
            for j, row in zip(np.flatnonzero(counts == 0), order):
                centroids[j] = z[row]
    return labels, centroids, history[-1], it, history, seed_ops


def kmeans(data, cfg, stream=(), _unit_rows=None):
    """Correlation-distance k-means with k-means++ seeding and replicates.

    Parameters
    ----------
    data : TimeSeriesMatrix or array_like, shape (N, T)
    cfg : KMeansConfig
        ``k`` larger than N is clamped to N.
    stream : tuple of int
        Extra RNG stream keys; replicate ``r`` draws from
        ``make_rng(cfg.seed, *stream, r)``.

    Returns
    -------
    KMeansResult
        The replicate with the lowest objective (lowest index on ties).
        ``distance_ops`` sums ``k * N`` per assignment step over all replicates.
    """
    raw = data.data if isinstance(data, TimeSeriesMatrix) else np.asarray(data, dtype=np.float64)
    if raw.ndim != 2 or raw.shape[0] < 1:
        raise InvalidInput("kmeans needs at least one row")
    n = raw.shape[0]
    k = min(cfg.k, n)
    z = normalize_rows(raw) if _unit_rows is None else _unit_rows
    best = None
    ops, iters, histories = [], [], []
    seeding = 0
    for r in range(cfg.replicates):
        labels, cents, obj, used, hist, seed_ops = _lloyd(z, k, cfg.max_iters, make_rng(cfg.seed, *stream, r))
        ops.append(used * k * n)
        iters.append(used)
        histories.append(hist)
        seeding += seed_ops
        if best is None or obj < best[2]:
            best = (labels, cents, obj, used, r)
    labels, cents, obj, used, r = best
    counts = np.bincount(labels, minlength=k)
    sums = _member_sums(raw, labels, k)
    raw_centroids = np.where(counts[:, None] > 0, sums / np.maximum(counts, 1)[:, None], 0.0)
    return KMeansResult(
        labels=labels + 1,
        centroids=raw_centroids,
        unit_centroids=cents,
        objective=float(obj),
        iters_used=used,
        distance_ops=int(sum(ops)),
        best_replicate=r,
        replicate_ops=ops,
        replicate_iters=iters,
        objective_history=histories,
        seeding_ops=seeding,
    )


@dataclass
class HierarchyNode:
    id: int
    stage: int
    members: np.ndarray
    centroid: np.ndarray
    parent: Optional[int] = None
    converged: bool = False
    children: tuple = ()
    split_child_correlation: Optional[float] = None
    # "threshold" | "singleton" | "last_stage"
    reason: Optional[str] = None

    @property
    def size(self):
        return int(self.members.size)


@dataclass
class HierarchyTree:
    nodes: list
    ct: float
    ns: int
    convergence_order: list = field(default_factory=list)
    # converged node id -> final cluster label
    node_labels: dict = field(default_factory=dict)

    def __getitem__(self, node_id):
        return self.nodes[node_id]

    @property
    def root(self):
        return self.nodes[0]

    def converged_nodes(self):
        return [self.nodes[i] for i in self.convergence_order]

    def early_converged(self, node_id):
        """True unless the node only stopped because the last stage was reached."""
        return self.nodes[node_id].reason != "last_stage"

    def to_dict(self):
        return {
            "ct": self.ct,
            "ns": self.ns,
            "convergence_order": list(self.convergence_order),
            "node_labels": {str(k): v for k, v in self.node_labels.items()},
            "nodes": [
                {
                    "id": nd.id,
                    "stage": nd.stage,
                    "parent": nd.parent,
                    "children": list(nd.children),
                    "converged": nd.converged,
                    "reason": nd.reason,
                    "n_voxels": nd.size,
                    "members": nd.members.tolist(),
                    "centroid": nd.centroid.tolist(),
                    "split_child_correlation": nd.split_child_correlation,
                }
                for nd in self.nodes
            ],
        }

    @classmethod
    def from_dict(cls, d):
        nodes = [
            HierarchyNode(
                id=nd["id"],
                stage=nd["stage"],
                members=np.asarray(nd.get("members", []), dtype=np.int64),
                centroid=np.asarray(nd["centroid"], dtype=np.float64),
                parent=nd["parent"],
                converged=nd["converged"],
                children=tuple(nd["children"]),
                split_child_correlation=nd["split_child_correlation"],
                reason=nd.get("reason"),
            )
            for nd in d["nodes"]
        ]
        return cls(
            nodes=nodes,
            ct=d["ct"],
            ns=d["ns"],
            convergence_order=list(d["convergence_order"]),
            node_labels={int(k): v for k, v in d["node_labels"].items()},
        )

    def structurally_equal(self, other):
        if (self.ct, self.ns, self.convergence_order, self.node_labels) != (
            other.ct, other.ns, other.convergence_order, other.node_labels
        ) or len(self.nodes) != len(other.nodes):
            return False
        for a, b in zip(self.nodes, other.nodes):
            if (a.id, a.stage, a.parent, tuple(a.children), a.converged, a.reason,
                    a.split_child_correlation) != (b.id, b.stage, b.parent, tuple(b.children),
                                                   b.converged, b.reason, b.split_child_correlation):
                return False
            if not (np.array_equal(a.members, b.members) and np.array_equal(a.centroid, b.centroid)):
                return False
        return True


@dataclass
class Parcellation:
    """Hard partition of the in-mask voxels into clusters 1..K."""

    labels: LabelVolume
    row_labels: np.ndarray  # 1..K per row of the clustered matrix
    representatives: np.ndarray  # K x T
    tree: Optional[HierarchyTree] = None
    distance_ops: int = 0

    @property
    def k(self):
        return self.representatives.shape[0]

    def members(self, label):
        return np.flatnonzero(self.row_labels == label)


def _relabel_first_seen(labels):
    """Map arbitrary labels to 1..K in order of first appearance."""
    _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.empty(first.size, dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(1, first.size + 1)
    return rank[inverse]


def build_parcellation(data, row_labels, tree=None, distance_ops=0):
    row_labels = np.asarray(row_labels, dtype=np.int64)
    k = int(row_labels.max())
    counts = np.bincount(row_labels - 1, minlength=k)
    reps = _member_sums(data.data, row_labels - 1, k) / counts[:, None]
    vol = np.zeros(data.geometry.shape, dtype=np.int64)
    c = data.index_map
    vol[c[:, 0], c[:, 1], c[:, 2]] = row_labels
    return Parcellation(LabelVolume(data.geometry, vol), row_labels, reps, tree, distance_ops)


def _unit_centroid(z, rows):
    s = z[rows].sum(axis=0)
    norm = np.linalg.norm(s)
    return s / norm if norm > 0 else s


def binary_split(members, data, z, cfg, stream=()):
    """Split ``members`` (sorted row indices) in two with correlation k-means.

    Returns
    -------
    (child_a, child_b, child_corr, distance_ops)
        ``child_a`` holds the smallest member index. When k-means leaves one
        child empty both children are ``None`` and ``child_corr`` is 1.
    """
    members = np.asarray(members, dtype=np.int64)
    if members.size < 2:
        raise InvalidInput("a split needs at least two member rows")
    res = kmeans(data[members], cfg, stream, _unit_rows=z[members])
    labels = res.labels
    if np.all(labels == labels[0]):
        return None, None, 1.0, res.distance_ops
    first = labels == labels[0]
    a, b = members[first], members[~first]
    ua, ub = _unit_centroid(z, a), _unit_centroid(z, b)
    corr = float(np.clip(ua @ ub, -1.0, 1.0))
    return a, b, corr, res.distance_ops


class UnionFind:
    """Disjoint sets over 0..n-1 with path halving and union by size."""

    def __init__(self, n):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, i):
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i, j):
        ri, rj = self.find(i), self.find(j)
        if ri == rj:
            return False
        if self.size[ri] < self.size[rj]:
            ri, rj = rj, ri
        self.parent[rj] = ri
        self.size[ri] += self.size[rj]
        return True


def merge_groups(unit_centroids, ct):
    """Group clusters by the transitive closure of ``corr >= ct``.

    Returns one group index per cluster, numbered by first member.
    """
    m = len(unit_centroids)
    uf = UnionFind(m)
    if m > 1:
        corr = np.clip(np.asarray(unit_centroids) @ np.asarray(unit_centroids).T, -1.0, 1.0)
        ii, jj = np.nonzero(np.triu(corr >= ct, 1))
        for i, j in zip(ii.tolist(), jj.tolist()):
            uf.union(i, j)
    return _relabel_first_seen(np.array([uf.find(i) for i in range(m)])) - 1


def multistage_cluster(data, cfg=None, merge=True):
    """Multistage binary k-means.

    Stage by stage, every live parent is split in two. A parent whose
    children correlate at or above ``cfg.ct`` (or that cannot be split)
    converges; otherwise both children are parents at the next stage.
    Parents still live after ``cfg.ns`` stages converge as they are. Finally,
    converged clusters whose centroids correlate at or above ``cfg.ct`` are
    merged (transitive closure) and labels are numbered in convergence order.

    Parameters
    ----------
    data : TimeSeriesMatrix
    cfg : MultistageConfig, optional
    merge : bool
        Skip the final merge pass when False (used by tests of the tree).

    Returns
    -------
    Parcellation
        ``tree`` holds the full :class:`HierarchyTree`.
    """
    cfg = cfg or MultistageConfig()
    if not isinstance(data, TimeSeriesMatrix):
        data = TimeSeriesMatrix.from_array(data)
    if data.t < 2:
        raise InvalidInput("time series need at least 2 points")
    z = normalize_rows(data.data)
    kcfg = cfg.kmeans()
    raw = data.data

    def new_node(rows, stage, parent):
        node = HierarchyNode(len(nodes), stage, rows, raw[rows].mean(axis=0), parent)
        nodes.append(node)
        return node

    def converge(node, reason):
        node.converged = True
        node.reason = reason
        order.append(node.id)

    nodes, order = [], []
    live = [new_node(np.arange(data.n), 0, None)]
    total_ops = 0
    pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None
    try:
        for stage in range(1, cfg.ns + 1):
            splittable = [nd for nd in live if nd.size >= 2]
            jobs = [(nd.members, raw, z, kcfg, (nd.id,)) for nd in splittable]
            results = pool.map(lambda a: binary_split(*a), jobs) if pool else (binary_split(*a) for a in jobs)
            outcome = dict(zip((nd.id for nd in splittable), results))
            nxt = []
            for nd in live:
                if nd.size < 2:
                    converge(nd, "singleton")
                    continue
                a, b, corr, ops = outcome[nd.id]
                total_ops += ops
                nd.split_child_correlation = corr
                if corr >= cfg.ct:
                    converge(nd, "threshold")
                else:
                    ca, cb = new_node(a, stage, nd.id), new_node(b, stage, nd.id)
                    nd.children = (ca.id, cb.id)
                    nxt.extend((ca, cb))
            live = nxt
            if not live:
                break
    finally:
        if pool:
            pool.shutdown()
    for nd in live:
        converge(nd, "last_stage")

    converged = [nodes[i] for i in order]
    if merge:
        groups = merge_groups([_unit_centroid(z, nd.members) for nd in converged], cfg.ct)
    else:
        groups = np.arange(len(converged))
    row_labels = np.zeros(data.n, dtype=np.int64)
    for nd, g in zip(converged, groups):
        row_labels[nd.members] = g + 1
    tree = HierarchyTree(
        nodes, cfg.ct, cfg.ns, order, {nd.id: int(g) + 1 for nd, g in zip(converged, groups)}
    )
    return build_parcellation(data, row_labels, tree, total_ops)


def simple_kmeans(data, k, cfg=None):
    """Flat correlation k-means with ``k`` clusters; labels numbered by first row."""
    if not isinstance(data, TimeSeriesMatrix):
        data = TimeSeriesMatrix.from_array(data)
    cfg = cfg or KMeansConfig()
    res = kmeans(data, KMeansConfig(k, cfg.max_iters, cfg.replicates, cfg.seed))
    return build_parcellation(data, _relabel_first_seen(res.labels), None, res.distance_ops)


@dataclass
class HierarchicalResult:
    parcellation: Parcellation
    linkage: np.ndarray
    matrix_ops: int
    merge_ops: int

    @property
    def distance_ops(self):
        return self.matrix_ops + self.merge_ops


def condensed_correlation_distance(raw, block=2048):
    """Condensed upper-triangle ``1 - corr`` vector, built in row blocks."""
    z = normalize_rows(raw)
    n = z.shape[0]
    out = np.empty(n * (n - 1) // 2)
    pos = 0
    for start in range(0, n - 1, block):
        stop = min(start + block, n - 1)
        sims = z[start:stop] @ z[start:].T
        # row-major boolean selection of j > i matches the condensed ordering
        upper = np.triu(np.ones(sims.shape, dtype=bool), 1)
        vals = 1.0 - np.clip(sims[upper], -1.0, 1.0)
        out[pos:pos + vals.size] = vals
        pos += vals.size
    return out


def hierarchical_cluster(data, k, max_n=HIERARCHICAL_MAX_N):
    """Average-linkage agglomerative clustering on correlation distance, cut at ``k``.

    ``matrix_ops`` is exactly N(N-1)/2. Each of the N-1 merges updates the
    linkage distance from the new cluster to every other remaining cluster,
    so ``merge_ops`` is (N-1)(N-2)/2.
    """
    if not isinstance(data, TimeSeriesMatrix):
        data = TimeSeriesMatrix.from_array(data)
    n = data.n
    if n > max_n:
        raise ResourceLimit(f"N = {n} exceeds the pairwise-matrix guard of {max_n}")
    if not 1 <= k <= n:
        raise InvalidInput(f"k must be in 1..{n}")
    if n == 1:
        return HierarchicalResult(build_parcellation(data, np.ones(1, dtype=np.int64)),
                                  np.zeros((0, 4)), 0, 0)
    dist = condensed_correlation_distance(data.data)
    link = hierarchy.linkage(dist, method="average")
    cut = hierarchy.cut_tree(link, n_clusters=k).ravel()
    matrix_ops = n * (n - 1) // 2
    merge_ops = (n - 1) * (n - 2) // 2
    parc = build_parcellation(data, _relabel_first_seen(cut), None, matrix_ops + merge_ops)
    return HierarchicalResult(parc, link, matrix_ops, merge_ops)
