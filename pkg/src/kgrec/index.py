"""Retrieval layer: exact L2 oracle, HNSW graph index, IVF-Flat partitioned
index, per-query latency monitoring, and versioned index snapshots.

All builds are deterministic given a seed; indices are immutable after build
so concurrent searches are safe. Results are (id, distance) pairs sorted by
ascending distance with ties broken by ascending id.
"""

from __future__ import annotations

import heapq
import struct
import zlib
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CorruptSnapshot,
    DimensionMismatch,
    EmptyIndex,
    EmptyStore,
    NoSamples,
)

MAGIC_INDEX = b"KGSI"
INDEX_FORMAT_VERSION = 1

QueryResult = list[tuple[str, float]]


@dataclass
class VectorStore:
    ids: list[str]
    vectors: np.ndarray  # N x d, float32

    def __post_init__(self):
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if len(self.ids) != self.vectors.shape[0]:
            raise DimensionMismatch(
                f"{len(self.ids)} ids vs {self.vectors.shape[0]} vectors")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("store ids must be unique")
        if self.vectors.size and not np.all(np.isfinite(self.vectors)):
            raise ValueError("store vectors must be finite")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.ids)


def _check_query(store_dim: int, query: np.ndarray) -> np.ndarray:
    q = np.asarray(query, dtype=np.float32).ravel()
    if q.shape[0] != store_dim:
        raise DimensionMismatch(f"query dim {q.shape[0]} != store dim {store_dim}")
    return q


def _ranked(store: VectorStore, indices: np.ndarray, dists: np.ndarray,
            k: int) -> QueryResult:
    pairs = sorted(
        ((float(dists[j]), store.ids[int(indices[j])]) for j in range(len(indices)))
    )
    return [(eid, d) for d, eid in pairs[:k]]


def exact_search(store: VectorStore, query: np.ndarray, k: int) -> QueryResult:
    """True k nearest by full scan; the oracle the ANN structures answer to."""
    if len(store) == 0:
        raise EmptyStore("exact_search on empty store")
    if k < 1:
        raise ValueError("k must be >= 1")
    q = _check_query(store.dim, query)
    dists = np.linalg.norm(store.vectors - q, axis=1)
    if k >= len(store):
        tied = np.arange(len(store))
    else:
        # keep every index tied with the k-th smallest distance for id tie-break
        kth = np.partition(dists, k - 1)[k - 1]
        tied = np.nonzero(dists <= kth)[0]
    return _ranked(store, tied, dists[tied], k)


# ---------------------------------------------------------------------------
# HNSW
# ---------------------------------------------------------------------------

@dataclass
class HnswIndex:
    store: VectorStore
    m: int
    ef_construction: int
    seed: int
    levels: list[int] = field(default_factory=list)        # per-node top level
    neighbors: list[list[list[int]]] = field(default_factory=list)
    entry_point: int = -1
    max_level: int = -1

    @property
    def level_multiplier(self) -> float:
        return 1.0 / np.log(self.m)


class _Level0Graph:
    """Flat-array adjacency for the dense base layer plus shared search
    scratch.

    Distances use the squared form ``|v|^2 - 2 v.q + |q|^2`` with precomputed
    vector norms, and visited tracking uses a generation-stamped array, so
    expanding a node costs one masked gather and one small matmul.
    """

    def __init__(self, vectors: np.ndarray, cap: int):
        n = len(vectors)
        self.vectors = vectors.astype(np.float64)
        self.norms = np.einsum("nd,nd->n", self.vectors, self.vectors)
        self.nbr = np.full((n, cap), -1, dtype=np.int32)
        self.cnt = np.zeros(n, dtype=np.int32)
        self.visit_stamp = np.zeros(n, dtype=np.int64)
        self.generation = 0

    @classmethod
    def from_lists(cls, vectors: np.ndarray, lists: list[list[int]],
                   cap: int) -> "_Level0Graph":
        g = cls(vectors, cap)
        for node, lst in enumerate(lists):
            g.cnt[node] = len(lst)
            g.nbr[node, :len(lst)] = lst
        return g

    def neighbors_of(self, node: int) -> np.ndarray:
        return self.nbr[node, :self.cnt[node]]

    def set_neighbors(self, node: int, new: list[int]) -> None:
        self.cnt[node] = len(new)
        self.nbr[node, :len(new)] = new

    def append_neighbor(self, node: int, other: int) -> bool:
        """Add an edge if there is room; returns False when the list is full."""
        c = int(self.cnt[node])
        if c >= self.nbr.shape[1]:
            return False
        self.nbr[node, c] = other
        self.cnt[node] = c + 1
        return True

    def dist2(self, nodes: np.ndarray, q64: np.ndarray,
              q_norm: float) -> np.ndarray:
        d2 = self.norms[nodes] - 2.0 * (self.vectors[nodes] @ q64) + q_norm
        return np.maximum(d2, 0.0)


def _search_level0(g: _Level0Graph, q64: np.ndarray, q_norm: float,
                   entry: int, ef: int) -> list[tuple[float, int]]:
    """Beam search on the base layer; returns ≤ ef (dist2, idx) pairs sorted."""
    g.generation += 1
    gen = g.generation
    stamp = g.visit_stamp
    d0 = float(g.norms[entry] - 2.0 * (g.vectors[entry] @ q64) + q_norm)
    stamp[entry] = gen
    candidates = [(d0, entry)]                 # min-heap
    results = [(-d0, entry)]                   # max-heap by distance
    worst = d0
    full = ef <= 1
    while candidates:
        dist, node = heapq.heappop(candidates)
        if dist > worst and full:
            break
        nb = g.nbr[node, :g.cnt[node]]
        fresh = nb[stamp[nb] != gen]
        if not fresh.size:
            continue
        stamp[fresh] = gen
        dists = g.dist2(fresh, q64, q_norm)
        for nd, n in zip(dists.tolist(), fresh.tolist()):
            if not full or nd < worst:
                heapq.heappush(candidates, (nd, n))
                heapq.heappush(results, (-nd, n))
                if len(results) > ef:
                    heapq.heappop(results)
                worst = -results[0][0]
                full = len(results) >= ef
    return sorted((-d, n) for d, n in results)


def _search_upper(index: HnswIndex, g: _Level0Graph, q64: np.ndarray,
                  q_norm: float, entry: int, level: int) -> int:
    """Greedy descent on a sparse upper layer (ef = 1)."""
    best = entry
    best_d = float(g.norms[entry] - 2.0 * (g.vectors[entry] @ q64) + q_norm)
    improved = True
    while improved:
        improved = False
        nbrs = index.neighbors[best][level]
        if not nbrs:
            break
        arr = np.asarray(nbrs)
        dists = g.dist2(arr, q64, q_norm)
        j = int(np.argmin(dists))
        if dists[j] < best_d:
            best = int(arr[j])
            best_d = float(dists[j])
            improved = True
    return best


_SELECT_POOL_CAP = 256


def _select_neighbors(g: _Level0Graph, candidates: list[tuple[float, int]],
                      m: int) -> list[int]:
    """Diversity heuristic: keep a candidate only if it is closer to the query
    than to every already-kept neighbor; pruned candidates fill spare slots."""
    if len(candidates) <= m:
        return [n for _d, n in candidates]
    pool = candidates[:_SELECT_POOL_CAP]
    nodes = np.asarray([n for _d, n in pool])
    vecs = g.vectors[nodes]
    cross = (g.norms[nodes][:, None] - 2.0 * (vecs @ vecs.T)
             + g.norms[nodes][None, :])
    d_q = np.asarray([d for d, _n in pool])
    # dominated[j]: some kept neighbor is closer to candidate j than the query
    dominated = np.zeros(len(pool), dtype=bool)
    sel_rows: list[int] = []
    pruned: list[int] = []
    for i in range(len(pool)):
        if len(sel_rows) == m:
            break
        if not dominated[i]:
            sel_rows.append(i)
            dominated |= cross[:, i] < d_q
        else:
            pruned.append(i)
    for i in pruned:
        if len(sel_rows) == m:
            break
        sel_rows.append(i)
    return [int(nodes[i]) for i in sel_rows]




def _ranked_pairs(g: _Level0Graph, center: int, members) -> list[tuple[float, int]]:
    arr = np.asarray(members)
    q64 = g.vectors[center]
    dists = g.dist2(arr, q64, float(g.norms[center]))
    return sorted(zip(dists.tolist(), arr.tolist()))


def hnsw_build(store: VectorStore, m: int = 16, ef_construction: int = 200,
               seed: int = 0) -> HnswIndex:
    """Incremental insertion in ascending-id order with geometric levels."""
    if len(store) == 0:
        raise EmptyStore("cannot build HNSW over an empty store")
    if m < 2:
        raise ValueError("M must be >= 2")
    index = HnswIndex(store, m, ef_construction, seed)
    rng = np.random.default_rng(seed)
    m_l = index.level_multiplier
    order = sorted(range(len(store)), key=lambda i: store.ids[i])
    index.levels = [0] * len(store)
    index.neighbors = [[] for _ in range(len(store))]
    g = _Level0Graph(store.vectors, cap=2 * m)

    for idx in order:
        level = int(-np.log(max(rng.random(), 1e-300)) * m_l)
        index.levels[idx] = level
        index.neighbors[idx] = [[] for _ in range(level + 1)]
        if index.entry_point < 0:
            index.entry_point = idx
            index.max_level = level
            continue
        q64 = g.vectors[idx]
        q_norm = float(g.norms[idx])
        ep = index.entry_point
        for lev in range(index.max_level, level, -1):
            ep = _search_upper(index, g, q64, q_norm, ep, lev)
        # sparse upper layers of the new node
        for lev in range(min(level, index.max_level), 0, -1):
            found = _search_level_sparse(index, g, q64, q_norm, ep,
                                         ef_construction, lev)
            chosen = _select_neighbors(g, found, m)
            index.neighbors[idx][lev] = list(chosen)
            for nbr in chosen:
                lst = index.neighbors[nbr][lev]
                lst.append(idx)
                if len(lst) > m:
                    ranked = _ranked_pairs(g, nbr, lst)
                    index.neighbors[nbr][lev] = _select_neighbors(g, ranked, m)
            ep = found[0][1]
        # dense base layer; links up to the full 2M cap for navigability
        found = _search_level0(g, q64, q_norm, ep, ef_construction)
        chosen = _select_neighbors(g, found, 2 * m)
        g.set_neighbors(idx, chosen)
        for nbr in chosen:
            if not g.append_neighbor(nbr, idx):
                ranked = _ranked_pairs(g, nbr, g.neighbors_of(nbr).tolist() + [idx])
                g.set_neighbors(nbr, _select_neighbors(g, ranked, 2 * m))
        if level > index.max_level:
            index.max_level = level
            index.entry_point = idx

    for node in range(len(store)):
        index.neighbors[node][0] = [int(v) for v in g.neighbors_of(node)]
    _repair_connectivity(index)
    return index


def _search_level_sparse(index: HnswIndex, g: _Level0Graph, q64: np.ndarray,
                         q_norm: float, entry: int, ef: int,
                         level: int) -> list[tuple[float, int]]:
    """Beam search over a list-backed upper layer (small node counts)."""
    g.generation += 1
    gen = g.generation
    stamp = g.visit_stamp
    d0 = float(g.norms[entry] - 2.0 * (g.vectors[entry] @ q64) + q_norm)
    stamp[entry] = gen
    candidates = [(d0, entry)]
    results = [(-d0, entry)]
    while candidates:
        dist, node = heapq.heappop(candidates)
        if dist > -results[0][0] and len(results) >= ef:
            break
        nbrs = [n for n in index.neighbors[node][level] if stamp[n] != gen]
        if not nbrs:
            continue
        arr = np.asarray(nbrs)
        stamp[arr] = gen
        dists = g.dist2(arr, q64, q_norm)
        for nd, n in zip(dists.tolist(), nbrs):
            if len(results) < ef or nd < -results[0][0]:
                heapq.heappush(candidates, (nd, n))
                heapq.heappush(results, (-nd, n))
                if len(results) > ef:
                    heapq.heappop(results)
    return sorted((-d, n) for d, n in results)


def _reachable_level0(index: HnswIndex) -> set[int]:
    seen = {index.entry_point}
    frontier = [index.entry_point]
    while frontier:
        nxt = []
        for node in frontier:
            for nbr in index.neighbors[node][0]:
                if nbr not in seen:
                    seen.add(nbr)
                    nxt.append(nbr)
        frontier = nxt
    return seen


def _repair_connectivity(index: HnswIndex) -> None:
    """Reattach nodes orphaned by neighbor-list pruning.

    Nearest-M pruning can evict every incoming level-0 edge of a node. Every
    orphan in a pass is linked from its nearest reachable node; when that
    overflows the 2M cap the donor evicts its farthest neighbor that still has
    another incoming edge, so an eviction never manufactures a new orphan.
    Deterministic; settles in a handful of passes.
    """
    vectors = index.store.vectors.astype(np.float64)
    cap = 2 * index.m
    n = len(index.store)
    indeg = np.zeros(n, dtype=np.int64)
    for node in range(n):
        for nbr in index.neighbors[node][0]:
            indeg[nbr] += 1
    for _ in range(64):
        seen = _reachable_level0(index)
        missing = sorted(set(range(n)) - seen)
        if not missing:
            return
        reach = np.fromiter(sorted(seen), dtype=np.int64)
        r_vecs = vectors[reach]
        r_norms = np.einsum("nd,nd->n", r_vecs, r_vecs)
        for start in range(0, len(missing), 512):
            chunk = np.asarray(missing[start:start + 512])
            cross = (r_norms[:, None] - 2.0 * (r_vecs @ vectors[chunk].T))
            donors = reach[np.argmin(cross, axis=0)]
            for x, donor in zip(chunk.tolist(), donors.tolist()):
                lst = index.neighbors[donor][0]
                lst.append(x)
                indeg[x] += 1
                if len(lst) <= cap:
                    continue
                nbr_d = np.linalg.norm(vectors[lst] - vectors[donor], axis=1)
                order = sorted(zip(nbr_d.tolist(), lst), reverse=True)
                evict = next((c for _d, c in order if c != x and indeg[c] > 1),
                             None)
                if evict is None:
                    evict = next(c for _d, c in order if c != x)
                lst.remove(evict)
                indeg[evict] -= 1
    raise AssertionError("level-0 connectivity repair did not converge")


def _get_level0(index: HnswIndex) -> _Level0Graph:
    g = getattr(index, "_level0", None)
    if g is None:
        g = _Level0Graph.from_lists(
            index.store.vectors,
            [per_level[0] for per_level in index.neighbors],
            cap=2 * index.m)
        index._level0 = g  # type: ignore[attr-defined]
    return g


def hnsw_search(index: HnswIndex, query: np.ndarray, k: int,
                ef_search: int) -> QueryResult:
    """Greedy descent through upper levels, then an ef_search beam at level 0."""
    if index.entry_point < 0:
        raise EmptyIndex("HNSW index has no points")
    if ef_search < k:
        raise ValueError("ef_search must be >= k")
    q = _check_query(index.store.dim, query)
    g = _get_level0(index)
    q64 = q.astype(np.float64)
    q_norm = float(q64 @ q64)
    ep = index.entry_point
    for lev in range(index.max_level, 0, -1):
        ep = _search_upper(index, g, q64, q_norm, ep, lev)
    found = _search_level0(g, q64, q_norm, ep, ef_search)
    idxs = np.asarray([n for _d, n in found])
    # report the same float32 distances the exact oracle would
    dists = np.linalg.norm(index.store.vectors[idxs] - q, axis=1)
    return _ranked(index.store, idxs, dists, k)


def audit_hnsw(index: HnswIndex) -> None:
    """Degree caps, level nesting, and level-0 reachability; raises on failure."""
    n = len(index.store)
    for node in range(n):
        top = index.levels[node]
        if len(index.neighbors[node]) != top + 1:
            raise AssertionError(f"node {node}: level list length mismatch")
        for lev, lst in enumerate(index.neighbors[node]):
            cap = 2 * index.m if lev == 0 else index.m
            if len(lst) > cap:
                raise AssertionError(f"node {node} level {lev}: degree {len(lst)} > {cap}")
            for nbr in lst:
                if not (0 <= nbr < n):
                    raise AssertionError(f"node {node}: neighbor {nbr} out of range")
                if index.levels[nbr] < lev:
                    raise AssertionError(
                        f"node {node} level {lev}: neighbor {nbr} missing at level")
    # entry point must exist at the top level
    if index.levels[index.entry_point] != index.max_level:
        raise AssertionError("entry point level != max level")
    # BFS at level 0 from the entry point must reach every node
    seen = {index.entry_point}
    frontier = [index.entry_point]
    while frontier:
        nxt = []
        for node in frontier:
            for nbr in index.neighbors[node][0]:
                if nbr not in seen:
                    seen.add(nbr)
                    nxt.append(nbr)
        frontier = nxt
    if len(seen) != n:
        raise AssertionError(f"level-0 reachability: {len(seen)} of {n} nodes")


# ---------------------------------------------------------------------------
# IVF-Flat
# ---------------------------------------------------------------------------

@dataclass
class IvfIndex:
    store: VectorStore
    centroids: np.ndarray              # nlist x d
    assignments: np.ndarray            # (N,) centroid per point
    nlist: int
    kmeans_iters: int
    seed: int
    lists: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.lists:
            self.lists = [
                np.nonzero(self.assignments == c)[0] for c in range(self.nlist)
            ]


def _kmeans_pp_init(x: np.ndarray, nlist: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centroids = np.empty((nlist, x.shape[1]), dtype=x.dtype)
    first = int(rng.integers(n))
    centroids[0] = x[first]
    d2 = np.sum((x - centroids[0]) ** 2, axis=1).astype(np.float64)
    for c in range(1, nlist):
        total = d2.sum()
        if total <= 0:
            pick = int(rng.integers(n))
        else:
            pick = int(np.searchsorted(np.cumsum(d2), rng.random() * total))
            pick = min(pick, n - 1)
        centroids[c] = x[pick]
        d2 = np.minimum(d2, np.sum((x - centroids[c]) ** 2, axis=1))
    return centroids


def ivf_build(store: VectorStore, nlist: int, kmeans_iters: int = 20,
              seed: int = 0) -> IvfIndex:
    """Seeded k-means++ init plus Lloyd iterations; lists partition the store."""
    if len(store) == 0:
        raise EmptyStore("cannot build IVF over an empty store")
    if nlist > len(store):
        raise ValueError(f"nlist {nlist} > store size {len(store)}")
    if nlist < 1:
        raise ValueError("nlist must be >= 1")
    rng = np.random.default_rng(seed)
    x = store.vectors.astype(np.float64)
    centroids = _kmeans_pp_init(x, nlist, rng)
    assignments = np.zeros(len(store), dtype=np.int64)
    for _ in range(kmeans_iters):
        d2 = (
            np.sum(x * x, axis=1)[:, None]
            - 2.0 * x @ centroids.T
            + np.sum(centroids * centroids, axis=1)[None, :]
        )
        assignments = np.argmin(d2, axis=1)
        for c in range(nlist):
            members = x[assignments == c]
            if len(members):
                centroids[c] = members.mean(axis=0)
            else:
                # re-seed an empty cluster at the point farthest from its centroid
                worst = int(np.argmax(np.min(d2, axis=1)))
                centroids[c] = x[worst]
                assignments[worst] = c
    return IvfIndex(store, centroids.astype(np.float32), assignments,
                    nlist, kmeans_iters, seed)


def ivf_search(index: IvfIndex, query: np.ndarray, k: int,
               nprobe: int) -> QueryResult:
    """Exhaustive scan of the nprobe nearest inverted lists."""
    if nprobe < 1 or nprobe > index.nlist:
        raise ValueError(f"nprobe must be in [1, {index.nlist}]")
    q = _check_query(index.store.dim, query)
    cdists = np.linalg.norm(index.centroids - q, axis=1)
    probe = np.argsort(cdists, kind="stable")[:nprobe]
    member = np.concatenate([index.lists[c] for c in probe]) if len(probe) else np.array([], int)
    if member.size == 0:
        raise EmptyIndex("probed lists are empty")
    dists = np.linalg.norm(index.store.vectors[member] - q, axis=1)
    return _ranked(index.store, member, dists, k)


# ---------------------------------------------------------------------------
# latency monitoring
# ---------------------------------------------------------------------------

@dataclass
class LatencyMonitor:
    threshold_us: float
    samples_us: list[int] = field(default_factory=list)

    def record_latency(self, latency_us: int) -> None:
        if latency_us < 0:
            raise ValueError("latency must be non-negative")
        self.samples_us.append(int(latency_us))

    def latency_report(self) -> dict[str, float | bool]:
        """Mean/max/p95 and the strict mean-below-threshold flag."""
        if not self.samples_us:
            raise NoSamples("no latencies recorded")
        arr = np.asarray(self.samples_us, dtype=np.float64)
        n = len(arr)
        p95_rank = max(int(np.ceil(0.95 * n)) - 1, 0)
        p95 = float(np.sort(arr)[p95_rank])
        avg = float(arr.mean())
        return {
            "avg_us": avg,
            "max_us": float(arr.max()),
            "p95_us": p95,
            "count": n,
            "within_threshold": bool(avg < self.threshold_us),
        }


# ---------------------------------------------------------------------------
# optional query-result cache (disabled unless constructed explicitly)
# ---------------------------------------------------------------------------

class QueryCache:
    """LRU over quantized query vectors; excluded from recall measurements."""

    def __init__(self, maxsize: int = 1024, quant_step: float = 1e-3):
        self.maxsize = maxsize
        self.quant_step = quant_step
        self._cache: OrderedDict[tuple, QueryResult] = OrderedDict()
        self.hits = 0
        self.misses = 0

    def _key(self, query: np.ndarray, k: int) -> tuple:
        q = np.round(np.asarray(query, dtype=np.float64) / self.quant_step)
        return (k,) + tuple(int(v) for v in q)

    def get(self, query: np.ndarray, k: int) -> QueryResult | None:
        key = self._key(query, k)
        if key in self._cache:
            self._cache.move_to_end(key)
            self.hits += 1
            return self._cache[key]
        self.misses += 1
        return None

    def put(self, query: np.ndarray, k: int, result: QueryResult) -> None:
        key = self._key(query, k)
        self._cache[key] = result
        self._cache.move_to_end(key)
        if len(self._cache) > self.maxsize:
            self._cache.popitem(last=False)


# ---------------------------------------------------------------------------
# snapshots
# ---------------------------------------------------------------------------

_KIND_EXACT = 0
_KIND_HNSW = 1
_KIND_IVF = 2


def _pack_store(out: bytearray, store: VectorStore) -> None:
    out += struct.pack("<II", len(store), store.dim)
    for eid in store.ids:
        enc = eid.encode("utf-8")
        out += struct.pack("<H", len(enc))
        out += enc
    out += store.vectors.astype("<f4").tobytes()


class _Reader:
    def __init__(self, blob: bytes, offset: int):
        self.blob = blob
        self.offset = offset

    def unpack(self, fmt: str):
        vals = struct.unpack_from(fmt, self.blob, self.offset)
        self.offset += struct.calcsize(fmt)
        return vals

    def raw(self, nbytes: int) -> bytes:
        out = self.blob[self.offset:self.offset + nbytes]
        if len(out) != nbytes:
            raise CorruptSnapshot("truncated payload")
        self.offset += nbytes
        return out


def _unpack_store(r: _Reader) -> VectorStore:
    n, dim = r.unpack("<II")
    ids = []
    for _ in range(n):
        (ln,) = r.unpack("<H")
        ids.append(r.raw(ln).decode("utf-8"))
    vec = np.frombuffer(r.raw(4 * n * dim), dtype="<f4").reshape(n, dim)
    return VectorStore(ids, vec.copy())


def save_index(path, index: "HnswIndex | IvfIndex | VectorStore") -> None:
    """Versioned binary snapshot with a trailing CRC32; empty indices rejected.

    A bare ``VectorStore`` is saved as an exact (brute-force) index.
    """
    store = index if isinstance(index, VectorStore) else index.store
    if len(store) == 0:
        raise EmptyStore("refusing to save an empty index")
    out = bytearray()
    out += MAGIC_INDEX
    if isinstance(index, VectorStore):
        out += struct.pack("<IB", INDEX_FORMAT_VERSION, _KIND_EXACT)
        _pack_store(out, index)
    elif isinstance(index, HnswIndex):
        out += struct.pack("<IB", INDEX_FORMAT_VERSION, _KIND_HNSW)
        _pack_store(out, index.store)
        out += struct.pack("<IIIii", index.m, index.ef_construction, index.seed,
                           index.entry_point, index.max_level)
        for node in range(len(index.store)):
            out += struct.pack("<I", index.levels[node])
            for lst in index.neighbors[node]:
                out += struct.pack("<I", len(lst))
                out += np.asarray(lst, dtype="<u4").tobytes()
    elif isinstance(index, IvfIndex):
        out += struct.pack("<IB", INDEX_FORMAT_VERSION, _KIND_IVF)
        _pack_store(out, index.store)
        out += struct.pack("<III", index.nlist, index.kmeans_iters, index.seed)
        out += index.centroids.astype("<f4").tobytes()
        out += index.assignments.astype("<u4").tobytes()
    else:
        raise TypeError(f"cannot snapshot {type(index).__name__}")
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    with open(path, "wb") as fh:
        fh.write(bytes(out))


def load_index(path) -> "HnswIndex | IvfIndex | VectorStore":
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 13 or blob[:4] != MAGIC_INDEX:
        raise CorruptSnapshot(f"{path}: bad magic")
    (stored_crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) != stored_crc:
        raise CorruptSnapshot(f"{path}: CRC mismatch")
    r = _Reader(blob, 4)
    version, kind = r.unpack("<IB")
    if version != INDEX_FORMAT_VERSION:
        raise CorruptSnapshot(f"{path}: unsupported version {version}")
    store = _unpack_store(r)
    if kind == _KIND_EXACT:
        return store
    if kind == _KIND_HNSW:
        m, efc, seed, entry, max_level = r.unpack("<IIIii")
        index = HnswIndex(store, m, efc, seed)
        index.entry_point = entry
        index.max_level = max_level
        index.levels = []
        index.neighbors = []
        for _ in range(len(store)):
            (top,) = r.unpack("<I")
            index.levels.append(top)
            per_level = []
            for _lev in range(top + 1):
                (cnt,) = r.unpack("<I")
                lst = np.frombuffer(r.raw(4 * cnt), dtype="<u4")
                per_level.append([int(v) for v in lst])
            index.neighbors.append(per_level)
        return index
    if kind == _KIND_IVF:
        nlist, iters, seed = r.unpack("<III")
        centroids = np.frombuffer(r.raw(4 * nlist * store.dim), dtype="<f4")
        centroids = centroids.reshape(nlist, store.dim).copy()
        assignments = np.frombuffer(r.raw(4 * len(store)), dtype="<u4").astype(np.int64)
        return IvfIndex(store, centroids, assignments, nlist, iters, seed)
    raise CorruptSnapshot(f"{path}: unknown index kind {kind}")
