import numpy as np
import pytest

from kgrec.errors import (
    CorruptSnapshot,
    DimensionMismatch,
    EmptyIndex,
    EmptyStore,
    NoSamples,
)
from kgrec.index import (
    HnswIndex,
    IvfIndex,
    LatencyMonitor,
    QueryCache,
    VectorStore,
    audit_hnsw,
    exact_search,
    hnsw_build,
    hnsw_search,
    ivf_build,
    ivf_search,
    load_index,
    save_index,
)

from oracles import naive_knn, naive_latency_stats


def random_store(n, d, seed=0):
    rng = np.random.default_rng(seed)
    ids = [f"a{i:05d}" for i in range(n)]
    return VectorStore(ids, rng.normal(size=(n, d)).astype(np.float32))


class TestVectorStore:
    def test_duplicate_ids_rejected(self):
        with pytest.raises(ValueError):
            VectorStore(["x", "x"], np.zeros((2, 3), dtype=np.float32))

    def test_non_finite_rejected(self):
        v = np.zeros((1, 2), dtype=np.float32)
        v[0, 0] = np.nan
        with pytest.raises(ValueError):
            VectorStore(["x"], v)

    def test_length_id_mismatch(self):
        with pytest.raises(DimensionMismatch):
            VectorStore(["x"], np.zeros((2, 2), dtype=np.float32))


class TestExactSearch:
    def test_single_vector(self):
        store = VectorStore(["only"], np.ones((1, 3), dtype=np.float32))
        result = exact_search(store, np.zeros(3, dtype=np.float32), 1)
        assert result[0][0] == "only"
        assert result[0][1] == pytest.approx(np.sqrt(3.0), abs=1e-6)

    def test_query_equals_stored(self):
        store = random_store(50, 8)
        q = store.vectors[17]
        result = exact_search(store, q, 5)
        assert result[0][0] == store.ids[17]
        assert result[0][1] == 0.0

    def test_matches_full_sort_oracle(self):
        store = random_store(1000, 16, seed=3)
        rng = np.random.default_rng(4)
        for _ in range(20):
            q = rng.normal(size=16).astype(np.float32)
            got = exact_search(store, q, 10)
            expected = naive_knn(store.ids, store.vectors, q, 10)
            assert [g[0] for g in got] == [e[0] for e in expected]
            for (gid, gd), (_eid, ed) in zip(got, expected):
                assert gd == pytest.approx(ed, abs=1e-4)

    def test_distances_non_decreasing(self):
        store = random_store(200, 4, seed=9)
        result = exact_search(store, np.zeros(4, dtype=np.float32), 50)
        dists = [d for _i, d in result]
        assert dists == sorted(dists)

    def test_tie_break_by_id(self):
        vecs = np.zeros((3, 2), dtype=np.float32)
        store = VectorStore(["c", "a", "b"], vecs)
        result = exact_search(store, np.zeros(2, dtype=np.float32), 3)
        assert [eid for eid, _d in result] == ["a", "b", "c"]

    def test_errors(self):
        store = random_store(3, 4)
        with pytest.raises(DimensionMismatch):
            exact_search(store, np.zeros(5, dtype=np.float32), 1)
        with pytest.raises(ValueError):
            exact_search(store, np.zeros(4, dtype=np.float32), 0)
        with pytest.raises(EmptyStore):
            exact_search(VectorStore([], np.zeros((0, 4), dtype=np.float32)),
                         np.zeros(4, dtype=np.float32), 1)


def recall_at_k(approx, exact, k):
    truth = {eid for eid, _d in exact[:k]}
    got = {eid for eid, _d in approx[:k]}
    return len(got & truth) / k


class TestHnsw:
    def test_single_point(self):
        store = random_store(1, 4)
        index = hnsw_build(store, m=4, ef_construction=10, seed=0)
        assert index.entry_point == 0
        result = hnsw_search(index, store.vectors[0], 1, 10)
        assert result[0][0] == store.ids[0]

    def test_deterministic_build(self, tmp_path):
        store = random_store(300, 8, seed=2)
        a = tmp_path / "a.kgsi"
        b = tmp_path / "b.kgsi"
        save_index(a, hnsw_build(store, m=8, ef_construction=50, seed=5))
        save_index(b, hnsw_build(store, m=8, ef_construction=50, seed=5))
        assert a.read_bytes() == b.read_bytes()

    def test_audit_passes_on_random_build(self):
        store = random_store(500, 16, seed=1)
        index = hnsw_build(store, m=8, ef_construction=64, seed=0)
        audit_hnsw(index)  # raises on violation

    def test_recall_on_small_set(self):
        store = random_store(2000, 16, seed=6)
        index = hnsw_build(store, m=12, ef_construction=100, seed=0)
        rng = np.random.default_rng(7)
        recalls = []
        for _ in range(30):
            q = rng.normal(size=16).astype(np.float32)
            approx = hnsw_search(index, q, 10, 64)
            exact = exact_search(store, q, 10)
            recalls.append(recall_at_k(approx, exact, 10))
        assert np.mean(recalls) >= 0.9

    def test_recall_monotone_in_ef_search(self):
        store = random_store(2000, 16, seed=8)
        index = hnsw_build(store, m=12, ef_construction=100, seed=0)
        rng = np.random.default_rng(11)
        queries = [rng.normal(size=16).astype(np.float32) for _ in range(20)]
        exacts = [exact_search(store, q, 10) for q in queries]
        means = []
        for ef in (16, 32, 64, 128):
            vals = [recall_at_k(hnsw_search(index, q, 10, ef), ex, 10)
                    for q, ex in zip(queries, exacts)]
            means.append(np.mean(vals))
        assert all(b >= a - 1e-12 for a, b in zip(means, means[1:]))

    def test_ef_search_below_k_rejected(self):
        store = random_store(50, 4)
        index = hnsw_build(store, m=4, ef_construction=20, seed=0)
        with pytest.raises(ValueError):
            hnsw_search(index, store.vectors[0], 10, 5)


class TestIvf:
    def test_nlist_one_equals_exact(self):
        store = random_store(300, 8, seed=4)
        index = ivf_build(store, nlist=1, seed=0)
        rng = np.random.default_rng(5)
        for _ in range(10):
            q = rng.normal(size=8).astype(np.float32)
            assert ivf_search(index, q, 5, 1) == exact_search(store, q, 5)

    def test_nprobe_equals_nlist_equals_exact(self):
        store = random_store(400, 8, seed=5)
        index = ivf_build(store, nlist=16, seed=0)
        rng = np.random.default_rng(6)
        for _ in range(10):
            q = rng.normal(size=8).astype(np.float32)
            assert ivf_search(index, q, 7, 16) == exact_search(store, q, 7)

    def test_lists_partition_store(self):
        store = random_store(500, 8, seed=7)
        index = ivf_build(store, nlist=10, seed=0)
        seen = np.concatenate([index.lists[c] for c in range(10)])
        assert sorted(seen.tolist()) == list(range(500))

    def test_invalid_params(self):
        store = random_store(10, 4)
        with pytest.raises(ValueError):
            ivf_build(store, nlist=11, seed=0)
        index = ivf_build(store, nlist=4, seed=0)
        with pytest.raises(ValueError):
            ivf_search(index, np.zeros(4, dtype=np.float32), 1, 5)

    def test_deterministic(self):
        store = random_store(200, 8, seed=8)
        a = ivf_build(store, nlist=8, seed=3)
        b = ivf_build(store, nlist=8, seed=3)
        np.testing.assert_array_equal(a.centroids, b.centroids)
        np.testing.assert_array_equal(a.assignments, b.assignments)


class TestLatencyMonitor:
    def test_mean(self):
        mon = LatencyMonitor(threshold_us=100)
        for t in (10, 20, 30):
            mon.record_latency(t)
        assert mon.latency_report()["avg_us"] == 20.0

    def test_threshold_is_strict(self):
        mon = LatencyMonitor(threshold_us=50)
        mon.record_latency(50)
        assert mon.latency_report()["within_threshold"] is False

    def test_no_samples(self):
        with pytest.raises(NoSamples):
            LatencyMonitor(threshold_us=10).latency_report()

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            LatencyMonitor(threshold_us=10).record_latency(-1)

    def test_against_recomputation_oracle(self, rng):
        samples = [int(x) for x in rng.integers(1, 10_000, size=1000)]
        mon = LatencyMonitor(threshold_us=5000)
        for s in samples:
            mon.record_latency(s)
        report = mon.latency_report()
        oracle = naive_latency_stats(samples, 5000)
        assert report["avg_us"] == pytest.approx(oracle["avg_us"])
        assert report["max_us"] == oracle["max_us"]
        assert report["p95_us"] == oracle["p95_us"]
        assert report["within_threshold"] == oracle["within_threshold"]


class TestQueryCache:
    def test_hit_and_miss(self):
        cache = QueryCache(maxsize=2)
        q = np.array([0.1, 0.2], dtype=np.float32)
        assert cache.get(q, 5) is None
        cache.put(q, 5, [("a", 0.0)])
        assert cache.get(q, 5) == [("a", 0.0)]
        assert cache.get(q, 6) is None

    def test_lru_eviction(self):
        cache = QueryCache(maxsize=2)
        qs = [np.array([float(i)], dtype=np.float32) for i in range(3)]
        for i, q in enumerate(qs):
            cache.put(q, 1, [(str(i), 0.0)])
        assert cache.get(qs[0], 1) is None
        assert cache.get(qs[2], 1) == [("2", 0.0)]


class TestSnapshots:
    @pytest.mark.parametrize("kind", ["exact", "hnsw", "ivf"])
    def test_round_trip_behavioral_equivalence(self, tmp_path, kind):
        store = random_store(300, 8, seed=10)
        if kind == "hnsw":
            index = hnsw_build(store, m=8, ef_construction=50, seed=1)
        elif kind == "ivf":
            index = ivf_build(store, nlist=8, seed=1)
        else:
            index = store
        path = tmp_path / f"{kind}.kgsi"
        save_index(path, index)
        loaded = load_index(path)

        rng = np.random.default_rng(11)
        for _ in range(100):
            q = rng.normal(size=8).astype(np.float32)
            if kind == "hnsw":
                assert hnsw_search(loaded, q, 5, 32) == hnsw_search(index, q, 5, 32)
            elif kind == "ivf":
                assert ivf_search(loaded, q, 5, 4) == ivf_search(index, q, 5, 4)
            else:
                assert exact_search(loaded, q, 5) == exact_search(index, q, 5)

    def test_reserialization_byte_identity(self, tmp_path):
        store = random_store(100, 4, seed=12)
        index = hnsw_build(store, m=4, ef_construction=20, seed=2)
        p1, p2 = tmp_path / "one.kgsi", tmp_path / "two.kgsi"
        save_index(p1, index)
        save_index(p2, load_index(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_audit_after_load(self, tmp_path):
        store = random_store(400, 8, seed=13)
        index = hnsw_build(store, m=8, ef_construction=40, seed=3)
        path = tmp_path / "h.kgsi"
        save_index(path, index)
        audit_hnsw(load_index(path))

    def test_empty_index_rejected(self, tmp_path):
        empty = VectorStore([], np.zeros((0, 4), dtype=np.float32))
        with pytest.raises(EmptyStore):
            save_index(tmp_path / "e.kgsi", empty)

    def test_corruption_detected(self, tmp_path):
        store = random_store(50, 4, seed=14)
        path = tmp_path / "c.kgsi"
        save_index(path, ivf_build(store, nlist=4, seed=0))
        blob = bytearray(path.read_bytes())

        flipped = bytearray(blob)
        flipped[20] ^= 0xFF
        path.write_bytes(bytes(flipped))
        with pytest.raises(CorruptSnapshot):
            load_index(path)

        path.write_bytes(b"XXXX" + bytes(blob[4:]))
        with pytest.raises(CorruptSnapshot):
            load_index(path)

        path.write_bytes(bytes(blob[:10]))
        with pytest.raises(CorruptSnapshot):
            load_index(path)
