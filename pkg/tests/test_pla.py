import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from xmjoin import pla


def uniform_keys(n, seed, lo=0, hi=2**63):
    rng = np.random.default_rng(seed)
    keys = rng.integers(lo, hi, size=int(n * 1.2), dtype=np.uint64)
    keys = np.unique(keys)[:n]
    assert len(keys) == n
    return keys


def check_containment(idx, keys, queries):
    lo, hi, _ = idx.window_batch(queries)
    lb = np.searchsorted(keys, queries, side="left").astype(np.int64)
    assert bool(np.all(lo <= lb)), "window misses lower bound (low side)"
    assert bool(np.all(lb <= hi)), "window misses lower bound (high side)"
    present = np.isin(queries, keys)
    assert bool(np.all(lb[present] < hi[present])), \
        "present key's rank must fall strictly inside the window"
    assert bool(np.all(hi - lo <= idx.effective_window))


class TestBuild:
    @pytest.mark.parametrize("eps", [0, 1, 8, 256])
    def test_dense_sequential_is_one_segment(self, eps):
        keys = np.arange(100_000, dtype=np.uint64)
        idx = pla.build_pla(keys, eps)
        assert idx.segment_count == 1
        assert idx.segments[0].slope == pytest.approx(1.0)

    def test_training_error_bound_holds(self):
        keys = uniform_keys(200_000, seed=7)
        eps = 16
        idx = pla.build_pla(keys, eps)
        lo, hi, j = idx.window_batch(keys)
        # with k=1 an unclamped window has lo = round(pred) - eps
        rp = lo + eps
        ranks = np.arange(len(keys), dtype=np.int64)
        inner = (lo > 0) & (hi < len(keys))
        assert bool(np.all(np.abs(rp[inner] - ranks[inner]) <= eps))

    def test_segments_cover_all_ranks(self):
        keys = uniform_keys(50_000, seed=3)
        idx = pla.build_pla(keys, 4)
        starts = idx.start_ranks
        assert starts[0] == 0
        assert bool(np.all(np.diff(starts) > 0))
        assert starts[-1] < len(keys)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            pla.build_pla(np.array([], dtype=np.uint64), 4)
        with pytest.raises(ValueError):
            pla.build_pla(np.array([3, 3, 5], dtype=np.uint64), 4)
        with pytest.raises(ValueError):
            pla.build_pla(np.array([5, 3], dtype=np.uint64), 4)
        with pytest.raises(ValueError):
            pla.build_pla(np.arange(10, dtype=np.uint64), -1)

    def test_single_key(self):
        idx = pla.build_pla(np.array([42], dtype=np.uint64), 0)
        assert idx.lookup(42) == (0, 1)
        assert idx.lookup(0) == (0, 1)
        assert idx.lookup(100) == (0, 1)


class TestSampled:
    def test_training_count(self):
        keys = uniform_keys(1_000_000, seed=11)
        idx = pla.build_sampled(keys, 128, 15)
        assert idx.n_train == 7813  # ceil(1e6 / 128)
        assert idx.k == 128
        assert idx.n_keys == 1_000_000

    @pytest.mark.parametrize("eps,window", [(0, 256), (7, 2048), (15, 4096)])
    def test_effective_window_at_k128(self, eps, window):
        keys = uniform_keys(100_000, seed=5)
        idx = pla.build_sampled(keys, 128, eps)
        assert idx.effective_window == window

    def test_stride_fallback_for_tiny_tables(self):
        keys = np.array([10, 20, 30, 40, 50], dtype=np.uint64)
        idx = pla.build_sampled(keys, 100, 2)
        assert idx.k == 4  # n - 1
        assert idx.n_train == 2
        check_containment(idx, keys, np.arange(0, 60, dtype=np.uint64))
        with pytest.raises(ValueError):
            pla.build_sampled(keys[:1], 4, 2)

    def test_containment_sampled(self):
        keys = uniform_keys(300_000, seed=23)
        idx = pla.build_sampled(keys, 128, 7)
        rng = np.random.default_rng(24)
        absent = rng.integers(0, 2**63, size=100_000, dtype=np.uint64)
        check_containment(idx, keys, keys)
        check_containment(idx, keys, np.sort(absent))


class TestLookup:
    def test_exhaustive_containment_uniform(self):
        keys = uniform_keys(1_000_000, seed=1)
        idx = pla.build_pla(keys, 256)
        check_containment(idx, keys, keys)
        rng = np.random.default_rng(2)
        probes = np.sort(rng.integers(0, 2**63, size=500_000, dtype=np.uint64))
        check_containment(idx, keys, probes)

    def test_containment_tight_epsilon(self):
        keys = uniform_keys(50_000, seed=9)
        for eps in (0, 1, 4):
            idx = pla.build_pla(keys, eps)
            check_containment(idx, keys, keys)
            between = keys[:-1] + (np.diff(keys) // 2)
            check_containment(idx, keys, between)

    def test_windows_monotone_in_query(self):
        keys = uniform_keys(100_000, seed=13)
        idx = pla.build_pla(keys, 32)
        qs = np.sort(uniform_keys(80_000, seed=14))
        lo, hi, _ = idx.window_batch(qs)
        assert bool(np.all(np.diff(lo) >= 0))
        assert bool(np.all(np.diff(hi) >= 0))

    def test_scalar_matches_batch(self):
        keys = uniform_keys(20_000, seed=17)
        idx = pla.build_pla(keys, 8)
        qs = uniform_keys(500, seed=18)
        lo, hi, _ = idx.window_batch(qs)
        for i, q in enumerate(qs.tolist()):
            assert idx.lookup(q) == (lo[i], hi[i])

    def test_out_of_range_queries(self):
        keys = uniform_keys(10_000, seed=19, lo=2**20, hi=2**40)
        idx = pla.build_pla(keys, 16)
        assert idx.lookup(0).lo == 0
        w = idx.lookup(2**63)
        assert w.hi == len(keys)
        assert w.lo <= len(keys)


class TestCursor:
    def test_cursor_matches_lookup(self):
        keys = uniform_keys(100_000, seed=29)
        idx = pla.build_pla(keys, 16)
        qs = np.sort(uniform_keys(5_000, seed=30))
        cur = idx.cursor()
        lo, hi, _ = idx.window_batch(qs)
        for i, q in enumerate(qs.tolist()):
            assert cur.advance_to(q) == (lo[i], hi[i])
        assert cur.segment_id == idx.segment_count - 1 or \
            qs[-1] < idx.first_keys[-1]

    def test_advance_count_bounded_by_segments(self):
        keys = uniform_keys(50_000, seed=31)
        idx = pla.build_pla(keys, 8)
        cur = idx.cursor()
        for q in np.sort(uniform_keys(2_000, seed=32)).tolist():
            cur.advance_to(q)
        assert cur.advances <= idx.segment_count - 1

    def test_rejects_decreasing_queries(self):
        idx = pla.build_pla(np.arange(100, dtype=np.uint64), 2)
        cur = idx.cursor()
        cur.advance_to(50)
        with pytest.raises(ValueError):
            cur.advance_to(49)


class TestSerialization:
    def test_round_trip(self, tmp_path):
        keys = uniform_keys(100_000, seed=37)
        idx = pla.build_pla(keys, 16)
        path = tmp_path / "keys.pla"
        nbytes = pla.save(idx, path)
        assert nbytes == idx.size_bytes() == path.stat().st_size
        back = pla.load(path)
        assert back.n_keys == idx.n_keys
        assert back.k == idx.k and back.epsilon == idx.epsilon
        assert np.array_equal(back.first_keys, idx.first_keys)
        assert np.array_equal(back.slopes, idx.slopes)
        assert np.array_equal(back.start_ranks, idx.start_ranks)
        qs = uniform_keys(1_000, seed=38)
        assert np.array_equal(np.stack(back.window_batch(qs)[:2]),
                              np.stack(idx.window_batch(qs)[:2]))

    def test_size_accounting(self):
        keys = np.arange(1_000_000, dtype=np.uint64)
        idx = pla.build_pla(keys, 64)
        assert idx.size_bytes() == 40 + 32 * idx.segment_count
        assert idx.size_bytes() <= 4096  # dense data: a handful of segments

    def test_intercept_field_mirrors_start_rank(self):
        keys = uniform_keys(10_000, seed=39)
        blob = pla.serialize(pla.build_pla(keys, 8))
        segs = np.frombuffer(blob, dtype=pla._SEG_DTYPE, offset=40)
        assert np.array_equal(segs["intercept"],
                              segs["start_rank"].astype(np.float64))

    def test_rejects_corruption(self):
        idx = pla.build_pla(np.arange(1000, dtype=np.uint64), 4)
        blob = pla.serialize(idx)
        with pytest.raises(pla.CorruptIndexError):
            pla.deserialize(b"XXXX" + blob[4:])
        with pytest.raises(pla.CorruptIndexError):
            pla.deserialize(blob[:20])
        with pytest.raises(pla.CorruptIndexError):
            pla.deserialize(blob + b"\x00" * 8)  # length/count mismatch
        bad_ver = b"PLAI" + (99).to_bytes(4, "little") + blob[8:]
        with pytest.raises(pla.CorruptIndexError):
            pla.deserialize(bad_ver)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(min_value=0, max_value=2**48),
                min_size=1, max_size=400, unique=True),
       st.integers(min_value=0, max_value=8),
       st.integers(min_value=1, max_value=16))
def test_containment_property(raw, eps, k):
    keys = np.sort(np.array(raw, dtype=np.uint64))
    if len(keys) >= 2:
        idx = pla.build_sampled(keys, k, eps)
    else:
        idx = pla.build_pla(keys, eps)
    qs = np.unique(np.concatenate([
        keys,
        keys + np.uint64(1),
        np.maximum(keys, np.uint64(1)) - np.uint64(1),
    ]))
    check_containment(idx, keys, qs)
