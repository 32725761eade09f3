import numpy as np
import pytest

from xmjoin import datagen, tablestore


class TestGenKeys:
    @pytest.mark.parametrize("dist", datagen.DISTRIBUTIONS)
    def test_sorted_distinct_and_deterministic(self, dist):
        a = datagen.gen_keys(20_000, dist, seed=5)
        b = datagen.gen_keys(20_000, dist, seed=5)
        assert np.array_equal(a, b)
        assert len(a) == 20_000
        assert bool(np.all(a[1:] > a[:-1]))

    @pytest.mark.parametrize("dist", ["usparse", "normal", "lognormal"])
    def test_seeds_differ(self, dist):
        a = datagen.gen_keys(5_000, dist, seed=1)
        b = datagen.gen_keys(5_000, dist, seed=2)
        assert not np.array_equal(a, b)

    def test_udense_is_sequential(self):
        assert np.array_equal(datagen.gen_keys(1000, "udense", seed=9),
                              np.arange(1000, dtype=np.uint64))

    def test_normal_center(self):
        keys = datagen.gen_keys(100_000, "normal", seed=3)
        mean = float(keys.mean())
        assert abs(mean - 2.0**63) / 2.0**63 < 0.01

    def test_lognormal_shape(self):
        keys = datagen.gen_keys(100_000, "lognormal", seed=4)
        med = float(np.median(keys.astype(np.float64)))
        assert 0.9 < med / 2.0**48 < 1.1  # exp(N(0,2)) has median 1
        assert float(keys.max()) / med > 1e3  # heavy upper tail

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            datagen.gen_keys(0, "udense", 1)
        with pytest.raises(ValueError):
            datagen.gen_keys(10, "zipf", 1)


class TestSample:
    def test_subset_and_deterministic(self):
        keys = datagen.gen_keys(50_000, "usparse", seed=7)
        s1 = datagen.sample_keys(keys, 0.01, seed=8)
        s2 = datagen.sample_keys(keys, 0.01, seed=8)
        assert np.array_equal(s1, s2)
        assert len(s1) == 500
        assert bool(np.all(np.isin(s1, keys)))
        assert bool(np.all(s1[1:] > s1[:-1]))

    def test_ratio_one_is_identity(self):
        keys = datagen.gen_keys(1_000, "usparse", seed=11)
        assert datagen.sample_keys(keys, 1.0, seed=12) is keys

    def test_ratio_one_table_copy_is_byte_identical(self, tmp_path):
        src, dst = tmp_path / "s.tbl", tmp_path / "d.tbl"
        datagen.gen_table(src, 3_000, "usparse", seed=13)
        datagen.sample_table(src, dst, 1.0, seed=14)
        assert src.read_bytes() == dst.read_bytes()

    def test_sample_table_keeps_values(self, tmp_path):
        src, dst = tmp_path / "s.tbl", tmp_path / "d.tbl"
        datagen.gen_table(src, 10_000, "lognormal", seed=15)
        n = datagen.sample_table(src, dst, 0.1, seed=16)
        assert n == 1000
        keys, values = tablestore.read_table(dst)
        assert np.array_equal(keys, values)  # generated tables: value = key

    def test_rejects_bad_ratio(self):
        keys = np.arange(10, dtype=np.uint64)
        for r in (0.0, -0.5, 1.5):
            with pytest.raises(ValueError):
                datagen.sample_keys(keys, r, seed=1)


class TestShuffleAndIngest:
    def test_shuffle_preserves_multiset(self, tmp_path):
        src, dst = tmp_path / "s.tbl", tmp_path / "d.tbl"
        datagen.gen_table(src, 5_000, "usparse", seed=17)
        datagen.shuffle_table(src, dst, seed=18)
        sk, sv = tablestore.read_table(src)
        dk, dv = tablestore.read_table(dst)
        assert not np.array_equal(sk, dk)  # actually permuted
        order = np.argsort(dk)
        assert np.array_equal(dk[order], sk)
        assert np.array_equal(dv[order], sv)

    def test_ingest_sorts_and_round_trips(self, tmp_path):
        rng = np.random.default_rng(19)
        keys = np.unique(rng.integers(0, 2**62, size=4_000,
                                      dtype=np.uint64))
        values = rng.integers(0, 2**64, size=len(keys), dtype=np.uint64)
        perm = rng.permutation(len(keys))
        raw = tmp_path / "pairs.raw"
        flat = np.empty(2 * len(keys), dtype="<u8")
        flat[0::2], flat[1::2] = keys[perm], values[perm]
        flat.tofile(raw)
        table = tmp_path / "t.tbl"
        n = datagen.ingest_raw(raw, table, sort=True)
        assert n == len(keys)
        gk, gv = tablestore.read_table(table)
        assert np.array_equal(gk, keys)
        assert np.array_equal(gv, values)

    def test_ingest_rejects_duplicates_and_ragged_input(self, tmp_path):
        raw = tmp_path / "bad.raw"
        np.array([5, 1, 5, 2], dtype="<u8").tofile(raw)
        with pytest.raises(ValueError, match="duplicate"):
            datagen.ingest_raw(raw, tmp_path / "t.tbl", sort=True)
        raw.write_bytes(b"\x00" * 24)  # not a multiple of 16
        with pytest.raises(ValueError, match="16-byte"):
            datagen.ingest_raw(raw, tmp_path / "t2.tbl")

    def test_ingest_unsorted_keeps_order(self, tmp_path):
        raw = tmp_path / "u.raw"
        np.array([9, 1, 3, 2, 7, 4], dtype="<u8").tofile(raw)
        datagen.ingest_raw(raw, tmp_path / "u.tbl", sort=False)
        keys, values = tablestore.read_table(tmp_path / "u.tbl")
        assert keys.tolist() == [9, 3, 7]
        assert values.tolist() == [1, 2, 4]

    def test_ingest_keys_dump_with_foreign_header(self, tmp_path):
        keys = np.arange(3, 900, 4, dtype=np.uint64)
        raw = tmp_path / "dump.bin"
        raw.write_bytes(len(keys).to_bytes(8, "little") + keys.tobytes())
        n = datagen.ingest_keys(raw, tmp_path / "t.tbl", skip_bytes=8)
        assert n == len(keys)
        gk, gv = tablestore.read_table(tmp_path / "t.tbl")
        assert np.array_equal(gk, keys)
        assert np.array_equal(gv, keys)  # value carries the key
        # without the offset the count word lands in the key stream
        with pytest.raises(ValueError):
            datagen.ingest_keys(raw, tmp_path / "t2.tbl")
        raw.write_bytes(b"\x01" * 12)
        with pytest.raises(ValueError, match="u64"):
            datagen.ingest_keys(raw, tmp_path / "t3.tbl")
