"""Table file format, window buffering, and I/O accounting."""

import os
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from xmjoin.tablestore import (
    BLOCK_BYTES,
    FormatError,
    IoStats,
    TableReader,
    TableWriter,
    data_blocks,
    logical_size,
    physical_size,
    read_table,
    write_table,
)


def make_table(path, n, start=0, step=3):
    keys = (np.arange(n, dtype=np.uint64) * np.uint64(step)
            + np.uint64(start))
    values = keys + np.uint64(1)
    write_table(path, keys, values)
    return keys, values


class TestLayout:
    def test_empty_table_logical_length_is_header_only(self, tmp_path):
        p = tmp_path / "empty.xmt"
        write_table(p, np.empty(0, dtype=np.uint64))
        with TableReader(p) as r:
            assert r.tuple_count == 0
            assert r.logical_size == 16
        assert os.path.getsize(p) == BLOCK_BYTES  # header block, padded

    def test_three_tuples_logical_length(self, tmp_path):
        p = tmp_path / "three.xmt"
        make_table(p, 3)
        with TableReader(p) as r:
            assert r.logical_size == 64  # 16 + 3 * 16

    def test_physical_length_formula(self, tmp_path):
        for n in (0, 1, 255, 256, 257, 1000):
            p = tmp_path / f"t{n}.xmt"
            make_table(p, n)
            assert os.path.getsize(p) == physical_size(n)
            assert physical_size(n) == BLOCK_BYTES * (1 + data_blocks(n))

    def test_huge_table_size_arithmetic(self):
        # spot value: 200M tuples occupy 3.2 GB of payload
        assert logical_size(200_000_000) == 3_200_000_016

    def test_header_fields(self, tmp_path):
        p = tmp_path / "h.xmt"
        make_table(p, 300)
        raw = open(p, "rb").read(16)
        count, tsize = struct.unpack("<QQ", raw)
        assert (count, tsize) == (300, 16)

    def test_wrong_tuple_size_rejected(self, tmp_path):
        p = tmp_path / "bad.xmt"
        make_table(p, 10)
        with open(p, "r+b") as f:
            f.seek(8)
            f.write(struct.pack("<Q", 32))
        with pytest.raises(FormatError):
            TableReader(p)

    def test_truncated_data_region_rejected(self, tmp_path):
        p = tmp_path / "trunc.xmt"
        make_table(p, 600)
        os.truncate(p, physical_size(600) - BLOCK_BYTES)
        with pytest.raises(FormatError):
            TableReader(p)

    def test_header_count_mismatch_rejected(self, tmp_path):
        p = tmp_path / "cnt.xmt"
        make_table(p, 600)
        with open(p, "r+b") as f:
            f.write(struct.pack("<Q", 9000))
        with pytest.raises(FormatError):
            TableReader(p)


class TestRoundTrip:
    @settings(max_examples=25, deadline=None)
    @given(n=st.integers(min_value=0, max_value=5000),
           seed=st.integers(min_value=0, max_value=2**32 - 1))
    def test_random_tables_round_trip(self, tmp_path_factory, n, seed):
        rng = np.random.default_rng(seed)
        keys = np.unique(rng.integers(0, 2**63, size=n + 16, dtype=np.uint64))
        keys = keys[:n]
        values = rng.integers(0, 2**64, size=len(keys), dtype=np.uint64)
        p = tmp_path_factory.mktemp("rt") / "t.xmt"
        write_table(p, keys, values)
        k2, v2 = read_table(p)
        np.testing.assert_array_equal(keys, k2)
        np.testing.assert_array_equal(values, v2)

    def test_block_boundary_sizes(self, tmp_path):
        for n in (1, 255, 256, 257, 512, 513, 10_000):
            p = tmp_path / f"b{n}.xmt"
            keys, values = make_table(p, n)
            k2, v2 = read_table(p)
            np.testing.assert_array_equal(keys, k2)
            np.testing.assert_array_equal(values, v2)

    def test_unsorted_append_rejected_in_sorted_mode(self, tmp_path):
        with TableWriter(tmp_path / "s.xmt", require_sorted=True) as w:
            w.append(np.array([5, 9], dtype=np.uint64))
            with pytest.raises(ValueError):
                w.append(np.array([9], dtype=np.uint64))  # ties forbidden
            with pytest.raises(ValueError):
                w.append(np.array([20, 4], dtype=np.uint64))
            w.append(np.array([30], dtype=np.uint64))

    def test_unsorted_mode_allows_any_order(self, tmp_path):
        p = tmp_path / "u.xmt"
        keys = np.array([9, 2, 7, 2], dtype=np.uint64)
        write_table(p, keys, sorted_keys=False)
        k2, _ = read_table(p)
        np.testing.assert_array_equal(keys, k2)


class TestWriteAccounting:
    def test_300_tuples_flush_writes_two_data_blocks(self, tmp_path):
        stats = IoStats()
        w = TableWriter(tmp_path / "w.xmt", stats=stats)
        w.append(np.arange(300, dtype=np.uint64))
        w.flush()
        assert stats.blocks_written == 2
        assert stats.bytes_written == 300 * 16
        w.close()
        count, _ = struct.unpack("<QQ", open(tmp_path / "w.xmt", "rb").read(16))
        assert count == 300

    def test_buffered_appends_coalesce(self, tmp_path):
        stats = IoStats()
        with TableWriter(tmp_path / "c.xmt", stats=stats,
                         buffer_blocks=4) as w:
            for i in range(0, 2048, 64):
                w.append(np.arange(i, i + 64, dtype=np.uint64))
        # 2048 tuples = 8 blocks; drained in >=1-block batches, so at most
        # 8 block-writes plus the final partial (none here)
        assert stats.blocks_written == 8
        assert stats.io_calls == 0  # writes are not read calls


class TestWindowReads:
    def test_cold_window_costs_covering_blocks_one_call(self, tmp_path):
        p = tmp_path / "t.xmt"
        make_table(p, 1000)
        stats = IoStats()
        r = TableReader(p, stats=stats, readahead_gap_blocks=0)
        r.read_window(100, 612)  # spans blocks 0..2
        assert stats.blocks_read == 3
        assert stats.io_calls == 1

    def test_buffer_hit_costs_nothing(self, tmp_path):
        p = tmp_path / "t.xmt"
        make_table(p, 1000)
        stats = IoStats()
        r = TableReader(p, stats=stats)
        r.read_window(100, 612)
        snap = (stats.blocks_read, stats.io_calls)
        for _ in range(3):
            r.read_window(100, 612)
            r.read_window(150, 400)
        assert (stats.blocks_read, stats.io_calls) == snap

    def test_window_contents_match(self, tmp_path):
        p = tmp_path / "t.xmt"
        keys, values = make_table(p, 1000)
        with TableReader(p) as r:
            k, v = r.read_window(100, 612)
            np.testing.assert_array_equal(k, keys[100:612])
            np.testing.assert_array_equal(v, values[100:612])
            k, v = r.read_window(997, 1000)
            np.testing.assert_array_equal(k, keys[997:])

    def test_forward_extension_never_rereads(self, tmp_path):
        p = tmp_path / "t.xmt"
        make_table(p, 256 * 40)
        stats = IoStats()
        r = TableReader(p, stats=stats, window_fetch_blocks=1)
        # monotone forward windows, one block apart
        for lo in range(0, 256 * 40 - 300, 256):
            r.read_window(lo, lo + 300)
        assert stats.blocks_read == 40  # each block read exactly once

    def test_gap_fill_reads_through_small_gaps(self, tmp_path):
        p = tmp_path / "t.xmt"
        make_table(p, 256 * 64)
        stats = IoStats()
        r = TableReader(p, stats=stats, readahead_gap_blocks=32)
        r.read_window(0, 256)
        r.read_window(256 * 10, 256 * 10 + 10)  # 9-block gap: filled
        assert stats.blocks_read == 11
        assert stats.io_calls == 2

    def test_far_jump_skips(self, tmp_path):
        p = tmp_path / "t.xmt"
        make_table(p, 256 * 64)
        stats = IoStats()
        r = TableReader(p, stats=stats, readahead_gap_blocks=4)
        r.read_window(0, 256)
        r.read_window(256 * 60, 256 * 60 + 10)  # far: fresh covering read
        assert stats.blocks_read == 2
        assert stats.io_calls == 2

    def test_bounds_checked(self, tmp_path):
        p = tmp_path / "t.xmt"
        make_table(p, 100)
        with TableReader(p) as r:
            with pytest.raises(IndexError):
                r.read_window(50, 101)
            with pytest.raises(IndexError):
                r.read_window(60, 50)
            k, v = r.read_window(100, 100)  # empty tail window is fine
            assert len(k) == 0

    def test_empty_window_costs_nothing(self, tmp_path):
        p = tmp_path / "t.xmt"
        make_table(p, 100)
        stats = IoStats()
        with TableReader(p, stats=stats) as r:
            r.read_window(40, 40)
        assert stats.io_calls == 0


class TestScans:
    def test_full_scan_block_count(self, tmp_path):
        p = tmp_path / "t.xmt"
        make_table(p, 1_000_000, step=1)
        stats = IoStats()
        with TableReader(p, stats=stats) as r:
            total = sum(len(k) for k, _ in r.scan())
        assert total == 1_000_000
        assert stats.blocks_read == 3907  # ceil(1e6 / 256)
        assert stats.io_calls <= stats.blocks_read

    def test_scan_range_respects_rank_bounds(self, tmp_path):
        p = tmp_path / "t.xmt"
        keys, _ = make_table(p, 3000)
        with TableReader(p) as r:
            got = np.concatenate(
                [k for k, _ in r.scan_range(100, 2500, chunk_blocks=2)])
        np.testing.assert_array_equal(got, keys[100:2500])

    def test_direct_mode_records_effectiveness(self, tmp_path):
        p = tmp_path / "t.xmt"
        keys, values = make_table(p, 1000)
        stats = IoStats()
        with TableReader(p, stats=stats, direct=True) as r:
            k, _ = r.read_window(0, 1000)
            np.testing.assert_array_equal(k, keys)
            assert isinstance(r.direct_effective, bool)
        assert stats.blocks_read == 4
