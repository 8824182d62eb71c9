"""File format round-trips and error reporting."""

import json
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from depthprior import (
    DepthMap,
    Detection,
    DomainError,
    FormatError,
    GroundTruthBox,
    LookupTable,
    ThresholdCurve,
    read_depth_map,
    read_detections,
    read_groundtruth,
    read_lookup_table,
    write_depth_map,
    write_detections,
    write_groundtruth,
    write_lookup_table,
)
from depthprior.io import read_depth_map_bytes, write_depth_map_bytes


class TestDepthMapFormat:
    def test_round_trip_2x2(self, tmp_path):
        path = tmp_path / "a.dpm"
        write_depth_map(np.array([[0.0, 1.0], [2.0, 3.0]]), path)
        loaded = read_depth_map(path)
        assert loaded.width == 2 and loaded.height == 2
        assert loaded.values.ravel().tolist() == [0.0, 1.0, 2.0, 3.0]

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.dpm"
        data = write_depth_map_bytes(np.ones((2, 2)))
        path.write_bytes(b"DPM0" + data[4:])
        with pytest.raises(FormatError, match="magic"):
            read_depth_map(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "short.dpm"
        data = write_depth_map_bytes(np.ones((2, 2)))
        path.write_bytes(data[:-3])
        with pytest.raises(FormatError, match="offset"):
            read_depth_map(path)

    def test_non_finite_reports_offset(self):
        data = bytearray(write_depth_map_bytes(np.ones((1, 3))))
        data[12 + 4:12 + 8] = np.array([np.nan], dtype="<f4").tobytes()
        with pytest.raises(FormatError, match="offset 16"):
            read_depth_map_bytes(bytes(data))

    def test_large_map_round_trips_fast(self, tmp_path):
        path = tmp_path / "big.dpm"
        big = np.ones((4096, 4096), dtype=np.float32)
        write_depth_map(big, path)
        start = time.perf_counter()
        loaded = read_depth_map(path)
        assert time.perf_counter() - start < 1.0
        assert write_depth_map_bytes(loaded.values) == path.read_bytes()

    def test_reencoding_is_bit_exact(self):
        rng = np.random.default_rng(1)
        original = write_depth_map_bytes(rng.random((7, 5)).astype(np.float32))
        assert write_depth_map_bytes(read_depth_map_bytes(original)) == original

    @given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_round_trip_property(self, h, w, seed):
        arr = np.random.default_rng(seed).random((h, w)).astype(np.float32) * 10
        assert np.array_equal(read_depth_map_bytes(write_depth_map_bytes(arr)), arr)


class TestDetectionJsonl:
    def test_single_record(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text('{"image":"a","x1":0,"y1":0,"x2":10,"y2":10,"score":0.5,"class":0}\n')
        dets = read_detections(path)
        assert dets == [Detection("a", (0, 0, 10, 10), 0.5, 0)]

    def test_score_out_of_range(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text('{"image":"a","x1":0,"y1":0,"x2":10,"y2":10,"score":1.5,"class":0}\n')
        with pytest.raises(DomainError, match="line 1"):
            read_detections(path)

    def test_degenerate_box_reports_line(self, tmp_path):
        path = tmp_path / "g.jsonl"
        path.write_text(
            '{"image":"a","x1":0,"y1":0,"x2":10,"y2":10,"class":0}\n'
            '{"image":"a","x1":10,"y1":0,"x2":10,"y2":5,"class":0}\n'
        )
        with pytest.raises(DomainError, match="line 2"):
            read_groundtruth(path)

    def test_malformed_line(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text('{"image":"a" not json\n')
        with pytest.raises(FormatError, match="line 1"):
            read_detections(path)

    def test_missing_field(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text('{"image":"a","x1":0,"y1":0,"x2":10,"y2":10,"class":0}\n')
        with pytest.raises(FormatError, match="score"):
            read_detections(path)

    def test_non_numeric_field(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text('{"image":"a","x1":0,"y1":0,"x2":10,"y2":10,"score":"high","class":0}\n')
        with pytest.raises(FormatError, match="line 1"):
            read_detections(path)

    def test_non_finite_box_rejected(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text('{"image":"a","x1":0,"y1":0,"x2":Infinity,"y2":10,"score":0.5,"class":0}\n')
        with pytest.raises(DomainError, match="non-finite"):
            read_detections(path)

    def test_order_preserved_and_large_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        dets = []
        for i in range(100_000):
            x1, y1 = rng.uniform(0, 50, 2)
            dets.append(Detection(f"img{i % 37}", (x1, y1, x1 + rng.uniform(1, 20), y1 + rng.uniform(1, 20)),
                                  float(rng.uniform(0, 1)), int(rng.integers(0, 5))))
        path = tmp_path / "big.jsonl"
        write_detections(dets, path)
        loaded = read_detections(path)
        assert loaded == dets
        path2 = tmp_path / "big2.jsonl"
        write_detections(loaded, path2)
        assert path.read_bytes() == path2.read_bytes()

    @given(rows=st.lists(st.tuples(st.floats(0, 100, allow_nan=False), st.floats(0, 100, allow_nan=False),
                                   st.floats(0.001, 100, allow_nan=False), st.floats(0.001, 100, allow_nan=False),
                                   st.floats(0, 1, allow_nan=False), st.integers(0, 10)),
                         max_size=20))
    @settings(max_examples=40, deadline=None)
    def test_gt_round_trip_property(self, tmp_path_factory, rows):
        gts = [GroundTruthBox("im", (x, y, x + w, y + h), c) for x, y, w, h, _, c in rows]
        path = tmp_path_factory.mktemp("rt") / "gt.jsonl"
        write_groundtruth(gts, path)
        assert read_groundtruth(path) == gts


class TestLookupTableJson:
    def _curve(self, tau0, psi):
        return ThresholdCurve(tau0=tau0, knot_domain=(0.0, 0.9), psi=psi, rho=0.1)

    def test_single_entry_round_trip(self, tmp_path):
        table = LookupTable(entries=(self._curve(0.7, (0.0,) * 10),), fit_config={"epsilon": 0.1})
        path = tmp_path / "lut.json"
        write_lookup_table(table, path)
        assert read_lookup_table(path) == table

    def test_duplicate_tau0_rejected(self, tmp_path):
        path = tmp_path / "dup.json"
        entry = {"tau0": 0.5, "knot_domain": [0.0, 0.9], "psi": [0.0] * 4, "rho": 0.1}
        path.write_text(json.dumps({"format": "depthprior-lut-v1", "fit_config": {},
                                    "entries": [entry, dict(entry)]}))
        with pytest.raises(FormatError, match="duplicate"):
            read_lookup_table(path)

    def test_unknown_format_tag(self, tmp_path):
        path = tmp_path / "v2.json"
        path.write_text(json.dumps({"format": "depthprior-lut-v2", "entries": []}))
        with pytest.raises(FormatError, match="format tag"):
            read_lookup_table(path)

    def test_random_table_round_trip_value_exact(self, tmp_path):
        rng = np.random.default_rng(3)
        entries = tuple(
            self._curve(round(0.1 * (i + 1), 1), tuple(rng.uniform(0, 0.5, 10)))
            for i in range(9)
        )
        table = LookupTable(entries=entries, fit_config={"gamma": 1000.0, "seed": 11})
        path = tmp_path / "lut.json"
        write_lookup_table(table, path)
        loaded = read_lookup_table(path)
        assert loaded == table
        for a, b in zip(loaded.entries, table.entries):
            assert a.psi == b.psi  # exact equality, not approximate

    def test_strictly_increasing_enforced(self):
        with pytest.raises(DomainError, match="strictly increasing"):
            LookupTable(entries=(self._curve(0.5, (0.0,) * 4), self._curve(0.4, (0.0,) * 4)))
