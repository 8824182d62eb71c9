"""File formats: DPM1 depth grids, detection/GT JSONL, lookup-table JSON, weight records.

Readers and writers are mutually inverse on valid inputs. DPM1 is bit-exact
(float32 payloads); JSON reals use Python's shortest round-trip repr so JSON
round-trips are value-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import DomainError, FormatError
from .types import DepthMap, Detection, GroundTruthBox, LookupTable, ThresholdCurve

DPM1_MAGIC = b"DPM1"
LUT_FORMAT = "depthprior-lut-v1"

_HEADER = struct.Struct("<4sII")


# ---------------------------------------------------------------------------
# DPM1 binary depth grids
# ---------------------------------------------------------------------------

def write_depth_map_bytes(values: np.ndarray) -> bytes:
    """Encode a (H, W) grid as DPM1 bytes."""
    arr = np.ascontiguousarray(values, dtype="<f4")
    h, w = arr.shape
    return _HEADER.pack(DPM1_MAGIC, w, h) + arr.tobytes()


def read_depth_map_bytes(data: bytes) -> np.ndarray:
    """Decode DPM1 bytes into a float32 (H, W) grid, validating the payload."""
    if len(data) < _HEADER.size:
        raise FormatError("truncated header", offset=len(data))
    magic, width, height = _HEADER.unpack_from(data)
    if magic != DPM1_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {DPM1_MAGIC!r}", offset=0)
    if width < 1 or height < 1:
        raise FormatError(f"bad dimensions {width}x{height}", offset=4)
    expected = _HEADER.size + 4 * width * height
    if len(data) != expected:
        raise FormatError(
            f"payload is {len(data)} bytes, expected {expected} for {width}x{height}",
            offset=len(data),
        )
    arr = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(height, width)
    finite = np.isfinite(arr)
    if not finite.all():
        idx = int(np.flatnonzero(~finite.ravel())[0])
        raise FormatError("non-finite depth value", offset=_HEADER.size + 4 * idx)
    if (arr < 0).any():
        idx = int(np.flatnonzero((arr < 0).ravel())[0])
        raise FormatError("negative depth value", offset=_HEADER.size + 4 * idx)
    return arr


def write_depth_map(values: np.ndarray, path: str | Path) -> None:
    Path(path).write_bytes(write_depth_map_bytes(values))


def read_depth_map(path: str | Path) -> DepthMap:
    return DepthMap(read_depth_map_bytes(Path(path).read_bytes()))


def read_grid(path: str | Path) -> np.ndarray:
    """Read a DPM1 file as a bare float32 grid (used for mask files)."""
    return read_depth_map_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# Detections / ground truth JSONL
# ---------------------------------------------------------------------------

_DET_KEYS = ("image", "x1", "y1", "x2", "y2", "score", "class")
_GT_KEYS = ("image", "x1", "y1", "x2", "y2", "class")


def _parse_lines(path: str | Path) -> Iterable[tuple[int, dict[str, Any]]]:
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"malformed JSON: {exc.msg}", line=lineno) from exc
            if not isinstance(record, dict):
                raise FormatError("record is not a JSON object", line=lineno)
            yield lineno, record


def _record_fields(record: Mapping[str, Any], keys: Sequence[str], lineno: int) -> list[Any]:
    try:
        return [record[k] for k in keys]
    except KeyError as exc:
        raise FormatError(f"missing field {exc.args[0]!r}", line=lineno) from exc


def read_detections(path: str | Path) -> list[Detection]:
    out: list[Detection] = []
    for lineno, record in _parse_lines(path):
        image, x1, y1, x2, y2, score, cls = _record_fields(record, _DET_KEYS, lineno)
        try:
            out.append(Detection(str(image), (x1, y1, x2, y2), float(score), int(cls)))
        except DomainError as exc:
            raise DomainError(f"{exc} (line {lineno})") from exc
        except (TypeError, ValueError) as exc:
            raise FormatError(f"non-numeric field: {exc}", line=lineno) from exc
    return out


def read_groundtruth(path: str | Path) -> list[GroundTruthBox]:
    out: list[GroundTruthBox] = []
    for lineno, record in _parse_lines(path):
        image, x1, y1, x2, y2, cls = _record_fields(record, _GT_KEYS, lineno)
        try:
            out.append(GroundTruthBox(str(image), (x1, y1, x2, y2), int(cls)))
        except DomainError as exc:
            raise DomainError(f"{exc} (line {lineno})") from exc
        except (TypeError, ValueError) as exc:
            raise FormatError(f"non-numeric field: {exc}", line=lineno) from exc
    return out


def detection_to_record(det: Detection) -> dict[str, Any]:
    x1, y1, x2, y2 = det.box
    return {"image": det.image_id, "x1": x1, "y1": y1, "x2": x2, "y2": y2,
            "score": det.score, "class": det.class_id}


def groundtruth_to_record(gt: GroundTruthBox) -> dict[str, Any]:
    x1, y1, x2, y2 = gt.box
    return {"image": gt.image_id, "x1": x1, "y1": y1, "x2": x2, "y2": y2, "class": gt.class_id}


def write_detections(dets: Iterable[Detection], path: str | Path) -> None:
    _write_jsonl((detection_to_record(d) for d in dets), path)


def write_groundtruth(gts: Iterable[GroundTruthBox], path: str | Path) -> None:
    _write_jsonl((groundtruth_to_record(g) for g in gts), path)


def _write_jsonl(records: Iterable[Mapping[str, Any]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, separators=(", ", ": ")))
            fh.write("\n")


# ---------------------------------------------------------------------------
# Weight records
# ---------------------------------------------------------------------------

def write_weight_records(records: Iterable[Mapping[str, Any]], path: str | Path) -> None:
    """Write per-object weight records: image, object_index, depth_norm, weight."""
    ordered = ({"image": r["image"], "object_index": r["object_index"],
                "depth_norm": r["depth_norm"], "weight": r["weight"]} for r in records)
    _write_jsonl(ordered, path)


def read_weight_records(path: str | Path) -> list[dict[str, Any]]:
    out = []
    for lineno, record in _parse_lines(path):
        image, index, depth_norm, weight = _record_fields(
            record, ("image", "object_index", "depth_norm", "weight"), lineno)
        out.append({"image": str(image), "object_index": int(index),
                    "depth_norm": float(depth_norm), "weight": float(weight)})
    return out


# ---------------------------------------------------------------------------
# Lookup-table JSON
# ---------------------------------------------------------------------------

def lookup_table_to_dict(table: LookupTable) -> dict[str, Any]:
    return {
        "format": LUT_FORMAT,
        "fit_config": dict(table.fit_config),
        "entries": [
            {
                "tau0": curve.tau0,
                "knot_domain": [curve.knot_domain[0], curve.knot_domain[1]],
                "psi": list(curve.psi),
                "rho": curve.rho,
            }
            for curve in table.entries
        ],
    }


def write_lookup_table(table: LookupTable, path: str | Path) -> None:
    if not table.entries:
        raise DomainError("refusing to write an empty lookup table")
    Path(path).write_text(json.dumps(lookup_table_to_dict(table), indent=2) + "\n", encoding="utf-8")


def lookup_table_from_dict(data: Mapping[str, Any]) -> LookupTable:
    if data.get("format") != LUT_FORMAT:
        raise FormatError(f"unknown lookup-table format tag {data.get('format')!r}, expected {LUT_FORMAT!r}")
    entries = []
    seen: set[float] = set()
    for entry in data.get("entries", []):
        tau0 = float(entry["tau0"])
        if tau0 in seen:
            raise FormatError(f"duplicate tau0 key {tau0}")
        seen.add(tau0)
        entries.append(ThresholdCurve(
            tau0=tau0,
            knot_domain=(entry["knot_domain"][0], entry["knot_domain"][1]),
            psi=tuple(entry["psi"]),
            rho=float(entry["rho"]),
        ))
    if not entries:
        raise FormatError("lookup table has no entries")
    taus = [c.tau0 for c in entries]
    if any(b <= a for a, b in zip(taus, taus[1:])):
        raise FormatError(f"tau0 keys must be strictly increasing, got {taus}")
    return LookupTable(entries=tuple(entries), fit_config=data.get("fit_config", {}))


def read_lookup_table(path: str | Path) -> LookupTable:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"malformed lookup-table JSON: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise FormatError("lookup-table JSON must be an object")
    return lookup_table_from_dict(data)
