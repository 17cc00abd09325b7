"""Reading and writing trajectories, maps and detection reports.

Trajectory CSV carries one state per row; the first line declares units
as a comment. Floats are written with ``repr`` so parsing what was
written gives back identical arrays.
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
import os
import warnings
from datetime import datetime, timezone
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

from . import __version__
from .detectors import Detection, DetectorConfig
from .environment import (
    ConflictZone,
    EnvironmentMap,
    LaneSegment,
    SchemaError,
    TrafficSign,
    VirtualLoop,
)
from .taxonomy import ColumnClass, CornerCaseLabel, RowStage, Situation
from .trajectory import Dataset, Trajectory, TrajectoryError

FORMAT_VERSION = 1
UNITS_COMMENT = "# units: t [s], x [m], y [m], heading [rad], speed [m/s]"
CSV_COLUMNS = ("track_id", "t", "x", "y", "heading", "speed", "class")
REQUIRED_COLUMNS = ("track_id", "t", "x", "y")


class IoError(OSError):
    pass


class ParseError(ValueError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class EmptyInput(ValueError):
    pass


def _float(text: str, line: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(line, f"{column}={text!r} is not a number") from None
    if not math.isfinite(value):
        raise ParseError(line, f"{column} is not finite")
    return value


def _read_csv(stream: IO[str]) -> Dataset:
    rows = csv.reader(stream)
    header = None
    tracks: dict[str, dict] = {}
    order: list[str] = []
    for line_no, row in enumerate(rows, start=1):
        if not row or (row[0].startswith("#")):
            continue
        if header is None:
            header = [c.strip() for c in row]
            missing = [c for c in REQUIRED_COLUMNS if c not in header]
            if missing:
                raise ParseError(line_no, f"header lacks {', '.join(missing)}")
            unknown = [c for c in header if c not in CSV_COLUMNS]
            if unknown:
                warnings.warn(f"ignoring unknown columns: {', '.join(unknown)}", stacklevel=3)
            col = {name: header.index(name) for name in CSV_COLUMNS if name in header}
            continue
        if len(row) != len(header):
            raise ParseError(line_no, f"expected {len(header)} fields, got {len(row)}")
        tid = row[col["track_id"]].strip()
        if not tid:
            raise ParseError(line_no, "empty track_id")
        track = tracks.get(tid)
        if track is None:
            track = {"t": [], "x": [], "y": [], "heading": [], "speed": [], "class": None, "lines": []}
            tracks[tid] = track
            order.append(tid)
        for name in ("t", "x", "y"):
            track[name].append(_float(row[col[name]], line_no, name))
        for name in ("heading", "speed"):
            if name in col and row[col[name]].strip() != "":
                track[name].append(_float(row[col[name]], line_no, name))
            else:
                track[name].append(None)
        if "class" in col and row[col["class"]].strip():
            cls = row[col["class"]].strip()
            if track["class"] not in (None, cls):
                raise ParseError(line_no, f"track {tid} changes class")
            track["class"] = cls
        track["lines"].append(line_no)
    if header is None or not tracks:
        raise EmptyInput("no trajectory rows")
    trajs = [_build(tid, tracks[tid]) for tid in order]
    return Dataset(tuple(trajs))


def _column(values: list, name: str, lines: list[int]):
    present = [v is not None for v in values]
    if not any(present):
        return None
    if not all(present):
        raise ParseError(lines[present.index(False)], f"{name} missing on some rows of the track")
    return values


def _build(tid: str, track: dict) -> Trajectory:
    lines = track["lines"]
    heading = _column(track["heading"], "heading", lines)
    speed = _column(track["speed"], "speed", lines)
    extra = {} if speed is None else {"speed": speed}
    try:
        return Trajectory.from_arrays(
            tid, track["t"], track["x"], track["y"], heading,
            road_user_class=track["class"] or "car", **extra,
        )
    except TrajectoryError as exc:
        index = getattr(exc, "index", 0) or 0
        raise ParseError(lines[min(index, len(lines) - 1)], f"track {tid}: {exc}") from None


def _read_jsonl(stream: IO[str]) -> Dataset:
    trajs = []
    for line_no, text in enumerate(stream, start=1):
        if not text.strip():
            continue
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(line_no, f"invalid JSON: {exc.msg}") from None
        if not isinstance(obj, dict):
            raise ParseError(line_no, "expected one trajectory object per line")
        missing = [k for k in ("track_id", "t", "x", "y") if k not in obj]
        if missing:
            raise ParseError(line_no, f"missing {', '.join(missing)}")
        unknown = set(obj) - {"track_id", "class", "t", "x", "y", "heading", "speed"}
        if unknown:
            warnings.warn(f"line {line_no}: ignoring unknown keys {sorted(unknown)}", stacklevel=3)
        try:
            extra = {} if obj.get("speed") is None else {"speed": np.asarray(obj["speed"], float)}
            trajs.append(
                Trajectory.from_arrays(
                    str(obj["track_id"]),
                    np.asarray(obj["t"], float),
                    np.asarray(obj["x"], float),
                    np.asarray(obj["y"], float),
                    None if obj.get("heading") is None else np.asarray(obj["heading"], float),
                    road_user_class=obj.get("class", "car"),
                    **extra,
                )
            )
        except (TrajectoryError, TypeError, ValueError) as exc:
            raise ParseError(line_no, str(exc)) from None
    if not trajs:
        raise EmptyInput("no trajectory lines")
    try:
        return Dataset(tuple(trajs))
    except TrajectoryError as exc:
        raise ParseError(0, str(exc)) from None


def parse_trajectories(stream: IO[str], fmt: str = "csv") -> Dataset:
    """Parse a trajectory stream.

    Raises:
        ParseError: malformed content, with the 1-based line number.
        EmptyInput: no data rows.
    """
    if fmt == "csv":
        return _read_csv(stream)
    if fmt == "jsonl":
        return _read_jsonl(stream)
    raise ValueError(f"unknown trajectory format {fmt!r}")


def _num(v: float) -> str:
    return repr(float(v))


def serialize_trajectories(dataset: Dataset | Iterable[Trajectory], fmt: str = "csv") -> str:
    trajs = list(dataset)
    if fmt == "jsonl":
        lines = []
        for tr in trajs:
            obj = {
                "track_id": tr.id,
                "class": tr.road_user_class,
                "t": [float(v) for v in tr.t],
                "x": [float(v) for v in tr.x],
                "y": [float(v) for v in tr.y],
                "heading": [float(v) for v in tr.heading],
            }
            if tr.speed is not None:
                obj["speed"] = [float(v) for v in tr.speed]
            lines.append(json.dumps(obj))
        return "\n".join(lines) + "\n"
    if fmt != "csv":
        raise ValueError(f"unknown trajectory format {fmt!r}")
    out = _io.StringIO()
    out.write(UNITS_COMMENT + "\n")
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for tr in trajs:
        for i in range(len(tr)):
            speed = "" if tr.speed is None else _num(tr.speed[i])
            writer.writerow(
                [tr.id, _num(tr.t[i]), _num(tr.x[i]), _num(tr.y[i]), _num(tr.heading[i]), speed,
                 tr.road_user_class]
            )
    return out.getvalue()


# ---------------------------------------------------------------- maps


def _require(obj: Mapping, key: str, where: str):
    if not isinstance(obj, Mapping) or key not in obj:
        raise SchemaError(f"{where}: missing {key!r}")
    return obj[key]


def map_to_dict(env: EnvironmentMap) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "lanes": [
            {
                "id": lane.id,
                "centerline": lane.centerline.tolist(),
                "width": lane.width,
                "speed_limit": lane.speed_limit,
                "oncoming_lane_id": lane.oncoming_lane_id,
            }
            for lane in env.lanes
        ],
        "signs": [
            {
                "id": s.id,
                "kind": s.kind,
                "position": list(s.position),
                "applies_to": sorted(s.applies_to),
                "value": s.value,
            }
            for s in env.signs
        ],
        "loops": [
            {
                "id": loop.id,
                "gate": loop.gate.tolist(),
                "label": loop.label,
                "approach": loop.approach,
                "role": loop.role,
                "lane_id": loop.lane_id,
            }
            for loop in env.loops
        ],
        "conflict_zones": [
            {
                "id": z.id,
                "polygon": z.polygon.tolist(),
                "lane_pair": list(z.lane_pair),
                "priority_lane": z.priority_lane,
            }
            for z in env.conflict_zones
        ],
    }


def map_from_dict(doc: Mapping) -> EnvironmentMap:
    """Build a map from its JSON document.

    Raises:
        SchemaError: missing or malformed fields.
        DanglingReference: an id that names no lane.
    """
    if not isinstance(doc, Mapping):
        raise SchemaError("map document must be an object")
    version = doc.get("format_version", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        raise SchemaError(f"unsupported map format_version {version!r}")
    try:
        lanes = tuple(
            LaneSegment(
                str(_require(d, "id", "lane")),
                _require(d, "centerline", "lane"),
                float(d.get("width", 3.5)),
                float(d.get("speed_limit", 13.9)),
                d.get("oncoming_lane_id"),
            )
            for d in doc.get("lanes", [])
        )
        signs = tuple(
            TrafficSign(
                str(_require(d, "id", "sign")),
                str(_require(d, "kind", "sign")),
                tuple(_require(d, "position", "sign")),
                frozenset(_require(d, "applies_to", "sign")),
                d.get("value"),
            )
            for d in doc.get("signs", [])
        )
        loops = tuple(
            VirtualLoop(
                str(_require(d, "id", "loop")),
                _require(d, "gate", "loop"),
                d.get("label", ""),
                d.get("approach"),
                d.get("role"),
                d.get("lane_id"),
            )
            for d in doc.get("loops", [])
        )
        zones = tuple(
            ConflictZone(
                str(_require(d, "id", "conflict zone")),
                _require(d, "polygon", "conflict zone"),
                tuple(_require(d, "lane_pair", "conflict zone")),
                str(_require(d, "priority_lane", "conflict zone")),
            )
            for d in doc.get("conflict_zones", [])
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, SchemaError):
            raise
        raise SchemaError(str(exc)) from None
    return EnvironmentMap(lanes, signs, loops, zones)


def parse_map(stream: IO[str], fmt: str = "json") -> EnvironmentMap:
    if fmt != "json":
        raise ValueError(f"unknown map format {fmt!r}")
    try:
        doc = json.load(stream)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return map_from_dict(doc)


def serialize_map(env: EnvironmentMap) -> str:
    return json.dumps(map_to_dict(env), indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------- reports


def _plain(value):
    """JSON-safe copy: numpy scalars to Python, NaN/inf to None, sets sorted."""
    if isinstance(value, Mapping):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, (set, frozenset)):
        return sorted(_plain(v) for v in value)
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, (ColumnClass, RowStage)):
        return value.value
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return v if math.isfinite(v) else None
    return value


def detection_to_dict(det: Detection) -> dict:
    return {
        "ego_id": det.ego_id,
        "other_ids": list(det.other_ids),
        "t_start": float(det.t_start),
        "t_end": float(det.t_end),
        "kind": det.kind,
        "severity": float(det.severity),
        "evidence": _plain(dict(det.evidence)),
        "uses_map": bool(det.uses_map),
        "required_data": det.required_data.value,
        "candidate_stages": sorted(s.value for s in det.candidate_stages),
    }


def detection_from_dict(d: Mapping) -> Detection:
    try:
        return Detection(
            ego_id=str(d["ego_id"]),
            other_ids=tuple(d.get("other_ids", ())),
            t_start=float(d["t_start"]),
            t_end=float(d["t_end"]),
            kind=str(d["kind"]),
            severity=float(d["severity"]),
            evidence=dict(d.get("evidence", {})),
            uses_map=bool(d.get("uses_map", False)),
            required_data=ColumnClass(d["required_data"]) if "required_data" in d else None,
            candidate_stages=frozenset(RowStage(s) for s in d.get("candidate_stages", ())),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise SchemaError(f"malformed detection: {exc}") from None


def _label_dict(lab: CornerCaseLabel) -> dict:
    return {
        "column": lab.column.value,
        "stages": [s.value for s in sorted(lab.stages, key=lambda s: s.number)],
        "cells": sorted(
            [[c.row.value, sorted(col.value for col in c.columns)] for c in lab.cells]
        ),
    }


def generated_at() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    moment = datetime.fromtimestamp(int(epoch), tz=timezone.utc) if epoch else datetime.now(timezone.utc)
    return moment.strftime("%Y-%m-%dT%H:%M:%SZ")


def build_report(
    labels: Sequence[CornerCaseLabel],
    situations: Sequence[Situation],
    cfg: DetectorConfig,
    mode: str,
    scores: Mapping[str, Mapping] | None = None,
    inputs: Mapping | None = None,
    unlabeled: Sequence[tuple[Detection, str]] = (),
) -> dict:
    index = {id(lab.detection): i for i, lab in enumerate(labels)}
    detections = []
    for lab in labels:
        entry = detection_to_dict(lab.detection)
        entry["label"] = _label_dict(lab)
        detections.append(entry)
    return {
        "format_version": FORMAT_VERSION,
        "tool_version": __version__,
        "generated_at": generated_at(),
        "mode": str(mode),
        "config": _plain(cfg.to_dict()),
        "inputs": _plain(dict(inputs or {})),
        "detections": detections,
        "unlabeled": [dict(detection_to_dict(det), error=msg) for det, msg in unlabeled],
        "situations": [
            {
                "ego_id": s.ego_id,
                "t_start": s.t_start,
                "t_end": s.t_end,
                "detections": [index[id(lab.detection)] for lab in s.labels],
            }
            for s in situations
        ],
        "scores": _plain({k: dict(v) for k, v in sorted((scores or {}).items())}),
    }


def canonical_report(doc: Mapping) -> str:
    """Report text without the timestamp, for byte comparisons."""
    stripped = {k: v for k, v in doc.items() if k != "generated_at"}
    return json.dumps(stripped, indent=2, sort_keys=True) + "\n"


def serialize_report(doc: Mapping) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def parse_report(stream: IO[str]) -> dict:
    try:
        doc = json.load(stream)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(doc, dict) or doc.get("format_version") != FORMAT_VERSION:
        raise SchemaError("not a version 1 report")
    for key in ("config", "detections", "mode"):
        if key not in doc:
            raise SchemaError(f"report lacks {key!r}")
    return doc
