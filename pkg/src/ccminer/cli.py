"""Command-line entry point: ``ccminer detect|metrics|classify|generate|plot``.

Exit status is 0 when the command ran (whether or not anything was
detected), 1 for bad input and 2 for internal failures.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
from pathlib import Path

from . import __version__
from .detectors import DetectorConfig, DetectorError, run_all, score_trajectories
from .environment import EnvironmentMap, MapError
from .io import (
    EmptyInput,
    IoError,
    ParseError,
    build_report,
    detection_from_dict,
    map_from_dict,
    map_to_dict,
    parse_map,
    parse_report,
    parse_trajectories,
    serialize_map,
    serialize_report,
    serialize_trajectories,
)
from .metrics import min_over_pairs
from .svg import render_svg
from .synthetic import InjectionSpec, ScenarioSpec, SyntheticError, generate_nominal, inject
from .taxonomy import Mode, TaxonomyError, label, situation_merge
from .trajectory import Dataset, TrajectoryError

log = logging.getLogger("ccminer")

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_INTERNAL = 2

INPUT_ERRORS = (
    ParseError,
    EmptyInput,
    MapError,
    TrajectoryError,
    DetectorError,
    SyntheticError,
    TaxonomyError,
    IoError,
    OSError,
    UnicodeDecodeError,
    json.JSONDecodeError,
)


class UsageError(ValueError):
    pass


def _read_text(path: str) -> str:
    return Path(path).read_text(encoding="utf-8")


def _fingerprint(path: str) -> dict:
    data = Path(path).read_bytes()
    return {"name": Path(path).name, "sha256": hashlib.sha256(data).hexdigest()}


def _trajectory_format(path: str, fmt: str | None) -> str:
    if fmt:
        return fmt
    return "jsonl" if path.endswith((".jsonl", ".ndjson")) else "csv"


def load_dataset(path: str, fmt: str | None = None) -> Dataset:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_trajectories(fh, _trajectory_format(path, fmt))


def load_map(path: str | None) -> EnvironmentMap | None:
    if path is None:
        return None
    with open(path, encoding="utf-8") as fh:
        return parse_map(fh)


def load_config(path: str | None) -> DetectorConfig:
    """Thresholds from a JSON object, or from the ``config`` echo of a report."""
    if path is None:
        return DetectorConfig()
    doc = json.loads(_read_text(path))
    if isinstance(doc, dict) and "config" in doc and "format_version" in doc:
        doc = doc["config"]
    if not isinstance(doc, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    try:
        return DetectorConfig.from_dict(doc)
    except TypeError as exc:
        raise UsageError(f"{path}: {exc}") from None


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    try:
        Path(out).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {out}: {exc}") from None


def _label_all(detections, mode):
    labels, unlabeled = [], []
    for det in detections:
        try:
            labels.append(label(det, mode))
        except TaxonomyError as exc:
            unlabeled.append((det, str(exc)))
    return labels, unlabeled


def cmd_detect(args) -> int:
    cfg = load_config(args.config)
    dataset = load_dataset(args.trajectories, args.format)
    env = load_map(args.map)
    reference = load_map(args.reference_map)
    run = run_all(dataset, env, cfg, reference_map=reference)
    labels, unlabeled = _label_all(run.detections, args.mode)
    scores = score_trajectories(run.prepared, cfg)
    inputs = {"trajectories": _fingerprint(args.trajectories)}
    if args.map:
        inputs["map"] = _fingerprint(args.map)
    if args.reference_map:
        inputs["reference_map"] = _fingerprint(args.reference_map)
    doc = build_report(labels, situation_merge(labels), cfg, args.mode, scores, inputs, unlabeled)
    _emit(serialize_report(doc), args.out)
    log.info("%d detections, %d situations", len(run.detections), len(doc["situations"]))
    return EXIT_OK


def cmd_classify(args) -> int:
    with open(args.report, encoding="utf-8") as fh:
        doc = parse_report(fh)
    cfg = DetectorConfig.from_dict(doc["config"])
    detections = [detection_from_dict(d) for d in doc["detections"]]
    detections += [detection_from_dict(d) for d in doc.get("unlabeled", [])]
    detections.sort(key=lambda d: d.sort_key)
    labels, unlabeled = _label_all(detections, args.mode)
    scores = doc.get("scores", {})
    new = build_report(labels, situation_merge(labels), cfg, args.mode, scores, doc.get("inputs"), unlabeled)
    _emit(serialize_report(new), args.out)
    return EXIT_OK


def _finite(v):
    return v if math.isfinite(v) else None


def cmd_metrics(args) -> int:
    cfg = load_config(args.config)
    dataset = load_dataset(args.trajectories, args.format)
    env = load_map(args.map)
    pairs = min_over_pairs(dataset, env, cfg.horizon, cfg.collision_radius)
    rows = [
        {
            "a": a,
            "b": b,
            "min_distance": _finite(m.min_distance),
            "min_ttc": _finite(m.min_ttc),
            "dce": _finite(m.dce_overall),
            "ttce": _finite(m.ttce_overall),
            "min_thw": _finite(m.min_thw),
        }
        for (a, b), m in sorted(pairs.items())
    ]
    _emit(json.dumps({"format_version": 1, "pairs": rows}, indent=2, sort_keys=True) + "\n", args.out)
    return EXIT_OK


_SCENARIO_KEYS = {
    "template", "n_vehicles", "duration", "dt", "radius", "speed_limit",
    "opposing_traffic", "routes", "speed_factors", "seed",
}


def load_scenario(path: str, seed: int | None):
    doc = json.loads(_read_text(path))
    if not isinstance(doc, dict):
        raise UsageError(f"{path}: scenario must be a JSON object")
    injections = doc.pop("injections", [])
    unknown = set(doc) - _SCENARIO_KEYS
    if unknown:
        raise UsageError(f"{path}: unknown scenario keys {sorted(unknown)}")
    if seed is not None:
        doc["seed"] = seed
    for key in ("routes", "speed_factors"):
        if doc.get(key) is not None:
            doc[key] = tuple(doc[key])
    try:
        spec = ScenarioSpec(**doc)
        specs = [
            InjectionSpec(
                kind=i["kind"],
                target=int(i.get("target", 0)),
                onset=i.get("onset"),
                params=dict(i.get("params", {})),
            )
            for i in injections
        ]
    except (TypeError, KeyError) as exc:
        raise UsageError(f"{path}: {exc}") from None
    return spec, specs


def cmd_generate(args) -> int:
    spec, injections = load_scenario(args.scenario, args.seed)
    dataset, env = generate_nominal(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    truth = []
    observed = env
    if injections:
        dataset, observed, gt = inject(dataset, env, injections)
        truth = [
            {
                "injection": e.injection,
                "kind": e.kind,
                "ego_id": e.ego_id,
                "t_start": e.t_start,
                "t_end": e.t_end,
                "column": e.column.value,
                "stages": sorted(s.value for s in e.stages),
            }
            for e in gt
        ]
    (out / "trajectories.csv").write_text(serialize_trajectories(dataset), encoding="utf-8")
    (out / "map.json").write_text(serialize_map(observed), encoding="utf-8")
    if observed is not env:
        (out / "reference_map.json").write_text(serialize_map(env), encoding="utf-8")
    (out / "ground_truth.json").write_text(
        json.dumps({"format_version": 1, "seed": spec.seed, "events": truth}, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    return EXIT_OK


def cmd_plot(args) -> int:
    dataset = load_dataset(args.trajectories, args.format)
    env = load_map(args.map)
    detections = []
    if args.report:
        with open(args.report, encoding="utf-8") as fh:
            doc = parse_report(fh)
        detections = [detection_from_dict(d) for d in doc["detections"]]
    render_svg(args.out, dataset, env, detections)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ccminer", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def traj_args(p):
        p.add_argument("trajectories", help="trajectory file (.csv or .jsonl)")
        p.add_argument("--format", choices=("csv", "jsonl"), help="override format detection")

    p = sub.add_parser("detect", help="run all detectors and write a report")
    traj_args(p)
    p.add_argument("--map", help="map JSON")
    p.add_argument("--reference-map", help="reference map JSON, enables sign-difference checks")
    p.add_argument("--config", help="thresholds JSON, or a previous report")
    p.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.dataset.value)
    p.add_argument("--out", help="report path (default: stdout)")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("metrics", help="pairwise safety measures")
    traj_args(p)
    p.add_argument("--map", help="map JSON, switches headway to lane stations")
    p.add_argument("--config", help="thresholds JSON, or a previous report")
    p.add_argument("--out")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("classify", help="re-label a report under another mode")
    p.add_argument("report")
    p.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.dataset.value)
    p.add_argument("--out")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("generate", help="generate a synthetic scenario")
    p.add_argument("scenario", help="scenario JSON")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("plot", help="render a scene to SVG")
    traj_args(p)
    p.add_argument("--map")
    p.add_argument("--report", help="report whose detections are highlighted")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (UsageError, *INPUT_ERRORS) as exc:
        print(f"ccminer: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception:
        log.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
