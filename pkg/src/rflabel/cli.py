"""Command-line entry points.

Subcommands: simulate, emulate, calibrate, filter, report, convert.
Every command takes a master --seed; identical invocations produce
byte-identical annotation artifacts.  Exit codes: 0 success, 2 bad
configuration or schema, 3 I/O trouble, 4 infeasible math (solver or
geometry).  Set RFLABEL_LOG=DEBUG|INFO|WARNING to control verbosity.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .annotations import (
    atomic_write_json,
    atomic_write_text,
    frames_to_dict,
    from_coco,
    load_annotations,
    ranging_csv_text,
    fixes_csv_text,
    read_fixes_csv,
    read_ranging_csv,
    save_annotations,
    to_coco,
)
from .emulation import EmulationSpec, ErrorMode, emulate_noisy_labels
from .errors import ConfigError, GeometryError, RFLabelError, SolverError
from .labeling import strip_injected_flags
from .localization import (
    BUILTIN_PROFILES,
    ErrorConfig,
    builtin_config,
    calibrated_config,
)
from .pipeline import run_simulation
from .plots import save_error_scatter, save_iou_histogram
from .projection import CameraModel
from .quality import (
    FilterCriteria,
    OcclusionThresholds,
    detect_occlusion_events,
    filter_labels,
    quality_report,
)
from .scene import camera_from_entry, street_config

log = logging.getLogger("rflabel")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_MATH = 4

TEMPLATES = {"street": street_config}


def _config_digest(payload: dict) -> str:
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _write_manifest(out_dir: Path, command: str, config: dict, seed: int,
                    inputs: list[str], outputs: list[str], started: float):
    manifest = {
        "command": command,
        "config_digest": _config_digest(config),
        "seed": seed,
        "tool_version": __version__,
        "inputs": sorted(inputs),
        "outputs": sorted(outputs),
        "duration_s": round(time.time() - started, 3),
    }
    atomic_write_json(out_dir / "run_manifest.json", manifest)


def _load_scene_config(spec: str) -> dict:
    if spec in TEMPLATES:
        return TEMPLATES[spec]()
    path = Path(spec)
    if not path.exists():
        raise FileNotFoundError(f"scene config {spec!r} not found (templates: {sorted(TEMPLATES)})")
    with open(path, "r", encoding="utf-8") as handle:
        try:
            return json.load(handle)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{spec}: not valid JSON: {exc}") from exc


def _load_error_config(spec: str) -> ErrorConfig:
    if spec in BUILTIN_PROFILES:
        return builtin_config(spec)
    path = Path(spec)
    if not path.exists():
        raise FileNotFoundError(
            f"error config {spec!r} not found (built-ins: {sorted(BUILTIN_PROFILES)})"
        )
    with open(path, "r", encoding="utf-8") as handle:
        doc = json.load(handle)
    try:
        return ErrorConfig(
            name=str(doc["name"]),
            num_tx=int(doc["num_tx"]),
            samples_per_fix=int(doc["samples_per_fix"]),
            gamma_shape=float(doc["gamma_shape"]),
            gamma_scale=float(doc["gamma_scale"]),
            target_median=doc.get("target_median_m"),
            target_p95=doc.get("target_p95_m"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{spec}: malformed error config: {exc}") from exc


def _error_config_doc(cfg: ErrorConfig) -> dict:
    return {
        "name": cfg.name,
        "num_tx": cfg.num_tx,
        "samples_per_fix": cfg.samples_per_fix,
        "gamma_shape": cfg.gamma_shape,
        "gamma_scale": cfg.gamma_scale,
        "target_median_m": cfg.target_median,
        "target_p95_m": cfg.target_p95,
    }


# ---------------------------------------------------------------------------
# Commands

def cmd_simulate(args) -> int:
    started = time.time()
    config = _load_scene_config(args.config)
    error_cfg = _load_error_config(args.error_config)
    result = run_simulation(
        config, error_cfg, master_seed=args.seed, noise=not args.no_noise
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "cameras": {c.id: {"image_size": list(c.image_size)} for c in result.scene.cameras}
    }
    atomic_write_text(out / "ranging.csv", ranging_csv_text(result.ranging_log))
    atomic_write_text(out / "fixes.csv", fixes_csv_text(result.fixes))
    save_annotations(result.gt_frames, out / "ground_truth.json", meta=meta)
    save_annotations(result.rf_frames, out / "rf_labels.json", meta=meta)
    atomic_write_json(out / "quality_report.json", result.report.to_dict())
    outputs = ["ranging.csv", "fixes.csv", "ground_truth.json", "rf_labels.json", "quality_report.json"]
    _write_manifest(out, "simulate", config, args.seed, [args.config], outputs, started)
    log.info(
        "simulate: %d fixes, %d skipped bursts, mean IoU %.3f",
        len(result.fixes), result.skipped_bursts, result.report.mean_iou,
    )
    return EXIT_OK


def cmd_emulate(args) -> int:
    started = time.time()
    frames, meta = load_annotations(args.annotations)
    camera = _camera_from_args(args, meta)
    error_cfg = _load_error_config(args.error_config)
    spec = EmulationSpec(
        error_config=error_cfg,
        coverage_p=args.coverage,
        mode=ErrorMode(args.mode),
        height_variation_enabled=not args.no_height_variation,
        seed=args.seed,
    )
    noisy, report = emulate_noisy_labels(frames, camera, spec)
    if args.coverage == 0.0:
        log.warning("coverage 0: emitting an empty annotation set")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_annotations(noisy, out / "emulated.json", meta=meta or None)
    run_report = report.to_dict()
    run_report["error_config"] = error_cfg.name
    run_report["mode"] = spec.mode.value
    run_report["coverage_p"] = spec.coverage_p
    run_report["iou_summary"] = _emulation_iou_summary(frames, noisy)
    atomic_write_json(out / "emulation_report.json", run_report)
    _write_manifest(
        out, "emulate", {"spec": run_report["error_config"], "coverage": args.coverage,
                         "mode": args.mode}, args.seed,
        [args.annotations], ["emulated.json", "emulation_report.json"], started,
    )
    return EXIT_OK


def _emulation_iou_summary(original, emulated) -> dict:
    from .quality import iou

    orig_by_id = {f.frame_id: f for f in original}
    values = []
    for frame in emulated:
        source = orig_by_id.get(frame.frame_id)
        if source is None:
            continue
        for a, b in zip(source.labels, frame.labels):
            values.append(iou(a, b))
    if not values:
        return {"count": 0}
    arr = np.asarray(values)
    return {
        "count": int(arr.size),
        "mean": float(arr.mean()),
        "median": float(np.median(arr)),
        "p10": float(np.percentile(arr, 10)),
    }


def _camera_from_args(args, meta: dict) -> CameraModel:
    if args.camera:
        with open(args.camera, "r", encoding="utf-8") as handle:
            entry = json.load(handle)
        return camera_from_entry(entry)
    # fall back to the template camera; emulation only needs intrinsics + a
    # level pose, which annotation sets produced by this tool share
    cam = camera_from_entry(street_config()["cameras"][0])
    size = meta.get("cameras", {}).get(cam.id, {}).get("image_size")
    if size and tuple(size) != tuple(cam.image_size):
        raise ConfigError(
            "annotation meta disagrees with the default camera; pass --camera"
        )
    return cam


def cmd_calibrate(args) -> int:
    started = time.time()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pairs = []
    if args.pairs:
        for spec in args.pairs:
            try:
                name, med, p95 = spec.split(":")
                pairs.append((name, float(med) / 100.0, float(p95) / 100.0))
            except ValueError as exc:
                raise ConfigError(
                    f"bad --pair {spec!r}; expected NAME:MEDIAN_CM:P95_CM"
                ) from exc
    else:
        pairs = [(n, v[2], v[3]) for n, v in sorted(BUILTIN_PROFILES.items())]
    outputs = []
    for name, median, p95 in pairs:
        profile = BUILTIN_PROFILES.get(name)
        num_tx = profile[0] if profile else 2
        spf = profile[1] if profile else 256
        cfg = calibrated_config(name, num_tx, spf, median, p95)
        path = out / f"error_config_{name}.json"
        atomic_write_json(path, _error_config_doc(cfg))
        outputs.append(path.name)
        log.info("calibrated %s: shape=%.4f scale=%.4f m", name, cfg.gamma_shape, cfg.gamma_scale)
    _write_manifest(out, "calibrate", {"pairs": [list(p) for p in pairs]}, args.seed, [], outputs, started)
    return EXIT_OK


def cmd_filter(args) -> int:
    started = time.time()
    frames, meta = load_annotations(args.annotations)
    events = ()
    if args.ranging:
        samples = read_ranging_csv(args.ranging)
        events = tuple(detect_occlusion_events(samples, OcclusionThresholds()))
    fixes = read_fixes_csv(args.fixes) if args.fixes else None
    criteria = FilterCriteria(
        confidence_threshold=args.min_confidence,
        occlusion_events=events,
        speed_cap_mps=args.speed_cap,
    )
    filtered, report = filter_labels(frames, fixes, criteria)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_annotations(filtered, out / "filtered.json", meta=meta or None)
    payload = report.to_dict()
    payload["occlusion_events"] = [
        {"target_id": e.target_id, "tx_id": e.tx_id, "interval": list(e.interval),
         "evidence": sorted(v.value for v in e.evidence)}
        for e in events
    ]
    atomic_write_json(out / "filter_report.json", payload)
    _write_manifest(
        out, "filter",
        {"min_confidence": args.min_confidence, "speed_cap": args.speed_cap},
        args.seed, [args.annotations], ["filtered.json", "filter_report.json"], started,
    )
    log.info("filter: removed %d labels, kept %d", report.total_removed, report.kept)
    return EXIT_OK


def cmd_report(args) -> int:
    started = time.time()
    rf_frames, _ = load_annotations(args.annotations)
    gt_frames, _ = load_annotations(args.ground_truth)
    report = quality_report(rf_frames, gt_frames, match_iou=args.match_iou)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_json(out / "quality_report.json", report.to_dict())
    lines = ["frame_id,iou,center_col_error_px,height_error_px"]
    for row in report.per_label_errors:
        lines.append(
            f"{row['frame_id']},{row['iou']!r},{row['center_col_error_px']!r},{row['height_error_px']!r}"
        )
    atomic_write_text(out / "per_label_errors.csv", "\n".join(lines) + "\n")
    outputs = ["quality_report.json", "per_label_errors.csv"]
    if not args.no_plots:
        save_iou_histogram(report, out / "iou_histogram.svg")
        save_error_scatter(report, out / "error_scatter.svg")
        outputs += ["iou_histogram.svg", "error_scatter.svg"]
    _write_manifest(
        out, "report", {"match_iou": args.match_iou}, args.seed,
        [args.annotations, args.ground_truth], outputs, started,
    )
    return EXIT_OK


def cmd_convert(args) -> int:
    started = time.time()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.to == "coco":
        frames, meta = load_annotations(args.input)
        sizes = {
            cam_id: tuple(entry["image_size"])
            for cam_id, entry in meta.get("cameras", {}).items()
        }
        if args.image_size:
            w, h = (int(v) for v in args.image_size.split("x"))
            sizes = {f.camera_id: (w, h) for f in frames} | sizes
        doc = to_coco(strip_injected_flags(frames), sizes)
        atomic_write_json(out, doc)
    else:
        with open(args.input, "r", encoding="utf-8") as handle:
            doc = json.load(handle)
        frames = from_coco(doc)
        save_annotations(frames, out)
    _write_manifest(
        out.parent, "convert", {"to": args.to}, args.seed,
        [args.input], [out.name], started,
    )
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rflabel",
        description="Simulate, emulate, filter and score localization-derived image labels.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the full ranging->labels pipeline on a scene")
    p.add_argument("--config", default="street", help="scene JSON path or template name")
    p.add_argument("--error-config", default="S0", help="built-in name (S0..S3) or config JSON path")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-noise", action="store_true", help="disable ranging noise")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("emulate", help="inject localization error into an annotation set")
    p.add_argument("--annotations", required=True)
    p.add_argument("--error-config", default="S0")
    p.add_argument("--camera", help="camera JSON (scene camera entry); default: street template camera")
    p.add_argument("--coverage", type=float, default=1.0)
    p.add_argument("--mode", choices=[m.value for m in ErrorMode], default="both")
    p.add_argument("--no-height-variation", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_emulate)

    p = sub.add_parser("calibrate", help="fit gamma error profiles to quantile targets")
    p.add_argument("--pairs", nargs="*", metavar="NAME:MEDIAN_CM:P95_CM",
                   help="default: the four built-in hardware profiles")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("filter", help="drop suspect labels using ranging evidence")
    p.add_argument("--annotations", required=True)
    p.add_argument("--ranging", help="ranging CSV for occlusion detection")
    p.add_argument("--fixes", help="fixes CSV for the speed rule")
    p.add_argument("--min-confidence", type=float, default=0.2)
    p.add_argument("--speed-cap", type=float, default=12.0)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("report", help="score annotations against ground truth")
    p.add_argument("--annotations", required=True)
    p.add_argument("--ground-truth", required=True)
    p.add_argument("--match-iou", type=float, default=0.5)
    p.add_argument("--no-plots", action="store_true", help="skip SVG figure rendering")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("convert", help="convert between native and COCO-style annotations")
    p.add_argument("--to", choices=["coco", "native"], required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--image-size", help="WxH fallback when the input carries no camera meta")
    p.add_argument("--out", required=True, help="output file path")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_convert)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("RFLABEL_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, PermissionError, IsADirectoryError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, GeometryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MATH
    except RFLabelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
