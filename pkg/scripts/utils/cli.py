"""
Command-line interface for corrgen.

Subcommands:
    generate        render a dataset from a scene config
    preview         render one frame with part colors and sampled points
    evaluate        score predictions against ground truth
    validate-model  check a body model container and its atlas
    init-toy        write a complete toy resource set
    package         swap in post-processed RGB frames

Errors are reported as one JSON document on stdout, e.g.
{"error": "missing_resource", "message": "..."}, with a non-zero exit code.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from pydantic import ValidationError

from atlas import load_atlas, uncovered_faces
from body_model import CheckResult, inspect_body_model, load_body_model
from dataset import generate_dataset, package_dataset, read_coco, render_preview
from errors import CorrgenError
from image_io import save_rgb, write_text_atomic
from log_setup import setup_logging
from metrics import EvalSurface, evaluate, read_predictions
from scene_config import MetricsConfig, RunConfig, SceneConfig, load_scene_config
from toy_assets import write_toy_resources

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_VALIDATION = 4
EXIT_INTERRUPTED = 130

REPORT_JSON = "report.json"
REPORT_TABLE = "report.txt"


class UsageError(CorrgenError):
    code = "usage"
    exit_code = EXIT_USAGE


def parse_frame_range(text: str) -> tuple[int, int]:
    """'A..B' -> (A, B), half-open like range(A, B)."""
    start, sep, stop = text.partition("..")
    try:
        if not sep:
            raise ValueError
        return int(start), int(stop)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected START..STOP, got {text!r}") from None


def parse_bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("true", "1", "yes", "on"):
        return True
    if value in ("false", "0", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true or false, got {text!r}")


def _emit(doc: dict) -> None:
    print(json.dumps(doc, indent=2))


# Commands

def _scene_for(run: RunConfig) -> SceneConfig:
    if run.config_path is None:
        raise UsageError(f"{run.command} needs --config")
    return run.apply(load_scene_config(run.config_path))


def cmd_generate(run: RunConfig, progress: bool = True) -> int:
    """Generate a dataset under run.out_dir."""
    if run.out_dir is None:
        raise UsageError("generate needs --out")
    scene = _scene_for(run)
    summary = generate_dataset(scene, run.out_dir, run.frame_indices(scene), progress=progress)
    _emit({
        "out_dir": str(summary.out_dir),
        "generated": summary.generated,
        "skipped": [{"frame": frame, "reason": reason} for frame, reason in summary.skipped],
    })
    return EXIT_OK


def cmd_preview(run: RunConfig, frame_index: int, out_path) -> int:
    """Write one annotated PNG; the dataset is not touched."""
    scene = _scene_for(run)
    preview, frame = render_preview(scene, frame_index)
    save_rgb(out_path, preview)
    _emit({"preview": str(out_path), "frame": frame_index, "foreground_pixels": int(frame.buffers.instance_mask.sum())})
    return EXIT_OK


def _eval_surface(model_path: Optional[str], atlas_path: Optional[str], config_path: Optional[str],
                  metrics: MetricsConfig) -> EvalSurface:
    if model_path is None and config_path is not None:
        scene = load_scene_config(config_path)
        model_path = scene.models[scene.gender_tags[0]]
        atlas_path = atlas_path or scene.atlas
    if model_path is None or atlas_path is None:
        raise UsageError("evaluate needs --model and --atlas, or --config")
    model = load_body_model(model_path)
    atlas = load_atlas(atlas_path, expected_faces=model.faces)
    return EvalSurface.from_model(model, atlas, cache_size=metrics.geodesic_cache_size)


def cmd_evaluate(gt_path, pred_path, metrics: MetricsConfig, surface: EvalSurface,
                 out_dir=None, workers: int = 1) -> int:
    """Score predictions; prints the table and writes report.json / report.txt when out_dir is set."""
    gt = read_coco(gt_path)
    predictions = read_predictions(pred_path)
    report = evaluate(gt, predictions, metrics, surface, workers=workers)
    table = report.to_table()
    if out_dir is not None:
        out = Path(out_dir)
        write_text_atomic(out / REPORT_JSON, report.model_dump_json(indent=2) + "\n")
        write_text_atomic(out / REPORT_TABLE, table + "\n")
    print(table)
    return EXIT_OK


def validate_model(model_path, atlas_path) -> list[CheckResult]:
    """Container checks followed by atlas coverage; never raises on a broken input."""
    results = inspect_body_model(model_path)
    if not all(check.passed for check in results):
        return results
    model = load_body_model(model_path)
    try:
        atlas = load_atlas(atlas_path)
    except CorrgenError as exc:
        return results + [CheckResult("atlas", False, str(exc), type(exc))]
    results.append(CheckResult("atlas", True, f"{atlas.num_faces} faces, {len(atlas.charts)} charts"))
    gaps = uncovered_faces(atlas, model.faces)
    if gaps.size:
        detail = f"face {int(gaps[0])} has no atlas triangle"
        if gaps.size > 1:
            detail += f" ({gaps.size} faces uncovered)"
        results.append(CheckResult("atlas_coverage", False, detail))
    elif atlas.num_faces != model.faces.shape[0]:
        results.append(CheckResult("atlas_coverage", False,
                                   f"atlas has {atlas.num_faces} faces, model has {model.faces.shape[0]}"))
    else:
        results.append(CheckResult("atlas_coverage", True, f"all {atlas.num_faces} faces charted"))
    return results


def cmd_validate_model(model_path, atlas_path) -> int:
    """Print pass/fail per check; exit 0 only when every check passed."""
    results = validate_model(model_path, atlas_path)
    for check in results:
        status = "PASS" if check.passed else "FAIL"
        print(f"{status}  {check.name:<16} {check.detail}".rstrip())
    return EXIT_OK if all(check.passed for check in results) else EXIT_VALIDATION


def cmd_init_toy(out_dir, frames: int, seed: int) -> int:
    config_path = write_toy_resources(out_dir, num_frames=frames, master_seed=seed)
    _emit({"config": str(config_path)})
    return EXIT_OK


def cmd_package(out_dir, post_rgb_dir) -> int:
    replaced = package_dataset(out_dir, post_rgb_dir)
    _emit({"out_dir": str(out_dir), "replaced": replaced})
    return EXIT_OK


# Argument parsing

def _add_scene_overrides(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="scene config JSON")
    parser.add_argument("--seed", type=int, help="override master_seed")
    parser.add_argument("--workers", type=int, help="frame worker processes")
    parser.add_argument("--no-occluders", action="store_true", help="disable synthetic occluders")
    parser.add_argument("--harmonize-lambda", type=float, help="color harmonization strength in [0, 1]")
    parser.add_argument("--occlusion-aware-labels", type=parse_bool, metavar="{true,false}")
    parser.add_argument("--supersample", type=int, help="samples per pixel axis, 1-4")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="corrgen", description="Synthetic dense-correspondence data toolkit")
    parser.add_argument("--log-level", help="overrides CORRGEN_LOG")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="render a dataset")
    _add_scene_overrides(gen)
    gen.add_argument("--out", required=True, help="output root")
    gen.add_argument("--frames", type=parse_frame_range, metavar="START..STOP",
                     help="half-open frame range, default all frames")
    gen.add_argument("--no-progress", action="store_true")

    prev = sub.add_parser("preview", help="render one annotated frame")
    _add_scene_overrides(prev)
    prev.add_argument("--frame", type=int, required=True)
    prev.add_argument("--out", required=True, help="PNG path")

    ev = sub.add_parser("evaluate", help="score predictions against ground truth")
    ev.add_argument("gt", help="ground-truth annotations.json")
    ev.add_argument("pred", help="predictions: COCO dataset or list of results")
    ev.add_argument("--model", help="body model container used for geodesics")
    ev.add_argument("--atlas", help="atlas directory")
    ev.add_argument("--config", help="scene config; its first model and atlas are used")
    ev.add_argument("--kappa", type=float, help="geodesic kernel bandwidth")
    ev.add_argument("--max-detections", type=int)
    ev.add_argument("--workers", type=int, default=1)
    ev.add_argument("--out", help="directory for report.json and report.txt")

    val = sub.add_parser("validate-model", help="check a model container and atlas")
    val.add_argument("model")
    val.add_argument("atlas")

    toy = sub.add_parser("init-toy", help="write a toy resource set")
    toy.add_argument("out")
    toy.add_argument("--frames", type=int, default=50)
    toy.add_argument("--seed", type=int, default=0)

    pkg = sub.add_parser("package", help="replace RGB frames with post-processed ones")
    pkg.add_argument("--out", required=True, help="dataset root")
    pkg.add_argument("--post-rgb-dir", required=True)
    return parser


def _run_config(args: argparse.Namespace) -> RunConfig:
    try:
        return RunConfig(
            command=args.command,
            config_path=args.config,
            out_dir=getattr(args, "out", None),
            seed=args.seed,
            workers=args.workers,
            frames=getattr(args, "frames", None),
            no_occluders=args.no_occluders,
            harmonize_lambda=args.harmonize_lambda,
            occlusion_aware_labels=args.occlusion_aware_labels,
            supersample=args.supersample,
        )
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(part) for part in first["loc"])
        raise UsageError(f"--{where.replace('_', '-')}: {first['msg']}") from exc


def _metrics_config(args: argparse.Namespace) -> MetricsConfig:
    overrides = {key: value for key, value in (("kappa", args.kappa), ("max_detections", args.max_detections))
                 if value is not None}
    try:
        return MetricsConfig(**overrides)
    except ValidationError as exc:
        first = exc.errors()[0]
        raise UsageError(f"--{str(first['loc'][0]).replace('_', '-')}: {first['msg']}") from exc


def dispatch(args: argparse.Namespace) -> int:
    if args.command == "generate":
        return cmd_generate(_run_config(args), progress=not args.no_progress)
    if args.command == "preview":
        return cmd_preview(_run_config(args), args.frame, args.out)
    if args.command == "evaluate":
        if args.workers < 1:
            raise UsageError("--workers must be >= 1")
        metrics = _metrics_config(args)
        surface = _eval_surface(args.model, args.atlas, args.config, metrics)
        return cmd_evaluate(args.gt, args.pred, metrics, surface, out_dir=args.out, workers=args.workers)
    if args.command == "validate-model":
        return cmd_validate_model(args.model, args.atlas)
    if args.command == "init-toy":
        return cmd_init_toy(args.out, args.frames, args.seed)
    if args.command == "package":
        return cmd_package(args.out, args.post_rgb_dir)
    raise UsageError(f"unknown command {args.command!r}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    setup_logging(args.log_level)

    try:
        return dispatch(args)
    except CorrgenError as exc:
        logger.error("command failed", extra={"command": args.command, "code": exc.code})
        _emit({"error": exc.code, "message": str(exc)})
        return exc.exit_code
    except KeyboardInterrupt:
        logger.warning("interrupted", extra={"command": args.command})
        _emit({"error": "interrupted", "message": "interrupted by user"})
        return EXIT_INTERRUPTED
    except Exception as exc:
        logger.exception("unexpected failure", extra={"command": args.command})
        _emit({"error": "internal", "message": str(exc)})
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
