"""Command-line front end: ``dualcam {simulate,align,link,optimize,evaluate,full}``.

Exit status is 0 on success, 2 on a usage error and 1 when a stage fails; the
error message names the stage.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import pipeline
from .config import ConfigError, PipelineConfig, load_config
from .scene import SceneFormatError, dumps_scene, load_scene

log = logging.getLogger("dualcam")

_SCENE_STAGES = ("simulate", "align", "link", "optimize")


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (set, tuple)):
        return sorted(o) if isinstance(o, set) else list(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True, default=_json_default) + "\n"


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON options file (overrides options stored in the scene)")
    common.add_argument("--seed", type=int, help="simulation seed (simulate, full)")
    common.add_argument("--in", dest="inp", type=Path, help="input scene file")
    common.add_argument("--out", type=Path, help="output scene file (output directory for full)")
    common.add_argument("--report", type=Path, help="write the stage report here instead of stdout")
    common.add_argument(
        "--deterministic",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="single-threaded, fixed-order evaluation (default: on)",
    )
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="dualcam", description="Two-camera documentation mapping pipeline.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="generate a synthetic survey scene")
    for name in ("align", "link", "optimize", "evaluate"):
        sub.add_parser(name, parents=[common], help=f"run the {name} stage on --in")
    sub.add_parser("full", parents=[common], help="simulate, align, link, optimize and evaluate")
    return p


def _config(args) -> PipelineConfig | None:
    return load_config(args.config) if args.config else None


def _emit_report(args, report: dict) -> None:
    text = dumps_report(report)
    if args.report:
        _write(args.report, text)
    else:
        sys.stdout.write(text)


def _run_stage(args) -> None:
    cmd = args.command
    cfg = _config(args)
    if cmd == "simulate":
        scene, report = pipeline.run_simulate(cfg or PipelineConfig(), args.seed)
    else:
        if args.inp is None:
            raise pipeline.StageError(cmd, "missing --in scene file")
        scene = load_scene(args.inp)
        if cfg is not None:
            scene.config = cfg.to_dict()
        fn = {
            "align": pipeline.run_align,
            "link": pipeline.run_link,
            "optimize": pipeline.run_optimize,
            "evaluate": pipeline.run_evaluate,
        }[cmd]
        if cmd == "align" and not args.deterministic:
            with ThreadPoolExecutor() as ex:
                report = pipeline.run_align(scene, executor=ex)
        else:
            report = fn(scene)
    if cmd in _SCENE_STAGES:
        if args.out is None:
            raise pipeline.StageError(cmd, "missing --out scene file")
        _write(args.out, dumps_scene(scene))
    _emit_report(args, report)


def _run_full(args) -> None:
    if args.out is None:
        raise pipeline.StageError("full", "missing --out directory")
    out: Path = args.out
    cfg = _config(args) or PipelineConfig()

    def save(name, scene, report):
        if name in _SCENE_STAGES:
            _write(out / f"{name}.scene.json", dumps_scene(scene))
        _write(out / f"{name}.report.json", dumps_report(report))

    _, reports = pipeline.run_full(cfg, args.seed, on_stage=save)
    summary = {"stages": list(reports), "evaluation": reports["evaluate"].get("regression")}
    _emit_report(args, summary)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    stage = args.command
    try:
        if stage == "full":
            _run_full(args)
        else:
            _run_stage(args)
    except pipeline.StageError as exc:
        print(f"dualcam: stage {exc}", file=sys.stderr)
        return 1
    except (ConfigError, SceneFormatError, OSError, ValueError, RuntimeError) as exc:
        print(f"dualcam: stage {stage} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
