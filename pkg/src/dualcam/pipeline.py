"""Stage functions: simulate -> align -> link -> optimize -> evaluate.

Each stage mutates a :class:`Scene` in place and returns a JSON-ready report.
Reports hold no timings or paths, so repeated runs produce identical bytes.
"""

from __future__ import annotations

import dataclasses
import logging

from . import alignment, evaluation, linking, optimizer
from .config import PipelineConfig
from .scene import Scene, refresh_observers
from .simulator import simulate as _simulate

log = logging.getLogger(__name__)

STAGES = ("simulate", "align", "link", "optimize", "evaluate")
_ORDER = {"simulated": 0, "aligned": 1, "linked": 2, "optimized": 3}


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


def _require(scene: Scene, stage: str, needed: str) -> None:
    have = _ORDER.get(scene.stage, -1)
    if have < _ORDER[needed]:
        raise StageError(stage, f"scene is at stage {scene.stage!r}, expected {needed!r} or later")


def scene_config(scene: Scene, override: PipelineConfig | None = None) -> PipelineConfig:
    """Options recorded in the scene, unless an explicit config is given."""
    if override is not None:
        return override
    return PipelineConfig.from_dict(scene.config or None)


def run_simulate(config: PipelineConfig, seed: int | None = None) -> tuple[Scene, dict]:
    if seed is not None:
        config = dataclasses.replace(config, simulation=dataclasses.replace(config.simulation, seed=int(seed)))
    config.validate()
    scene = _simulate(config.simulation, config.to_dict())
    report = {
        "stage": "simulate",
        "seed": config.simulation.seed,
        "fragments": len(scene.fragments),
        "keyframes": sum(len(f.keyframes) for f in scene.fragments),
        "landmarks": sum(len(f.landmarks) for f in scene.fragments),
        "observations": sum(len(kf.observations) for kf in scene.keyframes()),
        "markers": len(scene.markers),
        "trajectory_samples": len(scene.trajectory) if scene.trajectory is not None else 0,
    }
    return scene, report


def run_align(scene: Scene, config: PipelineConfig | None = None, executor=None) -> dict:
    """Scale and align every fragment. ``executor`` may run fragments concurrently;
    they are independent, so the result does not depend on it."""
    cfg = scene_config(scene, config)
    if scene.trajectory is None:
        raise StageError("align", "scene has no localization trajectory")
    if not scene.fragments:
        raise StageError("align", "scene has no documentation fragments")
    reports = alignment.align_all(scene.fragments, scene.trajectory, scene.extrinsic_prior, cfg.alignment, executor)
    scene.extrinsic = scene.extrinsic_prior
    scene.stage = "aligned"
    return {
        "stage": "align",
        "aligned": sum(r.status == "aligned" for r in reports),
        "excluded": sum(r.status != "aligned" for r in reports),
        "fragments": [r.to_dict() for r in reports],
    }


def run_link(scene: Scene, config: PipelineConfig | None = None) -> dict:
    cfg = scene_config(scene, config)
    _require(scene, "link", "aligned")
    report = linking.link_fragments(scene, cfg.linking)
    refresh_observers(scene)
    scene.stage = "linked"
    out = {"stage": "link", **report.to_dict()}
    if scene.truth is not None:
        ids = set(scene.truth.landmark_source)
        truth = linking.true_duplicate_pairs(scene, ids)
        merged = report.merged_pairs
        hits = len(truth & merged)
        out["truth"] = {
            "duplicate_pairs": len(truth),
            "merged_pairs": len(merged),
            "correct_pairs": hits,
            "precision": hits / len(merged) if merged else 1.0,
            "recall": hits / len(truth) if truth else 1.0,
        }
    return out


def run_optimize(scene: Scene, config: PipelineConfig | None = None) -> dict:
    cfg = scene_config(scene, config)
    _require(scene, "optimize", "linked")
    if scene.trajectory is None:
        raise StageError("optimize", "scene has no localization trajectory")
    try:
        rep = optimizer.optimize_scene(scene, cfg.optimizer)
    except optimizer.OptimizerError as exc:
        raise StageError("optimize", str(exc)) from exc
    scene.stage = "optimized"
    return {"stage": "optimize", **rep.to_dict()}


def run_evaluate(scene: Scene, config: PipelineConfig | None = None) -> dict:
    cfg = scene_config(scene, config)
    try:
        return {"stage": "evaluate", **evaluation.evaluate_scene(scene, cfg.evaluation)}
    except evaluation.EvaluationError as exc:
        raise StageError("evaluate", str(exc)) from exc


def run_full(config: PipelineConfig, seed: int | None = None, on_stage=None) -> tuple[Scene, dict[str, dict]]:
    """Run every stage in memory. ``on_stage(name, scene, report)`` is called after each."""
    scene, rep = run_simulate(config, seed)
    reports = {"simulate": rep}
    if on_stage:
        on_stage("simulate", scene, rep)
    for name, fn in (("align", run_align), ("link", run_link), ("optimize", run_optimize), ("evaluate", run_evaluate)):
        try:
            rep = fn(scene)
        except StageError:
            raise
        except Exception as exc:  # surface the failing stage by name
            raise StageError(name, f"{type(exc).__name__}: {exc}") from exc
        reports[name] = rep
        if on_stage:
            on_stage(name, scene, rep)
    return scene, reports
