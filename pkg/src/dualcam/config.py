"""Pipeline configuration: one options document with a section per stage.

Every default used anywhere in the pipeline lives here. ``default_config()``
returns the documented defaults; ``PipelineConfig.from_dict`` overlays a
partial options file on top of them.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    pass


@dataclass
class SurveyConfig:
    # survey geometry
    patch_width: float = 10.0  # m, along x
    patch_height: float = 10.0  # m, along y
    row_spacing: float = 2.0  # m
    speed: float = 0.5  # m/s
    loc_rate: float = 60.0  # Hz, localization trajectory samples
    doc_rate: float = 4.0  # Hz, documentation keyframes
    doc_height: float = 1.5  # m, documentation camera above ground
    # localization camera mount relative to the documentation camera, body frame
    loc_forward: float = 0.15  # m
    loc_left: float = 0.05  # m
    loc_up: float = 0.25  # m
    loc_pitch_deg: float = 25.0  # downward pitch of the localization camera
    wobble_deg: float = 2.0  # roll/pitch oscillation amplitude of the rig
    wobble_height: float = 0.02  # m, height oscillation amplitude
    # scene content
    landmark_density: float = 8.0  # per m^2
    landmark_margin: float = 2.5  # m beyond the patch
    height_amplitude: float = 0.05  # m, ground height-field amplitude
    marker_count: int = 9
    marker_size: float = 0.2  # m, tag edge length
    # documentation camera (pixels)
    doc_fx: float = 1000.0
    doc_fy: float = 1000.0
    doc_cx: float = 1024.0
    doc_cy: float = 540.0
    doc_width: int = 2048
    doc_height_px: int = 1080
    # measurement noise
    pixel_noise: float = 1.0  # px, Gaussian sigma
    descriptor_flip: float = 0.02  # per-bit flip probability
    time_jitter: float = 0.2  # s, bound on |t_obs - t_true|
    time_jitter_frame_fraction: float = 0.25  # share of the bound that varies per keyframe
    extrinsic_rot_deg: float = 2.0  # magnitude of the extrinsic prior rotation error
    extrinsic_trans: float = 0.02  # m, magnitude of the extrinsic prior translation error
    # fragment (sub-map) model
    loss_at_turns: bool = True
    midrow_loss_rate: float = 2.0  # mean Poisson mid-row losses per survey
    min_fragment_keyframes: int = 5
    fragment_max_rotation_deg: float = 180.0
    fragment_scale_range: tuple[float, float] = (0.2, 5.0)
    fragment_pose_noise_rot: float = 0.002  # rad, per keyframe
    fragment_pose_noise_trans: float = 0.003  # m, per keyframe
    fragment_landmark_noise: float = 0.005  # m
    seed: int = 0

    def validate(self) -> None:
        for name in ("speed", "loc_rate", "doc_rate", "row_spacing", "patch_width", "patch_height", "doc_height"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"simulation.{name} must be > 0")
        if not 0 <= self.time_jitter <= 0.5:
            raise ConfigError("simulation.time_jitter must lie in [0, 0.5] s")
        if not 0 <= self.time_jitter_frame_fraction <= 1:
            raise ConfigError("simulation.time_jitter_frame_fraction must lie in [0, 1]")
        if 2 * self.time_jitter * self.time_jitter_frame_fraction >= 1.0 / self.doc_rate:
            raise ConfigError("per-keyframe time jitter would reorder keyframes; lower jitter or frame fraction")
        for name in ("pixel_noise", "extrinsic_rot_deg", "extrinsic_trans", "midrow_loss_rate", "landmark_density"):
            if getattr(self, name) < 0:
                raise ConfigError(f"simulation.{name} must be >= 0")
        if not 0 <= self.descriptor_flip <= 0.5:
            raise ConfigError("simulation.descriptor_flip must lie in [0, 0.5]")
        lo, hi = self.fragment_scale_range
        if not 0 < lo <= hi:
            raise ConfigError("simulation.fragment_scale_range must be positive and ordered")
        if self.min_fragment_keyframes < 3:
            raise ConfigError("simulation.min_fragment_keyframes must be >= 3")
        if self.marker_count not in (0, 9):
            raise ConfigError("simulation.marker_count supports the 9-tag layout (or 0)")

    def noiseless(self) -> SurveyConfig:
        """Copy with every measurement and initialization error switched off."""
        return dataclasses.replace(
            self,
            pixel_noise=0.0,
            descriptor_flip=0.0,
            time_jitter=0.0,
            extrinsic_rot_deg=0.0,
            extrinsic_trans=0.0,
            fragment_pose_noise_rot=0.0,
            fragment_pose_noise_trans=0.0,
            fragment_landmark_noise=0.0,
        )


@dataclass
class AlignmentOptions:
    min_baseline: float = 1e-6  # m, degenerate-baseline threshold
    axis_length: float = 1.0  # m, axis-point offset for the orientation step
    min_keyframes: int = 3
    max_registration_frames: int = 30


@dataclass
class LinkingOptions:
    radius: float = 5.0  # m, spatial pre-filter around each keyframe center
    max_depth: float = 10.0  # m
    pixel_threshold: float = 4.0  # px
    descriptor_threshold: int = 50  # bits (of 256)
    min_correspondences: int = 2


@dataclass
class OptimizerOptions:
    max_iterations: int = 50
    relative_tolerance: float = 1e-9
    gradient_tolerance: float = 1e-10
    cost_tolerance: float = 1e-16  # stop once the total cost is numerically zero
    initial_lambda: float = 1e-4
    pixel_sigma: float = 1.0  # px
    huber_delta: float = math.sqrt(5.99)  # in whitened pixel units
    pose_sigma_rot: float = 0.05  # rad
    pose_sigma_trans: float = 0.05  # m
    pose_kernel: str = "squared"  # or "huber"
    pose_huber_delta: float = math.sqrt(12.59)  # 95% chi2, 6 dof
    time_sigma: float = 0.25  # s
    extrinsic_sigma_rot: float = 0.02  # rad
    extrinsic_sigma_trans: float = 0.01  # m
    span_penalty_sigma: float = 1e-3  # s, stiffness of the out-of-span time penalty
    use_pose_factors: bool = True
    min_depth: float = 1e-6  # m


@dataclass
class EvaluationOptions:
    mode: str = "mean"  # or "median" over views


@dataclass
class PipelineConfig:
    simulation: SurveyConfig = field(default_factory=SurveyConfig)
    alignment: AlignmentOptions = field(default_factory=AlignmentOptions)
    linking: LinkingOptions = field(default_factory=LinkingOptions)
    optimizer: OptimizerOptions = field(default_factory=OptimizerOptions)
    evaluation: EvaluationOptions = field(default_factory=EvaluationOptions)

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["simulation"]["fragment_scale_range"] = list(self.simulation.fragment_scale_range)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any] | None) -> PipelineConfig:
        cfg = cls()
        if not d:
            return cfg
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
        for section, values in d.items():
            target = getattr(cfg, section)
            names = {f.name: f for f in dataclasses.fields(target)}
            for key, value in (values or {}).items():
                if key not in names:
                    raise ConfigError(f"unknown option {section}.{key}")
                if key == "fragment_scale_range":
                    value = tuple(float(v) for v in value)
                setattr(target, key, value)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        self.simulation.validate()
        if self.evaluation.mode not in ("mean", "median"):
            raise ConfigError("evaluation.mode must be 'mean' or 'median'")
        if self.optimizer.pose_kernel not in ("squared", "huber"):
            raise ConfigError("optimizer.pose_kernel must be 'squared' or 'huber'")
        if self.optimizer.huber_delta <= 0 or self.optimizer.pose_huber_delta <= 0:
            raise ConfigError("Huber delta must be > 0")


def default_config() -> PipelineConfig:
    return PipelineConfig()


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return default_config()
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path}: {exc}") from exc
    return PipelineConfig.from_dict(doc)
