"""Bring fragmentary documentation maps into the localization frame.

Stages per fragment: scale bootstrap from the initialization motion, rescale by
full travelled distance, then the two-step Horn alignment (similarity on camera
centers, then an axis-augmented rotation about the center centroid).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .geometry import (
    GeometryError,
    Pose,
    SimilarityTransform,
    Trajectory,
    compose,
    horn_sim3,
    horn_so3_augmented,
    interpolate_pose,
    rotation_angle,
    se3_exp,
    se3_log,
)
from .scene import FragmentMap, ScaleState

log = logging.getLogger(__name__)


class AlignmentError(GeometryError):
    pass


class DegenerateBaselineError(AlignmentError):
    """Fragment motion too small to fix a scale."""


class InsufficientSupportError(AlignmentError):
    """Too few keyframes to align a fragment."""


def implied_doc_pose(traj: Trajectory, t: float, T_dl: Pose) -> Pose:
    """Documentation pose at time t: X_d(t) = X_l(t) T_dl."""
    return compose(interpolate_pose(traj, t), T_dl)


def initialization_motion(traj: Trajectory, t0: float, t1: float, T_dl: Pose) -> Pose:
    """Relative documentation-camera motion X_d(t0)^-1 X_d(t1)."""
    if not t0 < t1:
        raise AlignmentError(f"initialization window must have t0 < t1, got {t0}, {t1}")
    return implied_doc_pose(traj, t0, T_dl).inverse() @ implied_doc_pose(traj, t1, T_dl)


def _scale_fragment(frag: FragmentMap, s: float) -> None:
    for kf in frag.keyframes:
        kf.pose = Pose(kf.pose.q, s * kf.pose.t)
    for lm in frag.landmarks.values():
        lm.position = s * lm.position


def _transform_fragment(frag: FragmentMap, sim: SimilarityTransform) -> None:
    for kf in frag.keyframes:
        kf.pose = sim.apply_to_pose(kf.pose)
    for lm in frag.landmarks.values():
        lm.position = sim.apply(lm.position)


def bootstrap_scale(frag: FragmentMap, traj: Trajectory, T_dl: Pose, min_baseline: float = 1e-6) -> float:
    """Scale the fragment so its first keyframe-to-keyframe motion matches the
    motion implied by the trajectory over the same time priors. In place.

    Returns the applied scale factor.
    """
    if len(frag.keyframes) < 2:
        raise DegenerateBaselineError(f"fragment {frag.id}: needs two keyframes for an initialization window")
    k0, k1 = frag.keyframes[0], frag.keyframes[1]
    internal = np.linalg.norm((k0.pose.inverse() @ k1.pose).t)
    if internal < min_baseline:
        raise DegenerateBaselineError(f"fragment {frag.id}: initialization baseline {internal:.3g} below {min_baseline}")
    implied = np.linalg.norm(initialization_motion(traj, k0.time_prior, k1.time_prior, T_dl).t)
    if implied < min_baseline:
        raise DegenerateBaselineError(f"fragment {frag.id}: implied initialization motion {implied:.3g} m is degenerate")
    s = implied / internal
    _scale_fragment(frag, s)
    frag.scale_state = ScaleState.BOOTSTRAP
    return float(s)


def _path_length(centers: np.ndarray) -> float:
    return float(np.sum(np.linalg.norm(np.diff(centers, axis=0), axis=1)))


def implied_centers(frag: FragmentMap, traj: Trajectory, T_dl: Pose) -> np.ndarray:
    R, p, _, _ = traj.interpolate(np.array([kf.time_prior for kf in frag.keyframes]))
    return p + R @ T_dl.t


def rescale_full_distance(frag: FragmentMap, traj: Trajectory, T_dl: Pose, min_length: float = 1e-6) -> float:
    """Rescale by the ratio of implied to internal keyframe path length. In place."""
    if frag.scale_state == ScaleState.ARBITRARY:
        raise AlignmentError(f"fragment {frag.id}: bootstrap the scale before the full-distance rescale")
    internal = _path_length(np.array([kf.pose.t for kf in frag.keyframes]))
    if internal < min_length:
        raise DegenerateBaselineError(f"fragment {frag.id}: internal path length {internal:.3g} is degenerate")
    implied = _path_length(implied_centers(frag, traj, T_dl))
    if implied < min_length:
        raise DegenerateBaselineError(f"fragment {frag.id}: implied path length {implied:.3g} is degenerate")
    s = implied / internal
    _scale_fragment(frag, s)
    frag.scale_state = ScaleState.FULL_DISTANCE
    return float(s)


@dataclass
class AlignmentResult:
    fragment_id: int
    similarity: SimilarityTransform  # step 1
    rotation: Pose  # step 2 (rotation only, applied about `pivot`)
    pivot: np.ndarray
    center_rmse: float
    rotation_rmse: float  # rad


def pose_errors(poses: list[Pose], targets: list[Pose]) -> tuple[np.ndarray, np.ndarray]:
    """Per-pose center distance and rotation angle between two lists."""
    d = np.array([np.linalg.norm(a.t - b.t) for a, b in zip(poses, targets)])
    ang = np.array([rotation_angle(b.inverse() @ a) for a, b in zip(poses, targets)])
    return d, ang


def align_fragment(frag: FragmentMap, traj: Trajectory, T_dl: Pose, axis_length: float = 1.0, min_keyframes: int = 3) -> AlignmentResult:
    """Two-step Horn alignment of a metric fragment onto the implied poses. In place."""
    if len(frag.keyframes) < min_keyframes:
        frag.aligned = False
        raise InsufficientSupportError(f"fragment {frag.id}: {len(frag.keyframes)} keyframes, need {min_keyframes}")
    if frag.scale_state != ScaleState.FULL_DISTANCE:
        raise AlignmentError(f"fragment {frag.id}: rescale by full distance before aligning")
    targets = [implied_doc_pose(traj, kf.time_prior, T_dl) for kf in frag.keyframes]

    # step 1: similarity on camera centers; near-straight paths leave the roll
    # about the path axis undetermined and step 2 resolves it
    src = np.array([kf.pose.t for kf in frag.keyframes])
    dst = np.array([p.t for p in targets])
    sim = horn_sim3(src, dst, allow_collinear=True)
    _transform_fragment(frag, sim)

    # step 2: rotation from centers plus axis points, about the center centroid
    poses = [kf.pose for kf in frag.keyframes]
    rot = horn_so3_augmented(poses, targets, axis_length=axis_length)
    pivot = np.mean([p.t for p in poses], axis=0)
    about = SimilarityTransform(1.0, rot, pivot - rot.R @ pivot)
    _transform_fragment(frag, about)

    frag.aligned = True
    d, ang = pose_errors([kf.pose for kf in frag.keyframes], targets)
    return AlignmentResult(
        frag.id, sim, rot, pivot, float(np.sqrt(np.mean(d**2))), float(np.sqrt(np.mean(ang**2)))
    )


@dataclass
class Registration:
    registered: bool
    seed: Pose | None
    reason: str = ""


def register_submap_constant_velocity(
    parent_tail: list[tuple[float, Pose]], gap: float, max_frames: int, new_submap=None
) -> Registration:
    """Seed pose for a new sub-map by extrapolating the parent's last motion.

    The last inter-frame twist is scaled by gap / frame-interval and applied to
    the last pose. Beyond ``max_frames`` frame intervals the sub-map stays
    unregistered.
    """
    if len(parent_tail) < 2:
        raise AlignmentError("cannot estimate velocity from fewer than two tail samples")
    (t_a, p_a), (t_b, p_b) = parent_tail[-2], parent_tail[-1]
    dt = t_b - t_a
    if dt <= 0:
        raise AlignmentError("tail timestamps must increase")
    if gap > max_frames * dt:
        return Registration(False, None, f"gap {gap:.3f} s exceeds {max_frames} frames")
    twist = se3_log(p_a.inverse() @ p_b)
    return Registration(True, p_b @ se3_exp(twist * (gap / dt)))


@dataclass
class FragmentReport:
    fragment_id: int
    keyframes: int
    status: str
    bootstrap_scale: float | None = None
    full_distance_scale: float | None = None
    step1_scale: float | None = None
    center_rmse: float | None = None
    rotation_rmse: float | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def align_all(fragments: list[FragmentMap], traj: Trajectory, T_dl: Pose, options, executor=None) -> list[FragmentReport]:
    """Scale and align every fragment; failures are flagged and excluded. In place.

    Fragments are independent here, so ``executor`` (anything with ``map``) may
    run them concurrently; results are gathered in fragment order.
    """

    def run(frag: FragmentMap) -> FragmentReport:
        rep = FragmentReport(frag.id, len(frag.keyframes), "aligned")
        try:
            rep.bootstrap_scale = bootstrap_scale(frag, traj, T_dl, options.min_baseline)
            rep.full_distance_scale = rescale_full_distance(frag, traj, T_dl, options.min_baseline)
            res = align_fragment(frag, traj, T_dl, options.axis_length, options.min_keyframes)
            rep.step1_scale = res.similarity.scale
            rep.center_rmse = res.center_rmse
            rep.rotation_rmse = res.rotation_rmse
        except GeometryError as exc:
            frag.aligned = False
            frag.excluded = True
            rep.status = "excluded"
            rep.error = str(exc)
            log.warning("fragment %d excluded: %s", frag.id, exc)
        return rep

    mapper = executor.map if executor is not None else map
    return list(mapper(run, fragments))
