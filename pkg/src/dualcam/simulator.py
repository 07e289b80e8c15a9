"""Synthetic dual-camera surveys: boustrophedon rig motion, ground landmarks, markers,
noisy observations, tracking-loss fragmentation and corrupted priors.

The localization trajectory sampled at ``loc_rate`` *is* the true motion: true
documentation poses are the interpolated localization pose composed with the
true extrinsic, so a noiseless scene is exactly consistent with every factor
the optimizer uses.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .config import SurveyConfig
from .geometry import Pose, SimilarityTransform, Trajectory, matrix_to_quat, se3_exp, so3_exp
from .scene import (
    CameraIntrinsics,
    FragmentMap,
    GroundTruth,
    Keyframe,
    Landmark,
    Marker,
    Observation,
    Scene,
    ScaleState,
)

DOC_CAMERA = "doc"
_MIN_DEPTH = 0.05  # m


@dataclass
class GroundTruthScene:
    config: SurveyConfig
    trajectory: Trajectory
    extrinsic: Pose  # true T_dl
    camera: CameraIntrinsics
    keyframe_times: np.ndarray
    keyframe_poses: list[Pose]
    landmark_positions: np.ndarray  # (N, 3), index = true landmark id
    landmark_descriptors: np.ndarray  # (N, 32) uint8
    marker_positions: np.ndarray  # (9, 3)
    marker_landmarks: dict[int, list[int]]  # marker id -> corner landmark ids
    # per keyframe: (true landmark ids, noisy pixels (n, 2), observed descriptors (n, 32))
    observations: list[tuple[np.ndarray, np.ndarray, np.ndarray]]
    marker_detections: dict[int, dict[int, np.ndarray]]  # marker -> keyframe index -> pixel
    turn_times: list[float]  # start time of every row turn
    row_count: int
    # filled by corrupt_priors
    time_priors: np.ndarray | None = None
    extrinsic_prior: Pose | None = None
    fragment_transforms: dict[int, SimilarityTransform] = field(default_factory=dict)


def _rngs(seed: int, n: int = 6) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def _rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def row_count(cfg: SurveyConfig) -> int:
    return int(math.floor(cfg.patch_height / cfg.row_spacing + 1e-9)) + 1


def lawnmower_segments(cfg: SurveyConfig) -> list[tuple[str, int, float]]:
    """(kind, row index, length) for rows and the semicircular turns between them."""
    segs = []
    n = row_count(cfg)
    turn_len = math.pi * cfg.row_spacing / 2
    for r in range(n):
        segs.append(("row", r, cfg.patch_width))
        if r < n - 1:
            segs.append(("turn", r, turn_len))
    return segs


def path_point(cfg: SurveyConfig, s: float) -> tuple[float, float, float]:
    """(x, y, heading) at arc length ``s`` along the lawn-mower path."""
    W, sp = cfg.patch_width, cfg.row_spacing
    rho = sp / 2
    for kind, r, length in lawnmower_segments(cfg):
        if s <= length or (kind == "row" and r == row_count(cfg) - 1):
            y_r = r * sp
            if kind == "row":
                if r % 2 == 0:
                    return s, y_r, 0.0
                return W - s, y_r, math.pi
            a = s / rho
            if r % 2 == 0:
                th = -math.pi / 2 + a
                return W + rho * math.cos(th), y_r + rho + rho * math.sin(th), a
            th = -math.pi / 2 - a
            return rho * math.cos(th), y_r + rho + rho * math.sin(th), math.pi - a
        s -= length
    raise AssertionError("unreachable")


def height_field(cfg: SurveyConfig, phases: np.ndarray):
    A = cfg.height_amplitude

    def h(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return A * (
            0.6 * np.sin(2 * np.pi * x / 4.3 + phases[0]) * np.cos(2 * np.pi * y / 3.7 + phases[1])
            + 0.4 * np.sin(2 * np.pi * (x + y) / 5.9 + phases[2])
        )

    return h


def camera_mounts(cfg: SurveyConfig) -> tuple[Pose, Pose]:
    """Documentation and localization camera poses in the rig body frame (x fwd, y left, z up)."""
    doc_R = np.array([[0.0, -1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, -1.0]])
    b = math.radians(cfg.loc_pitch_deg)
    loc_R = np.column_stack([[0.0, -1.0, 0.0], [-math.sin(b), 0.0, -math.cos(b)], [math.cos(b), 0.0, -math.sin(b)]])
    return Pose.from_rt(doc_R), Pose.from_rt(loc_R, [cfg.loc_forward, cfg.loc_left, cfg.loc_up])


def true_extrinsic(cfg: SurveyConfig) -> Pose:
    doc_mount, loc_mount = camera_mounts(cfg)
    return loc_mount.inverse() @ doc_mount


def marker_layout(cfg: SurveyConfig) -> np.ndarray:
    """Four corners, a nested square at the quarter points, and the center (x, y)."""
    W, H = cfg.patch_width, cfg.patch_height
    xy = [(0, 0), (W, 0), (W, H), (0, H)]
    xy += [(W / 4, H / 4), (3 * W / 4, H / 4), (3 * W / 4, 3 * H / 4), (W / 4, 3 * H / 4)]
    xy += [(W / 2, H / 2)]
    return np.array(xy, dtype=float)


def doc_camera(cfg: SurveyConfig) -> CameraIntrinsics:
    return CameraIntrinsics(cfg.doc_fx, cfg.doc_fy, cfg.doc_cx, cfg.doc_cy, cfg.doc_width, cfg.doc_height_px)


def _flip_bits(desc: np.ndarray, p: float, rng: np.random.Generator) -> np.ndarray:
    bits = np.unpackbits(desc, axis=-1)
    flips = rng.random(bits.shape) < p
    return np.packbits(bits ^ flips, axis=-1)


def _project(pose: Pose, cam: CameraIntrinsics, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pc = (pts - pose.t) @ pose.R
    z = pc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = cam.project(pc)
    return uv, z


def generate_survey(cfg: SurveyConfig) -> GroundTruthScene:
    """Ground-truth motion, landmarks, markers and noisy observations for one survey."""
    cfg.validate()
    r_path, r_land, r_obs, *_ = _rngs(cfg.seed)
    segs = lawnmower_segments(cfg)
    total = sum(length for _, _, length in segs)
    duration = total / cfg.speed

    # localization trajectory
    phases = r_path.uniform(0, 2 * np.pi, size=6)
    n_samples = int(math.floor(duration * cfg.loc_rate + 1e-9)) + 1
    times = np.arange(n_samples) / cfg.loc_rate
    doc_mount, loc_mount = camera_mounts(cfg)
    amp = math.radians(cfg.wobble_deg)
    quats, trans = [], []
    for t in times:
        x, y, psi = path_point(cfg, t * cfg.speed)
        roll = amp * math.sin(2 * np.pi * t / 1.3 + phases[0])
        pitch = amp * math.sin(2 * np.pi * t / 1.7 + phases[1])
        z = cfg.doc_height + cfg.wobble_height * math.sin(2 * np.pi * t / 2.3 + phases[2])
        body = Pose.from_rt(_rot_z(psi) @ _rot_x(roll) @ _rot_y(pitch), [x, y, z])
        loc = body @ loc_mount
        quats.append(loc.q)
        trans.append(loc.t)
    traj = Trajectory(times, quats, trans, role="localization")
    T_dl = loc_mount.inverse() @ doc_mount

    # documentation keyframes: true poses implied by the trajectory
    t0 = 0.6
    n_kf = int(math.floor((duration - 2 * t0) * cfg.doc_rate + 1e-9)) + 1
    kf_times = t0 + np.arange(n_kf) / cfg.doc_rate
    R_l, p_l, _, _ = traj.interpolate(kf_times)
    kf_poses = [Pose.from_rt(R, p) @ T_dl for R, p in zip(R_l, p_l)]

    # ground: height field, random landmarks, marker tags (corners are landmarks)
    h = height_field(cfg, phases[3:])
    m = cfg.landmark_margin
    area = (cfg.patch_width + 2 * m) * (cfg.patch_height + 2 * m)
    n_lm = int(r_land.poisson(cfg.landmark_density * area))
    xy = np.column_stack(
        [
            r_land.uniform(-m, cfg.patch_width + m, n_lm),
            r_land.uniform(-m, cfg.patch_height + m, n_lm),
        ]
    )
    markers_xy = marker_layout(cfg) if cfg.marker_count else np.zeros((0, 2))
    if len(markers_xy):
        d = np.linalg.norm(xy[:, None, :] - markers_xy[None], axis=2).min(axis=1)
        xy = xy[d > cfg.marker_size * 1.25]
    pts = np.column_stack([xy, h(xy[:, 0], xy[:, 1])])
    marker_pos = np.column_stack([markers_xy, h(markers_xy[:, 0], markers_xy[:, 1])]) if len(markers_xy) else np.zeros((0, 3))
    marker_landmarks = {}
    half = cfg.marker_size / 2
    corner_offsets = np.array([[-half, -half, 0], [half, -half, 0], [half, half, 0], [-half, half, 0]])
    extra = []
    for i, c in enumerate(marker_pos):
        ids = list(range(len(pts) + 4 * i, len(pts) + 4 * i + 4))
        marker_landmarks[i] = ids
        extra.append(c + corner_offsets)
    if extra:
        pts = np.vstack([pts] + extra)
    descriptors = r_land.integers(0, 256, size=(len(pts), 32), dtype=np.uint8)

    # observations by pinhole projection with FOV culling
    cam = doc_camera(cfg)
    observations = []
    for pose in kf_poses:
        uv, z = _project(pose, cam, pts)
        vis = np.flatnonzero((z > _MIN_DEPTH) & cam.in_image(np.nan_to_num(uv, nan=-1.0)))
        noisy = uv[vis] + r_obs.normal(0.0, cfg.pixel_noise, size=(len(vis), 2)) if cfg.pixel_noise > 0 else uv[vis]
        desc = _flip_bits(descriptors[vis], cfg.descriptor_flip, r_obs) if cfg.descriptor_flip > 0 else descriptors[vis]
        observations.append((vis, noisy, desc))

    marker_detections: dict[int, dict[int, np.ndarray]] = {}
    for i, c in enumerate(marker_pos):
        dets = {}
        corners = c + corner_offsets
        for k, pose in enumerate(kf_poses):
            uv, z = _project(pose, cam, np.vstack([c, corners]))
            if np.all(z > _MIN_DEPTH) and np.all(cam.in_image(uv)):
                noise = r_obs.normal(0.0, cfg.pixel_noise, size=2) if cfg.pixel_noise > 0 else 0.0
                dets[k] = uv[0] + noise
        marker_detections[i] = dets

    turn_times = []
    s = 0.0
    for kind, _, length in segs:
        if kind == "turn":
            turn_times.append(s / cfg.speed)
        s += length

    return GroundTruthScene(
        config=cfg,
        trajectory=traj,
        extrinsic=T_dl,
        camera=cam,
        keyframe_times=kf_times,
        keyframe_poses=kf_poses,
        landmark_positions=pts,
        landmark_descriptors=descriptors,
        marker_positions=marker_pos,
        marker_landmarks=marker_landmarks,
        observations=observations,
        marker_detections=marker_detections,
        turn_times=turn_times,
        row_count=row_count(cfg),
    )


def _random_unit(rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def corrupt_priors(scene: GroundTruthScene, cfg: SurveyConfig) -> GroundTruthScene:
    """Jittered acquisition-time priors and a perturbed extrinsic prior.

    Time error = common sync offset + per-keyframe jitter; their bounds add up
    to ``time_jitter``. The extrinsic error has exactly the configured rotation
    and translation magnitudes, in random directions.
    """
    rng = _rngs(cfg.seed)[3]
    b = cfg.time_jitter
    f = cfg.time_jitter_frame_fraction
    offset = rng.uniform(-b * (1 - f), b * (1 - f)) if b > 0 else 0.0
    per_frame = rng.uniform(-b * f, b * f, size=len(scene.keyframe_times)) if b > 0 else 0.0
    scene.time_priors = scene.keyframe_times + offset + per_frame
    xi = np.concatenate(
        [_random_unit(rng) * math.radians(cfg.extrinsic_rot_deg), _random_unit(rng) * cfg.extrinsic_trans]
    )
    scene.extrinsic_prior = scene.extrinsic @ se3_exp(xi) if np.any(xi) else scene.extrinsic
    return scene


def loss_boundaries(scene: GroundTruthScene, cfg: SurveyConfig, rng: np.random.Generator) -> list[int]:
    """Keyframe indices at which a new fragment starts."""
    times = scene.keyframe_times
    n = len(times)
    candidates: list[int] = []
    if cfg.loss_at_turns:
        for tt in scene.turn_times:
            k = int(np.searchsorted(times, tt))
            if 0 < k < n:
                candidates.append(k)
    n_turn = len(candidates)
    n_mid = int(rng.poisson(cfg.midrow_loss_rate)) if cfg.midrow_loss_rate > 0 else 0
    for t in np.sort(rng.uniform(times[0], times[-1], size=n_mid)):
        candidates.append(int(np.searchsorted(times, t)))
    kept = sorted(set(k for k in candidates[:n_turn] if 0 < k < n))
    min_len = cfg.min_fragment_keyframes
    for k in candidates[n_turn:]:
        # a mid-row loss too close to another boundary would leave a fragment
        # too short to initialize; such losses are absorbed
        if all(abs(k - e) >= min_len for e in [0, n] + kept):
            kept.append(k)
    return sorted(set(kept))


def _majority_descriptor(descs: np.ndarray) -> np.ndarray:
    bits = np.unpackbits(descs, axis=-1)
    return np.packbits((2 * bits.sum(axis=0) > len(descs)).astype(np.uint8))


def fragment_documentation_track(scene: GroundTruthScene, cfg: SurveyConfig):
    """Split the keyframe stream at tracking losses and express each piece in its own
    arbitrary similarity frame.

    Returns ``(fragments, landmark_source)`` where ``landmark_source`` maps each
    fragment landmark id to its true landmark index.
    """
    r_frag = _rngs(cfg.seed)[4]
    r_noise = _rngs(cfg.seed)[5]
    n = len(scene.keyframe_times)
    bounds = [0] + loss_boundaries(scene, cfg, r_frag) + [n]
    priors = scene.time_priors if scene.time_priors is not None else scene.keyframe_times
    fragments = []
    source: dict[int, int] = {}
    next_lm = 0
    lo_s, hi_s = cfg.fragment_scale_range
    for fid, (a, b) in enumerate(zip(bounds[:-1], bounds[1:])):
        counts: dict[int, int] = {}
        for k in range(a, b):
            for lid in scene.observations[k][0]:
                counts[int(lid)] = counts.get(int(lid), 0) + 1
        kept = sorted(lid for lid, c in counts.items() if c >= 2)
        local = {lid: next_lm + i for i, lid in enumerate(kept)}
        next_lm += len(kept)

        scale = math.exp(r_frag.uniform(math.log(lo_s), math.log(hi_s)))
        angle = r_frag.uniform(0, math.radians(cfg.fragment_max_rotation_deg))
        rot = Pose.from_rt(so3_exp(_random_unit(r_frag) * angle))
        sim = SimilarityTransform(scale, rot, r_frag.uniform(-10, 10, size=3))
        scene.fragment_transforms[fid] = sim

        keyframes = []
        obs_desc: dict[int, list[np.ndarray]] = {lid: [] for lid in kept}
        for k in range(a, b):
            pose = scene.keyframe_poses[k]
            if cfg.fragment_pose_noise_rot > 0 or cfg.fragment_pose_noise_trans > 0:
                xi = np.concatenate(
                    [
                        r_noise.normal(0, cfg.fragment_pose_noise_rot, 3),
                        r_noise.normal(0, cfg.fragment_pose_noise_trans, 3),
                    ]
                )
                pose = pose @ se3_exp(xi)
            ids, uv, desc = scene.observations[k]
            obs = []
            for lid, px, d in zip(ids, uv, desc):
                if int(lid) in local:
                    obs.append(Observation(local[int(lid)], np.array(px, dtype=float), d.tobytes()))
                    obs_desc[int(lid)].append(d)
            keyframes.append(
                Keyframe(k, float(priors[k]), float(priors[k]), sim.apply_to_pose(pose), DOC_CAMERA, obs)
            )
        landmarks = {}
        for lid in kept:
            pos = scene.landmark_positions[lid]
            if cfg.fragment_landmark_noise > 0:
                pos = pos + r_noise.normal(0, cfg.fragment_landmark_noise, 3)
            fl = local[lid]
            landmarks[fl] = Landmark(fl, sim.apply(pos), _majority_descriptor(np.array(obs_desc[lid])).tobytes())
            source[fl] = lid
        for kf in keyframes:
            for o in kf.observations:
                landmarks[o.landmark_id].observers.add(kf.id)
        fragments.append(
            FragmentMap(fid, keyframes, landmarks, ScaleState.ARBITRARY, fid - 1 if fid > 0 else None)
        )
    return fragments, source


def simulate(cfg: SurveyConfig, pipeline_config: dict | None = None) -> Scene:
    """Generate a survey and package it as a pipeline-ready scene."""
    gt = generate_survey(cfg)
    corrupt_priors(gt, cfg)
    fragments, source = fragment_documentation_track(gt, cfg)
    markers = [
        Marker(i, {int(k): np.array(uv) for k, uv in gt.marker_detections[i].items()}, gt.marker_positions[i].copy())
        for i in range(len(gt.marker_positions))
    ]
    truth = GroundTruth(
        extrinsic=gt.extrinsic,
        keyframe_poses={k: p for k, p in enumerate(gt.keyframe_poses)},
        keyframe_times={k: float(t) for k, t in enumerate(gt.keyframe_times)},
        landmark_positions={i: gt.landmark_positions[i].copy() for i in sorted(set(source.values()))},
        landmark_source=source,
        fragment_transforms={
            fid: {"scale": s.scale, "q": [float(v) for v in s.rotation.q], "t": [float(v) for v in s.translation]}
            for fid, s in gt.fragment_transforms.items()
        },
    )
    return Scene(
        trajectory=gt.trajectory,
        fragments=fragments,
        cameras={DOC_CAMERA: gt.camera},
        markers=markers,
        extrinsic_prior=gt.extrinsic_prior,
        extrinsic=gt.extrinsic_prior,
        config=pipeline_config if pipeline_config is not None else {"simulation": _survey_dict(cfg)},
        stage="simulated",
        truth=truth,
    )


def _survey_dict(cfg: SurveyConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["fragment_scale_range"] = list(cfg.fragment_scale_range)
    return d
