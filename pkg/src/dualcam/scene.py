"""Scene data model (keyframes, landmarks, fragments, markers) and its JSON file format."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from .geometry import Pose, Trajectory

FORMAT_VERSION = 1
DESCRIPTOR_BYTES = 32


class SceneFormatError(ValueError):
    """Malformed or inconsistent scene document."""


class ScaleState(str, enum.Enum):
    ARBITRARY = "arbitrary"
    BOOTSTRAP = "bootstrap-scaled"
    FULL_DISTANCE = "full-distance-scaled"


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def project(self, p_cam: np.ndarray) -> np.ndarray:
        """Pinhole projection of camera-frame points (..., 3) to pixels (..., 2)."""
        p_cam = np.asarray(p_cam, dtype=float)
        z = p_cam[..., 2]
        return np.stack([self.fx * p_cam[..., 0] / z + self.cx, self.fy * p_cam[..., 1] / z + self.cy], axis=-1)

    def unproject(self, uv: np.ndarray) -> np.ndarray:
        """Camera-frame ray directions with z = 1."""
        uv = np.asarray(uv, dtype=float)
        return np.stack(
            [(uv[..., 0] - self.cx) / self.fx, (uv[..., 1] - self.cy) / self.fy, np.ones(uv.shape[:-1])], axis=-1
        )

    def in_image(self, uv: np.ndarray) -> np.ndarray:
        uv = np.asarray(uv, dtype=float)
        return (uv[..., 0] >= 0) & (uv[..., 0] < self.width) & (uv[..., 1] >= 0) & (uv[..., 1] < self.height)


@dataclass
class Observation:
    landmark_id: int
    uv: np.ndarray
    descriptor: bytes


@dataclass
class Keyframe:
    id: int
    time: float  # current estimate of the acquisition time (refined by the optimizer)
    time_prior: float  # fixed measured acquisition time
    pose: Pose
    camera: str
    observations: list[Observation] = field(default_factory=list)

    def observed_ids(self) -> list[int]:
        return [o.landmark_id for o in self.observations]


@dataclass
class Landmark:
    id: int
    position: np.ndarray
    descriptor: bytes
    observers: set[int] = field(default_factory=set)


@dataclass
class FragmentMap:
    id: int
    keyframes: list[Keyframe]
    landmarks: dict[int, Landmark]
    scale_state: ScaleState = ScaleState.ARBITRARY
    parent_id: int | None = None
    aligned: bool = False
    excluded: bool = False  # dropped from the unified map (alignment failed)

    def keyframe_ids(self) -> list[int]:
        return [kf.id for kf in self.keyframes]


@dataclass
class Marker:
    id: int
    detections: dict[int, np.ndarray]  # keyframe id -> pixel
    true_position: np.ndarray | None = None


@dataclass
class GroundTruth:
    extrinsic: Pose
    keyframe_poses: dict[int, Pose]
    keyframe_times: dict[int, float]
    landmark_positions: dict[int, np.ndarray]  # true landmark id -> position
    landmark_source: dict[int, int]  # fragment landmark id -> true landmark id
    fragment_transforms: dict[int, dict[str, Any]] = field(default_factory=dict)


@dataclass
class Scene:
    trajectory: Trajectory | None
    fragments: list[FragmentMap]
    cameras: dict[str, CameraIntrinsics]
    markers: list[Marker]
    extrinsic_prior: Pose
    extrinsic: Pose
    config: dict[str, Any] = field(default_factory=dict)
    stage: str = "simulated"
    truth: GroundTruth | None = None

    def keyframes(self, include_excluded: bool = True) -> Iterable[Keyframe]:
        for frag in self.fragments:
            if include_excluded or not frag.excluded:
                yield from frag.keyframes

    def keyframe_map(self) -> dict[int, Keyframe]:
        return {kf.id: kf for kf in self.keyframes()}

    def landmark_map(self, include_excluded: bool = True) -> dict[int, Landmark]:
        out = {}
        for frag in self.fragments:
            if include_excluded or not frag.excluded:
                out.update(frag.landmarks)
        return out

    def active_fragments(self) -> list[FragmentMap]:
        return [f for f in self.fragments if not f.excluded]


def refresh_observers(scene: Scene) -> None:
    """Recompute every landmark's observer set from keyframe observations."""
    landmarks = scene.landmark_map()
    for lm in landmarks.values():
        lm.observers = set()
    for kf in scene.keyframes():
        for ob in kf.observations:
            if ob.landmark_id in landmarks:
                landmarks[ob.landmark_id].observers.add(kf.id)


# ---------------------------------------------------------------------------
# Validation


@dataclass(frozen=True)
class Violation:
    kind: str
    entity: str
    message: str


def validate_map(frag: FragmentMap, finalized: bool = True, external_landmarks: Iterable[int] = ()) -> list[Violation]:
    """List invariant violations of a fragment. Never mutates.

    ``external_landmarks`` are ids that may be referenced from outside the
    fragment (after linking, observations point into other fragments).
    """
    out: list[Violation] = []
    seen_kf: set[int] = set()
    prev_time = None
    prev_id = None
    for kf in frag.keyframes:
        ent = f"fragment {frag.id} keyframe {kf.id}"
        if kf.id in seen_kf:
            out.append(Violation("duplicate-keyframe-id", ent, "keyframe id appears more than once"))
        seen_kf.add(kf.id)
        if prev_id is not None and kf.id > prev_id and kf.time <= prev_time:
            out.append(Violation("non-monotone-time", ent, f"time {kf.time} does not increase after {prev_time}"))
        prev_time, prev_id = kf.time, kf.id
        ids = kf.observed_ids()
        if len(ids) != len(set(ids)):
            out.append(Violation("duplicate-observation", ent, "a landmark is observed more than once"))
        for lid in ids:
            if lid not in frag.landmarks and lid not in external_landmarks:
                out.append(Violation("unknown-landmark", ent, f"observation references unknown landmark {lid}"))
        R = kf.pose.R
        if abs(np.linalg.det(R) - 1) > 1e-9 or not np.allclose(R.T @ R, np.eye(3), atol=1e-9):
            out.append(Violation("invalid-rotation", ent, "pose rotation is not orthonormal"))

    actual: dict[int, set[int]] = {lid: set() for lid in frag.landmarks}
    for kf in frag.keyframes:
        for lid in kf.observed_ids():
            if lid in actual:
                actual[lid].add(kf.id)
    for lid, lm in frag.landmarks.items():
        ent = f"fragment {frag.id} landmark {lid}"
        if lm.id != lid:
            out.append(Violation("landmark-key-mismatch", ent, f"stored under key {lid} but has id {lm.id}"))
        if len(lm.descriptor) != DESCRIPTOR_BYTES:
            out.append(Violation("bad-descriptor", ent, f"descriptor has {len(lm.descriptor)} bytes"))
        # observers may legitimately include keyframes of other fragments after linking
        local = lm.observers & seen_kf
        if local != actual[lid]:
            out.append(Violation("observer-mismatch", ent, "observer set disagrees with keyframe observations"))
        if finalized and len(lm.observers) < 2:
            out.append(Violation("under-observed-landmark", ent, f"observed by {len(lm.observers)} keyframe(s)"))
    return out


def validate_scene(scene: Scene, finalized: bool = True) -> list[Violation]:
    out = []
    all_landmarks = set()
    kf_ids: set[int] = set()
    for frag in scene.fragments:
        dup = all_landmarks & frag.landmarks.keys()
        for lid in sorted(dup):
            out.append(Violation("duplicate-landmark-id", f"fragment {frag.id} landmark {lid}", "id used twice"))
        all_landmarks |= frag.landmarks.keys()
        for kf in frag.keyframes:
            if kf.id in kf_ids:
                out.append(Violation("duplicate-keyframe-id", f"keyframe {kf.id}", "id used in two fragments"))
            kf_ids.add(kf.id)
    for frag in scene.fragments:
        out.extend(validate_map(frag, finalized=finalized, external_landmarks=all_landmarks))
    return out


# ---------------------------------------------------------------------------
# Serialization


def _pose_to_json(p: Pose) -> dict:
    return {"q": [float(v) for v in p.q], "t": [float(v) for v in p.t]}


def _pose_from_json(d: dict, ent: str) -> Pose:
    try:
        return Pose(np.array(d["q"], dtype=float), np.array(d["t"], dtype=float))
    except (KeyError, TypeError, ValueError) as exc:
        raise SceneFormatError(f"{ent}: invalid pose ({exc})") from exc


def _vec(v) -> list[float]:
    return [float(x) for x in v]


def scene_to_dict(scene: Scene) -> dict:
    doc: dict[str, Any] = {
        "format": "dualcam-scene",
        "version": FORMAT_VERSION,
        "stage": scene.stage,
        "config": scene.config,
        "cameras": {
            name: {"fx": c.fx, "fy": c.fy, "cx": c.cx, "cy": c.cy, "width": c.width, "height": c.height}
            for name, c in scene.cameras.items()
        },
        "extrinsic_prior": _pose_to_json(scene.extrinsic_prior),
        "extrinsic": _pose_to_json(scene.extrinsic),
        "trajectory": None,
        "fragments": [],
        "markers": [],
        "truth": None,
    }
    if scene.trajectory is not None:
        tr = scene.trajectory
        doc["trajectory"] = {
            "role": tr.role,
            "samples": [
                {"time": float(t), "q": _vec(q), "t": _vec(p)} for t, q, p in zip(tr.times, tr.quats, tr.translations)
            ],
        }
    for frag in scene.fragments:
        doc["fragments"].append(
            {
                "id": frag.id,
                "parent_id": frag.parent_id,
                "scale_state": frag.scale_state.value,
                "aligned": frag.aligned,
                "excluded": frag.excluded,
                "keyframes": [
                    {
                        "id": kf.id,
                        "time": float(kf.time),
                        "time_prior": float(kf.time_prior),
                        "camera": kf.camera,
                        "pose": _pose_to_json(kf.pose),
                        "observations": [
                            {"landmark": o.landmark_id, "uv": _vec(o.uv), "descriptor": o.descriptor.hex()}
                            for o in kf.observations
                        ],
                    }
                    for kf in frag.keyframes
                ],
                "landmarks": [
                    {
                        "id": lm.id,
                        "position": _vec(lm.position),
                        "descriptor": lm.descriptor.hex(),
                        "observers": sorted(lm.observers),
                    }
                    for lm in frag.landmarks.values()
                ],
            }
        )
    for m in scene.markers:
        doc["markers"].append(
            {
                "id": m.id,
                "true_position": None if m.true_position is None else _vec(m.true_position),
                "detections": [{"keyframe": k, "uv": _vec(uv)} for k, uv in m.detections.items()],
            }
        )
    if scene.truth is not None:
        gt = scene.truth
        doc["truth"] = {
            "extrinsic": _pose_to_json(gt.extrinsic),
            "keyframes": [
                {"id": k, "time": float(gt.keyframe_times[k]), "pose": _pose_to_json(p)}
                for k, p in gt.keyframe_poses.items()
            ],
            "landmarks": [{"id": k, "position": _vec(v)} for k, v in gt.landmark_positions.items()],
            "landmark_source": [[k, v] for k, v in gt.landmark_source.items()],
            "fragment_transforms": [{"fragment": k, **v} for k, v in gt.fragment_transforms.items()],
        }
    return doc


def _req(d: dict, key: str, ent: str):
    if not isinstance(d, dict) or key not in d:
        raise SceneFormatError(f"{ent}: missing field '{key}'")
    return d[key]


def _descriptor(s: str, ent: str) -> bytes:
    try:
        b = bytes.fromhex(s)
    except (TypeError, ValueError) as exc:
        raise SceneFormatError(f"{ent}: descriptor is not hex") from exc
    if len(b) != DESCRIPTOR_BYTES:
        raise SceneFormatError(f"{ent}: descriptor must be {DESCRIPTOR_BYTES} bytes, got {len(b)}")
    return b


def scene_from_dict(doc: dict) -> Scene:
    if _req(doc, "format", "scene") != "dualcam-scene":
        raise SceneFormatError("scene: unrecognized format tag")
    if _req(doc, "version", "scene") != FORMAT_VERSION:
        raise SceneFormatError(f"scene: unsupported version {doc['version']}")
    cameras = {}
    for name, c in _req(doc, "cameras", "scene").items():
        ent = f"camera '{name}'"
        try:
            cameras[name] = CameraIntrinsics(
                float(_req(c, "fx", ent)),
                float(_req(c, "fy", ent)),
                float(_req(c, "cx", ent)),
                float(_req(c, "cy", ent)),
                int(_req(c, "width", ent)),
                int(_req(c, "height", ent)),
            )
        except ValueError as exc:
            if isinstance(exc, SceneFormatError):
                raise
            raise SceneFormatError(f"{ent}: {exc}") from exc

    trajectory = None
    tdoc = _req(doc, "trajectory", "scene")
    if tdoc is not None:
        samples = _req(tdoc, "samples", "trajectory")
        times = []
        for i, s in enumerate(samples):
            ent = f"trajectory sample {i}"
            times.append(float(_req(s, "time", ent)))
            _req(s, "q", ent)
            _req(s, "t", ent)
            if i and times[-1] <= times[-2]:
                raise SceneFormatError(f"{ent}: timestamp {times[-1]} not strictly increasing")
        if len(samples) < 2:
            raise SceneFormatError("trajectory: needs at least two samples")
        trajectory = Trajectory(
            times, [s["q"] for s in samples], [s["t"] for s in samples], role=tdoc.get("role", "localization")
        )

    fragments = []
    frag_ids: set[int] = set()
    kf_ids: set[int] = set()
    lm_ids: set[int] = set()
    for fd in _req(doc, "fragments", "scene"):
        fid = int(_req(fd, "id", "fragment"))
        ent_f = f"fragment {fid}"
        if fid in frag_ids:
            raise SceneFormatError(f"{ent_f}: duplicate fragment id")
        frag_ids.add(fid)
        keyframes = []
        prev_time = None
        for kd in _req(fd, "keyframes", ent_f):
            kid = int(_req(kd, "id", f"{ent_f} keyframe"))
            ent = f"keyframe {kid}"
            if kid in kf_ids:
                raise SceneFormatError(f"{ent}: duplicate keyframe id")
            kf_ids.add(kid)
            time = float(_req(kd, "time", ent))
            if prev_time is not None and time <= prev_time:
                raise SceneFormatError(f"{ent}: time {time} not strictly increasing within {ent_f}")
            prev_time = time
            obs = []
            seen_lm: set[int] = set()
            for od in _req(kd, "observations", ent):
                lid = int(_req(od, "landmark", f"{ent} observation"))
                if lid in seen_lm:
                    raise SceneFormatError(f"{ent}: landmark {lid} observed twice")
                seen_lm.add(lid)
                obs.append(
                    Observation(
                        lid,
                        np.array(_req(od, "uv", f"{ent} observation"), dtype=float),
                        _descriptor(_req(od, "descriptor", f"{ent} observation"), f"{ent} observation {lid}"),
                    )
                )
            camera = _req(kd, "camera", ent)
            if camera not in cameras:
                raise SceneFormatError(f"{ent}: unknown camera '{camera}'")
            keyframes.append(
                Keyframe(
                    kid,
                    time,
                    float(_req(kd, "time_prior", ent)),
                    _pose_from_json(_req(kd, "pose", ent), ent),
                    camera,
                    obs,
                )
            )
        landmarks = {}
        for ld in _req(fd, "landmarks", ent_f):
            lid = int(_req(ld, "id", f"{ent_f} landmark"))
            ent = f"landmark {lid}"
            if lid in lm_ids:
                raise SceneFormatError(f"{ent}: duplicate landmark id")
            lm_ids.add(lid)
            landmarks[lid] = Landmark(
                lid,
                np.array(_req(ld, "position", ent), dtype=float),
                _descriptor(_req(ld, "descriptor", ent), ent),
                set(int(k) for k in _req(ld, "observers", ent)),
            )
        try:
            scale_state = ScaleState(_req(fd, "scale_state", ent_f))
        except ValueError as exc:
            raise SceneFormatError(f"{ent_f}: unknown scale_state") from exc
        fragments.append(
            FragmentMap(
                fid,
                keyframes,
                landmarks,
                scale_state,
                fd.get("parent_id"),
                bool(fd.get("aligned", False)),
                bool(fd.get("excluded", False)),
            )
        )
    for frag in fragments:
        for kf in frag.keyframes:
            for ob in kf.observations:
                if ob.landmark_id not in lm_ids:
                    raise SceneFormatError(f"keyframe {kf.id}: observation references unknown landmark {ob.landmark_id}")

    markers = []
    marker_ids: set[int] = set()
    for md in _req(doc, "markers", "scene"):
        mid = int(_req(md, "id", "marker"))
        ent = f"marker {mid}"
        if mid in marker_ids:
            raise SceneFormatError(f"{ent}: duplicate marker id")
        marker_ids.add(mid)
        tp = md.get("true_position")
        dets = {}
        for dd in _req(md, "detections", ent):
            k = int(_req(dd, "keyframe", f"{ent} detection"))
            if k in dets:
                raise SceneFormatError(f"{ent}: two detections in keyframe {k}")
            dets[k] = np.array(_req(dd, "uv", f"{ent} detection"), dtype=float)
        markers.append(Marker(mid, dets, None if tp is None else np.array(tp, dtype=float)))

    truth = None
    gd = doc.get("truth")
    if gd is not None:
        truth = GroundTruth(
            extrinsic=_pose_from_json(_req(gd, "extrinsic", "truth"), "truth extrinsic"),
            keyframe_poses={int(k["id"]): _pose_from_json(k["pose"], f"truth keyframe {k['id']}") for k in gd["keyframes"]},
            keyframe_times={int(k["id"]): float(k["time"]) for k in gd["keyframes"]},
            landmark_positions={int(d["id"]): np.array(d["position"], dtype=float) for d in gd["landmarks"]},
            landmark_source={int(a): int(b) for a, b in gd["landmark_source"]},
            fragment_transforms={
                int(d["fragment"]): {k: v for k, v in d.items() if k != "fragment"} for d in gd["fragment_transforms"]
            },
        )

    return Scene(
        trajectory=trajectory,
        fragments=fragments,
        cameras=cameras,
        markers=markers,
        extrinsic_prior=_pose_from_json(_req(doc, "extrinsic_prior", "scene"), "extrinsic_prior"),
        extrinsic=_pose_from_json(_req(doc, "extrinsic", "scene"), "extrinsic"),
        config=doc.get("config", {}),
        stage=doc.get("stage", "simulated"),
        truth=truth,
    )


def dumps_scene(scene: Scene) -> str:
    # json writes floats with repr(), the shortest string that round-trips exactly
    return json.dumps(scene_to_dict(scene), indent=1, allow_nan=False) + "\n"


def save_scene(scene: Scene, path: str | Path) -> None:
    Path(path).write_text(dumps_scene(scene))


def loads_scene(text: str) -> Scene:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneFormatError(f"scene: not valid JSON ({exc})") from exc
    return scene_from_dict(doc)


def load_scene(path: str | Path) -> Scene:
    return loads_scene(Path(path).read_text())
