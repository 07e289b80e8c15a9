"""Accuracy assessment: marker backprojection onto a landmark surface,
inter-marker distances, through-origin regression, and trajectory errors."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.spatial import Delaunay, QhullError

from .geometry import Pose, rotation_angle
from .scene import CameraIntrinsics, Scene


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class Surface:
    """2.5D triangulated height field over the best-fit ground plane."""

    vertices: np.ndarray  # (N, 3) world points
    triangles: np.ndarray  # (T, 3) vertex indices
    origin: np.ndarray
    normal: np.ndarray  # unit, oriented towards +z

    def intersect(self, origin, direction, eps: float = 1e-12) -> np.ndarray | None:
        """Nearest forward intersection of a ray with the mesh (Moller-Trumbore)."""
        o = np.asarray(origin, dtype=float)
        d = np.asarray(direction, dtype=float)
        v0, v1, v2 = (self.vertices[self.triangles[:, i]] for i in range(3))
        e1, e2 = v1 - v0, v2 - v0
        pvec = np.cross(d, e2)
        det = np.einsum("ij,ij->i", e1, pvec)
        ok = np.abs(det) > eps
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        tvec = o - v0
        u = np.einsum("ij,ij->i", tvec, pvec) * inv
        qvec = np.cross(tvec, e1)
        v = (qvec @ d) * inv
        t = np.einsum("ij,ij->i", e2, qvec) * inv
        tol = 1e-12
        hit = ok & (u >= -tol) & (v >= -tol) & (u + v <= 1 + tol) & (t > eps)
        if not hit.any():
            return None
        i = np.flatnonzero(hit)[np.argmin(t[hit])]
        return o + t[i] * d

    def height(self, x: float, y: float) -> float | None:
        """Mesh z below/above (x, y), from a vertical ray; ``None`` outside the mesh."""
        top = self.vertices[:, 2].max() + 1.0
        p = self.intersect((x, y, top), (0.0, 0.0, -1.0))
        return None if p is None else float(p[2])


def fit_surface(points) -> Surface:
    """Least-squares plane, Delaunay triangulation in plane coordinates, heights kept."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) < 3:
        raise EvaluationError(f"surface fit needs at least 3 landmarks, got {len(pts)}")
    c = pts.mean(axis=0)
    _, sv, vt = np.linalg.svd(pts - c, full_matrices=False)
    if sv[1] <= 1e-9 * max(sv[0], 1e-300):
        raise EvaluationError("landmark cloud is collinear; cannot fit a surface")
    n = vt[2] if vt[2][2] >= 0 else -vt[2]
    e1, e2 = vt[0], np.cross(n, vt[0])
    uv = np.column_stack([(pts - c) @ e1, (pts - c) @ e2])
    try:
        tri = Delaunay(uv)
    except QhullError as exc:
        raise EvaluationError(f"surface triangulation failed: {exc}") from exc
    return Surface(pts, tri.simplices.copy(), c, n)


def _ray_hits(detections, poses, cameras, surface: Surface) -> np.ndarray:
    """Surface intersections of each detection's pixel ray, in keyframe id order."""
    hits = []
    for kf_id in sorted(detections):
        pose = poses.get(kf_id)
        if pose is None:
            continue
        cam = cameras[kf_id] if isinstance(cameras, dict) else cameras
        ray = pose.R @ cam.unproject(np.asarray(detections[kf_id], dtype=float))
        p = surface.intersect(pose.t, ray)
        if p is not None:
            hits.append(p)
    return np.array(hits).reshape(-1, 3)


def _aggregate(hits: np.ndarray, mode: str) -> np.ndarray:
    if mode == "mean":
        return hits.mean(axis=0)
    if mode == "median":
        return np.median(hits, axis=0)
    raise EvaluationError(f"unknown aggregation mode {mode!r}")


def backproject_marker(
    detections: dict[int, np.ndarray],
    poses: dict[int, Pose],
    cam: CameraIntrinsics,
    surface: Surface,
    mode: str = "mean",
) -> np.ndarray | None:
    """Marker position from the pixel rays of all its views; ``None`` if no ray hits."""
    hits = _ray_hits(detections, poses, cam, surface)
    return _aggregate(hits, mode) if len(hits) else None


def inter_tag_distances(positions: dict[int, np.ndarray]) -> list[tuple[tuple[int, int], float]]:
    """Euclidean distance for every unordered pair, ordered by id."""
    ids = sorted(positions)
    return [((a, b), float(np.linalg.norm(np.asarray(positions[a]) - np.asarray(positions[b])))) for a, b in combinations(ids, 2)]


def regression_through_origin(true_d, est_d) -> dict[str, float]:
    """Fit est = slope * true; R^2 is the uncentered 1 - SSE / sum(est^2)."""
    x = np.asarray(true_d, dtype=float)
    y = np.asarray(est_d, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise EvaluationError("true and estimated distances must be equal-length lists")
    if len(x) < 2:
        raise EvaluationError("regression needs at least two pairs")
    sxx = float(x @ x)
    if sxx == 0.0:
        raise EvaluationError("all true distances are zero")
    slope = float(x @ y) / sxx
    syy = float(y @ y)
    sse = float(np.sum((y - slope * x) ** 2))
    r2 = 1.0 - sse / syy if syy > 0 else 0.0
    return {"slope": slope, "r_squared": r2, "n": int(len(x))}


def trajectory_error(estimated: dict[int, Pose], truth: dict[int, Pose]) -> dict[str, float]:
    """Position and rotation RMSE over shared keyframe ids, no extra alignment."""
    ids = sorted(set(estimated) & set(truth))
    if not ids:
        raise EvaluationError("no keyframes in common with the reference")
    d = np.array([np.linalg.norm(estimated[i].t - truth[i].t) for i in ids])
    a = np.array([rotation_angle(truth[i].inverse() @ estimated[i]) for i in ids])
    return {
        "position_rmse": float(np.sqrt(np.mean(d**2))),
        "rotation_rmse": float(np.sqrt(np.mean(a**2))),
        "keyframes": len(ids),
    }


def marker_positions(scene: Scene, mode: str = "mean") -> tuple[dict[int, np.ndarray], list[int]]:
    """Backproject every marker onto the finalized map. Returns (located, missing ids)."""
    landmarks = scene.landmark_map(include_excluded=False)
    if len(landmarks) < 3:
        raise EvaluationError(f"finalized map has {len(landmarks)} landmarks; need at least 3 for a surface")
    surface = fit_surface(np.array([landmarks[k].position for k in sorted(landmarks)]))
    kfs = list(scene.keyframes(include_excluded=False))
    poses = {kf.id: kf.pose for kf in kfs}
    cameras = {kf.id: scene.cameras[kf.camera] for kf in kfs}
    located, missing = {}, []
    for m in scene.markers:
        hits = _ray_hits(m.detections, poses, cameras, surface)
        if len(hits):
            located[m.id] = _aggregate(hits, mode)
        else:
            missing.append(m.id)
    return located, missing


def evaluate_scene(scene: Scene, options=None) -> dict:
    """Marker distance accuracy plus, for simulated scenes, errors against truth."""
    mode = getattr(options, "mode", "mean")
    located, missing = marker_positions(scene, mode)
    est = inter_tag_distances(located)
    report: dict = {
        "markers_located": len(located),
        "markers_missing": missing,
        "marker_positions": {str(k): [float(v) for v in located[k]] for k in sorted(located)},
    }
    truth_pos = {m.id: m.true_position for m in scene.markers if m.true_position is not None and m.id in located}
    if len(truth_pos) >= 2:
        true_d = dict(inter_tag_distances(truth_pos))
        rows = [(a, b, true_d[(a, b)], d) for (a, b), d in est if (a, b) in true_d]
        report["distances"] = {
            "columns": ["marker_a", "marker_b", "true_distance", "est_distance"],
            "rows": [[a, b, t, d] for a, b, t, d in rows],
        }
        report["regression"] = regression_through_origin([r[2] for r in rows], [r[3] for r in rows])
        err = [float(np.linalg.norm(located[k] - truth_pos[k])) for k in sorted(truth_pos)]
        report["marker_error_mean"] = float(np.mean(err))
    else:
        report["distances"] = {
            "columns": ["marker_a", "marker_b", "est_distance"],
            "rows": [[a, b, d] for (a, b), d in est],
        }
    if scene.truth is not None:
        truth = scene.truth
        kfs = list(scene.keyframes(include_excluded=False))
        est_poses = {kf.id: kf.pose for kf in kfs}
        report["trajectory"] = trajectory_error(est_poses, truth.keyframe_poses)
        dt = [kf.time - truth.keyframe_times[kf.id] for kf in kfs if kf.id in truth.keyframe_times]
        report["time_rmse"] = float(np.sqrt(np.mean(np.square(dt)))) if dt else None
        ext = truth.extrinsic.inverse() @ scene.extrinsic
        report["extrinsic_error"] = {"rotation": rotation_angle(ext), "translation": float(np.linalg.norm(ext.t))}
        total = len(truth.keyframe_poses)
        report["completeness"] = {
            "keyframes_in_map": len(est_poses),
            "keyframes_total": total,
            "fraction": len(est_poses) / total if total else 1.0,
        }
    return report
