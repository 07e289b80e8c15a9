"""Rigid/similarity transforms, SE(3) exp/log, Horn alignment and trajectory interpolation.

Conventions:
    - Poses are camera-to-world: ``x_world = R @ x_cam + t``.
    - Quaternions are stored ``(w, x, y, z)`` with ``w >= 0``.
    - Twists are 6-vectors ``[phi (rad), rho (m)]``; ``se3_exp`` maps a twist to
      ``(Exp(phi), J(phi) @ rho)`` where ``J`` is the SO(3) left Jacobian.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

# Below this rotation angle the closed forms lose precision; use Taylor series.
_SERIES_ANGLE = 0.1
# log-map is rejected this close to pi (axis sign ambiguous).
PI_TOLERANCE = 1e-9


class GeometryError(ValueError):
    pass


class LogBranchError(GeometryError):
    """Rotation angle too close to pi for an unambiguous logarithm."""


class DegenerateConfigurationError(GeometryError):
    """Too few or rank-deficient correspondences for an alignment."""


class OutOfRangeError(GeometryError):
    """Timestamp outside a trajectory's span."""


# ---------------------------------------------------------------------------
# SO(3) helpers (vectorized over a leading axis)


def hat(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix of a 3-vector, or of each row of an (N, 3) array."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def _coefficients(theta: np.ndarray):
    """Trig coefficients of SO(3)/SE(3) exp and Jacobians, series-safe near zero.

    Returns (A, B, C, D, E, Jinv) where
        A = sin/θ, B = (1-cos)/θ², C = (θ-sin)/θ³,
        D = (θ²+2cos-2)/(2θ⁴), E = (2θ-3sin+θcos)/(2θ⁵),
        Jinv = 1/θ² - (1+cos)/(2θ sin).
    """
    theta = np.asarray(theta, dtype=float)
    small = theta < _SERIES_ANGLE
    t = np.where(small, 1.0, theta)
    t2 = theta * theta
    s, c = np.sin(t), np.cos(t)
    A = np.where(small, 1 - t2 / 6 + t2**2 / 120 - t2**3 / 5040, s / t)
    B = np.where(small, 0.5 - t2 / 24 + t2**2 / 720 - t2**3 / 40320, (1 - c) / t**2)
    C = np.where(small, 1 / 6 - t2 / 120 + t2**2 / 5040 - t2**3 / 362880, (t - s) / t**3)
    D = np.where(
        small, 1 / 24 - t2 / 720 + t2**2 / 40320 - t2**3 / 3628800, (t**2 + 2 * c - 2) / (2 * t**4)
    )
    E = np.where(
        small,
        1 / 120 - t2 / 2520 + t2**2 / 120960 - t2**3 / 9979200,
        (2 * t - 3 * s + t * c) / (2 * t**5),
    )
    Jinv = np.where(
        small, 1 / 12 + t2 / 720 + t2**2 / 30240 + t2**3 / 1209600, 1 / t**2 - (1 + c) / (2 * t * s)
    )
    return A, B, C, D, E, Jinv


def so3_exp(phi: np.ndarray) -> np.ndarray:
    """Rodrigues' formula; accepts (3,) or (N, 3)."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)
    A, B, *_ = _coefficients(theta)
    K = hat(phi)
    I = np.broadcast_to(np.eye(3), K.shape)
    return I + A[..., None, None] * K + B[..., None, None] * (K @ K)


def so3_left_jacobian(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)
    _, B, C, *_ = _coefficients(theta)
    K = hat(phi)
    I = np.broadcast_to(np.eye(3), K.shape)
    return I + B[..., None, None] * K + C[..., None, None] * (K @ K)


def so3_left_jacobian_inv(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)
    *_, Jinv = _coefficients(theta)
    K = hat(phi)
    I = np.broadcast_to(np.eye(3), K.shape)
    return I - 0.5 * K + Jinv[..., None, None] * (K @ K)


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Rotation matrix (3, 3) or (N, 3, 3) to quaternion(s) (w, x, y, z), w >= 0."""
    R = np.asarray(R, dtype=float)
    single = R.ndim == 2
    R = R.reshape(-1, 3, 3)
    n = R.shape[0]
    q = np.empty((n, 4))
    tr = R[:, 0, 0] + R[:, 1, 1] + R[:, 2, 2]
    # Shepperd: pick the largest of (w, x, y, z) to divide by.
    cand = np.stack([tr, R[:, 0, 0], R[:, 1, 1], R[:, 2, 2]], axis=1)
    k = np.argmax(cand, axis=1)
    for case in range(4):
        m = k == case
        if not np.any(m):
            continue
        r = R[m]
        if case == 0:
            s = np.sqrt(1.0 + tr[m]) * 2
            q[m] = np.stack(
                [0.25 * s, (r[:, 2, 1] - r[:, 1, 2]) / s, (r[:, 0, 2] - r[:, 2, 0]) / s, (r[:, 1, 0] - r[:, 0, 1]) / s],
                axis=1,
            )
        elif case == 1:
            s = np.sqrt(1.0 + r[:, 0, 0] - r[:, 1, 1] - r[:, 2, 2]) * 2
            q[m] = np.stack(
                [(r[:, 2, 1] - r[:, 1, 2]) / s, 0.25 * s, (r[:, 0, 1] + r[:, 1, 0]) / s, (r[:, 0, 2] + r[:, 2, 0]) / s],
                axis=1,
            )
        elif case == 2:
            s = np.sqrt(1.0 + r[:, 1, 1] - r[:, 0, 0] - r[:, 2, 2]) * 2
            q[m] = np.stack(
                [(r[:, 0, 2] - r[:, 2, 0]) / s, (r[:, 0, 1] + r[:, 1, 0]) / s, 0.25 * s, (r[:, 1, 2] + r[:, 2, 1]) / s],
                axis=1,
            )
        else:
            s = np.sqrt(1.0 + r[:, 2, 2] - r[:, 0, 0] - r[:, 1, 1]) * 2
            q[m] = np.stack(
                [(r[:, 1, 0] - r[:, 0, 1]) / s, (r[:, 0, 2] + r[:, 2, 0]) / s, (r[:, 1, 2] + r[:, 2, 1]) / s, 0.25 * s],
                axis=1,
            )
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    q[q[:, 0] < 0] *= -1
    return q[0] if single else q


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    out = np.empty(q.shape[:-1] + (3, 3))
    out[..., 0, 0] = 1 - 2 * (y * y + z * z)
    out[..., 0, 1] = 2 * (x * y - w * z)
    out[..., 0, 2] = 2 * (x * z + w * y)
    out[..., 1, 0] = 2 * (x * y + w * z)
    out[..., 1, 1] = 1 - 2 * (x * x + z * z)
    out[..., 1, 2] = 2 * (y * z - w * x)
    out[..., 2, 0] = 2 * (x * z - w * y)
    out[..., 2, 1] = 2 * (y * z + w * x)
    out[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return out


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def so3_log(R: np.ndarray) -> np.ndarray:
    """Rotation vector(s) of (3, 3) or (N, 3, 3) matrices.

    Goes through the quaternion so that both small angles and angles up to pi
    keep full precision. Raises LogBranchError within PI_TOLERANCE of pi.
    """
    q = matrix_to_quat(R)
    return _quat_log(q)


def _quat_log(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    w = q[..., 0]
    v = q[..., 1:]
    vn = np.linalg.norm(v, axis=-1)
    angle = 2.0 * np.arctan2(vn, np.abs(w))
    if np.any(angle > np.pi - PI_TOLERANCE):
        raise LogBranchError("rotation angle within tolerance of pi; logarithm is ambiguous")
    sign = np.where(w < 0, -1.0, 1.0)
    # angle / sin(angle/2) with series near zero
    small = vn < 1e-8
    factor = np.where(small, 2.0 / np.where(np.abs(w) > 0, np.abs(w), 1.0), angle / np.where(small, 1.0, vn))
    return (sign * factor)[..., None] * v


# ---------------------------------------------------------------------------
# SE(3) tangent-space maps on raw (R, t) arrays, vectorized


def se3_exp_rt(xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    xi = np.asarray(xi, dtype=float)
    phi, rho = xi[..., :3], xi[..., 3:]
    R = so3_exp(phi)
    t = (so3_left_jacobian(phi) @ rho[..., None])[..., 0]
    return R, t


def se3_log_rt(R: np.ndarray, t: np.ndarray) -> np.ndarray:
    phi = so3_log(R)
    rho = (so3_left_jacobian_inv(phi) @ np.asarray(t, dtype=float)[..., None])[..., 0]
    return np.concatenate([phi, rho], axis=-1)


def _se3_q(xi: np.ndarray) -> np.ndarray:
    """Off-diagonal block of the SE(3) left Jacobian for twist [phi, rho]."""
    phi, rho = xi[..., :3], xi[..., 3:]
    theta = np.linalg.norm(phi, axis=-1)
    _, _, C, D, E, _ = _coefficients(theta)
    P = hat(phi)
    Rh = hat(rho)
    PR = P @ Rh
    RP = Rh @ P
    PRP = PR @ P
    PP = P @ P
    return (
        0.5 * Rh
        + C[..., None, None] * (PR + RP + PRP)
        + D[..., None, None] * (PP @ Rh + RP @ P - 3 * PRP)
        + E[..., None, None] * (PRP @ P + P @ PRP)
    )


def se3_left_jacobian(xi: np.ndarray) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    J = so3_left_jacobian(xi[..., :3])
    out = np.zeros(xi.shape[:-1] + (6, 6))
    out[..., :3, :3] = J
    out[..., 3:, 3:] = J
    out[..., 3:, :3] = _se3_q(xi)
    return out


def se3_left_jacobian_inv(xi: np.ndarray) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    Ji = so3_left_jacobian_inv(xi[..., :3])
    out = np.zeros(xi.shape[:-1] + (6, 6))
    out[..., :3, :3] = Ji
    out[..., 3:, 3:] = Ji
    out[..., 3:, :3] = -Ji @ _se3_q(xi) @ Ji
    return out


def se3_right_jacobian_inv(xi: np.ndarray) -> np.ndarray:
    return se3_left_jacobian_inv(-np.asarray(xi, dtype=float))


def adjoint_rt(R: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Adjoint of (R, t) acting on [phi, rho] twists: T exp(x) T^-1 = exp(Ad x)."""
    out = np.zeros(R.shape[:-2] + (6, 6))
    out[..., :3, :3] = R
    out[..., 3:, 3:] = R
    out[..., 3:, :3] = hat(t) @ R
    return out


# ---------------------------------------------------------------------------
# Value types


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform (camera-to-world). Immutable."""

    q: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=float).reshape(4)
        n = np.linalg.norm(q)
        if not np.isfinite(n) or n == 0:
            raise GeometryError("quaternion must be finite and non-zero")
        if abs(n - 1.0) > 1e-12:  # leave unit input untouched so files round-trip bit-exactly
            q /= n
        if q[0] < 0:
            q = -q
        t = np.array(self.t, dtype=float).reshape(3)
        q.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> Pose:
        return cls(np.array([1.0, 0, 0, 0]), np.zeros(3))

    @classmethod
    def from_rt(cls, R: np.ndarray, t: Sequence[float] = (0.0, 0.0, 0.0)) -> Pose:
        return cls(matrix_to_quat(R), t)

    @classmethod
    def from_translation(cls, t: Sequence[float]) -> Pose:
        return cls(np.array([1.0, 0, 0, 0]), t)

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> Pose:
        T = np.asarray(T, dtype=float)
        return cls.from_rt(T[:3, :3], T[:3, 3])

    @cached_property
    def R(self) -> np.ndarray:
        R = quat_to_matrix(self.q)
        R.flags.writeable = False
        return R

    @property
    def center(self) -> np.ndarray:
        return self.t

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    def inverse(self) -> Pose:
        qi = self.q * np.array([1.0, -1, -1, -1])
        return Pose(qi, -(self.R.T @ self.t))

    def __matmul__(self, other: Pose) -> Pose:
        return compose(self, other)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map points from this pose's local frame to the parent frame."""
        return np.asarray(points, dtype=float) @ self.R.T + self.t

    def allclose(self, other: Pose, atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.R, other.R, atol=atol, rtol=0) and np.allclose(self.t, other.t, atol=atol, rtol=0)
        )

    def __repr__(self) -> str:
        return f"Pose(q={np.array2string(self.q, precision=6)}, t={np.array2string(self.t, precision=6)})"


# The rig extrinsic is an ordinary rigid transform.
ExtrinsicTransform = Pose


@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    """x -> scale * R @ x + t."""

    scale: float
    rotation: Pose  # translation part ignored; only the rotation is used
    translation: np.ndarray

    def __post_init__(self):
        if not (self.scale > 0 and np.isfinite(self.scale)):
            raise GeometryError(f"similarity scale must be positive, got {self.scale}")
        t = np.array(self.translation, dtype=float).reshape(3)
        t.flags.writeable = False
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotation", Pose(self.rotation.q, np.zeros(3)))

    @classmethod
    def identity(cls) -> SimilarityTransform:
        return cls(1.0, Pose.identity(), np.zeros(3))

    @property
    def R(self) -> np.ndarray:
        return self.rotation.R

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * (np.asarray(points, dtype=float) @ self.R.T) + self.translation

    def apply_to_pose(self, pose: Pose) -> Pose:
        """Transform a camera-to-world pose; the camera's own frame stays metric-free."""
        q = quat_multiply(self.rotation.q, pose.q)
        return Pose(q, self.apply(pose.t))

    def inverse(self) -> SimilarityTransform:
        inv_rot = self.rotation.inverse()
        return SimilarityTransform(1.0 / self.scale, inv_rot, -(inv_rot.R @ self.translation) / self.scale)

    def compose(self, other: SimilarityTransform) -> SimilarityTransform:
        """self after other."""
        return SimilarityTransform(
            self.scale * other.scale,
            Pose(quat_multiply(self.rotation.q, other.rotation.q), np.zeros(3)),
            self.apply(other.translation),
        )


# ---------------------------------------------------------------------------
# Pose operations


def compose(a: Pose, b: Pose) -> Pose:
    return Pose(quat_multiply(a.q, b.q), a.R @ b.t + a.t)


def inverse(p: Pose) -> Pose:
    return p.inverse()


def se3_log(p: Pose) -> np.ndarray:
    """Twist [phi, rho] of a pose. Raises LogBranchError at angle ~ pi."""
    phi = _quat_log(p.q)
    rho = so3_left_jacobian_inv(phi) @ p.t
    return np.concatenate([phi, rho])


def se3_exp(xi: Sequence[float]) -> Pose:
    xi = np.asarray(xi, dtype=float).reshape(6)
    phi = xi[:3]
    theta = np.linalg.norm(phi)
    A = np.sin(theta / 2) / theta if theta > 1e-8 else 0.5 - theta**2 / 48
    q = np.concatenate([[np.cos(theta / 2)], A * phi])
    return Pose(q, so3_left_jacobian(phi) @ xi[3:])


def rotation_angle(p: Pose) -> float:
    """Geodesic angle of the rotation part, in radians."""
    return float(2.0 * np.arctan2(np.linalg.norm(p.q[1:]), abs(p.q[0])))


# ---------------------------------------------------------------------------
# Horn absolute orientation


def _as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise GeometryError(f"expected an (N, 3) point array, got shape {arr.shape}")
    return arr


def _horn_rotation(src_c: np.ndarray, dst_c: np.ndarray) -> tuple[np.ndarray, float]:
    """Quaternion maximizing sum(dst_c . R src_c) via Horn's 4x4 eigenproblem.

    When the top eigenvalue is repeated (collinear points) the solution set is
    a subspace; the element closest to the identity is returned so the choice
    is deterministic.
    """
    S = src_c.T @ dst_c
    Sxx, Sxy, Sxz = S[0]
    Syx, Syy, Syz = S[1]
    Szx, Szy, Szz = S[2]
    N = np.array(
        [
            [Sxx + Syy + Szz, Syz - Szy, Szx - Sxz, Sxy - Syx],
            [Syz - Szy, Sxx - Syy - Szz, Sxy + Syx, Szx + Sxz],
            [Szx - Sxz, Sxy + Syx, -Sxx + Syy - Szz, Syz + Szy],
            [Sxy - Syx, Szx + Sxz, Syz + Szy, -Sxx - Syy + Szz],
        ]
    )
    w, V = np.linalg.eigh(N)
    scale = np.sqrt(np.sum(src_c**2) * np.sum(dst_c**2))
    tol = 1e-10 * max(scale, 1e-300)
    top = np.flatnonzero(w >= w[-1] - tol)
    if len(top) == 1:
        q = V[:, -1]
    else:
        basis = V[:, top]
        q = basis @ basis[0]  # projection of (1, 0, 0, 0)
        if np.linalg.norm(q) < 1e-6:
            q = V[:, -1]
    q = q / np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return q, float(w[-1])


def horn_sim3(src, dst, allow_collinear: bool = False) -> SimilarityTransform:
    """Least-squares similarity with dst ~ s R src + t (closed form, Horn 1987).

    With ``allow_collinear`` the rotation about a common line is left at the
    element nearest the identity instead of raising.
    """
    src = _as_points(src)
    dst = _as_points(dst)
    if src.shape != dst.shape:
        raise GeometryError(f"point sets differ in size: {len(src)} vs {len(dst)}")
    min_points = 2 if allow_collinear else 3
    if len(src) < min_points:
        raise DegenerateConfigurationError(f"need at least {min_points} point pairs, got {len(src)}")
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    src_c = src - mu_s
    dst_c = dst - mu_d
    sv_s = np.linalg.svd(src_c, compute_uv=False)
    sv_d = np.linalg.svd(dst_c, compute_uv=False)
    if sv_s[0] < 1e-12 or sv_d[0] < 1e-12:
        raise DegenerateConfigurationError("point set has no spatial extent")
    if not allow_collinear and (sv_s[1] < 1e-9 * sv_s[0] or sv_d[1] < 1e-9 * sv_d[0]):
        raise DegenerateConfigurationError("points are collinear; rotation is rank-deficient")
    q, lam = _horn_rotation(src_c, dst_c)
    s = lam / np.sum(src_c**2)
    if s <= 0:
        raise DegenerateConfigurationError("non-positive scale estimate")
    R = quat_to_matrix(q)
    return SimilarityTransform(s, Pose(q, np.zeros(3)), mu_d - s * R @ mu_s)


def axis_points(poses: Sequence[Pose], axis_length: float = 1.0) -> np.ndarray:
    """Camera centers followed by points ``axis_length`` along each camera axis."""
    pts = []
    for p in poses:
        pts.append(p.t)
        pts.extend(p.t + axis_length * p.R.T)  # rows of R.T are columns of R
    return np.asarray(pts)


def horn_so3_augmented(src_poses: Sequence[Pose], dst_poses: Sequence[Pose], axis_length: float = 1.0) -> Pose:
    """Best rotation aligning camera centers plus axis points, about the center centroids.

    The returned pose has zero translation; apply it about the centroid of the
    source camera centers.
    """
    if len(src_poses) == 0 or len(src_poses) != len(dst_poses):
        raise DegenerateConfigurationError("need equal, non-empty pose lists")
    src = axis_points(src_poses, axis_length)
    dst = axis_points(dst_poses, axis_length)
    c_src = np.mean([p.t for p in src_poses], axis=0)
    c_dst = np.mean([p.t for p in dst_poses], axis=0)
    q, _ = _horn_rotation(src - c_src, dst - c_dst)
    return Pose(q, np.zeros(3))


# ---------------------------------------------------------------------------
# Trajectory


class Trajectory:
    """Time-stamped camera poses with piecewise-geodesic interpolation.

    Rotation is slerped and translation lerped between bracketing samples. A
    query exactly on a sample time uses the interval to its right (the last
    sample uses the final interval), which fixes the one-sided time derivative.
    """

    def __init__(self, times, quats, translations, role: str = "localization"):
        times = np.array(times, dtype=float).reshape(-1)
        quats = np.array(quats, dtype=float).reshape(-1, 4)
        translations = np.array(translations, dtype=float).reshape(-1, 3)
        if not (len(times) == len(quats) == len(translations)):
            raise GeometryError("trajectory arrays differ in length")
        if len(times) < 2:
            raise GeometryError("trajectory needs at least two samples")
        if np.any(np.diff(times) <= 0):
            bad = int(np.flatnonzero(np.diff(times) <= 0)[0]) + 1
            raise GeometryError(f"trajectory timestamps not strictly increasing at sample {bad}")
        norms = np.linalg.norm(quats, axis=1, keepdims=True)
        quats = np.where(np.abs(norms - 1.0) > 1e-12, quats / norms, quats)
        quats[quats[:, 0] < 0] *= -1
        self.times = times
        self.quats = quats
        self.translations = translations
        self.role = role
        self.rotations = quat_to_matrix(quats)
        rel = np.einsum("nji,njk->nik", self.rotations[:-1], self.rotations[1:])
        self._omega = so3_log(rel)
        for arr in (self.times, self.quats, self.translations, self.rotations, self._omega):
            arr.flags.writeable = False

    @classmethod
    def from_poses(cls, times, poses: Sequence[Pose], role: str = "localization") -> Trajectory:
        return cls(times, [p.q for p in poses], [p.t for p in poses], role=role)

    def __len__(self) -> int:
        return len(self.times)

    @property
    def span(self) -> tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])

    def pose(self, i: int) -> Pose:
        return Pose(self.quats[i], self.translations[i])

    def contains(self, t: float) -> bool:
        return self.times[0] <= t <= self.times[-1]

    def _locate(self, ts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        k = np.searchsorted(self.times, ts, side="right") - 1
        k = np.clip(k, 0, len(self.times) - 2)
        dt = self.times[k + 1] - self.times[k]
        a = (ts - self.times[k]) / dt
        return k, a

    def interpolate(self, ts, clamp: bool = False):
        """Vectorized interpolation.

        Returns ``(R, p, omega_rate, velocity)`` where the last two are the
        body-frame angular rate and world-frame velocity of the active interval
        (the one-sided time derivative).
        """
        ts = np.asarray(ts, dtype=float)
        lo, hi = self.span
        if clamp:
            ts = np.clip(ts, lo, hi)
        elif np.any((ts < lo) | (ts > hi)):
            bad = ts[(ts < lo) | (ts > hi)].ravel()[0]
            raise OutOfRangeError(f"time {bad!r} outside trajectory span [{lo}, {hi}]")
        k, a = self._locate(ts)
        omega = self._omega[k]
        R = self.rotations[k] @ so3_exp(a[..., None] * omega)
        dp = self.translations[k + 1] - self.translations[k]
        p = self.translations[k] + a[..., None] * dp
        dt = (self.times[k + 1] - self.times[k])[..., None]
        return R, p, omega / dt, dp / dt


def interpolate_pose(traj: Trajectory, t: float) -> Pose:
    lo, hi = traj.span
    if not (lo <= t <= hi):
        raise OutOfRangeError(f"time {t!r} outside trajectory span [{lo}, {hi}]")
    k, a = traj._locate(np.array([t]))
    if a[0] == 0.0:
        return traj.pose(int(k[0]))
    if a[0] == 1.0:
        return traj.pose(int(k[0]) + 1)
    R, p, _, _ = traj.interpolate(np.array([t]))
    return Pose.from_rt(R[0], p[0])
