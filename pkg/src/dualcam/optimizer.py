"""Global refinement of the documentation map as a factor graph.

Variables: keyframe poses X_i (SE(3), right-perturbed), acquisition times t_i,
one rig extrinsic T_dl, landmark positions L_j. Factors:

    reprojection      obs_ij - pi(X_i^-1 L_j)              Huber
    trajectory-pose   log(X_i^-1 X_l(t_i) T_dl)            squared (Huber optional)
    time prior        t_i - t_i_obs                        squared
    extrinsic prior   log(T_dl^-1 T_dl_obs)                squared

The localization trajectory is fixed data, so the problem has no free gauge.
Minimized with Levenberg-Marquardt; landmarks are eliminated by Schur
complement before each linear solve.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .config import OptimizerOptions
from .geometry import (
    Pose,
    Trajectory,
    adjoint_rt,
    hat,
    se3_exp_rt,
    se3_left_jacobian_inv,
    se3_log,
    se3_log_rt,
    se3_right_jacobian_inv,
)
from .scene import CameraIntrinsics, Scene

log = logging.getLogger(__name__)


class OptimizerError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Single-factor residuals (reference implementations on value types)


def reprojection_residual(X: Pose, L, obs, cam: CameraIntrinsics, min_depth: float = 1e-6):
    """obs - pi(X^-1 L) in pixels; ``None`` when the point is not in front of the camera."""
    pc = X.R.T @ (np.asarray(L, dtype=float) - X.t)
    if pc[2] <= min_depth:
        return None
    return np.asarray(obs, dtype=float) - cam.project(pc)


def trajectory_pose_residual(X_d: Pose, t: float, T_dl: Pose, traj: Trajectory) -> np.ndarray:
    """log(X_d^-1 X_l(t) T_dl); times outside the span are clamped to it."""
    R, p, _, _ = traj.interpolate(np.array([t]), clamp=True)
    X_l = Pose.from_rt(R[0], p[0])
    return se3_log(X_d.inverse() @ X_l @ T_dl)


def time_prior_residual(t: float, t_obs: float) -> float:
    return float(t - t_obs)


def extrinsic_prior_residual(T_dl: Pose, T_dl_obs: Pose) -> np.ndarray:
    return se3_log(T_dl.inverse() @ T_dl_obs)


# ---------------------------------------------------------------------------
# Robust kernel


@dataclass(frozen=True)
class RobustKernel:
    kind: str = "squared"
    delta: float = 1.0

    def __post_init__(self):
        if self.kind not in ("squared", "huber"):
            raise ValueError(f"unknown kernel {self.kind!r}")
        if self.kind == "huber" and not self.delta > 0:
            raise ValueError("Huber delta must be positive")

    def cost(self, sq: np.ndarray) -> np.ndarray:
        """Robustified cost of squared whitened residual norms."""
        sq = np.asarray(sq, dtype=float)
        if self.kind == "squared":
            return sq
        d = self.delta
        return np.where(sq <= d * d, sq, 2 * d * np.sqrt(sq) - d * d)

    def weight(self, sq: np.ndarray) -> np.ndarray:
        """IRLS weight (derivative of cost w.r.t. the squared norm)."""
        sq = np.asarray(sq, dtype=float)
        if self.kind == "squared":
            return np.ones_like(sq)
        d = self.delta
        return np.where(sq <= d * d, 1.0, d / np.sqrt(np.maximum(sq, d * d)))


# ---------------------------------------------------------------------------
# Graph and state


@dataclass
class GraphState:
    R: np.ndarray  # (K, 3, 3)
    p: np.ndarray  # (K, 3)
    times: np.ndarray  # (K,)
    R_dl: np.ndarray  # (3, 3)
    p_dl: np.ndarray  # (3,)
    L: np.ndarray  # (N, 3)

    def copy(self) -> GraphState:
        return GraphState(self.R.copy(), self.p.copy(), self.times.copy(), self.R_dl.copy(), self.p_dl.copy(), self.L.copy())


@dataclass
class FactorGraph:
    keyframe_ids: list[int]
    landmark_ids: list[int]
    initial: GraphState
    trajectory: Trajectory | None
    time_priors: np.ndarray
    extrinsic_prior: Pose
    obs_kf: np.ndarray  # (M,) keyframe variable index
    obs_lm: np.ndarray  # (M,) landmark variable index
    obs_uv: np.ndarray  # (M, 2)
    obs_intr: np.ndarray  # (M, 4) fx, fy, cx, cy
    options: OptimizerOptions
    excluded_keyframes: list[tuple[int, str]] = field(default_factory=list)

    @property
    def n_keyframes(self) -> int:
        return len(self.keyframe_ids)

    @property
    def n_landmarks(self) -> int:
        return len(self.landmark_ids)

    @property
    def n_camera_params(self) -> int:
        return 7 * self.n_keyframes + (6 if self.n_keyframes else 0)

    @property
    def n_params(self) -> int:
        return self.n_camera_params + 3 * self.n_landmarks

    def factor_counts(self) -> dict[str, int]:
        K = self.n_keyframes
        pose = K if self.options.use_pose_factors else 0
        return {
            "reprojection": len(self.obs_kf),
            "trajectory_pose": pose,
            "time_prior": K,
            "extrinsic_prior": 1 if K else 0,
        }

    # parameter layout: [pose_0, t_0, pose_1, t_1, ..., T_dl, L_0, L_1, ...]
    # keeping each keyframe's pose and time adjacent makes the reduced system
    # banded in time order
    def pose_col(self, k) -> np.ndarray:
        return 7 * np.asarray(k)

    def time_col(self, k) -> np.ndarray:
        return 7 * np.asarray(k) + 6

    def extrinsic_col(self) -> int:
        return 7 * self.n_keyframes

    def landmark_col(self, j) -> np.ndarray:
        return self.n_camera_params + 3 * np.asarray(j)


def build_graph(scene: Scene, options: OptimizerOptions | None = None) -> FactorGraph:
    """Factor graph over the active (aligned, not excluded) part of a linked scene."""
    options = options or OptimizerOptions()
    traj = scene.trajectory
    kf_ids, excluded = [], []
    R, p, times, priors = [], [], [], []
    for frag in scene.active_fragments():
        for kf in frag.keyframes:
            if traj is None or not traj.contains(kf.time_prior):
                reason = "no trajectory" if traj is None else f"time prior {kf.time_prior} outside trajectory span"
                excluded.append((kf.id, reason))
                log.warning("keyframe %d excluded from optimization: %s", kf.id, reason)
                continue
            kf_ids.append(kf.id)
            R.append(kf.pose.R)
            p.append(kf.pose.t)
            times.append(kf.time)
            priors.append(kf.time_prior)
    kf_index = {k: i for i, k in enumerate(kf_ids)}
    landmarks = scene.landmark_map(include_excluded=False)
    kfs = scene.keyframe_map()
    lm_index: dict[int, int] = {}
    obs_kf, obs_lm, obs_uv, obs_intr = [], [], [], []
    for k in kf_ids:
        kf = kfs[k]
        cam = scene.cameras[kf.camera]
        for ob in kf.observations:
            if ob.landmark_id not in landmarks:
                continue
            j = lm_index.setdefault(ob.landmark_id, len(lm_index))
            obs_kf.append(kf_index[k])
            obs_lm.append(j)
            obs_uv.append(ob.uv)
            obs_intr.append((cam.fx, cam.fy, cam.cx, cam.cy))
    lm_ids = list(lm_index)
    state = GraphState(
        np.array(R).reshape(-1, 3, 3),
        np.array(p).reshape(-1, 3),
        np.array(times, dtype=float),
        scene.extrinsic.R.copy(),
        scene.extrinsic.t.copy(),
        np.array([landmarks[l].position for l in lm_ids]).reshape(-1, 3),
    )
    return FactorGraph(
        kf_ids,
        lm_ids,
        state,
        traj,
        np.array(priors, dtype=float),
        scene.extrinsic_prior,
        np.array(obs_kf, dtype=int),
        np.array(obs_lm, dtype=int),
        np.array(obs_uv, dtype=float).reshape(-1, 2),
        np.array(obs_intr, dtype=float).reshape(-1, 4),
        options,
        excluded,
    )


# ---------------------------------------------------------------------------
# Evaluation


@dataclass
class Evaluation:
    cost: float
    costs: dict[str, float]
    residual: np.ndarray | None = None  # IRLS-weighted, whitened
    jacobian: sp.csr_matrix | None = None
    invalid_projections: int = 0


def _reprojection(graph: FactorGraph, s: GraphState, jac: bool):
    o = graph.options
    k, j = graph.obs_kf, graph.obs_lm
    Rk = s.R[k]
    d = s.L[j] - s.p[k]
    pc = np.einsum("mji,mj->mi", Rk, d)  # R^T (L - p)
    if not np.all(np.isfinite(pc)):
        # check before the depth test, which would silently treat NaN as invalid
        bad = int(np.flatnonzero(~np.isfinite(pc).all(axis=1))[0])
        raise OptimizerError(
            f"non-finite reprojection residual: keyframe {graph.keyframe_ids[k[bad]]}, landmark {graph.landmark_ids[j[bad]]}"
        )
    z = pc[:, 2]
    valid = z > o.min_depth
    zs = np.where(valid, z, 1.0)
    fx, fy, cx, cy = graph.obs_intr.T
    u = fx * pc[:, 0] / zs + cx
    v = fy * pc[:, 1] / zs + cy
    r = (graph.obs_uv - np.column_stack([u, v])) / o.pixel_sigma
    r[~valid] = 0.0
    if not np.all(np.isfinite(r)):
        bad = int(np.flatnonzero(~np.isfinite(r).all(axis=1))[0])
        raise OptimizerError(
            f"non-finite reprojection residual: keyframe {graph.keyframe_ids[k[bad]]}, landmark {graph.landmark_ids[j[bad]]}"
        )
    sq = np.sum(r * r, axis=1)
    kernel = RobustKernel("huber", o.huber_delta)
    cost = float(np.sum(kernel.cost(sq)))
    if not jac:
        return cost, None, None, int(np.sum(~valid))
    sw = np.sqrt(kernel.weight(sq))
    # d(residual)/d(pc) = -d(pi)/d(pc) / sigma
    dpi = np.zeros((len(k), 2, 3))
    dpi[:, 0, 0] = fx / zs
    dpi[:, 0, 2] = -fx * pc[:, 0] / zs**2
    dpi[:, 1, 1] = fy / zs
    dpi[:, 1, 2] = -fy * pc[:, 1] / zs**2
    dr_dpc = -dpi / o.pixel_sigma * (sw * valid)[:, None, None]
    J_phi = dr_dpc @ hat(pc)
    J_rho = -dr_dpc
    J_L = dr_dpc @ np.transpose(Rk, (0, 2, 1))
    M = len(k)
    rows = 2 * np.arange(M)[:, None] + np.arange(2)[None, :]  # (M, 2)
    pose_cols = graph.pose_col(k)[:, None] + np.arange(6)[None, :]
    lm_cols = graph.landmark_col(j)[:, None] + np.arange(3)[None, :]
    vals_pose = np.concatenate([J_phi, J_rho], axis=2)  # (M, 2, 6)
    blocks = [
        (np.repeat(rows[:, :, None], 6, axis=2), np.repeat(pose_cols[:, None, :], 2, axis=1), vals_pose),
        (np.repeat(rows[:, :, None], 3, axis=2), np.repeat(lm_cols[:, None, :], 2, axis=1), J_L),
    ]
    return cost, (r * sw[:, None]).ravel(), blocks, int(np.sum(~valid))


def _pose_factor(graph: FactorGraph, s: GraphState, jac: bool, row0: int):
    o = graph.options
    K = graph.n_keyframes
    lo, hi = graph.trajectory.span
    tc = np.clip(s.times, lo, hi)
    out_of_span = tc != s.times
    R_l, p_l, w_rate, vel = graph.trajectory.interpolate(tc)
    # E = X_i^-1 X_l T_dl
    R_E = np.einsum("kji,kjl->kil", s.R, R_l @ s.R_dl)
    t_E = np.einsum("kji,kj->ki", s.R, R_l @ s.p_dl + p_l - s.p)
    r = se3_log_rt(R_E, t_E)
    if not np.all(np.isfinite(r)):
        bad = int(np.flatnonzero(~np.isfinite(r).all(axis=1))[0])
        raise OptimizerError(f"non-finite trajectory-pose residual: keyframe {graph.keyframe_ids[bad]}")
    W = np.array([1 / o.pose_sigma_rot] * 3 + [1 / o.pose_sigma_trans] * 3)
    rw = r * W
    sq = np.sum(rw * rw, axis=1)
    kernel = RobustKernel(o.pose_kernel, o.pose_huber_delta)
    pen = (s.times - tc) / o.span_penalty_sigma
    cost = float(np.sum(kernel.cost(sq)) + np.sum(pen * pen))
    if not jac:
        return cost, None, None
    sw = np.sqrt(kernel.weight(sq))
    Wk = W[None, :, None] * sw[:, None, None]
    J_X = -se3_left_jacobian_inv(r) * Wk
    Jr_inv = se3_right_jacobian_inv(r)
    J_T = Jr_inv * Wk
    Rdl_T = s.R_dl.T
    Ad_inv = adjoint_rt(Rdl_T, -Rdl_T @ s.p_dl)
    xi_l = np.concatenate([w_rate, np.einsum("kji,kj->ki", R_l, vel)], axis=1)
    J_t = (Jr_inv @ (Ad_inv @ xi_l[..., None]))[..., 0] * W[None, :] * sw[:, None]
    J_t[out_of_span] = 0.0
    idx = np.arange(K)
    rows = row0 + 7 * idx[:, None] + np.arange(6)[None, :]
    pose_cols = graph.pose_col(idx)[:, None] + np.arange(6)[None, :]
    ext_cols = graph.extrinsic_col() + np.arange(6)
    blocks = [
        (np.repeat(rows[:, :, None], 6, axis=2), np.repeat(pose_cols[:, None, :], 6, axis=1), J_X),
        (np.repeat(rows[:, :, None], 6, axis=2), np.broadcast_to(ext_cols, (K, 6, 6)), J_T),
        (rows, np.repeat(graph.time_col(idx)[:, None], 6, axis=1), J_t),
        (row0 + 7 * idx + 6, graph.time_col(idx), np.where(out_of_span, 1 / o.span_penalty_sigma, 0.0)),
    ]
    res = np.concatenate([rw * sw[:, None], pen[:, None]], axis=1).ravel()
    return cost, res, blocks


def evaluate(graph: FactorGraph, state: GraphState, jacobian: bool = True) -> Evaluation:
    """Total cost, and optionally the stacked whitened residual and sparse Jacobian.

    Rows and columns are laid out in fixed factor order, so accumulation is
    reproducible bit for bit.
    """
    o = graph.options
    costs = {}
    residuals, blocks = [], []
    row = 0
    c, r, b, invalid = _reprojection(graph, state, jacobian)
    costs["reprojection"] = c
    if jacobian:
        residuals.append(r)
        blocks += b
    row += 2 * len(graph.obs_kf)
    K = graph.n_keyframes
    if K and o.use_pose_factors:
        c, r, b = _pose_factor(graph, state, jacobian, row)
        costs["trajectory_pose"] = c
        if jacobian:
            residuals.append(r)
            blocks += b
        row += 7 * K
    if K:
        rt = (state.times - graph.time_priors) / o.time_sigma
        costs["time_prior"] = float(np.sum(rt * rt))
        We = np.array([1 / o.extrinsic_sigma_rot] * 3 + [1 / o.extrinsic_sigma_trans] * 3)
        T_inv_R = state.R_dl.T
        R_E = T_inv_R @ graph.extrinsic_prior.R
        t_E = T_inv_R @ (graph.extrinsic_prior.t - state.p_dl)
        re = se3_log_rt(R_E, t_E)
        if not np.all(np.isfinite(re)):
            raise OptimizerError("non-finite extrinsic-prior residual")
        costs["extrinsic_prior"] = float(np.sum((re * We) ** 2))
        if jacobian:
            residuals.append(rt)
            blocks.append((row + np.arange(K), graph.time_col(np.arange(K)), np.full(K, 1 / o.time_sigma)))
            row += K
            residuals.append(re * We)
            Je = -se3_left_jacobian_inv(re) * We[:, None]
            rr = row + np.arange(6)
            blocks.append((np.repeat(rr[:, None], 6, axis=1), np.broadcast_to(graph.extrinsic_col() + np.arange(6), (6, 6)), Je))
            row += 6
    total = float(sum(costs.values()))
    if not jacobian:
        return Evaluation(total, costs, invalid_projections=invalid)
    res = np.concatenate(residuals) if residuals else np.zeros(0)
    if blocks:
        rows = np.concatenate([np.ravel(b[0]) for b in blocks])
        cols = np.concatenate([np.ravel(b[1]) for b in blocks])
        vals = np.concatenate([np.ravel(b[2]) for b in blocks])
    else:
        rows = cols = np.zeros(0, dtype=int)
        vals = np.zeros(0)
    J = sp.csr_matrix((vals, (rows, cols)), shape=(row, graph.n_params))
    if not np.all(np.isfinite(vals)):
        raise OptimizerError("non-finite Jacobian entry")
    return Evaluation(total, costs, res, J, invalid)


def retract(graph: FactorGraph, state: GraphState, delta: np.ndarray) -> GraphState:
    """Apply a parameter increment on the manifold: X <- X exp(dx) for poses and T_dl."""
    K = graph.n_keyframes
    new = state.copy()
    if K:
        blocks = delta[: 7 * K].reshape(K, 7)
        dR, dt = se3_exp_rt(blocks[:, :6])
        new.p = state.p + np.einsum("kij,kj->ki", state.R, dt)
        new.R = state.R @ dR
        new.times = state.times + blocks[:, 6]
        eR, et = se3_exp_rt(delta[7 * K : 7 * K + 6])
        new.p_dl = state.p_dl + state.R_dl @ et
        new.R_dl = state.R_dl @ eR
    new.L = state.L + delta[graph.n_camera_params :].reshape(-1, 3)
    return new


# ---------------------------------------------------------------------------
# Levenberg-Marquardt


def _solve_spd(S: sp.spmatrix, b: np.ndarray) -> np.ndarray:
    """Solve the (positive definite) reduced camera system.

    Keyframes are ordered by time, so the natural ordering is already close to
    banded; symmetric-mode LU without pivoting keeps that structure.
    """
    try:
        x = spla.splu(S.tocsc(), permc_spec="NATURAL", diag_pivot_thresh=0.0, options={"SymmetricMode": True}).solve(b)
        if np.all(np.isfinite(x)):
            return x
    except RuntimeError:
        pass
    return sla.solve(S.toarray(), b, assume_a="sym")


def _solve_schur(H: sp.csr_matrix, g: np.ndarray, nc: int, n_lm: int, lam: float) -> np.ndarray:
    """Solve (H + lam D) x = -g with D = clamped diag(H), eliminating landmarks first."""
    diag = H.diagonal()
    D = np.clip(diag, 1e-6, 1e32)
    Hd = H + sp.diags(lam * D)
    if n_lm == 0:
        return _solve_spd(Hd, -g)
    Hcc = Hd[:nc, :nc]
    Hcl = Hd[:nc, nc:]
    # 3x3 landmark blocks
    Hll_sp = Hd[nc:, nc:].tocoo()
    blocks = np.zeros((n_lm, 3, 3))
    bi = Hll_sp.row // 3
    np.add.at(blocks, (bi, Hll_sp.row % 3, Hll_sp.col % 3), Hll_sp.data)
    inv = np.linalg.inv(blocks)
    ii = np.repeat(np.arange(n_lm) * 3, 9) + np.tile(np.repeat(np.arange(3), 3), n_lm)
    jj = np.repeat(np.arange(n_lm) * 3, 9) + np.tile(np.tile(np.arange(3), 3), n_lm)
    Hll_inv = sp.csr_matrix((inv.ravel(), (ii, jj)), shape=(3 * n_lm, 3 * n_lm))
    gc, gl = g[:nc], g[nc:]
    HclHinv = Hcl @ Hll_inv
    S = Hcc - HclHinv @ Hcl.T
    rhs = -gc + HclHinv @ gl
    xc = _solve_spd(S, rhs) if nc else np.zeros(0)
    xl = Hll_inv @ (-gl - Hcl.T @ xc)
    return np.concatenate([np.atleast_1d(xc), xl])


@dataclass
class IterationRecord:
    iteration: int
    cost: float
    candidate_cost: float
    accepted: bool
    lam: float
    step_norm: float


@dataclass
class OptimizationReport:
    initial_cost: float
    final_cost: float
    iterations: list[IterationRecord]
    termination: str
    initial_costs: dict[str, float]
    final_costs: dict[str, float]
    invalid_projections: int
    factor_counts: dict[str, int]
    excluded_keyframes: list[tuple[int, str]]

    @property
    def accepted_costs(self) -> list[float]:
        return [self.initial_cost] + [it.candidate_cost for it in self.iterations if it.accepted]

    def to_dict(self) -> dict:
        return {
            "initial_cost": self.initial_cost,
            "final_cost": self.final_cost,
            "termination": self.termination,
            "initial_costs": self.initial_costs,
            "final_costs": self.final_costs,
            "invalid_projections": self.invalid_projections,
            "factor_counts": self.factor_counts,
            "excluded_keyframes": [list(e) for e in self.excluded_keyframes],
            "iterations": [it.__dict__ for it in self.iterations],
        }


def optimize(graph: FactorGraph, options: OptimizerOptions | None = None) -> tuple[GraphState, OptimizationReport]:
    """Levenberg-Marquardt on the graph; returns the refined state and a report.

    Only cost-decreasing steps are accepted. Stops when the relative cost
    change of an accepted step is below ``relative_tolerance``, the gradient
    max-norm is below ``gradient_tolerance``, or after ``max_iterations``.
    """
    o = options or graph.options
    state = graph.initial.copy()
    ev = evaluate(graph, state)
    initial = ev
    records: list[IterationRecord] = []
    if graph.n_params == 0:
        return state, OptimizationReport(ev.cost, ev.cost, [], "empty graph", ev.costs, ev.costs, 0, graph.factor_counts(), graph.excluded_keyframes)
    lam, nu = o.initial_lambda, 2.0
    nc = graph.n_camera_params
    termination = "max iterations"
    for it in range(1, o.max_iterations + 1):
        J, r = ev.jacobian, ev.residual
        g = J.T @ r
        if ev.cost <= o.cost_tolerance:
            termination = "zero cost"
            break
        if np.max(np.abs(g)) < o.gradient_tolerance:
            termination = "gradient tolerance"
            break
        H = (J.T @ J).tocsr()
        accepted = False
        while not accepted:
            dx = _solve_schur(H, g, nc, graph.n_landmarks, lam)
            if not np.all(np.isfinite(dx)):
                raise OptimizerError("linear solve produced a non-finite step")
            cand = retract(graph, state, dx)
            c_ev = evaluate(graph, cand, jacobian=False)
            # gain ratio against the (IRLS) quadratic model, cost scale of sum r^2
            predicted = -(2 * g @ dx + dx @ (H @ dx))
            actual = ev.cost - c_ev.cost
            step_norm = float(np.linalg.norm(dx))
            if actual > 0 and np.isfinite(c_ev.cost):
                rho = actual / predicted if predicted > 0 else 0.0
                records.append(IterationRecord(it, ev.cost, c_ev.cost, True, lam, step_norm))
                rel = actual / max(ev.cost, 1e-300)
                state = cand
                ev = evaluate(graph, state)
                lam = max(lam * max(1 / 3, 1 - (2 * rho - 1) ** 3), 1e-12)
                nu = 2.0
                accepted = True
                if rel < o.relative_tolerance:
                    termination = "relative cost change"
            else:
                records.append(IterationRecord(it, ev.cost, float(c_ev.cost), False, lam, step_norm))
                lam *= nu
                nu *= 2
                if lam > 1e16 or step_norm < 1e-15:
                    termination = "no further decrease"
                    break
        if termination != "max iterations":
            break
    return state, OptimizationReport(
        initial.cost,
        ev.cost,
        records,
        termination,
        initial.costs,
        ev.costs,
        ev.invalid_projections,
        graph.factor_counts(),
        graph.excluded_keyframes,
    )


def write_back(scene: Scene, graph: FactorGraph, state: GraphState) -> None:
    """Copy optimized values into the scene (keyframes, landmarks, extrinsic)."""
    kfs = scene.keyframe_map()
    for i, k in enumerate(graph.keyframe_ids):
        kfs[k].pose = Pose.from_rt(state.R[i], state.p[i])
        kfs[k].time = float(state.times[i])
    lms = scene.landmark_map()
    for j, l in enumerate(graph.landmark_ids):
        lms[l].position = state.L[j].copy()
    if graph.n_keyframes:
        scene.extrinsic = Pose.from_rt(state.R_dl, state.p_dl)


def optimize_scene(scene: Scene, options: OptimizerOptions | None = None) -> OptimizationReport:
    graph = build_graph(scene, options)
    state, report = optimize(graph)
    write_back(scene, graph, state)
    return report
