import dataclasses

import numpy as np
import pytest

from dualcam.config import PipelineConfig, SurveyConfig
from dualcam.simulator import simulate


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def small_survey(**kw) -> SurveyConfig:
    """A 4 m x 4 m patch: same structure as the default survey, a fraction of the cost."""
    base = dict(patch_width=4.0, patch_height=4.0, landmark_margin=1.5, midrow_loss_rate=0.0)
    base.update(kw)
    return SurveyConfig(**base)


def small_config(**kw) -> PipelineConfig:
    return PipelineConfig(simulation=small_survey(**kw))


@pytest.fixture(scope="session")
def clean_small_scene():
    cfg = small_survey(seed=3).noiseless()
    return cfg, simulate(cfg)


@pytest.fixture(scope="session")
def noisy_small_scene():
    cfg = small_survey(seed=3)
    return cfg, simulate(cfg)


def wavy_trajectory() -> "Trajectory":
    from dualcam.geometry import Trajectory, se3_exp

    ts = np.linspace(0, 2, 41)
    poses = [se3_exp(np.r_[0.3 * np.sin(t), 0.2 * np.cos(2 * t), 0.5 * t, t, 0.3 * np.sin(t), 0.1 * t]) for t in ts]
    return Trajectory.from_poses(ts, poses)


def random_graph(rng, K=3, N=5, consistent=False, options=None, traj=None):
    """Tiny factor graph around a curved trajectory.

    With ``consistent`` the observations and priors are generated from the
    true state, and the returned initial state is a perturbation of it;
    otherwise observations are arbitrary pixels. Returns (graph, truth).
    """
    from dualcam import optimizer as O
    from dualcam.config import OptimizerOptions
    from dualcam.geometry import Pose, se3_exp

    traj = traj or wavy_trajectory()
    options = options or OptimizerOptions(huber_delta=1e9)
    T = se3_exp(rng.normal(0, 0.3, 6))
    times = np.sort(rng.uniform(0.1, 1.9, K))
    Rl, pl, _, _ = traj.interpolate(times)
    X = [Pose.from_rt(r, p) @ T for r, p in zip(Rl, pl)]
    R = np.array([x.R for x in X])
    p = np.array([x.t for x in X])
    L = p[0] + R[0] @ np.array([0, 0, 3.0]) + rng.normal(0, 0.5, (N, 3))
    truth = O.GraphState(R, p, times, T.R, T.t, L)
    obs_kf, obs_lm = np.repeat(np.arange(K), N), np.tile(np.arange(N), K)
    intr = np.tile([500, 520, 320, 240.0], (K * N, 1))
    if consistent:
        pc = np.einsum("mji,mj->mi", R[obs_kf], L[obs_lm] - p[obs_kf])
        uv = intr[:, :2] * pc[:, :2] / pc[:, 2:] + intr[:, 2:]
        priors, T_obs = times.copy(), T
    else:
        uv = rng.uniform(0, 600, (K * N, 2))
        priors, T_obs = times + rng.normal(0, 0.01, K), se3_exp(rng.normal(0, 0.02, 6)) @ T
    graph = O.FactorGraph(list(range(K)), list(range(N)), truth, traj, priors, T_obs, obs_kf, obs_lm, uv, intr, options)
    delta = np.concatenate([rng.normal(0, 0.03, graph.n_camera_params), rng.normal(0, 0.05, 3 * N)])
    graph.initial = O.retract(graph, truth, delta)
    return graph, truth


def max_jacobian_error(graph, state, h=1e-6):
    """Largest |analytic - central difference| / max(1e-5, 1e-4 |analytic|) over all entries."""
    from dualcam import optimizer as O

    J = O.evaluate(graph, state).jacobian.toarray()
    Jn = np.zeros_like(J)
    for j in range(graph.n_params):
        d = np.zeros(graph.n_params)
        d[j] = h
        rp = O.evaluate(graph, O.retract(graph, state, d)).residual
        rm = O.evaluate(graph, O.retract(graph, state, -d)).residual
        Jn[:, j] = (rp - rm) / (2 * h)
    return float(np.max(np.abs(J - Jn) / np.maximum(1e-5, 1e-4 * np.abs(J))))
