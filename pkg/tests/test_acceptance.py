"""End-to-end acceptance checks on synthetic surveys.

Each test prints one ``[PASS]``/``[FAIL]`` line with the measured values, then
asserts. Run with ``pytest tests/test_acceptance.py -v``.
"""

import copy
import dataclasses
import time

import numpy as np
import pytest

from dualcam import pipeline
from dualcam.cli import main as cli_main
from dualcam.config import default_config
from dualcam.geometry import Pose, horn_sim3, horn_so3_augmented, se3_exp, se3_log, so3_exp

from conftest import max_jacobian_error, random_graph

SEEDS = range(10)


@pytest.fixture
def verdict(capsys):
    def emit(criterion: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}")

    return emit


def non_increasing(report: dict) -> bool:
    trace = [report["initial_cost"]] + [it["candidate_cost"] for it in report["iterations"] if it["accepted"]]
    return all(b <= a for a, b in zip(trace, trace[1:]))


@pytest.fixture(scope="module")
def sweep():
    """Noisy default survey for every seed, plus the same problem optimized
    without trajectory-pose factors."""
    cfg = default_config()
    runs, ablations = {}, {}
    t0 = time.perf_counter()
    pipeline_time = 0.0
    for seed in SEEDS:
        start = time.perf_counter()
        scene, rep = pipeline.run_simulate(cfg, seed)
        reports = {"simulate": rep}
        reports["align"] = pipeline.run_align(scene)
        reports["link"] = pipeline.run_link(scene)
        linked = copy.deepcopy(scene)
        reports["optimize"] = pipeline.run_optimize(scene)
        reports["evaluate"] = pipeline.run_evaluate(scene)
        pipeline_time += time.perf_counter() - start
        runs[seed] = reports

        ablated_cfg = default_config()
        ablated_cfg.optimizer.use_pose_factors = False
        ablations[seed] = {
            "optimize": pipeline.run_optimize(linked, ablated_cfg),
            "evaluate": pipeline.run_evaluate(linked, ablated_cfg),
        }
    return {"runs": runs, "ablations": ablations, "pipeline_time": pipeline_time, "total_time": time.perf_counter() - t0}


def test_geometry_oracles(verdict):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    sim_err = aug_err = 0.0
    for _ in range(1000):
        src = rng.normal(size=(6, 3)) * 3
        s, R, t = rng.uniform(0.2, 5), so3_exp(rng.normal(size=3)), rng.normal(size=3) * 10
        est = horn_sim3(src, s * src @ R.T + t)
        sim_err = max(sim_err, abs(est.scale - s), np.abs(est.rotation.R - R).max(), np.abs(est.translation - t).max())

        poses = [se3_exp(rng.normal(size=6)) for _ in range(4)]
        c = np.mean([p.t for p in poses], axis=0)
        Q = so3_exp(rng.normal(size=3))
        moved = [Pose.from_rt(Q @ p.R, c + Q @ (p.t - c)) for p in poses]
        aug_err = max(aug_err, np.abs(horn_so3_augmented(poses, moved).R - Q).max())
    rt_err = 0.0
    for _ in range(1000):
        xi = rng.normal(size=6)
        xi[:3] *= rng.uniform(0, 3.0) / np.linalg.norm(xi[:3])
        P = se3_exp(xi)
        rt_err = max(rt_err, np.abs(se3_exp(se3_log(P)).matrix() - P.matrix()).max(), np.abs(se3_log(P) - xi).max())
    elapsed = time.perf_counter() - t0
    ok = sim_err < 1e-8 and aug_err < 1e-8 and rt_err < 1e-9 and elapsed < 5.0
    verdict(
        "geometry oracles",
        ok,
        f"horn_sim3 max err {sim_err:.2e}, augmented max err {aug_err:.2e}, exp/log round trip {rt_err:.2e}, {elapsed:.2f} s",
    )
    assert ok


def test_zero_noise_end_to_end(verdict):
    cfg = default_config()
    cfg.simulation = dataclasses.replace(cfg.simulation.noiseless(), seed=7)
    t0 = time.perf_counter()
    scene, reports = pipeline.run_full(cfg)
    elapsed = time.perf_counter() - t0
    truth = reports["link"]["truth"]
    traj = reports["evaluate"]["trajectory"]
    fragments = reports["simulate"]["fragments"]
    ok = (
        fragments >= 6
        and traj["position_rmse"] < 1e-4
        and traj["rotation_rmse"] < 1e-4
        and truth["precision"] == 1.0
        and truth["recall"] == 1.0
        and elapsed < 60.0
    )
    verdict(
        "zero-noise end to end",
        ok,
        f"{fragments} fragments, position RMSE {traj['position_rmse']:.2e} m, rotation RMSE {traj['rotation_rmse']:.2e} rad, "
        f"linking precision {truth['precision']} recall {truth['recall']} ({truth['merged_pairs']} pairs), {elapsed:.1f} s",
    )
    assert ok


def test_noisy_regression(sweep, verdict):
    sim = default_config().simulation
    assert (sim.pixel_noise, sim.time_jitter, sim.extrinsic_rot_deg, sim.extrinsic_trans, sim.descriptor_flip) == (1.0, 0.2, 2.0, 0.02, 0.02)
    good, lines = 0, []
    for seed, run in sweep["runs"].items():
        reg = run["evaluate"]["regression"]
        passed = reg["n"] == 36 and 0.97 <= reg["slope"] <= 1.03 and reg["r_squared"] >= 0.99
        good += passed
        lines.append(f"seed {seed}: slope {reg['slope']:.4f} R2 {reg['r_squared']:.5f}")
    ok = good >= 9 and sweep["pipeline_time"] < 300.0
    verdict("noisy regression sweep", ok, f"{good}/10 seeds in bounds, {sweep['pipeline_time']:.0f} s; " + "; ".join(lines))
    assert ok


def test_completeness(sweep, verdict):
    in_map = sum(r["evaluate"]["completeness"]["keyframes_in_map"] for r in sweep["runs"].values())
    total = sum(r["evaluate"]["completeness"]["keyframes_total"] for r in sweep["runs"].values())
    worst = min(r["evaluate"]["completeness"]["fraction"] for r in sweep["runs"].values())
    ok = in_map / total >= 0.99 and worst >= 0.99
    verdict("map completeness", ok, f"{in_map}/{total} keyframes in the finalized maps, worst seed {worst:.3f}")
    assert ok


def test_optimizer_properties(sweep, verdict):
    reports = [r["optimize"] for r in sweep["runs"].values()] + [a["optimize"] for a in sweep["ablations"].values()]
    monotone = all(non_increasing(r) for r in reports)

    rng = np.random.default_rng(77)
    t0 = time.perf_counter()
    worst_fd = max(max_jacobian_error(g, g.initial) for g, _ in (random_graph(rng) for _ in range(100)))
    fd_time = time.perf_counter() - t0

    pairs = [
        (sweep["runs"][s]["evaluate"]["trajectory"]["position_rmse"], sweep["ablations"][s]["evaluate"]["trajectory"]["position_rmse"])
        for s in SEEDS
    ]
    ablation = all(abl > full for full, abl in pairs)
    ok = monotone and worst_fd <= 1.0 and ablation
    verdict(
        "optimizer properties",
        ok,
        f"{len(reports)} cost traces non-increasing: {monotone}; worst FD mismatch {worst_fd:.3f} of tolerance "
        f"over 100 states ({fd_time:.0f} s); ablation RMSE increase on "
        f"{sum(abl > full for full, abl in pairs)}/10 seeds (min ratio {min(abl / full for full, abl in pairs):.2f})",
    )
    assert ok


def test_determinism(tmp_path, verdict):
    a, b = tmp_path / "a", tmp_path / "b"
    codes = [cli_main(["full", "--seed", "3", "--out", str(d), "--report", str(d / "summary.json")]) for d in (a, b)]
    names = sorted(p.name for p in a.iterdir())
    same = names == sorted(p.name for p in b.iterdir()) and all((a / n).read_bytes() == (b / n).read_bytes() for n in names)
    scenes = sum(n.endswith(".scene.json") for n in names)
    ok = codes == [0, 0] and same and scenes == 4
    verdict("determinism", ok, f"exit codes {codes}, {len(names)} files ({scenes} scenes) byte-identical: {same}")
    assert ok

