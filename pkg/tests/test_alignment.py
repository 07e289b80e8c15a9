import copy
import math

import numpy as np
import pytest

from dualcam.alignment import (
    AlignmentError,
    DegenerateBaselineError,
    InsufficientSupportError,
    align_all,
    align_fragment,
    bootstrap_scale,
    implied_centers,
    implied_doc_pose,
    initialization_motion,
    register_submap_constant_velocity,
    rescale_full_distance,
)
from dualcam.config import AlignmentOptions
from dualcam.geometry import (
    Pose,
    SimilarityTransform,
    Trajectory,
    horn_sim3,
    rotation_angle,
    se3_exp,
    so3_exp,
)
from dualcam.scene import FragmentMap, Keyframe, Landmark, ScaleState
from dualcam.simulator import simulate

from conftest import small_survey

DOWN = np.array([[1.0, 0, 0], [0, -1.0, 0], [0, 0, -1.0]])


def yaw(deg):
    return so3_exp([0, 0, math.radians(deg)])


def straight_trajectory(length=10.0, speed=0.5, rate=10.0):
    ts = np.arange(0, length / speed + 1e-9, 1 / rate)
    return Trajectory.from_poses(ts, [Pose.from_rt(np.eye(3), [speed * t, 0, 0]) for t in ts])


def fragment_from_poses(poses, times, fid=0, state=ScaleState.ARBITRARY):
    kfs = [Keyframe(i, float(t), float(t), p, "doc", []) for i, (p, t) in enumerate(zip(poses, times))]
    lms = {0: Landmark(0, np.array([1.0, 2.0, 0.0]), bytes(32), set())}
    return FragmentMap(fid, kfs, lms, state)


def centers(frag):
    return np.array([kf.pose.t for kf in frag.keyframes])


@pytest.fixture
def clean():
    cfg = small_survey(seed=4).noiseless()
    return simulate(cfg)


def to_world(frag, scene):
    """Undo the simulator's per-fragment corruption using the ground truth."""
    tr = scene.truth.fragment_transforms[frag.id]
    sim = SimilarityTransform(tr["scale"], Pose(tr["q"], np.zeros(3)), np.array(tr["t"])).inverse()
    for kf in frag.keyframes:
        kf.pose = sim.apply_to_pose(kf.pose)
    for lm in frag.landmarks.values():
        lm.position = sim.apply(lm.position)
    return frag


# --- implied poses -------------------------------------------------------------


def test_implied_pose_identity_extrinsic():
    traj = straight_trajectory()
    p = implied_doc_pose(traj, 3.3, Pose.identity())
    np.testing.assert_allclose(p.t, [1.65, 0, 0])


def test_implied_pose_pure_translation_extrinsic():
    traj = Trajectory.from_poses([0.0, 1.0], [Pose.identity(), Pose.identity()])
    p = implied_doc_pose(traj, 0.5, Pose.from_translation([0, 0, -1]))
    np.testing.assert_allclose(p.t, [0, 0, -1])
    assert rotation_angle(p) == 0.0


def test_implied_pose_rotated_offset():
    traj = Trajectory.from_poses([0.0, 1.0], [Pose.from_rt(yaw(90))] * 2)
    p = implied_doc_pose(traj, 0.0, Pose.from_translation([1, 0, 0]))
    np.testing.assert_allclose(p.t, [0, 1, 0], atol=1e-15)


def test_implied_pose_out_of_range():
    with pytest.raises(ValueError):
        implied_doc_pose(straight_trajectory(), 100.0, Pose.identity())


def test_initialization_motion_stationary():
    traj = Trajectory.from_poses([0.0, 1.0], [Pose.identity()] * 2)
    m = initialization_motion(traj, 0.2, 0.8, se3_exp([0.1, 0.2, 0.3, 1, 2, 3]))
    assert m.allclose(Pose.identity(), atol=1e-15)


def test_initialization_motion_pure_translation(rng):
    d = np.array([0.3, -0.4, 1.2])
    traj = Trajectory.from_poses([0.0, 1.0], [Pose.identity(), Pose.from_translation(d)])
    T = se3_exp(rng.normal(size=6))
    m = initialization_motion(traj, 0.0, 1.0, T)
    assert np.linalg.norm(m.t) == pytest.approx(np.linalg.norm(d), abs=1e-12)
    assert rotation_angle(m) < 1e-12


def test_initialization_motion_pure_rotation_induces_translation():
    traj = Trajectory.from_poses([0.0, 1.0], [Pose.identity(), Pose.from_rt(yaw(90))])
    m = initialization_motion(traj, 0.0, 1.0, Pose.from_translation([1, 0, 0]))
    assert np.linalg.norm(m.t) == pytest.approx(math.sqrt(2), abs=1e-12)


def test_initialization_motion_needs_ordered_window():
    with pytest.raises(AlignmentError):
        initialization_motion(straight_trajectory(), 1.0, 1.0, Pose.identity())


# --- scale -------------------------------------------------------------------------


def test_bootstrap_metric_fragment_has_unit_scale(clean):
    frag = to_world(clean.fragments[1], clean)
    s = bootstrap_scale(frag, clean.trajectory, clean.extrinsic_prior)
    assert s == pytest.approx(1.0, abs=1e-9)
    assert frag.scale_state == ScaleState.BOOTSTRAP


def test_bootstrap_recovers_prescale(clean):
    frag = to_world(clean.fragments[1], clean)
    for kf in frag.keyframes:
        kf.pose = Pose(kf.pose.q, 0.25 * kf.pose.t)
    s = bootstrap_scale(frag, clean.trajectory, clean.extrinsic_prior)
    assert s == pytest.approx(4.0, abs=1e-6)


def test_bootstrap_stationary_window():
    traj = straight_trajectory()
    frag = fragment_from_poses([Pose.identity()] * 4, [1.0, 1.25, 1.5, 1.75])
    with pytest.raises(DegenerateBaselineError):
        bootstrap_scale(frag, traj, Pose.identity())


def test_rescale_requires_bootstrap(clean):
    with pytest.raises(AlignmentError):
        rescale_full_distance(clean.fragments[0], clean.trajectory, clean.extrinsic_prior)


def test_rescale_matches_implied_path(clean):
    frag = clean.fragments[0]
    bootstrap_scale(frag, clean.trajectory, clean.extrinsic_prior)
    rescale_full_distance(frag, clean.trajectory, clean.extrinsic_prior)
    internal = np.sum(np.linalg.norm(np.diff(centers(frag), axis=0), axis=1))
    implied = np.sum(np.linalg.norm(np.diff(implied_centers(frag, clean.trajectory, clean.extrinsic_prior), axis=0), axis=1))
    assert internal == pytest.approx(implied, rel=1e-9)
    assert frag.scale_state == ScaleState.FULL_DISTANCE
    again = rescale_full_distance(frag, clean.trajectory, clean.extrinsic_prior)
    assert abs(again - 1.0) < 1e-9


def test_rescale_corrects_bootstrap_error(clean):
    frag = to_world(clean.fragments[2], clean)
    bootstrap_scale(frag, clean.trajectory, clean.extrinsic_prior)
    for kf in frag.keyframes:
        kf.pose = Pose(kf.pose.q, 1.1 * kf.pose.t)
    s = rescale_full_distance(frag, clean.trajectory, clean.extrinsic_prior)
    assert s == pytest.approx(1 / 1.1, abs=1e-6)


def test_rescale_single_keyframe_is_degenerate():
    frag = fragment_from_poses([Pose.identity()], [1.0], state=ScaleState.BOOTSTRAP)
    with pytest.raises(DegenerateBaselineError):
        rescale_full_distance(frag, straight_trajectory(), Pose.identity())


# --- two-step alignment -----------------------------------------------------------


def world_fragment(n=12, start=1.0, dt=0.25, T=None, traj=None):
    traj = traj or Trajectory.from_poses(
        np.arange(0, 20.01, 0.1),
        [Pose.from_rt(yaw(8 * math.sin(t)), [0.5 * t, 0.4 * math.sin(0.7 * t), 0.05 * math.cos(t)]) for t in np.arange(0, 20.01, 0.1)],
    )
    T = T or Pose.from_rt(DOWN, [0.1, 0.0, -0.2])
    times = start + dt * np.arange(n)
    poses = [implied_doc_pose(traj, t, T) for t in times]
    return fragment_from_poses(poses, times, state=ScaleState.FULL_DISTANCE), traj, T


def test_align_fragment_already_in_world():
    frag, traj, T = world_fragment()
    before = centers(frag)
    res = align_fragment(frag, traj, T)
    assert abs(res.similarity.scale - 1) < 1e-9
    assert rotation_angle(res.similarity.rotation) < 1e-9
    assert rotation_angle(res.rotation) < 1e-9
    assert np.abs(centers(frag) - before).max() < 1e-9


def test_align_fragment_recovers_known_similarity(rng):
    frag, traj, T = world_fragment()
    truth = [kf.pose for kf in frag.keyframes]
    sim = SimilarityTransform(2.7, Pose.from_rt(so3_exp(rng.normal(size=3))), rng.normal(size=3) * 5)
    for kf in frag.keyframes:
        kf.pose = sim.apply_to_pose(kf.pose)
    align_fragment(frag, traj, T)
    err = max(np.linalg.norm(kf.pose.t - p.t) for kf, p in zip(frag.keyframes, truth))
    assert err < 1e-8
    assert frag.aligned


def test_straight_row_roll_needs_step_two():
    traj = straight_trajectory(rate=4)
    T = Pose.from_rt(DOWN, [0.0, 0.0, -0.3])
    times = 1.0 + 0.25 * np.arange(10)
    implied = [implied_doc_pose(traj, t, T) for t in times]
    c = np.mean([p.t for p in implied], axis=0)
    roll = so3_exp([math.radians(20), 0, 0])  # about the path (x) axis
    G = SimilarityTransform(1.0, Pose.from_rt(roll), c - roll @ c)
    frag = fragment_from_poses([G.apply_to_pose(p) for p in implied], times, state=ScaleState.FULL_DISTANCE)

    step1 = horn_sim3(centers(frag), np.array([p.t for p in implied]), allow_collinear=True)
    moved = [step1.apply_to_pose(kf.pose) for kf in frag.keyframes]
    assert max(np.linalg.norm(m.t - p.t) for m, p in zip(moved, implied)) < 1e-9
    assert max(rotation_angle(p.inverse() @ m) for m, p in zip(moved, implied)) == pytest.approx(math.radians(20), abs=1e-9)

    align_fragment(frag, traj, T)
    assert max(rotation_angle(p.inverse() @ kf.pose) for kf, p in zip(frag.keyframes, implied)) < 1e-8


def test_align_needs_three_keyframes():
    frag, traj, T = world_fragment(n=2)
    with pytest.raises(InsufficientSupportError):
        align_fragment(frag, traj, T)
    assert not frag.aligned


def test_step_one_scale_independent_of_axis_length(clean):
    scales = []
    for length in (0.1, 1.0, 7.5):
        frag = copy.deepcopy(clean.fragments[1])
        bootstrap_scale(frag, clean.trajectory, clean.extrinsic_prior)
        rescale_full_distance(frag, clean.trajectory, clean.extrinsic_prior)
        scales.append(align_fragment(frag, clean.trajectory, clean.extrinsic_prior, axis_length=length).similarity.scale)
    assert scales[0] == scales[1] == scales[2]


def test_zero_noise_alignment_is_exact(clean):
    reps = align_all(clean.fragments, clean.trajectory, clean.extrinsic_prior, AlignmentOptions())
    assert all(r.status == "aligned" for r in reps)
    for frag in clean.fragments:
        for kf in frag.keyframes:
            truth = clean.truth.keyframe_poses[kf.id]
            assert np.linalg.norm(kf.pose.t - truth.t) < 1e-6
            assert rotation_angle(truth.inverse() @ kf.pose) < 1e-6


def test_alignment_invariant_to_initial_similarity(clean, rng):
    base = to_world(copy.deepcopy(clean.fragments[2]), clean)
    results = []
    for _ in range(2):
        frag = copy.deepcopy(base)
        sim = SimilarityTransform(rng.uniform(0.2, 5), Pose.from_rt(so3_exp(rng.normal(size=3))), rng.normal(size=3) * 10)
        for kf in frag.keyframes:
            kf.pose = sim.apply_to_pose(kf.pose)
        for lm in frag.landmarks.values():
            lm.position = sim.apply(lm.position)
        align_all([frag], clean.trajectory, clean.extrinsic_prior, AlignmentOptions())
        results.append(frag)
    a, b = results
    assert max(np.linalg.norm(x.pose.t - y.pose.t) for x, y in zip(a.keyframes, b.keyframes)) < 1e-8
    assert max(rotation_angle(x.pose.inverse() @ y.pose) for x, y in zip(a.keyframes, b.keyframes)) < 1e-8


def test_align_all_excludes_failures(clean):
    frags = copy.deepcopy(clean.fragments)
    frags[0].keyframes = frags[0].keyframes[:1]
    reps = align_all(frags, clean.trajectory, clean.extrinsic_prior, AlignmentOptions())
    assert reps[0].status == "excluded" and frags[0].excluded
    assert "fragment 0" in reps[0].error
    assert all(r.status == "aligned" for r in reps[1:])


def test_align_all_with_executor_matches_serial(clean):
    from concurrent.futures import ThreadPoolExecutor

    a, b = copy.deepcopy(clean.fragments), copy.deepcopy(clean.fragments)
    ra = align_all(a, clean.trajectory, clean.extrinsic_prior, AlignmentOptions())
    with ThreadPoolExecutor(4) as ex:
        rb = align_all(b, clean.trajectory, clean.extrinsic_prior, AlignmentOptions(), ex)
    assert [r.to_dict() for r in ra] == [r.to_dict() for r in rb]
    for fa, fb in zip(a, b):
        for x, y in zip(fa.keyframes, fb.keyframes):
            assert np.array_equal(x.pose.t, y.pose.t)


# --- constant-velocity registration --------------------------------------------------


def test_registration_zero_velocity():
    p = se3_exp([0.1, 0.2, 0.3, 1, 2, 3])
    reg = register_submap_constant_velocity([(0.0, p), (0.1, p)], 0.05, 30)
    assert reg.registered and reg.seed.allclose(p, atol=1e-12)


def test_registration_constant_velocity():
    xi = np.array([0.02, -0.01, 0.05, 0.3, 0.1, -0.05])
    start = se3_exp([0.3, 0.1, -0.2, 1, 1, 1])
    motion = lambda t: start @ se3_exp(xi * t)  # noqa: E731
    tail = [(t, motion(t)) for t in (0.0, 1 / 60, 2 / 60)]
    reg = register_submap_constant_velocity(tail, 0.1, 30)
    truth = motion(2 / 60 + 0.1)
    assert reg.registered
    assert np.abs(reg.seed.matrix() - truth.matrix()).max() < 1e-9


def test_registration_gap_too_long():
    p = Pose.identity()
    reg = register_submap_constant_velocity([(0.0, p), (0.1, p)], 3.5, 30)
    assert not reg.registered and reg.seed is None


def test_registration_needs_two_samples():
    with pytest.raises(AlignmentError):
        register_submap_constant_velocity([(0.0, Pose.identity())], 0.1, 30)
