import numpy as np
import pytest

from hoikit.errors import DivergedLoss, InsufficientData, ShapeMismatch
from hoikit.fit import (JointOptions, fit_joint_hoi, fit_object_track, fit_poses, initial_track,
                        running_min, track_positions, write_trace_csv)
from hoikit.skeleton import AvatarRig, lbs_deform
from hoikit.spline import ChsTrack, TimeGrid
from hoikit.synth import SceneConfig, generate_scene

FAST = dict(pose_iters=60, object_iters=60, hoi_iters=5)


def gen_track(rng, grid, n=3):
    return ChsTrack.from_positions(rng.normal(0, 0.5, (n, grid.n_keys, 3)),
                                   rng.normal(0, 0.2, (n, grid.n_keys, 3)))


def test_zero_iterations_returns_init(rng):
    g = TimeGrid.from_stride(17, 4)
    obs = track_positions(gen_track(rng, g), g)
    fit = fit_object_track(obs, g, iters=0)
    init = initial_track(np.swapaxes(obs, 0, 1), g, np.arange(17))
    assert fit.trace == []
    assert np.array_equal(fit.track.m, init.m) and np.array_equal(fit.track.tau, init.tau)
    assert np.array_equal(fit.track.m[:, 2], obs[8])


def test_noiseless_recovery_single_gaussian(rng):
    g = TimeGrid.from_stride(17, 4)
    tr = gen_track(rng, g, 1)
    obs = track_positions(tr, g)[:, 0]
    fit = fit_object_track(obs, g, iters=1500)
    assert fit.track.m.shape == (g.n_keys, 3)
    pred = track_positions(fit.track, g)
    assert np.sqrt(np.mean(np.sum((pred - obs) ** 2, -1))) < 1e-3
    assert fit.trace[-1] < fit.trace[0]


def test_insufficient_and_diverged(rng):
    g = TimeGrid.from_stride(17, 4)
    with pytest.raises(InsufficientData):
        fit_object_track(rng.normal(size=(4, 3)), g, frames=[0, 1, 2, 3])
    with pytest.raises(DivergedLoss), np.errstate(all="ignore"):
        fit_object_track(rng.normal(size=(17, 3)) * 1e150, g, iters=50, step=1e160)


def test_chamfer_term_runs(rng):
    g = TimeGrid.from_stride(9, 4)
    obs = track_positions(gen_track(rng, g, 2), g)
    fit = fit_object_track(obs, g, iters=20, points=obs, chamfer_weight=0.5)
    assert len(fit.trace) == 20 and np.all(np.isfinite(fit.trace))


def test_pose_fit_noiseless():
    s = generate_scene(SceneConfig(noise=0.0, n_frames=9, key_stride=4), 1)
    p = fit_poses(s.obs_human, s.rig, s.skeleton, iters=2000)
    rig = AvatarRig(s.rig.P_c, s.rig.W, p.alpha)
    pts = lbs_deform(rig, s.skeleton, p.theta).data
    assert np.sqrt(np.mean(np.sum((pts - s.obs_human) ** 2, -1))) < 1e-3
    assert abs(p.alpha - 1.0) < 1e-3


def test_running_min_and_trace_csv(tmp_path):
    assert list(running_min([3.0, 1.0, 2.0])) == [3.0, 1.0, 1.0]
    p = tmp_path / "t.csv"
    write_trace_csv(p, {"object": [3.0, 1.0, 2.0]})
    assert p.read_text().splitlines()[-1] == "object,2,2,1"


@pytest.fixture(scope="module")
def small_scene():
    return generate_scene(SceneConfig(n_frames=17), 2)


def test_frozen_zero_heads_reproduce_baseline(small_scene):
    r = fit_joint_hoi(small_scene, JointOptions(heads="zero", train_heads=False, **FAST))
    assert r.phase == "hoi"
    assert np.array_equal(r.final.human, r.baseline.human)
    assert np.array_equal(r.final.objects, r.baseline.objects)
    assert r.report["final"] == r.report["baseline"]


def test_masked_scene_keeps_residuals_zero():
    s = generate_scene(SceneConfig(n_frames=17, far_object=True), 0)
    r = fit_joint_hoi(s, JointOptions(**FAST))
    assert np.abs(r.final.objects - r.baseline.objects).max() < 1e-6
    assert np.array_equal(r.final.theta, r.baseline.theta)


def test_joint_fit_deterministic(small_scene):
    a = fit_joint_hoi(small_scene, JointOptions(**FAST))
    b = fit_joint_hoi(small_scene, JointOptions(**FAST))
    assert np.array_equal(a.final.human, b.final.human)
    assert np.array_equal(a.final.objects, b.final.objects)
    assert a.traces == b.traces


def test_no_hoi_is_baseline(small_scene):
    r = fit_joint_hoi(small_scene, JointOptions(use_hoi=False, **FAST))
    assert r.phase == "baseline" and r.module is None and "hoi" not in r.traces


def test_own_values_needs_matching_counts(small_scene):
    with pytest.raises(ShapeMismatch):
        fit_joint_hoi(small_scene, JointOptions(values="own", **FAST))
