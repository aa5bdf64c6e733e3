"""Finite-difference gradient suites shared by the CLI and the test-suite."""
from __future__ import annotations

import numpy as np

from . import nn
from .hexplane import HexPlaneGrid, plane_query
from .hoi import HoiModule, apply_residuals, mutual_attention
from .skeleton import AvatarRig, default_skeleton, lbs_deform
from .spline import TimeGrid, chs_eval_frames

GRAD_TOL = 1e-4


def _chs(rng):
    grid = TimeGrid(13, 4)
    m = nn.param(rng.normal(size=(2, grid.n_keys, 3)))
    tau = nn.param(rng.normal(size=(2, grid.n_keys, 3)))
    target = rng.normal(size=(2, grid.n_frames, 3))

    def f():
        d = chs_eval_frames(m, tau, grid) - target
        return nn.mean(nn.tsum(d * d, axis=-1))

    return f, [m, tau]


def _rig(rng, n=14):
    skel = default_skeleton()
    P = skel.rest_positions()[rng.integers(0, skel.n_joints, n)] + rng.normal(0, 0.05, (n, 3))
    W = rng.uniform(0.1, 1.0, (n, skel.n_joints))
    return skel, AvatarRig(P, W / W.sum(axis=1, keepdims=True))


def _lbs(rng):
    skel, rig = _rig(rng)
    theta = nn.param(rng.normal(0, 0.6, (skel.n_joints, 3)))
    alpha = nn.param(np.array(1.1))
    dP = nn.param(rng.normal(0, 0.02, rig.P_c.shape))
    target = rng.normal(size=rig.P_c.shape)

    def f():
        d = lbs_deform(rig, skel, theta, alpha=alpha, dP=dP) - target
        return nn.mean(nn.tsum(d * d, axis=-1))

    return f, [theta, alpha, dP]


def _hexplane(rng):
    g = HexPlaneGrid.init([[-1, 1], [-1, 1], [-1, 1]], resolution=5, channels=3, rng=rng)
    pts = rng.uniform(-1.2, 1.2, (20, 3))
    t = rng.uniform(0, 1, 20)
    w = rng.normal(size=(20, 18))

    def f():
        q = plane_query(g, pts, t)
        return nn.tsum(q * q * w)

    return f, [g.planes]


def _attention(rng):
    skel, rig = _rig(rng, 10)
    n_parts, n_obj = 4, 5
    mod = HoiModule.init(len(skel.partition_joints), 1.0, rng, human_dim=7, obj_dim=6, d=4,
                         n_parts=n_parts, hidden=8, heads="random")
    F_h = rng.normal(size=(n_parts, 7))
    F_o = rng.normal(size=(n_obj, 6))
    B = np.zeros((n_parts, n_obj))
    B[:, 1] = -np.inf
    theta = rng.normal(0, 0.3, (skel.n_joints, 3))
    base = rng.normal(size=(n_obj, 3))
    wh, wo = rng.normal(size=(rig.n_points, 3)), rng.normal(size=(n_obj, 3))

    def f():
        oh, oo = mutual_attention(F_h, F_o, B, mod)
        out = apply_residuals(oh, oo, mod, rig, skel, theta, base)
        return nn.tsum(out.human_points * wh) + nn.tsum(out.object_points * wo)

    return f, mod.parameters()


SUITES = {"chs": _chs, "lbs": _lbs, "hexplane": _hexplane, "attention": _attention}


def run_suite(name: str, seed: int = 0, max_entries: int | None = 40) -> float:
    f, params = SUITES[name](np.random.default_rng(seed))
    return nn.grad_check(f, params, eps=1e-6, max_entries=max_entries, seed=seed)


def run_all(seed: int = 0, max_entries: int | None = 40) -> dict:
    return {name: run_suite(name, seed, max_entries) for name in SUITES}
