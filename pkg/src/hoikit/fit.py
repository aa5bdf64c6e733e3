"""Optimization loops: per-Gaussian spline fitting, LBS pose fitting, and the
two-phase joint fit that switches on the interaction module."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .errors import DivergedLoss, InsufficientData, InvalidConfig, ShapeMismatch
from .hexplane import HexPlaneGrid, padded_bounds, part_features
from .hoi import HoiModule, ObjectFeatureTrack, apply_residuals, distance_mask, mutual_attention, object_features
from .metrics import LossWeights, cd_best, cd_best_tensor, chamfer_tensor, total_loss
from .skeleton import AvatarRig, Skeleton, forward_kinematics, lbs_deform
from .spline import ChsTrack, TimeGrid, chs_eval_frames, finite_difference_tangents, hermite_matrices


def _cosine_lr(base, it, iters, floor=0.01):
    if iters <= 1:
        return base
    return base * (floor + (1 - floor) * 0.5 * (1 + math.cos(math.pi * it / (iters - 1))))


def _check_finite(loss, where):
    v = float(nn.value(loss))
    if not math.isfinite(v):
        raise DivergedLoss(f"{where}: loss became non-finite")
    return v


def running_min(trace):
    """Monotone envelope of a loss trace, used for reporting."""
    return np.minimum.accumulate(np.asarray(trace, dtype=np.float64)) if len(trace) else np.zeros(0)


def write_trace_csv(path, traces: dict):
    """Columns: phase, iteration, loss, best_loss."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["phase", "iteration", "loss", "best_loss"])
        for phase, tr in traces.items():
            for i, (v, b) in enumerate(zip(tr, running_min(tr))):
                w.writerow([phase, i, f"{v:.12g}", f"{b:.12g}"])


# ---- object tracks ----------------------------------------------------------------

@dataclass
class TrackFit:
    track: ChsTrack
    trace: list
    frames: np.ndarray     # training frames


def initial_track(obs, grid: TimeGrid, frames) -> ChsTrack:
    """m_k from the observation at (or nearest to) each keyframe, tau_k by central
    differences of those positions."""
    obs = np.asarray(obs, dtype=np.float64)            # (N, F_obs, 3)
    frames = np.asarray(frames)
    keys = grid.key_frames
    nearest = np.array([np.argmin(np.abs(frames - k)) for k in keys])
    m = obs[:, nearest, :]
    return ChsTrack.from_positions(m, finite_difference_tangents(m))


def fit_object_track(observations, grid: TimeGrid, iters: int = 2000, step: float = 0.01,
                     seed: int = 0, frames=None, points=None, chamfer_weight: float = 0.0,
                     init: ChsTrack | None = None) -> TrackFit:
    """Fit keyframe positions and tangents of one track per Gaussian.

    ``observations`` is (F, 3) or (F, N, 3) over ``frames`` (default all grid
    frames). Loss is the mean over frames and Gaussians of the squared 3D error,
    plus ``chamfer_weight`` times the mean per-frame Chamfer distance to
    ``points`` (F, P, 3) when given. Adam with a cosine step decay; no
    randomness is used, ``seed`` is accepted for interface symmetry.
    """
    del seed
    obs = np.asarray(observations, dtype=np.float64)
    single = obs.ndim == 2
    if single:
        obs = obs[:, None, :]
    if obs.ndim != 3 or obs.shape[-1] != 3:
        raise InvalidConfig(f"observations must be (F, 3) or (F, N, 3), got {obs.shape}")
    frames = np.arange(grid.n_frames) if frames is None else np.asarray(frames)
    if len(frames) != len(obs):
        raise InvalidConfig("one observation per listed frame")
    if len(np.unique(frames)) < grid.n_keys:
        raise InsufficientData(f"need >= {grid.n_keys} observed frames, got {len(np.unique(frames))}")
    target = np.swapaxes(obs, 0, 1)                     # (N, F, 3)
    track = initial_track(target, grid, frames) if init is None else init.copy()
    m, tau = nn.param(track.m), nn.param(track.tau)
    opt = nn.Adam([m, tau], lr=step)
    Bm, Bt = (nn.Tensor(B) for B in hermite_matrices(grid, frames))
    pts = None if points is None else np.asarray(points, dtype=np.float64)
    trace = []
    for it in range(iters):
        with nn.Tape() as tape:
            pred = nn.matmul(Bm, m) + nn.matmul(Bt, tau)              # (N, F, 3)
            diff = pred - target
            loss = nn.mean(nn.tsum(diff * diff, axis=-1))
            if pts is not None and chamfer_weight > 0:
                loss = loss + chamfer_weight * nn.mean(chamfer_tensor(nn.swapaxes(pred, 0, 1), pts))
            trace.append(_check_finite(loss, "fit_object_track"))
            grads = tape.backward(loss, [m, tau])
        opt.lr = _cosine_lr(step, it, iters)
        opt.step(grads)
    out = ChsTrack(m.data, tau.data, track.q, track.opacity, track.scale, track.color)
    if single:
        out = ChsTrack(out.m[0], out.tau[0], out.q[0], out.opacity[0], out.scale[0], out.color[0])
    return TrackFit(out, trace, frames)


def track_positions(track: ChsTrack, grid: TimeGrid, frames=None) -> np.ndarray:
    """(F, N, 3) positions for a multi-Gaussian track, (F, 3) for a single one."""
    pos = chs_eval_frames(nn.Tensor(track.m), nn.Tensor(track.tau), grid, frames).data
    return np.swapaxes(pos, 0, 1) if pos.ndim == 3 else pos


# ---- poses ------------------------------------------------------------------------

@dataclass
class PoseFit:
    theta: np.ndarray      # (T, J, 3)
    alpha: float
    trace: list


def fit_poses(observations, rig: AvatarRig, skel: Skeleton, iters: int = 400, step: float = 0.05,
              fit_alpha: bool = True) -> PoseFit:
    """Per-frame joint rotations and a shared scale alpha against observed avatar points (T, V, 3)."""
    obs = np.asarray(observations, dtype=np.float64)
    if obs.ndim != 3 or obs.shape[1:] != (rig.n_points, 3):
        raise InvalidConfig(f"avatar observations must be (T, {rig.n_points}, 3)")
    theta = nn.param(np.zeros((len(obs), skel.n_joints, 3)))
    log_a = nn.param(np.array(math.log(rig.alpha)))
    params = [theta, log_a] if fit_alpha else [theta]
    opt = nn.Adam(params, lr=step)
    trace = []
    for it in range(iters):
        with nn.Tape() as tape:
            pts = lbs_deform(rig, skel, theta, alpha=nn.exp(log_a))
            diff = pts - obs
            loss = nn.mean(nn.tsum(diff * diff, axis=-1))
            trace.append(_check_finite(loss, "fit_poses"))
            grads = tape.backward(loss, params)
        opt.lr = _cosine_lr(step, it, iters)
        opt.step(grads)
    return PoseFit(theta.data.copy(), float(math.exp(log_a.data)), trace)


# ---- joint fit --------------------------------------------------------------------

@dataclass(frozen=True)
class JointOptions:
    pose_iters: int = 600
    pose_step: float = 0.1
    object_iters: int = 600
    object_step: float = 0.01
    hoi_iters: int = 150
    hoi_step: float = 3e-3
    contact_weight: float = 0.005
    use_hoi: bool = True
    values: str = "cross"
    heads: str = "zero_last"        # "zero_last" | "zero" | "random"
    train_heads: bool = True        # False freezes the residual heads
    grid_resolution: int = 32
    grid_channels: int = 16
    seed: int = 0

    def validate(self):
        if self.values not in ("cross", "own"):
            raise InvalidConfig("values must be 'cross' or 'own'")
        if self.heads not in ("zero_last", "zero", "random"):
            raise InvalidConfig("heads must be 'zero_last', 'zero' or 'random'")
        if min(self.pose_iters, self.object_iters, self.hoi_iters) < 0:
            raise InvalidConfig("iteration counts must be >= 0")


@dataclass
class PhaseOutput:
    theta: np.ndarray            # (T, J, 3)
    human: np.ndarray            # (T, V, 3)
    objects: np.ndarray          # (T, N, 3)


@dataclass
class JointFitResult:
    options: JointOptions
    alpha: float
    track: ChsTrack
    baseline: PhaseOutput
    final: PhaseOutput
    module: HoiModule | None
    grid: HexPlaneGrid | None
    traces: dict
    features: ObjectFeatureTrack | None = None
    report: dict = field(default_factory=dict)

    @property
    def phase(self) -> str:
        return "hoi" if self.module is not None else "baseline"


def contact_cd_best(objects, human, hands: dict, contacts) -> list:
    return [cd_best(objects[f], human[f, hands["left"]], human[f, hands["right"]]) for f in contacts]


def _rmse(a, b):
    return float(np.sqrt(np.mean(np.sum((np.asarray(a) - np.asarray(b)) ** 2, axis=-1))))


def phase_metrics(out: PhaseOutput, scene) -> dict:
    cds = contact_cd_best(out.objects, out.human, scene.hands, scene.contacts)
    return {
        "contact_cd_best_median": float(np.median(cds)) if cds else None,
        "contact_cd_best_mean": float(np.mean(cds)) if cds else None,
        "human_rmse": _rmse(out.human, scene.gt_human_points()),
        "object_rmse": _rmse(out.objects, scene.gt_object_points()),
    }


class HoiStage:
    """Builds the frozen inputs of the interaction module for a scene and runs it."""

    def __init__(self, scene, theta, alpha, track: ChsTrack, opts: JointOptions):
        rng = np.random.default_rng(opts.seed)
        self.scene, self.opts = scene, opts
        self.rig = AvatarRig(scene.rig.P_c, scene.rig.W, alpha, scene.rig.dP, scene.rig.color,
                             scene.rig.opacity, scene.rig.rotation, scene.rig.scale)
        self.theta = theta
        grid = scene.grid
        T = grid.n_frames
        self.human0 = lbs_deform(self.rig, scene.skeleton, theta).data
        self.obj0 = track_positions(track, grid)                            # (T, N, 3)
        bounds = padded_bounds(np.concatenate([self.human0.reshape(-1, 3), self.obj0.reshape(-1, 3)]))
        self.grid = HexPlaneGrid.init(bounds, opts.grid_resolution, opts.grid_channels, rng)
        tn = np.arange(T) / (T - 1)
        self.F_h = np.stack([part_features(self.grid, self.human0[f], scene.partition, tn[f]).data
                             for f in range(T)])                             # (T, P, 6C)
        _, joint_t = forward_kinematics(scene.skeleton, theta)
        pelvis = alpha * joint_t.data[:, 0]
        self.B = distance_mask(self.obj0, pelvis, scene.d_th, self.F_h.shape[1])
        self.features = ObjectFeatureTrack.init(track.tau, rng)
        self.module = HoiModule.init(len(scene.skeleton.partition_joints), scene.d_th, rng,
                                     human_dim=self.F_h.shape[-1], n_parts=self.F_h.shape[1],
                                     values=opts.values, heads=opts.heads)

    def parameters(self):
        ps = self.module.projections() + self.features.parameters()
        if self.opts.train_heads:
            ps += self.module.mlp_hum.parameters() + self.module.mlp_obj.parameters()
        return ps

    def forward(self):
        F_o = object_features(self.features, self.scene.grid)
        out_h, out_o = mutual_attention(self.F_h, F_o, self.B, self.module)
        return apply_residuals(out_h, out_o, self.module, self.rig, self.scene.skeleton,
                               self.theta, self.obj0)


def fit_joint_hoi(scene, options: JointOptions = JointOptions()) -> JointFitResult:
    """Phase 1 fits the pose sequence and object tracks independently. Phase 2
    freezes them and trains the interaction module on the 3D terms of the
    composite loss plus a contact term over annotated frames."""
    opts = options
    opts.validate()
    grid = scene.grid
    if len(scene.obs_object) < grid.n_keys:
        raise InsufficientData("scene has fewer observed frames than keyframes")
    if opts.use_hoi and opts.values == "own" and scene.obs_object.shape[1] != scene.partition.n_parts:
        raise ShapeMismatch("own-entity values need as many object Gaussians as body parts")
    pose = fit_poses(scene.obs_human, scene.rig, scene.skeleton, opts.pose_iters, opts.pose_step)
    tfit = fit_object_track(scene.obs_object, grid, opts.object_iters, opts.object_step, opts.seed)
    rig1 = AvatarRig(scene.rig.P_c, scene.rig.W, pose.alpha, scene.rig.dP, scene.rig.color,
                     scene.rig.opacity, scene.rig.rotation, scene.rig.scale)
    human1 = lbs_deform(rig1, scene.skeleton, pose.theta).data
    baseline = PhaseOutput(pose.theta, human1, track_positions(tfit.track, grid))
    traces = {"pose": pose.trace, "object": tfit.trace}
    result = JointFitResult(opts, pose.alpha, tfit.track, baseline, baseline, None, None, traces)
    if opts.use_hoi:
        stage = HoiStage(scene, pose.theta, pose.alpha, tfit.track, opts)
        params = stage.parameters()
        opt = nn.Adam(params, lr=opts.hoi_step)
        weights = LossWeights()
        contacts = np.asarray(scene.contacts, dtype=np.int64)
        hl, hr = scene.hands["left"], scene.hands["right"]
        obs_all = np.concatenate([scene.obs_human, scene.obs_object], axis=1)
        trace = []
        for it in range(opts.hoi_iters if params else 0):
            with nn.Tape() as tape:
                out = stage.forward()
                dh = out.human_points - scene.obs_human
                do = out.object_points - scene.obs_object
                parts = {
                    "human": nn.mean(nn.tsum(dh * dh, axis=-1)),
                    "object": nn.mean(nn.tsum(do * do, axis=-1)),
                    "scene": nn.mean(chamfer_tensor(
                        nn.concat([out.human_points, out.object_points], axis=1), obs_all)),
                }
                loss = total_loss(parts, weights)
                if len(contacts) and opts.contact_weight > 0:
                    hum_c = nn.getitem(out.human_points, contacts)
                    cd = cd_best_tensor(nn.getitem(out.object_points, contacts),
                                        nn.getitem(hum_c, (slice(None), hl)),
                                        nn.getitem(hum_c, (slice(None), hr)))
                    loss = loss + opts.contact_weight * nn.mean(cd)
                trace.append(_check_finite(loss, "fit_joint_hoi"))
                grads = tape.backward(loss, params)
            opt.lr = _cosine_lr(opts.hoi_step, it, opts.hoi_iters)
            opt.step(grads)
        out = stage.forward()
        final = PhaseOutput(out.theta_final.data, out.human_points.data, out.object_points.data)
        traces["hoi"] = trace
        result = JointFitResult(opts, pose.alpha, tfit.track, baseline, final, stage.module,
                                stage.grid, traces, stage.features)
    result.report = {
        "options": asdict(opts),
        "phase": result.phase,
        "alpha": result.alpha,
        "baseline": phase_metrics(baseline, scene),
        "final": phase_metrics(result.final, scene),
        "final_losses": {k: (v[-1] if v else None) for k, v in traces.items()},
    }
    return result
