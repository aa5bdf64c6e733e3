"""Human-object interaction block: object motion tokens, the pelvis distance
mask, masked mutual cross-attention and the residual heads that correct the
avatar pose and object Gaussian means."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import DimensionMismatch, PartitionMismatch, ShapeMismatch
from .skeleton import AvatarRig, Skeleton, lbs_deform
from .spline import ChsTrack, TimeGrid, chs_eval, interp_values, normalize_time

EMBED_DIM = 29
OBJECT_DIM = 32
HUMAN_DIM = 96
ATTN_DIM = 32
N_PARTS = 16


@dataclass
class ObjectFeatureTrack:
    """Per-Gaussian keyframe velocities (frozen) and learnable embeddings."""

    tau: np.ndarray          # (N, K, 3)
    embed: nn.Tensor         # (N, K, 29)
    mlp: nn.Mlp              # 33 -> hidden -> 32

    @classmethod
    def init(cls, tau, rng: np.random.Generator, embed_dim: int = EMBED_DIM,
             hidden: int = 64, out_dim: int = OBJECT_DIM) -> "ObjectFeatureTrack":
        tau = np.asarray(tau, dtype=np.float64)
        embed = nn.param(rng.normal(0.0, 0.1, size=tau.shape[:-1] + (embed_dim,)))
        mlp = nn.Mlp.init([tau.shape[-1] + embed_dim + 1, hidden, out_dim], rng)
        return cls(tau, embed, mlp)

    def parameters(self):
        return [self.embed] + self.mlp.parameters()

    def named_parameters(self):
        return {"embed": self.embed, **self.mlp.named_parameters("feat_mlp.")}


def object_features(oft: ObjectFeatureTrack, grid: TimeGrid, frames=None) -> nn.Tensor:
    """Tokens (F, N, 32): MLP([tau(t); e(t); t_n]) with (tau, e) Hermite-interpolated
    between keyframes using zero tangents."""
    frames = np.arange(grid.n_frames) if frames is None else np.asarray(frames, dtype=np.float64)
    for t in frames:
        normalize_time(float(t), grid)
    if oft.tau.shape[-2] != grid.n_keys:
        raise DimensionMismatch("feature track and grid disagree on keyframe count")
    keyvals = nn.concat([nn.Tensor(oft.tau), oft.embed], axis=-1)         # (N, K, 32)
    interp = nn.swapaxes(interp_values(keyvals, grid, frames), 0, 1)      # (F, N, 32)
    F, N = interp.shape[0], interp.shape[1]
    tn = np.broadcast_to((frames / (grid.n_frames - 1))[:, None, None], (F, N, 1))
    return oft.mlp(nn.concat([interp, nn.Tensor(tn)], axis=-1))


def object_feature(oft: ObjectFeatureTrack, t: float, grid: TimeGrid) -> nn.Tensor:
    """Tokens (N, 32) at a single frame."""
    return object_features(oft, grid, [t])[0]


def distance_mask(object_centers, pelvis, d_th: float, n_human: int = N_PARTS) -> np.ndarray:
    """Additive bias (..., M, N): -inf for objects at distance >= d_th from the
    pelvis, 0 otherwise. Identical for every human row."""
    c = np.asarray(nn.value(object_centers), dtype=np.float64)
    p = np.asarray(nn.value(pelvis), dtype=np.float64)
    dist = np.linalg.norm(c - p[..., None, :], axis=-1)
    col = np.where(dist >= d_th, -np.inf, 0.0)
    return np.repeat(col[..., None, :], n_human, axis=-2)


@dataclass
class HoiModule:
    Wq_h: nn.Tensor
    Wk_h: nn.Tensor
    Wv_h: nn.Tensor
    Wq_o: nn.Tensor
    Wk_o: nn.Tensor
    Wv_o: nn.Tensor
    mlp_hum: nn.Mlp
    mlp_obj: nn.Mlp
    d_th: float
    values: str = "cross"    # "cross": other entity's values; "own": query entity's values

    @classmethod
    def init(cls, n_residual_joints: int, d_th: float, rng: np.random.Generator,
             human_dim: int = HUMAN_DIM, obj_dim: int = OBJECT_DIM, d: int = ATTN_DIM,
             n_parts: int = N_PARTS, hidden: int = 64, values: str = "cross",
             heads: str = "zero_last") -> "HoiModule":
        """Residual heads are bias-free so a zero attention output means a zero
        correction. ``heads``: "zero_last" (trainable, outputs 0 at init),
        "zero" (all weights 0) or "random"."""
        def proj(fi):
            b = 1.0 / math.sqrt(fi)
            return nn.param(rng.uniform(-b, b, size=(fi, d)))

        Ws = [proj(human_dim) for _ in range(3)] + [proj(obj_dim) for _ in range(3)]
        hum_w = [n_parts * d, hidden, 3 * n_residual_joints]
        obj_w = [d, hidden, 3]
        if heads == "zero":
            mh, mo = nn.Mlp.zeros(hum_w, bias=False), nn.Mlp.zeros(obj_w, bias=False)
        else:
            zl = heads == "zero_last"
            mh = nn.Mlp.init(hum_w, rng, bias=False, zero_last=zl)
            mo = nn.Mlp.init(obj_w, rng, bias=False, zero_last=zl)
        return cls(*Ws, mh, mo, float(d_th), values)

    @property
    def d(self) -> int:
        return self.Wq_h.shape[1]

    def projections(self):
        return [self.Wq_h, self.Wk_h, self.Wv_h, self.Wq_o, self.Wk_o, self.Wv_o]

    def parameters(self):
        return self.projections() + self.mlp_hum.parameters() + self.mlp_obj.parameters()

    def named_parameters(self):
        names = ["Wq_h", "Wk_h", "Wv_h", "Wq_o", "Wk_o", "Wv_o"]
        out = dict(zip(names, self.projections()))
        out.update(self.mlp_hum.named_parameters("mlp_hum."))
        out.update(self.mlp_obj.named_parameters("mlp_obj."))
        return out

    def to_json(self):
        return {"d_th": self.d_th, "values": self.values, "d": self.d,
                "params": nn.params_to_json(self.named_parameters())}

    @classmethod
    def from_json(cls, d):
        p = nn.params_from_json(d["params"])

        def mlp(prefix):
            n = sum(1 for k in p if k.startswith(prefix + "w"))
            return nn.Mlp([p[f"{prefix}w{i}"] for i in range(n)],
                          [p.get(f"{prefix}b{i}") for i in range(n)])

        return cls(p["Wq_h"], p["Wk_h"], p["Wv_h"], p["Wq_o"], p["Wk_o"], p["Wv_o"],
                   mlp("mlp_hum."), mlp("mlp_obj."), float(d["d_th"]), d.get("values", "cross"))


ATTN_BLOCK = 256


def mutual_attention(F_h, F_o, B, module: HoiModule, return_weights: bool = False):
    """Both-direction masked cross-attention.

    ``F_h`` (..., M, Dh), ``F_o`` (..., N, Do), ``B`` (..., M, N). Logits are
    scaled by 1/sqrt(d); -inf entries of ``B`` get exactly zero weight and a
    row with nothing left yields a zero output row.
    """
    F_h, F_o = nn.as_tensor(F_h), nn.as_tensor(F_o)
    B = np.asarray(B, dtype=np.float64)
    M, N = F_h.shape[-2], F_o.shape[-2]
    if B.shape[-2:] != (M, N):
        raise ShapeMismatch(f"mask is {B.shape[-2:]}, expected {(M, N)}")
    if F_h.shape[-1] != module.Wq_h.shape[0] or F_o.shape[-1] != module.Wq_o.shape[0]:
        raise ShapeMismatch("token widths do not match the projections")
    if module.values == "own" and M != N:
        raise ShapeMismatch("own-entity values need as many object as human tokens")
    keep = np.isfinite(B)
    bias = np.where(keep, B, 0.0)
    scale = 1.0 / math.sqrt(module.d)
    Q_h, K_h, V_h = (nn.matmul(F_h, W) for W in (module.Wq_h, module.Wk_h, module.Wv_h))
    if module.values == "cross" and N > ATTN_BLOCK:
        out_h, out_o, A_h, A_o = _cross_blocked(F_o, Q_h, K_h, V_h, keep, bias, scale, module)
    else:
        Q_o, K_o, V_o = (nn.matmul(F_o, W) for W in (module.Wq_o, module.Wk_o, module.Wv_o))
        # the 1/sqrt(d) factor goes on the M-row side so no extra pass over N-sized arrays
        logits_h = nn.matmul(Q_h * scale, nn.swapaxes(K_o, -1, -2))
        logits_o = nn.matmul(Q_o, nn.swapaxes(K_h * scale, -1, -2))
        if np.any(bias):
            logits_h = logits_h + bias
            logits_o = logits_o + np.swapaxes(bias, -1, -2)
        A_h = nn.masked_softmax(logits_h, keep)
        A_o = nn.masked_softmax(logits_o, np.swapaxes(keep, -1, -2))
        if module.values == "own":
            out_h, out_o = nn.matmul(A_h, V_h), nn.matmul(A_o, V_o)
        else:
            out_h, out_o = nn.matmul(A_h, V_o), nn.matmul(A_o, V_h)
    if return_weights:
        return out_h, out_o, A_h, A_o
    return out_h, out_o


def _cross_blocked(F_o, Q_h, K_h, V_h, keep, bias, scale, module):
    # Object tokens in tiles of ATTN_BLOCK rows: every temporary stays small, so
    # cost tracks M*N instead of jumping when arrays outgrow the allocator's arenas.
    N = F_o.shape[-2]
    Qs, KhT = Q_h * scale, nn.swapaxes(K_h * scale, -1, -2)
    biased = bool(np.any(bias))
    keep_t, bias_t = np.swapaxes(keep, -1, -2), np.swapaxes(bias, -1, -2)
    cuts = [(s, min(s + ATTN_BLOCK, N)) for s in range(0, N, ATTN_BLOCK)]
    logits_h, V_o, A_o, out_o = [], [], [], []
    for s, e in cuts:
        Fb = nn.getitem(F_o, (Ellipsis, slice(s, e), slice(None)))
        Q_b, K_b, V_b = (nn.matmul(Fb, W) for W in (module.Wq_o, module.Wk_o, module.Wv_o))
        lh = nn.matmul(Qs, nn.swapaxes(K_b, -1, -2))
        lo = nn.matmul(Q_b, KhT)
        if biased:
            lh = lh + bias[..., s:e]
            lo = lo + bias_t[..., s:e, :]
        a_o = nn.masked_softmax(lo, keep_t[..., s:e, :])
        logits_h.append(lh)
        V_o.append(V_b)
        A_o.append(a_o)
        out_o.append(nn.matmul(a_o, V_h))
    A_h = nn.masked_softmax(nn.concat(logits_h, axis=-1), keep)
    out_h = None
    for (s, e), V_b in zip(cuts, V_o):
        part = nn.matmul(nn.getitem(A_h, (Ellipsis, slice(s, e))), V_b)
        out_h = part if out_h is None else out_h + part
    return out_h, nn.concat(out_o, axis=-2), A_h, nn.concat(A_o, axis=-2)


@dataclass
class HoiOutput:
    theta_final: nn.Tensor
    human_points: nn.Tensor
    object_points: nn.Tensor
    dtheta: nn.Tensor
    dG: nn.Tensor


def residual_selector(skel: Skeleton) -> np.ndarray:
    """(J, R) 0/1 matrix scattering per-partition residuals into full poses."""
    joints = skel.partition_joints
    S = np.zeros((skel.n_joints, len(joints)))
    S[joints, np.arange(len(joints))] = 1.0
    return S


def apply_residuals(Fh_att, Fo_att, module: HoiModule, rig: AvatarRig, skel: Skeleton,
                    theta, object_base) -> HoiOutput:
    """theta + MLP_hum(flattened human tokens) and M(t) + MLP_obj(object tokens)."""
    Fh_att, Fo_att = nn.as_tensor(Fh_att), nn.as_tensor(Fo_att)
    n_res = len(skel.partition_joints)
    if module.mlp_hum.widths[-1] != 3 * n_res:
        raise PartitionMismatch(f"human head outputs {module.mlp_hum.widths[-1]} values, "
                                f"skeleton partition needs {3 * n_res}")
    lead = Fh_att.shape[:-2]
    flat = nn.reshape(Fh_att, lead + (Fh_att.shape[-2] * Fh_att.shape[-1],))
    dtheta = nn.reshape(module.mlp_hum(flat), lead + (n_res, 3))
    theta_final = nn.as_tensor(theta) + nn.matmul(nn.Tensor(residual_selector(skel)), dtheta)
    human = lbs_deform(rig, skel, theta_final)
    dG = module.mlp_obj(Fo_att)
    return HoiOutput(theta_final, human, nn.as_tensor(object_base) + dG, dtheta, dG)


def regress_and_apply(Fh_att, Fo_att, module: HoiModule, rig: AvatarRig, skel: Skeleton,
                      theta, track: ChsTrack, t: float, grid: TimeGrid) -> HoiOutput:
    """Single-frame residual application on top of the spline position at ``t``."""
    return apply_residuals(Fh_att, Fo_att, module, rig, skel, theta, chs_eval(track, t, grid))
