"""Six-plane spatiotemporal feature grid and per-body-part feature tokens."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import DimensionMismatch, EmptyPart, InvalidConfig

# (first axis, second axis) per plane; axes 0..3 = x, y, z, t
PLANES = ((0, 1), (0, 2), (1, 2), (0, 3), (1, 3), (2, 3))
PLANE_NAMES = ("xy", "xz", "yz", "xt", "yt", "zt")


@dataclass
class HexPlaneGrid:
    planes: nn.Tensor        # (6, r, r, C)
    bounds: np.ndarray       # (4, 2) lo/hi for x, y, z, t

    def __post_init__(self):
        if not isinstance(self.planes, nn.Tensor):
            self.planes = nn.param(self.planes)
        self.bounds = np.asarray(self.bounds, dtype=np.float64)
        s = self.planes.shape
        if len(s) != 4 or s[0] != 6 or s[1] != s[2] or s[1] < 2:
            raise DimensionMismatch(f"planes must be (6, r, r, C) with r >= 2, got {s}")
        if self.bounds.shape != (4, 2) or np.any(self.bounds[:, 1] <= self.bounds[:, 0]):
            raise InvalidConfig("bounds must be (4, 2) with hi > lo")

    @classmethod
    def init(cls, spatial_bounds, resolution: int = 32, channels: int = 16,
             rng: np.random.Generator | None = None, amplitude: float = 0.5) -> "HexPlaneGrid":
        rng = np.random.default_rng(0) if rng is None else rng
        bounds = np.vstack([np.asarray(spatial_bounds, dtype=np.float64), [[0.0, 1.0]]])
        planes = rng.uniform(-amplitude, amplitude, size=(6, resolution, resolution, channels))
        return cls(nn.param(planes), bounds)

    @property
    def resolution(self) -> int:
        return self.planes.shape[1]

    @property
    def channels(self) -> int:
        return self.planes.shape[3]

    @property
    def feature_dim(self) -> int:
        return 6 * self.channels

    def to_json(self):
        return {"resolution": self.resolution, "channels": self.channels,
                "bounds": self.bounds.tolist(), "planes": self.planes.data.tolist()}

    @classmethod
    def from_json(cls, d):
        planes = np.asarray(d["planes"], dtype=np.float64)
        if planes.shape != (6, d["resolution"], d["resolution"], d["channels"]):
            raise DimensionMismatch("plane array disagrees with its header")
        return cls(nn.param(planes), d["bounds"])


def padded_bounds(points, pad: float = 0.1) -> np.ndarray:
    """Axis-aligned (3, 2) bounds of ``points`` grown by ``pad`` of the extent per side."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    ext = np.maximum(hi - lo, 1e-6)
    return np.stack([lo - pad * ext, hi + pad * ext], axis=1)


def _cells(coord, lo, hi, r):
    g = np.clip((coord - lo) / (hi - lo) * (r - 1), 0.0, r - 1)
    i0 = np.minimum(np.floor(g), r - 2).astype(np.int64)
    return i0, g - i0


def plane_query(grid: HexPlaneGrid, points, t) -> nn.Tensor:
    """Bilinear lookup on all six planes, concatenated in PLANE_NAMES order.

    ``points`` is (..., 3) in scene units, ``t`` normalized time (scalar or
    broadcastable to the point axes). Out-of-bounds coordinates clamp to the
    border. Gradients flow to the plane values only.
    """
    pts = np.asarray(nn.value(points), dtype=np.float64)
    lead = pts.shape[:-1]
    P = pts.reshape(-1, 3)
    n = len(P)
    tt = np.broadcast_to(np.asarray(t, dtype=np.float64), lead).reshape(-1)
    coords = [P[:, 0], P[:, 1], P[:, 2], tt]
    r, C = grid.resolution, grid.channels
    G = grid.planes.data.reshape(6 * r * r, C)
    out = np.empty((n, 6 * C))
    taps = []
    for p, (a, b) in enumerate(PLANES):
        i0, fa = _cells(coords[a], grid.bounds[a, 0], grid.bounds[a, 1], r)
        j0, fb = _cells(coords[b], grid.bounds[b, 0], grid.bounds[b, 1], r)
        base = (p * r + i0) * r + j0
        idx = (base, base + r, base + 1, base + r + 1)
        ws = ((1 - fa) * (1 - fb), fa * (1 - fb), (1 - fa) * fb, fa * fb)
        acc = ws[0][:, None] * G[idx[0]]
        for w, ix in zip(ws[1:], idx[1:]):
            acc = acc + w[:, None] * G[ix]
        out[:, p * C:(p + 1) * C] = acc
        taps.append((idx, ws))

    def vjp(g):
        g = g.reshape(n, 6 * C)
        dG = np.zeros_like(G)
        for p, (idx, ws) in enumerate(taps):
            gp = g[:, p * C:(p + 1) * C]
            for w, ix in zip(ws, idx):
                np.add.at(dG, ix, w[:, None] * gp)
        return (dG.reshape(grid.planes.shape),)

    return nn.make(out.reshape(lead + (6 * C,)), (grid.planes,), vjp)


@dataclass
class PartPartition:
    parts: list   # list of index arrays

    def __post_init__(self):
        self.parts = [np.asarray(p, dtype=np.int64) for p in self.parts]
        if any(len(p) == 0 for p in self.parts):
            raise EmptyPart("every part needs at least one vertex")

    @property
    def n_parts(self) -> int:
        return len(self.parts)

    def validate(self, n_vertices: int):
        allv = np.sort(np.concatenate(self.parts))
        if len(allv) != n_vertices or np.any(allv != np.arange(n_vertices)):
            raise DimensionMismatch("parts must be disjoint and cover every vertex")

    def averaging_matrix(self, n_vertices: int) -> np.ndarray:
        self.validate(n_vertices)
        A = np.zeros((self.n_parts, n_vertices))
        for p, idx in enumerate(self.parts):
            A[p, idx] = 1.0 / len(idx)
        return A

    def to_json(self):
        return [p.tolist() for p in self.parts]

    @classmethod
    def from_json(cls, d):
        return cls(d)


def part_features(grid: HexPlaneGrid, points_t, partition: PartPartition, t) -> nn.Tensor:
    """(..., P, 6C) tokens: mean plane feature over each part's vertices."""
    pts = np.asarray(nn.value(points_t))
    A = partition.averaging_matrix(pts.shape[-2])
    return nn.matmul(nn.Tensor(A), plane_query(grid, pts, t))
