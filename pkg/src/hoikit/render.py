"""Forward-only isotropic splat renderer for previews and image metrics."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import kernels
from .geom import CameraPose
from .metrics import Image

DEPTH_SENTINEL = -1.0
MIN_RADIUS_PX = 0.5


@dataclass
class Splat:
    position: np.ndarray
    rotation: np.ndarray
    scale: np.ndarray
    opacity: float
    color: np.ndarray


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("HOIKIT_THREADS", "1")))
    except ValueError:
        return 1


def render_arrays(positions, scales, opacities, colors, cam: CameraPose, width: int, height: int,
                  background=(0.0, 0.0, 0.0), backend=None):
    """Render splats given as arrays; returns (rgb, depth, alpha) as numpy arrays.

    Splats behind the camera are dropped. The footprint radius in pixels is
    mean(scale) * focal / depth.
    """
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    n = len(pos)
    scales = np.asarray(scales, dtype=np.float64).reshape(n, -1)
    opac = np.clip(np.asarray(opacities, dtype=np.float64).reshape(n), 0.0, 1.0)
    cols = np.asarray(colors, dtype=np.float64).reshape(n, 3)
    u, v, z = cam.project(pos) if n else (np.zeros(0),) * 3
    front = z > 0
    focal = 0.5 * (cam.fx + cam.fy)
    radius = np.maximum(scales.mean(axis=1) * focal / np.where(front, z, 1.0), MIN_RADIUS_PX)
    keep = np.flatnonzero(front)
    order = keep[np.argsort(-z[keep], kind="stable")]
    args = (u[order], v[order], z[order], radius[order], opac[order], cols[order])

    nthreads = min(worker_count(), height)
    bounds = np.linspace(0, height, nthreads + 1).astype(int)
    blocks = list(zip(bounds[:-1], bounds[1:]))
    if nthreads == 1:
        parts = [kernels.composite(*args, width, 0, height, backend=backend)]
    else:
        with ThreadPoolExecutor(nthreads) as ex:
            parts = list(ex.map(lambda b: kernels.composite(*args, width, b[0], b[1], backend=backend), blocks))
    rgb = np.concatenate([p[0] for p in parts], axis=0)
    alpha = np.concatenate([p[1] for p in parts], axis=0)
    dacc = np.concatenate([p[2] for p in parts], axis=0)
    rgb = rgb + (1.0 - alpha)[..., None] * np.asarray(background, dtype=np.float64)
    depth = np.where(alpha > 0, dacc / np.where(alpha > 0, alpha, 1.0), DEPTH_SENTINEL)
    return rgb, depth, alpha


def render_splats(splats, cam: CameraPose, width: int, height: int, background=(0.0, 0.0, 0.0)):
    """Render a list of :class:`Splat`; returns (rgb Image, depth Image)."""
    if not splats:
        rgb = np.broadcast_to(np.asarray(background, dtype=np.float64), (height, width, 3)).copy()
        return Image(rgb), Image(np.full((height, width), DEPTH_SENTINEL))
    rgb, depth, _ = render_arrays([s.position for s in splats], [s.scale for s in splats],
                                  [s.opacity for s in splats], [s.color for s in splats],
                                  cam, width, height, background)
    return Image(rgb), Image(depth)


def write_ppm(path, img):
    data = img.data if isinstance(img, Image) else np.asarray(img)
    if data.ndim == 3 and data.shape[2] == 1:
        data = np.repeat(data, 3, axis=2)
    h, w = data.shape[:2]
    px = np.round(np.clip(data, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(px.tobytes())


def write_depth_pgm(path, depth):
    """16-bit PGM; valid depths scaled by the frame maximum, sentinel pixels 0."""
    d = depth.data[..., 0] if isinstance(depth, Image) else np.asarray(depth)
    valid = d > 0
    top = d[valid].max() if valid.any() else 1.0
    q = np.where(valid, np.round(d / top * 65535.0), 0).astype(">u2")
    h, w = d.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(q.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    parts = raw.split(b"\n", 3)
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w, 3)
