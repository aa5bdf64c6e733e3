"""Numpy versions of the compiled kernels (same signatures, same summation order)."""
import numpy as np

_BLOCK = 1024


def _sqdist(a, b):
    d = a[:, None, :] - b[None, :, :]
    return d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2]


def nearest_sqdist(a, b):
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    out_d = np.empty(len(a))
    out_i = np.empty(len(a), dtype=np.int64)
    for s in range(0, len(a), _BLOCK):
        d2 = _sqdist(a[s:s + _BLOCK], b)
        idx = np.argmin(d2, axis=1)
        out_i[s:s + _BLOCK] = idx
        out_d[s:s + _BLOCK] = d2[np.arange(len(idx)), idx]
    return out_d, out_i


def _one_way(a, b):
    d, _ = nearest_sqdist(a, b)
    # cumsum accumulates strictly left to right, matching the compiled loop
    return np.cumsum(d)[-1] / len(d)


def chamfer(a, b):
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    return float(0.5 * (_one_way(a, b) + _one_way(b, a)))


def composite(u, v, z, radius, opacity, color, width, row0, row1):
    rows = row1 - row0
    rgb = np.zeros((rows, width, 3))
    alpha = np.zeros((rows, width))
    depth = np.zeros((rows, width))
    for s in range(len(u)):
        r = radius[s]
        x0 = max(int(np.ceil(u[s] - 3.0 * r)), 0)
        x1 = min(int(np.floor(u[s] + 3.0 * r)), width - 1)
        y0 = max(int(np.ceil(v[s] - 3.0 * r)), row0)
        y1 = min(int(np.floor(v[s] + 3.0 * r)), row1 - 1)
        if x1 < x0 or y1 < y0:
            continue
        ys = np.arange(y0, y1 + 1, dtype=np.float64)[:, None] - v[s]
        xs = np.arange(x0, x1 + 1, dtype=np.float64)[None, :] - u[s]
        a = opacity[s] * np.exp(-(xs * xs + ys * ys) * (0.5 / (r * r)))
        keep = 1.0 - a
        sl = (slice(y0 - row0, y1 - row0 + 1), slice(x0, x1 + 1))
        rgb[sl] = a[..., None] * color[s] + keep[..., None] * rgb[sl]
        alpha[sl] = a + keep * alpha[sl]
        depth[sl] = a * z[s] + keep * depth[sl]
    return rgb, alpha, depth
