"""Image and geometry metrics, plus the weighted composite loss."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import kernels, nn
from .errors import EmptyPointSet, ImageTooSmall, NonFiniteValue, ShapeMismatch

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
L1_MIX, DSSIM_MIX = 0.8, 0.2
PSNR_SENTINEL = 100.0  # written to CSV in place of +inf
METRICS_HEADER = "# hoikit metrics v1"
METRICS_COLUMNS = ["scene_id", "frame", "phase", "psnr", "dssim", "l1", "chamfer", "cd_best"]


@dataclass
class Image:
    """Row-major (height, width, channels) values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim == 2:
            d = d[..., None]
        if d.ndim != 3 or d.shape[2] not in (1, 3):
            raise ShapeMismatch(f"image must be (h, w, 1|3), got {d.shape}")
        self.data = d

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def channels(self):
        return self.data.shape[2]


def _pair(a, b):
    a = a.data if isinstance(a, Image) else Image(a).data
    b = b.data if isinstance(b, Image) else Image(b).data
    if a.shape != b.shape:
        raise ShapeMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def _mask(mask, shape):
    if mask is None:
        return np.ones(shape[:2], dtype=bool)
    m = np.asarray(mask, dtype=bool)
    if m.shape != shape[:2]:
        raise ShapeMismatch("mask must match the image height and width")
    return m


def l1_image(a, b, mask=None) -> float:
    """Mean absolute difference, over masked pixels only when a mask is given."""
    a, b = _pair(a, b)
    m = _mask(mask, a.shape)
    if not m.any():
        return 0.0
    return float(np.mean(np.abs(a - b)[m]))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-0.5 * (x / sigma) ** 2)
    return g / g.sum()


def _filter_valid(x, g):
    """Separable 'valid' correlation over the two leading axes."""
    k = len(g)
    h, w = x.shape[0] - k + 1, x.shape[1] - k + 1
    rows = sum(g[i] * x[i:i + h] for i in range(k))
    return sum(g[j] * rows[:, j:j + w] for j in range(k))


def ssim_map(a, b) -> np.ndarray:
    a, b = _pair(a, b)
    if min(a.shape[0], a.shape[1]) < SSIM_WINDOW:
        raise ImageTooSmall(f"SSIM needs images at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    g = gaussian_window()
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    saa = _filter_valid(a * a, g) - mu_a * mu_a
    sbb = _filter_valid(b * b, g) - mu_b * mu_b
    sab = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * sab + SSIM_C2)
    den = (mu_a ** 2 + mu_b ** 2 + SSIM_C1) * (saa + sbb + SSIM_C2)
    return num / den


def ssim(a, b) -> float:
    return float(np.mean(ssim_map(a, b)))


def dssim(a, b, mask=None) -> float:
    """(1 - mean SSIM) / 2 over window positions whose centre pixel is masked."""
    s = ssim_map(a, b)
    if mask is not None:
        r = SSIM_WINDOW // 2
        m = _mask(mask, np.asarray(_pair(a, b)[0]).shape)[r:-r, r:-r]
        if not m.any():
            return 0.0
        s = s[m]
    return float(np.clip((1.0 - np.mean(s)) / 2.0, 0.0, 1.0))


def psnr(a, b) -> float:
    """10 log10(1 / MSE) in dB; +inf for identical images."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def depth_l1(a, b, mask=None) -> float:
    return l1_image(a, b, mask)


def photometric_term(gt, pred, mask=None) -> float:
    """0.8 L1 + 0.2 D-SSIM, the mix used for the object and scene terms."""
    return L1_MIX * l1_image(gt, pred, mask) + DSSIM_MIX * dssim(gt, pred, mask)


# ---- geometry -----------------------------------------------------------------

def _points(p):
    p = np.asarray(nn.value(p), dtype=np.float64).reshape(-1, 3)
    if len(p) == 0:
        raise EmptyPointSet("chamfer needs non-empty point sets")
    return p


def chamfer(O, H) -> float:
    """0.5 * (mean_o min_h |o-h|^2 + mean_h min_o |h-o|^2)."""
    return kernels.chamfer(_points(O), _points(H))


def cd_best(O, H_L, H_R) -> float:
    return min(chamfer(O, H_L), chamfer(O, H_R))


def chamfer_tensor(A, B) -> nn.Tensor:
    """Taped chamfer for batched sets (..., n, 3) and (..., m, 3), one value per batch entry.

    Nearest neighbours are found on current values; gradients flow through the
    matched squared distances.
    """
    A, B = nn.as_tensor(A), nn.as_tensor(B)
    if A.shape[-2] == 0 or B.shape[-2] == 0:
        raise EmptyPointSet("chamfer needs non-empty point sets")
    lead = A.shape[:-2]
    a = A.data.reshape((-1,) + A.shape[-2:])
    b = B.data.reshape((-1,) + B.shape[-2:])
    ia = np.stack([kernels.nearest_sqdist(a[i], b[i])[1] for i in range(len(a))]).reshape(lead + (A.shape[-2],))
    ib = np.stack([kernels.nearest_sqdist(b[i], a[i])[1] for i in range(len(a))]).reshape(lead + (B.shape[-2],))

    def gather(X, idx):
        if not lead:
            return X[idx]
        grid = tuple(np.broadcast_to(ax.reshape(lead + (1,)), idx.shape)
                     for ax in np.indices(lead))
        return X[grid + (idx,)]

    da = A - gather(B, ia)
    db = B - gather(A, ib)
    fwd = nn.mean(nn.tsum(da * da, axis=-1), axis=-1)
    bwd = nn.mean(nn.tsum(db * db, axis=-1), axis=-1)
    return (fwd + bwd) * 0.5


def cd_best_tensor(O, H_L, H_R) -> nn.Tensor:
    left, right = chamfer_tensor(O, H_L), chamfer_tensor(O, H_R)
    pick = (left.data <= right.data).astype(np.float64)
    return left * pick + right * (1.0 - pick)


# ---- composite loss -----------------------------------------------------------

@dataclass(frozen=True)
class LossWeights:
    human: float = 0.5
    object: float = 1.0
    scene: float = 0.25
    depth: float = 1.0

    def __post_init__(self):
        for k in ("human", "object", "scene", "depth"):
            v = getattr(self, k)
            if not (math.isfinite(v) and v >= 0):
                raise NonFiniteValue(f"loss weight {k} must be finite and >= 0")


def total_loss(parts: dict, w: LossWeights = LossWeights()):
    """Weighted sum of the human, object, scene and depth terms.

    Parts may be floats or tensors; missing keys count as zero.
    """
    total = 0.0
    for key in ("human", "object", "scene", "depth"):
        if key not in parts:
            continue
        part = parts[key]
        if not np.all(np.isfinite(nn.value(part))):
            raise NonFiniteValue(f"loss part {key} is not finite")
        total = total + getattr(w, key) * part
    return total


def write_metrics_csv(path, rows):
    """Rows are dicts keyed by METRICS_COLUMNS; infinite PSNR becomes PSNR_SENTINEL."""
    with open(path, "w", newline="") as fh:
        fh.write(METRICS_HEADER + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_COLUMNS)
        for r in rows:
            vals = []
            for c in METRICS_COLUMNS:
                v = r[c]
                if c == "psnr" and math.isinf(v):
                    v = PSNR_SENTINEL
                vals.append(f"{v:.10g}" if isinstance(v, float) else v)
            w.writerow(vals)
