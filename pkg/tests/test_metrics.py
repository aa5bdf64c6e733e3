import math

import numpy as np
import pytest
from skimage.metrics import structural_similarity

from hoikit import nn
from hoikit.errors import EmptyPointSet, ImageTooSmall, NonFiniteValue, ShapeMismatch
from hoikit.metrics import (METRICS_HEADER, Image, LossWeights, cd_best, cd_best_tensor, chamfer,
                            chamfer_tensor, dssim, l1_image, photometric_term, psnr, ssim,
                            total_loss, write_metrics_csv)


def brute_chamfer(O, H):
    def side(A, B):
        total = 0.0
        for a in A:
            best = math.inf
            for b in B:
                d = (a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2 + (a[2] - b[2]) ** 2
                best = min(best, d)
            total += best
        return total / len(A)
    return 0.5 * (side(O, H) + side(H, O))


def sk_ssim(a, b):
    return structural_similarity(a, b, gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
                                 data_range=1.0, channel_axis=-1 if a.ndim == 3 else None)


@pytest.mark.parametrize("shape", [(24, 31), (20, 20, 3), (11, 11)])
def test_ssim_matches_skimage(rng, shape):
    a = rng.uniform(size=shape)
    b = np.clip(a + rng.normal(0, 0.1, shape), 0, 1)
    assert abs(ssim(a, b) - sk_ssim(a, b)) < 1e-10


def test_identical_images():
    img = np.random.default_rng(0).uniform(size=(16, 16, 3))
    assert dssim(img, img) == 0.0 and l1_image(img, img) == 0.0
    assert psnr(img, img) == math.inf
    assert photometric_term(img, img) == 0.0


def test_psnr_uniform_error():
    a = np.full((12, 12, 3), 0.5)
    assert abs(psnr(a, a + 0.1) - 20.0) < 1e-9


def test_masked_l1_and_dssim(rng):
    a, b = rng.uniform(size=(20, 20)), rng.uniform(size=(20, 20))
    mask = np.zeros((20, 20), bool)
    mask[:, :10] = True
    assert abs(l1_image(a, b, mask) - np.abs(a - b)[:, :10].mean()) < 1e-15
    c = b.copy()
    c[:, 10:] = 0
    # changing pixels away from masked window centres leaves masked L1 untouched
    assert l1_image(a, b, mask) == l1_image(a, c, mask)
    assert 0 <= dssim(a, b, mask) <= 1


def test_image_errors():
    with pytest.raises(ImageTooSmall):
        ssim(np.zeros((10, 40)), np.zeros((10, 40)))
    with pytest.raises(ShapeMismatch):
        psnr(np.zeros((5, 5)), np.zeros((5, 6)))
    with pytest.raises(ShapeMismatch):
        Image(np.zeros((3, 3, 2)))


def test_chamfer_bitwise_brute_force(rng):
    for _ in range(20):
        O, H = rng.normal(size=(rng.integers(1, 30), 3)), rng.normal(size=(rng.integers(1, 30), 3))
        assert chamfer(O, H) == brute_chamfer(O, H)


def test_chamfer_properties(rng):
    O, H = rng.normal(size=(12, 3)), rng.normal(size=(9, 3))
    assert chamfer(O, O) == 0.0
    assert abs(chamfer(O, H) - chamfer(H, O)) < 1e-15
    with pytest.raises(EmptyPointSet):
        chamfer(np.zeros((0, 3)), H)
    L, R = H[:4], H[4:]
    assert cd_best(O, L, R) == min(chamfer(O, L), chamfer(O, R))


def test_chamfer_tensor_values_and_gradient(rng):
    A = nn.param(rng.normal(size=(3, 7, 3)))
    B = nn.param(rng.normal(size=(3, 5, 3)))
    val = chamfer_tensor(A, B).data
    for i in range(3):
        assert abs(val[i] - chamfer(A.data[i], B.data[i])) < 1e-14
    assert nn.grad_check(lambda: nn.tsum(chamfer_tensor(A, B)), [A, B]) < 1e-6
    L, R = B.data[:, :2], B.data[:, 2:]
    best = cd_best_tensor(A, L, R).data
    assert all(best[i] == cd_best(A.data[i], L[i], R[i]) for i in range(3))


def test_total_loss():
    assert total_loss({"human": 1.0, "object": 1.0, "scene": 1.0, "depth": 1.0}) == 2.75
    assert total_loss({"object": 2.0}, LossWeights(object=0.5)) == 1.0
    t = total_loss({"human": nn.Tensor(np.array(2.0))})
    assert isinstance(t, nn.Tensor) and t.item() == 1.0
    with pytest.raises(NonFiniteValue):
        total_loss({"human": float("nan")})
    with pytest.raises(NonFiniteValue):
        LossWeights(depth=-1.0)


def test_metrics_csv(tmp_path):
    p = tmp_path / "m.csv"
    write_metrics_csv(p, [{"scene_id": "s", "frame": 0, "phase": "hoi", "psnr": math.inf,
                           "dssim": 0.0, "l1": 0.0, "chamfer": 0.5, "cd_best": 0.25}])
    lines = p.read_text().splitlines()
    assert lines[0] == METRICS_HEADER
    assert lines[1] == "scene_id,frame,phase,psnr,dssim,l1,chamfer,cd_best"
    assert lines[2] == "s,0,hoi,100,0,0,0.5,0.25"
