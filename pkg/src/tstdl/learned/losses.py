"""Training losses built from autodiff ops."""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..errors import DimensionError, ParameterError
from ..metrics import SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW, gaussian_window


def loss_window(side: int) -> int:
    """SSIM window used by the loss: 11, or the largest odd size that fits."""
    if side >= SSIM_WINDOW:
        return SSIM_WINDOW
    return side if side % 2 else side - 1


@lru_cache(maxsize=16)
def window_matrix(side: int, size: int) -> np.ndarray:
    """(side*side, P) matrix whose columns are the Gaussian window placed at
    each of the P valid positions, so local means are one matmul."""
    w = gaussian_window(size, SSIM_SIGMA)
    w2 = np.outer(w, w)
    n = side - size + 1
    G = np.zeros((side, side, n * n))
    for i in range(n):
        for j in range(n):
            G[i:i + size, j:j + size, i * n + j] = w2
    G = G.reshape(side * side, n * n)
    G.setflags(write=False)
    return G


def _flat_pair(pred: Tensor, target) -> tuple:
    target = ad.as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"prediction {pred.shape} and target {target.shape} differ")
    B = pred.shape[0]
    return ad.reshape(pred, (B, -1)), ad.reshape(target, (B, -1))


def loss_mse(pred: Tensor, target) -> Tensor:
    p, t = _flat_pair(pred, target)
    return ad.mean(ad.square(p - t))


def ssim_tensor(pred: Tensor, target, data_range: float = 1.0) -> Tensor:
    """Mean SSIM over a batch of (B, s, s) images, differentiable in ``pred``.

    Uses the evaluation metric's 11x11 Gaussian window and constants; images
    narrower than 11 pixels fall back to the largest odd window that fits.
    """
    if pred.ndim != 3 or pred.shape[1] != pred.shape[2]:
        raise DimensionError(f"expected (B, s, s) images, got {pred.shape}")
    side = pred.shape[1]
    p, t = _flat_pair(pred, target)
    G = Tensor(window_matrix(side, loss_window(side)).astype(pred.dtype))
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mp, mt = p @ G, t @ G
    mpp, mtt, mpt = mp * mp, mt * mt, mp * mt
    spp = ad.square(p) @ G - mpp
    stt = ad.square(t) @ G - mtt
    spt = (p * t) @ G - mpt
    num = (mpt * 2.0 + c1) * (spt * 2.0 + c2)
    den = (mpp + mtt + c1) * (spp + stt + c2)
    return ad.mean(num / den)


def loss_rmse_dssim(pred: Tensor, target, alpha: float = 1.0) -> Tensor:
    """sqrt(MSE) + alpha * (1 - SSIM) / 2."""
    if alpha < 0:
        raise ParameterError(f"alpha must be non-negative, got {alpha}")
    rmse = ad.sqrt(loss_mse(pred, target))
    if alpha == 0:
        return rmse
    dssim = (1.0 - ssim_tensor(pred, target)) * 0.5
    return rmse + dssim * alpha
