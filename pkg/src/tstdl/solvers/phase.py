"""Phase retrieval from an autocorrelation (error reduction / HIO) and
ambiguity-aware registration of the result."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from ..errors import ParameterError
from ..rng import child_seeds, make_rng


@dataclass
class PhaseRetrievalConfig:
    iters: int = 1000
    restarts: int = 5
    mode: str = "error_reduction"
    hio_beta: float = 0.9
    support: Optional[np.ndarray] = None
    nonnegativity: bool = True
    seed: int = 0
    # HIO runs finish with this many error-reduction iterations
    er_polish: int = 100

    def __post_init__(self):
        if self.restarts < 1:
            raise ParameterError("phase retrieval needs at least one restart")
        if self.mode not in ("error_reduction", "hio"):
            raise ParameterError(f"unknown phase-retrieval mode {self.mode!r}")
        if self.iters < 1:
            raise ParameterError("iters must be >= 1")


@dataclass
class PhaseRetrievalResult:
    image: np.ndarray
    residual: float
    best_restart: int
    residuals: List[float] = field(default_factory=list)


def fourier_magnitude(autocorr: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    """|F| of the object on the autocorrelation canvas.

    The autocorrelation (zero shift at the centre) is the inverse transform of
    |F|^2, so |F| = sqrt(Re FFT(A)). Clearly negative spectral values mean the
    input is not a valid autocorrelation.
    """
    A = np.asarray(autocorr, dtype=np.float64)
    spec = np.fft.fft2(np.fft.ifftshift(A)).real
    peak = max(float(spec.max()), 0.0)
    if spec.min() < -tol * max(peak, 1.0):
        raise ParameterError(f"autocorrelation has a negative power spectrum value {spec.min():.3g}")
    return np.sqrt(np.maximum(spec, 0.0))


def _central_support(canvas: int, side: int) -> np.ndarray:
    mask = np.zeros((canvas, canvas), dtype=bool)
    start = (canvas - side) // 2
    mask[start:start + side, start:start + side] = True
    return mask


def _project_fourier(g: np.ndarray, mag: np.ndarray) -> np.ndarray:
    G = np.fft.fft2(g)
    absG = np.abs(G)
    phase = np.where(absG > 0, G / np.where(absG > 0, absG, 1.0), 1.0)
    return np.fft.ifft2(mag * phase).real


def _residual(g: np.ndarray, mag: np.ndarray) -> float:
    return float(np.linalg.norm(np.abs(np.fft.fft2(g)) - mag) / max(np.linalg.norm(mag), 1e-300))


def _run(mag, support, cfg, rng):
    g = np.where(support, rng.random(mag.shape), 0.0)
    n_hio = cfg.iters if cfg.mode == "hio" else 0
    n_er = cfg.er_polish if cfg.mode == "hio" else cfg.iters
    for k in range(n_hio + n_er):
        gp = _project_fourier(g, mag)
        ok = support & (gp >= 0) if cfg.nonnegativity else support
        if k < n_hio:
            g = np.where(ok, gp, g - cfg.hio_beta * gp)
        else:
            g = np.where(ok, gp, 0.0)
    g = np.where(support, np.maximum(g, 0.0) if cfg.nonnegativity else g, 0.0)
    return g


def phase_retrieve(autocorr: np.ndarray, cfg: PhaseRetrievalConfig = None) -> PhaseRetrievalResult:
    """Recover a side x side image from its (2side-1)^2 autocorrelation.

    The result is defined up to translation and 180-degree rotation; use
    :func:`register_to_reference` before scoring it.
    """
    cfg = cfg or PhaseRetrievalConfig()
    A = np.asarray(autocorr, dtype=np.float64)
    canvas = A.shape[0]
    if A.ndim != 2 or A.shape[1] != canvas or canvas % 2 == 0:
        raise ParameterError(f"autocorrelation must be square with odd side, got {A.shape}")
    side = (canvas + 1) // 2
    mag = fourier_magnitude(A)
    support = _central_support(canvas, side) if cfg.support is None else np.asarray(cfg.support, bool)
    if support.shape != A.shape:
        raise ParameterError(f"support mask {support.shape} does not match canvas {A.shape}")
    ys, xs = np.nonzero(support)
    y0, x0 = ys.min(), xs.min()
    h, w = ys.max() - y0 + 1, xs.max() - x0 + 1

    best, residuals = None, []
    for r, seed in enumerate(child_seeds(cfg.seed, cfg.restarts)):
        g = _run(mag, support, cfg, make_rng(seed))
        res = _residual(g, mag)
        residuals.append(res)
        if best is None or res < best[1]:
            best = (g, res, r)
    g, res, r = best
    return PhaseRetrievalResult(g[y0:y0 + h, x0:x0 + w].copy(), res, r, residuals)


@dataclass
class Registration:
    image: np.ndarray
    shift: tuple
    rotated: bool
    score: float


def register_to_reference(estimate: np.ndarray, reference: np.ndarray) -> Registration:
    """Best cyclic shift of ``estimate`` or of its 180-degree rotation.

    Every cyclic translation of both candidates is scored by its inner product
    with ``reference`` (computed for all shifts at once with FFTs); the
    maximizer is returned. Ties prefer the unrotated, zero-shift candidate.
    """
    est = np.asarray(estimate, dtype=np.float64)
    ref = np.asarray(reference, dtype=np.float64)
    if est.shape != ref.shape:
        raise ParameterError(f"shape mismatch: {est.shape} vs {ref.shape}")
    R = np.conj(np.fft.fft2(ref))
    best = None
    for rotated, cand in ((False, est), (True, est[::-1, ::-1])):
        # corr[dy, dx] = sum ref(x) * cand(x - d) = <ref, roll(cand, d)>
        corr = np.fft.ifft2(np.fft.fft2(cand) * R).real
        corr = np.roll(corr[::-1, ::-1], 1, axis=(0, 1))
        dy, dx = np.unravel_index(int(np.argmax(corr)), corr.shape)
        score = float(corr[dy, dx])
        zero_score = float(np.sum(ref * cand))
        if zero_score >= score - 1e-12 * max(abs(score), 1.0):
            dy, dx, score = 0, 0, zero_score
        if best is None or score > best[0] + 1e-12 * max(abs(score), 1.0):
            best = (score, (int(dy), int(dx)), rotated, cand)
    score, shift, rotated, cand = best
    return Registration(np.roll(cand, shift, axis=(0, 1)), shift, rotated, score)
