"""Two-step iterative shrinkage/thresholding with a Haar-sparsity prior.

Minimizes ``|H f - g|^2 + lam * |W f|_1`` where ``W`` is the orthonormal
Haar transform, so the proximal step is a soft threshold of the wavelet
coefficients. Steps that fail to lower the objective are replaced by a plain
IST step, which keeps the objective sequence non-increasing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from ..errors import NonFiniteError, ParameterError, SolverError
from .haar import haar_dwt, haar_idwt, soft_threshold


@dataclass
class TwistConfig:
    lam: Optional[float] = None  # None -> 0.05 * max|H^T g|
    alpha: Optional[float] = None
    beta: Optional[float] = None
    xi: float = 1e-3
    max_iters: int = 500
    rel_obj_tol: float = 1e-5
    regularizer: str = "haar_l1"

    def __post_init__(self):
        if self.lam is not None and self.lam <= 0:
            raise ParameterError(f"TwIST regularization weight must be > 0, got {self.lam}")
        if self.regularizer != "haar_l1":
            raise ParameterError(f"unsupported regularizer {self.regularizer!r}")
        if not 0 < self.xi <= 1:
            raise ParameterError("xi must lie in (0, 1]")
        if self.max_iters < 1:
            raise ParameterError("max_iters must be >= 1")

    def relaxation(self):
        """(alpha, beta) from the spectral-bound ratio xi unless given explicitly."""
        rho = (1 - np.sqrt(self.xi)) / (1 + np.sqrt(self.xi))
        alpha = self.alpha if self.alpha is not None else rho ** 2 + 1
        beta = self.beta if self.beta is not None else 2 * alpha / (self.xi + 1)
        return alpha, beta


@dataclass
class TwistResult:
    x: np.ndarray
    objective_history: List[float] = field(default_factory=list)
    ist_fallbacks: int = 0
    iterations: int = 0


def spectral_norm_sq(H: np.ndarray, iters: int = 100, seed: int = 0) -> float:
    """Largest eigenvalue of H^T H by power iteration."""
    v = np.random.default_rng(seed).standard_normal(H.shape[1])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = H.T @ (H @ v)
        lam = float(np.linalg.norm(w))
        if lam == 0:
            return 0.0
        v = w / lam
    return lam


def twist(H: np.ndarray, g: np.ndarray, cfg: TwistConfig = None, side: Optional[int] = None) -> TwistResult:
    cfg = cfg or TwistConfig()
    H = np.asarray(H, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64).ravel()
    n = H.shape[1]
    side = side or int(round(np.sqrt(n)))
    if side * side != n:
        raise ParameterError(f"cannot view {n} unknowns as a square image")
    Htg = H.T @ g
    lam = cfg.lam if cfg.lam is not None else 0.05 * float(np.max(np.abs(Htg)))
    if lam <= 0:
        raise ParameterError("regularization weight resolved to zero (is g zero?)")
    L = 1.01 * spectral_norm_sq(H)
    if L == 0:
        raise SolverError("operator has zero spectral norm")
    tau = lam / (2 * L)
    alpha, beta = cfg.relaxation()

    def objective(x):
        r = H @ x - g
        return float(r @ r + lam * np.abs(haar_dwt(x.reshape(side, side))).sum())

    def ist(x):
        z = x + (Htg - H.T @ (H @ x)) / L
        return haar_idwt(soft_threshold(haar_dwt(z.reshape(side, side)), tau)).ravel()

    x_prev = Htg / L
    f_prev = objective(x_prev)
    x = ist(x_prev)
    f = objective(x)
    if f > f_prev:
        x, f = x_prev, f_prev
    history = [f_prev, f]
    fallbacks = 0
    it = 1
    for it in range(2, cfg.max_iters + 1):
        gx = ist(x)
        cand = (1 - alpha) * x_prev + (alpha - beta) * x + beta * gx
        f_cand = objective(cand)
        if not np.isfinite(f_cand):
            raise SolverError(f"TwIST diverged at iteration {it}")
        if f_cand >= f:
            cand, f_cand = gx, objective(gx)
            fallbacks += 1
            if f_cand > f:
                # the IST step cannot increase the objective with step 1/L; guard rounding only
                cand, f_cand = x, f
        if not np.isfinite(f_cand):
            raise NonFiniteError("TwIST objective became non-finite")
        x_prev, x = x, cand
        rel = abs(f - f_cand) / max(f, np.finfo(float).tiny)
        f = f_cand
        history.append(f)
        if rel < cfg.rel_obj_tol:
            break
    return TwistResult(x, history, fallbacks, it)


def twist_solve(H, g, cfg: TwistConfig = None) -> np.ndarray:
    return twist(H, g, cfg).x
