"""LSQR (Paige & Saunders) for dense least-squares problems."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List

import numpy as np

from ..errors import NonFiniteError, ParameterError, SolverError


@dataclass
class LsqrConfig:
    atol: float = 1e-8
    btol: float = 1e-8
    max_iters: int = 2000
    damping: float = 0.0

    def __post_init__(self):
        if self.atol <= 0 or self.btol <= 0:
            raise ParameterError("LSQR tolerances must be positive")
        if self.max_iters < 1:
            raise ParameterError("LSQR needs max_iters >= 1")
        if self.damping < 0:
            raise ParameterError("LSQR damping must be non-negative")


@dataclass
class LsqrResult:
    x: np.ndarray
    iterations: int
    stop_reason: str
    residual_history: List[float] = field(default_factory=list)


def lsqr(H: np.ndarray, g: np.ndarray, cfg: LsqrConfig = None, track_residual: bool = False) -> LsqrResult:
    """Minimize ``|H f - g|^2 + damping^2 |f|^2`` from ``f = 0``.

    Starting at zero makes the iterates lie in range(H^T), so an
    underdetermined consistent system converges to its minimum-norm solution.
    With ``track_residual`` the true residual norm is recorded after every
    iteration (one extra product with H each time).
    """
    cfg = cfg or LsqrConfig()
    H = np.asarray(H, dtype=np.float64)
    b = np.asarray(g, dtype=np.float64).ravel()
    if not (np.all(np.isfinite(H)) and np.all(np.isfinite(b))):
        raise NonFiniteError("LSQR inputs contain NaN or Inf")
    if H.ndim != 2 or H.shape[0] != b.size:
        raise ParameterError(f"operator {H.shape} incompatible with data of length {b.size}")
    if not np.any(H):
        raise SolverError("LSQR cannot solve with an all-zero operator")
    n = H.shape[1]
    x = np.zeros(n)
    history = []
    beta = np.linalg.norm(b)
    if beta == 0:
        return LsqrResult(x, 0, "zero right-hand side", [0.0] if track_residual else [])
    u = b / beta
    v = H.T @ u
    alpha = np.linalg.norm(v)
    if alpha == 0:
        return LsqrResult(x, 0, "H^T g = 0, x = 0 is a solution", [beta] if track_residual else [])
    v /= alpha
    w = v.copy()
    phibar, rhobar = beta, alpha
    bnorm = beta
    anorm2 = 0.0
    xnorm = 0.0
    damp = cfg.damping
    res2 = 0.0  # accumulated damping part of the augmented residual
    reason = "max_iters reached"
    it = 0
    for it in range(1, cfg.max_iters + 1):
        u = H @ v - alpha * u
        beta = np.linalg.norm(u)
        if beta > 0:
            u /= beta
        anorm2 += alpha * alpha + beta * beta + damp * damp
        v = H.T @ u - beta * v
        alpha = np.linalg.norm(v)
        if alpha > 0:
            v /= alpha

        if damp > 0:
            rhobar1 = math.hypot(rhobar, damp)
            cs1, sn1 = rhobar / rhobar1, damp / rhobar1
            res2 += (sn1 * phibar) ** 2
            phibar = cs1 * phibar
        else:
            rhobar1 = rhobar
        rho = math.hypot(rhobar1, beta)
        c, s = rhobar1 / rho, beta / rho
        theta = s * alpha
        rhobar = -c * alpha
        phi = c * phibar
        phibar = s * phibar

        x += (phi / rho) * w
        w = v - (theta / rho) * w
        xnorm = np.linalg.norm(x)
        if track_residual:
            history.append(float(np.linalg.norm(H @ x - b)))

        rnorm = math.sqrt(phibar * phibar + res2)
        anorm = math.sqrt(anorm2)
        arnorm = alpha * abs(c * phibar)
        if rnorm <= cfg.btol * bnorm + cfg.atol * anorm * xnorm:
            reason = "residual small (consistent system)"
            break
        if rnorm == 0 or arnorm / (anorm * rnorm) <= cfg.atol:
            reason = "normal-equation residual small (least squares)"
            break
        if alpha == 0:
            reason = "Krylov space exhausted"
            break
    return LsqrResult(x, it, reason, history)


def lsqr_solve(H, g, cfg: LsqrConfig = None) -> np.ndarray:
    return lsqr(H, g, cfg).x
