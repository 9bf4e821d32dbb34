"""Model-based reconstruction baselines."""

from .haar import haar_dwt, haar_idwt, soft_threshold
from .lsqr import LsqrConfig, LsqrResult, lsqr, lsqr_solve
from .phase import (
    PhaseRetrievalConfig,
    PhaseRetrievalResult,
    Registration,
    fourier_magnitude,
    phase_retrieve,
    register_to_reference,
)
from .twist import TwistConfig, TwistResult, twist, twist_solve

__all__ = [
    "haar_dwt", "haar_idwt", "soft_threshold",
    "LsqrConfig", "LsqrResult", "lsqr", "lsqr_solve",
    "TwistConfig", "TwistResult", "twist", "twist_solve",
    "PhaseRetrievalConfig", "PhaseRetrievalResult", "Registration",
    "fourier_magnitude", "phase_retrieve", "register_to_reference",
]
