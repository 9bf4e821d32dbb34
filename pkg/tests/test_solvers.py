import numpy as np
import pytest
from scipy.ndimage import zoom
from sklearn.datasets import load_digits

from tstdl import measurement as mm
from tstdl.errors import ParameterError, SolverError
from tstdl.metrics import rmse
from tstdl.solvers import (
    LsqrConfig,
    PhaseRetrievalConfig,
    TwistConfig,
    haar_dwt,
    haar_idwt,
    lsqr,
    lsqr_solve,
    phase_retrieve,
    register_to_reference,
    soft_threshold,
    twist,
    twist_solve,
)


def pinv_svd(A):
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    keep = s > s.max() * 1e-12
    return (Vt[keep].T / s[keep]) @ U[:, keep].T


# -- LSQR ---------------------------------------------------------------------

def test_lsqr_identity_one_iteration():
    g = np.array([1.0, -2.0, 3.0])
    res = lsqr(np.eye(3), g)
    np.testing.assert_allclose(res.x, g)
    assert res.iterations == 1


def test_lsqr_overdetermined_matches_normal_equations():
    rng = np.random.default_rng(0)
    A, b = rng.standard_normal((6, 4)), rng.standard_normal(6)
    x = lsqr_solve(A, b)
    np.testing.assert_allclose(x, np.linalg.solve(A.T @ A, A.T @ b), atol=1e-6)


def test_lsqr_underdetermined_min_norm():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((3, 6))
    b = A @ rng.standard_normal(6)
    x = lsqr_solve(A, b)
    np.testing.assert_allclose(A @ x, b, atol=1e-8)
    assert np.linalg.norm(x) <= np.linalg.norm(pinv_svd(A) @ b) + 1e-6
    other = pinv_svd(A) @ b + (np.eye(6) - pinv_svd(A) @ A) @ rng.standard_normal(6)
    assert np.linalg.norm(x) <= np.linalg.norm(other) + 1e-6


def test_lsqr_residual_monotone():
    rng = np.random.default_rng(2)
    A, b = rng.standard_normal((40, 25)), rng.standard_normal(40)
    hist = lsqr(A, b, track_residual=True).residual_history
    assert len(hist) > 3
    assert all(b2 <= b1 + 1e-12 for b1, b2 in zip(hist, hist[1:]))


def test_lsqr_errors():
    with pytest.raises(SolverError):
        lsqr(np.zeros((3, 3)), np.ones(3))
    with pytest.raises(FloatingPointError):
        lsqr(np.eye(2), np.array([1.0, np.nan]))
    with pytest.raises(ParameterError):
        LsqrConfig(atol=0)


def test_lsqr_damping_matches_ridge():
    rng = np.random.default_rng(3)
    A, b = rng.standard_normal((10, 6)), rng.standard_normal(10)
    x = lsqr_solve(A, b, LsqrConfig(damping=0.5))
    np.testing.assert_allclose(x, np.linalg.solve(A.T @ A + 0.25 * np.eye(6), A.T @ b), atol=1e-6)


# -- Haar ---------------------------------------------------------------------

def test_haar_constant_single_coefficient():
    c = haar_dwt(np.full((8, 8), 0.5))
    assert c[0, 0] == pytest.approx(0.5 * 8)
    c[0, 0] = 0
    assert np.abs(c).max() < 1e-12


def test_haar_round_trip_and_parseval():
    rng = np.random.default_rng(4)
    for side in (2, 4, 16, 32):
        x = rng.standard_normal((side, side))
        c = haar_dwt(x)
        np.testing.assert_allclose(haar_idwt(c), x, atol=1e-10)
        assert np.linalg.norm(c) == pytest.approx(np.linalg.norm(x), abs=1e-10)
        for lv in (1, 2):
            np.testing.assert_allclose(haar_idwt(haar_dwt(x, lv), lv), x, atol=1e-10)


def test_haar_rejects_bad_side():
    with pytest.raises(ParameterError):
        haar_dwt(np.zeros((6, 6)))


def test_soft_threshold_values():
    assert soft_threshold(0.7, 0.5) == pytest.approx(0.2)
    assert soft_threshold(-0.3, 0.5) == 0


# -- TwIST --------------------------------------------------------------------

def test_twist_vanishing_lambda_identity():
    g = np.random.default_rng(5).random(16)
    np.testing.assert_allclose(twist_solve(np.eye(16), g, TwistConfig(lam=1e-12)), g, atol=1e-6)


def test_twist_objective_non_increasing():
    rng = np.random.default_rng(6)
    model = mm.compress(mm.make_model("random_permutation", 16, seed=6), 4)
    yy, xx = np.mgrid[:16, :16]
    f = ((yy - 8) ** 2 + (xx - 7) ** 2 < 25) * 0.8 + 0.1 * rng.random((16, 16))
    res = twist(model.H, mm.forward_measure(model, f), TwistConfig(max_iters=200, rel_obj_tol=1e-8))
    hist = res.objective_history
    assert len(hist) > 5
    assert all(b <= a for a, b in zip(hist, hist[1:]))
    assert rmse(res.x.reshape(16, 16), f) < rmse((model.H.T @ mm.forward_measure(model, f) / 256).reshape(16, 16), f) + 0.02


def test_twist_bad_lambda():
    with pytest.raises(ParameterError):
        TwistConfig(lam=0.0)


# -- phase retrieval ----------------------------------------------------------

def framed_digits(n):
    digits = load_digits().images[:n] / 16.0
    return [np.pad(np.clip(zoom(d, 1.5, order=1), 0, 1), 2) for d in digits]


def test_phase_retrieval_delta():
    f = np.zeros((8, 8))
    f[2, 5] = 1.0
    out = phase_retrieve(mm.autocorrelate(f), PhaseRetrievalConfig(iters=200, restarts=3)).image
    energy = out ** 2
    assert energy.max() >= 0.9 * energy.sum()


def test_phase_retrieval_best_restart_and_determinism():
    f = framed_digits(1)[0]
    cfg = PhaseRetrievalConfig(iters=100, restarts=4, seed=3)
    a = phase_retrieve(mm.autocorrelate(f), cfg)
    b = phase_retrieve(mm.autocorrelate(f), cfg)
    assert a.residual == min(a.residuals)
    assert a.residuals[a.best_restart] == a.residual
    np.testing.assert_array_equal(a.image, b.image)


def test_phase_retrieval_digit_set():
    digits = framed_digits(50)
    good = 0
    for f in digits:
        est = phase_retrieve(mm.autocorrelate(f), PhaseRetrievalConfig(iters=500, restarts=5)).image
        good += rmse(register_to_reference(est, f).image, f) <= 0.15
    assert good >= 0.6 * len(digits)


def test_phase_retrieval_rejects_invalid_input():
    bad = np.zeros((7, 7))
    bad[3, 3] = -1.0
    with pytest.raises(ParameterError):
        phase_retrieve(bad)


# -- registration -------------------------------------------------------------

def test_register_identity_shift_rotation():
    ref = np.random.default_rng(7).random((12, 12))
    reg = register_to_reference(ref, ref)
    assert reg.shift == (0, 0) and not reg.rotated
    shifted = np.roll(ref, (3, 5), axis=(0, 1))
    reg = register_to_reference(shifted, ref)
    np.testing.assert_array_equal(reg.image, ref)
    assert reg.shift == ((-3) % 12, (-5) % 12)
    reg = register_to_reference(ref[::-1, ::-1], ref)
    assert reg.rotated
    np.testing.assert_array_equal(reg.image, ref)


def test_register_never_decreases_correlation():
    rng = np.random.default_rng(8)
    for _ in range(10):
        ref, est = rng.random((8, 8)), rng.random((8, 8))
        assert register_to_reference(est, ref).score >= np.sum(est * ref) - 1e-12
