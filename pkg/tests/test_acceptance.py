"""Acceptance criteria 1-15, one PASS/FAIL line each.

Criteria 1-7 are exact property suites. Criteria 8-15 are directional
reproductions; they run at a reduced "ci" scale by default and at the full
desk scale (side 32, 2000/400/400 images, 30 epochs per step, 3 seeds) with
``ARTIFACT_ACCEPTANCE_SCALE=desk``. Tolerances are the same at both scales.
"""

import json
import os
import time
import zlib

import numpy as np
import pytest

from tstdl import autodiff as ad
from tstdl import measurement as mm
from tstdl import metrics
from tstdl.autodiff.gradcheck import check_gradients
from tstdl.data import ImageDataset, dumps_dataset, loads_dataset, synth_shapes
from tstdl.experiments import config_from_dict, job_dataset, run_experiment
from tstdl.learned import (NetworkSpec, TrainConfig, UNetSpec, load_model, measure_latency, predict,
                           predict_intermediate, train_tst)
from tstdl.solvers import TwistConfig, haar_dwt, haar_idwt, lsqr_solve, twist

from .conftest import ACCEPTANCE_LINES

SCALE = os.environ.get("ARTIFACT_ACCEPTANCE_SCALE", "ci")

SCALES = {
    "ci": {
        "side": 16, "splits": [600, 200, 200], "epochs": 10, "seeds": [0, 1, 2],
        "unet": {"depth": 2, "base_channels": 8},
        "trainsize_grid": [75, 150, 300, 600],
        "deautocorr_splits": [600, 200, 200],
    },
    "desk": {
        "side": 32, "splits": [2000, 400, 400], "epochs": 30, "seeds": [0, 1, 2],
        "unet": {"depth": 3, "base_channels": 16},
        "trainsize_grid": [125, 250, 500, 1000, 2000],
        "deautocorr_splits": [1197, 300, 300],
    },
}
if SCALE not in SCALES:
    raise RuntimeError(f"ARTIFACT_ACCEPTANCE_SCALE must be one of {sorted(SCALES)}, got {SCALE!r}")
S = SCALES[SCALE]


def verdict(n, ok, detail):
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} [{SCALE}] {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def base_config(kind, **kw):
    d = {"kind": kind, "side": S["side"], "splits": S["splits"], "seeds": S["seeds"],
         "train": {"epochs": S["epochs"], "batch_size": 50}, "network": {"unet": S["unet"]},
         "export_images": 2, "figures": False}
    d.update(kw)
    return config_from_dict(d)


def seed_mean(out, label, model, metric="rmse_mean"):
    s = json.loads((out / "summary.json").read_text())
    failed = [j for j in s["jobs"] if j["status"] != "ok"]
    assert not failed, failed
    return s["aggregates"][label][model][metric]


# -- 1. autodiff gradient checks ----------------------------------------------

def _dims(r, lo=1, hi=5, n=1):
    return [int(v) for v in r.integers(lo, hi + 1, n)]


def _bn_stats(c):
    return ad.RunningStats.zeros(c, np.float64)


def _distinct(r, shape, scale=0.1):
    # tie-free values so max-pool and relu kinks are not hit by the probe step
    n = int(np.prod(shape))
    v = (r.permutation(n) - (n - 1) / 2 + 0.25) * scale
    return v.reshape(shape)


def _gen_conv(r):
    b, ci, co = _dims(r, 1, 3, 3)
    h, w = _dims(r, 3, 6, 2)
    k = int(r.choice([1, 3]))
    return [r.standard_normal((b, ci, h, w)), r.standard_normal((co, ci, k, k)), r.standard_normal(co)]


def _gen_pool(r):
    b, c = _dims(r, 1, 2, 2)
    h, w = (2 * d for d in _dims(r, 1, 3, 2))
    return [_distinct(r, (b, c, h, w))]


OP_GENERATORS = {
    "add": (lambda r: (lambda m, n: [r.standard_normal((m, n)), r.standard_normal(n)])(*_dims(r, 1, 5, 2)), ad.add),
    "sub": (lambda r: (lambda s: [r.standard_normal(s), r.standard_normal(s)])(tuple(_dims(r, 1, 5, 2))), ad.sub),
    "mul": (lambda r: (lambda m, n: [r.standard_normal((m, n)), r.standard_normal((m, 1))])(*_dims(r, 1, 5, 2)),
            ad.mul),
    "div": (lambda r: (lambda s: [r.standard_normal(s), r.uniform(0.5, 2, s)])(tuple(_dims(r, 1, 5, 2))), ad.div),
    "neg": (lambda r: [r.standard_normal(tuple(_dims(r, 1, 5, 2)))], ad.neg),
    "square": (lambda r: [r.standard_normal(tuple(_dims(r, 1, 6, 2)))], ad.square),
    "sqrt": (lambda r: [r.uniform(0.5, 3, tuple(_dims(r, 1, 6, 2)))], ad.sqrt),
    "sum": (lambda r: [r.standard_normal(tuple(_dims(r, 1, 5, 3)))], lambda x: ad.sum(x, axis=1)),
    "mean": (lambda r: [r.standard_normal(tuple(_dims(r, 1, 5, 3)))], lambda x: ad.mean(x, axis=(0, 2))),
    "matmul": (lambda r: (lambda m, k, n: [r.standard_normal((m, k)), r.standard_normal((k, n))])(*_dims(r, 1, 5, 3)),
               ad.matmul),
    "linear": (lambda r: (lambda b, i, o: [r.standard_normal((b, i)), r.standard_normal((o, i)),
                                           r.standard_normal(o)])(*_dims(r, 1, 5, 3)), ad.linear),
    "reshape": (lambda r: [r.standard_normal((2, 3 * _dims(r)[0]))], lambda x: ad.reshape(x, (-1, 3))),
    "permute": (lambda r: [r.standard_normal(tuple(_dims(r, 1, 4, 3)))], lambda x: ad.permute(x, (2, 0, 1))),
    "concat_channels": (lambda r: (lambda b, c1, c2, h: [r.standard_normal((b, c1, h, h)),
                                                         r.standard_normal((b, c2, h, h))])(*_dims(r, 1, 3, 4)),
                        ad.concat_channels),
    "relu": (lambda r: [_distinct(r, tuple(_dims(r, 1, 5, 2)))], ad.relu),
    "leaky_relu": (lambda r: [_distinct(r, tuple(_dims(r, 1, 5, 2)))], lambda x: ad.leaky_relu(x, 0.01)),
    "dropout": (lambda r: [r.standard_normal(tuple(_dims(r, 1, 5, 2)))],
                lambda x: ad.dropout(x, 0.3, np.random.default_rng(1), True)),
    "batchnorm": (lambda r: (lambda b, c: [r.standard_normal((b + 1, c)), r.standard_normal(c),
                                           r.standard_normal(c)])(*_dims(r, 1, 5, 2)),
                  lambda x, g, b: ad.batchnorm(x, g, b, _bn_stats(g.shape[0]), True)),
    "batchnorm_inference": (lambda r: (lambda b, c: [r.standard_normal((b, c)), r.standard_normal(c),
                                                     r.standard_normal(c)])(*_dims(r, 1, 5, 2)),
                            lambda x, g, b: ad.batchnorm(
                                x, g, b, ad.RunningStats(np.full(g.shape[0], 0.3), np.full(g.shape[0], 1.7)),
                                False)),
    "conv2d": (_gen_conv, ad.conv2d),
    "maxpool2": (_gen_pool, lambda x: ad.maxpool2(x)[0]),
    "upsample_nn": (lambda r: [r.standard_normal((1, *_dims(r, 1, 3, 1), *_dims(r, 1, 4, 2)))], ad.upsample_nn),
}


def test_criterion_01_autodiff_gradcheck():
    t0 = time.perf_counter()
    worst, worst_op = 0.0, ""
    for name, (gen, fn) in OP_GENERATORS.items():
        r = np.random.default_rng(zlib.crc32(name.encode()))
        for _ in range(20):
            arrays = gen(r)
            w = r.standard_normal(fn(*[ad.Tensor(a) for a in arrays]).shape)
            errs = check_gradients(lambda *ts: ad.sum(ad.mul(fn(*ts), ad.Tensor(w))), arrays)
            if max(errs) > worst:
                worst, worst_op = max(errs), name
    secs = time.perf_counter() - t0
    verdict(1, worst <= 1e-4 and secs < 60,
            f"{len(OP_GENERATORS)} operators x 20 shapes, max rel err {worst:.2e} ({worst_op}), {secs:.1f}s "
            f"(need <= 1e-4, < 60 s)")


# -- 2. Hadamard orthogonality and Russian-Doll nesting -------------------------

def test_criterion_02_hadamard():
    t0 = time.perf_counter()
    ok = True
    for side in (2, 4, 8, 16, 32):
        N = side * side
        for ordering in ("sylvester", "russian_doll", "random_permutation"):
            H = mm.make_model(ordering, side, seed=1).H.astype(np.int64)
            ok &= bool(np.array_equal(H @ H.T, N * np.eye(N, dtype=np.int64)))
        # nesting: each dyadic prefix of 4^k rows spans exactly the piecewise-constant images on 2^k x 2^k blocks
        H = mm.make_model("russian_doll", side).H
        m = int(np.log2(side))
        for k in range(m + 1):
            block = side >> k
            rows = H[:4 ** k].reshape(-1, side, side)
            coarse = rows.reshape(-1, 2 ** k, block, 2 ** k, block)
            ok &= bool(np.all(coarse == coarse[:, :, :1, :, :1]))
            P = rows.reshape(4 ** k, -1)
            ok &= np.linalg.matrix_rank(P) == 4 ** k
    secs = time.perf_counter() - t0
    verdict(2, ok and secs < 30, f"H H^T = N I for sides 2..32 (3 orderings) and all RD shells nested, {secs:.1f}s")


# -- 3. LSQR vs pseudo-inverse --------------------------------------------------

def test_criterion_03_lsqr_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst = 0.0
    for i in range(50):
        m, n = [(30, 12), (16, 16), (10, 25)][i % 3]
        A = rng.standard_normal((m, n))
        b = rng.standard_normal(m)
        x = lsqr_solve(A, b)
        ref = np.linalg.pinv(A) @ b
        worst = max(worst, float(np.abs(x - ref).max()))
    secs = time.perf_counter() - t0
    verdict(3, worst <= 1e-6 and secs < 30,
            f"50 systems (over/square/under), max |x - pinv(A) b| = {worst:.2e}, {secs:.1f}s (need <= 1e-6)")


# -- 4. TwIST monotonicity and Haar isometry -----------------------------------

def test_criterion_04_twist_and_haar():
    t0 = time.perf_counter()
    mono = True
    for seed in range(10):
        rng = np.random.default_rng(seed)
        model = mm.compress(mm.make_model("random_permutation", 16, seed=seed), 4)
        f = synth_shapes(1, 16, seed)[0]
        g = mm.forward_measure(model, f) + 0.01 * rng.standard_normal(model.n_measurements)
        hist = twist(model.H, g, TwistConfig(max_iters=150)).objective_history
        mono &= all(b <= a for a, b in zip(hist, hist[1:]))
    haar = 0.0
    for side in (2, 4, 8, 16, 32):
        x = np.random.default_rng(side).standard_normal((side, side))
        c = haar_dwt(x)
        haar = max(haar, abs(np.sum(c ** 2) - np.sum(x ** 2)), float(np.abs(haar_idwt(c) - x).max()))
    secs = time.perf_counter() - t0
    verdict(4, mono and haar <= 1e-10 and secs < 60,
            f"objective non-increasing on 10/10 problems: {mono}; Haar Parseval/round-trip err {haar:.1e}, "
            f"{secs:.1f}s")


# -- 5. autocorrelation -------------------------------------------------------

def direct_autocorr(f):
    s = f.shape[0]
    out = np.zeros((2 * s - 1, 2 * s - 1))
    for dy in range(-s + 1, s):
        for dx in range(-s + 1, s):
            acc = 0.0
            for y in range(s):
                for x in range(s):
                    if 0 <= y + dy < s and 0 <= x + dx < s:
                        acc += f[y, x] * f[y + dy, x + dx]
            out[dy + s - 1, dx + s - 1] = acc
    return out


def test_criterion_05_autocorrelation():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    err, sym, peak = 0.0, True, True
    for _ in range(20):
        f = rng.random((8, 8))
        A = mm.autocorrelate(f)
        err = max(err, float(np.abs(A - direct_autocorr(f)).max()))
        sym &= bool(np.array_equal(A, A[::-1, ::-1]))
        peak &= np.unravel_index(A.argmax(), A.shape) == (7, 7) and A[7, 7] == np.sum(f * f)
    secs = time.perf_counter() - t0
    verdict(5, err <= 1e-8 and sym and peak and secs < 10,
            f"FFT vs direct sum max err {err:.1e}; exact point symmetry {sym}; centre is the exact maximum and equals the energy {peak}; "
            f"{secs:.1f}s")


# -- 6. SSIM / RMSE -----------------------------------------------------------

def ssim_oracle(a, b):
    x = np.arange(11) - 5.0
    g = np.exp(-x ** 2 / (2 * 1.5 ** 2))
    w = np.outer(g, g) / np.outer(g, g).sum()
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    vals = []
    for i in range(a.shape[0] - 10):
        for j in range(a.shape[1] - 10):
            pa, pb = a[i:i + 11, j:j + 11], b[i:i + 11, j:j + 11]
            ma, mb = (w * pa).sum(), (w * pb).sum()
            va, vb = (w * (pa - ma) ** 2).sum(), (w * (pb - mb) ** 2).sum()
            cov = (w * (pa - ma) * (pb - mb)).sum()
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def test_criterion_06_metrics():
    rng = np.random.default_rng(6)
    worst = 0.0
    for side in (11, 16, 20):
        a, b = rng.random((side, side)), rng.random((side, side))
        worst = max(worst,
                    abs(metrics.ssim(a, a) - 1.0), abs(metrics.ssim(a, b) - metrics.ssim(b, a)),
                    abs(metrics.ssim(a, b) - ssim_oracle(a, b)),
                    abs(metrics.rmse(a, a)), abs(metrics.rmse(a, b) - metrics.rmse(b, a)),
                    abs(metrics.rmse(a, b) - np.sqrt(np.mean((a - b) ** 2))))
    verdict(6, worst <= 1e-9, f"identity, symmetry and windowed-oracle agreement, max deviation {worst:.1e} "
                              f"(need <= 1e-9)")


# -- 7. persistence ------------------------------------------------------------

def _untimed(x):
    # wall-clock fields are the only thing allowed to vary between reruns
    if isinstance(x, dict):
        return {k: _untimed(v) for k, v in x.items() if "seconds" not in k and not k.endswith("_ms")}
    if isinstance(x, list):
        return [_untimed(v) for v in x]
    return x


def _same_output(a, b):
    if a.suffix == ".json":
        return _untimed(json.loads(a.read_text())) == _untimed(json.loads(b.read_text()))
    return a.read_bytes() == b.read_bytes()


def test_criterion_07_persistence(tmp_path):
    rng = np.random.default_rng(7)
    tensors = {"a": rng.standard_normal((3, 4)).astype(np.float32), "b": np.arange(5, dtype=np.float32)}
    buf = ad.dumps_tensors(tensors)
    back = ad.loads_tensors(buf)
    tstw = ad.dumps_tensors(back) == buf and all(back[k].tobytes() == v.tobytes() for k, v in tensors.items())
    imgs = synth_shapes(10, 8, 0)
    ds = ImageDataset(imgs, rng.standard_normal((10, 5)), {"train": [0, 1, 2], "test": [5]}, lsqr=imgs)
    d = dumps_dataset(ds)
    tstd = dumps_dataset(loads_dataset(d)) == d
    cfg = config_from_dict({"kind": "compression_sweep", "grid": [4], "side": 8, "splits": [40, 10, 6],
                            "models": ["tst", "lsqr"], "train": {"epochs": 1, "batch_size": 20},
                            "network": {"unet": {"depth": 1, "base_channels": 2}}, "figures": False})
    run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    rerun = all(_same_output(tmp_path / "a" / f, tmp_path / "b" / f) for f in files)
    verdict(7, tstw and tstd and rerun,
            f"TSTW round trip {tstw}, TSTD round trip {tstd}, rerun identical over {len(files)} files (JSON timings excluded) {rerun}")


# -- 8-15. directional reproductions -------------------------------------------

@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp(f"acceptance_{SCALE}")


def test_criterion_08_planted_inverse(workdir):
    out = workdir / "c8"
    cfg = base_config("compression_sweep", grid=[1], models=["tst", "fcl_dl"], seeds=[0])
    run_experiment(cfg, out)
    step1 = seed_mean(out, "ratio=1", "fcl_dl")
    final = seed_mean(out, "ratio=1", "tst")
    verdict(8, step1 <= 0.03 and final - step1 <= 0.005,
            f"full RD basis side {S['side']}: step-1 test RMSE {step1:.4f} (need <= 0.03), "
            f"after step 2 {final:.4f} (change {final - step1:+.4f}, need <= +0.005)")


@pytest.fixture(scope="module")
def ranking(workdir):
    out = workdir / "c9"
    cfg = base_config("compression_sweep", grid=[4], ordering="random_permutation",
                      models=["tst", "fcl_dl", "ost", "dcan", "unet_lsqr", "lsqr"],
                      network={"unet": S["unet"], "dcan_channels": S["unet"]["base_channels"]})
    run_experiment(cfg, out)
    return out, cfg


def test_criterion_09_random_hadamard_ranking(ranking):
    out, _ = ranking
    r = {m: seed_mean(out, "ratio=4", m) for m in ("tst", "ost", "dcan", "unet_lsqr", "lsqr")}
    ok = r["tst"] <= r["ost"] and r["tst"] <= r["dcan"]
    verdict(9, ok, f"seed-averaged test RMSE TST {r['tst']:.4f}, OST {r['ost']:.4f}, DCAN {r['dcan']:.4f} "
                   f"(need TST <= OST and TST <= DCAN); reported only: LSQR-input U-Net {r['unet_lsqr']:.4f}, "
                   f"LSQR {r['lsqr']:.4f}")


def test_criterion_10_intermediate_and_overfitting(ranking):
    out, cfg = ranking
    mids = {"tst": [], "ost": []}
    gaps = {"tst": [], "ost": []}
    for seed in cfg.seeds:
        ds, _ = job_dataset(cfg, 4, seed)
        Xtr, Ytr, _ = ds.part("train")
        Xte, Yte, _ = ds.part("test")
        for kind in ("tst", "ost"):
            model = load_model(out / "points" / "ratio=4" / f"seed{seed}" / "models" / f"{kind}.tstw")
            mid = np.clip(predict_intermediate(model, Xte), 0, 1)
            mids[kind].append(np.mean([metrics.rmse(p, t) for p, t in zip(mid, Yte)]))
            train = np.mean([metrics.rmse(p, t) for p, t in zip(np.clip(predict(model, Xtr), 0, 1), Ytr)])
            test = np.mean([metrics.rmse(p, t) for p, t in zip(np.clip(predict(model, Xte), 0, 1), Yte)])
            gaps[kind].append(test - train)
    m = {k: float(np.mean(v)) for k, v in mids.items()}
    g = {k: float(np.mean(v)) for k, v in gaps.items()}
    verdict(10, m["tst"] < m["ost"] and g["ost"] >= g["tst"],
            f"post-FCL intermediate RMSE TST {m['tst']:.4f} vs OST {m['ost']:.4f} (need TST < OST); "
            f"test-train gap TST {g['tst']:.4f} vs OST {g['ost']:.4f} (need OST >= TST)")


def test_criterion_11_noise_sweep(workdir):
    out = workdir / "c11"
    grid = [15, 10, 5, 0, -5]
    cfg = base_config("noise_sweep", grid=grid, models=["tst"], ordering="russian_doll", ratio=4)
    run_experiment(cfg, out)
    r = [seed_mean(out, f"snr_db={p}", "tst") for p in grid]
    s = [seed_mean(out, f"snr_db={p}", "tst", "ssim_mean") for p in grid]
    steps = np.diff(r)
    ties = [d for d in steps if d <= 0]
    ok = len(ties) <= 1 and all(d >= -0.002 for d in ties)
    target = "met" if r[-1] < 0.11 and s[-1] > 0.50 else "not met"
    verdict(11, ok, "TST RMSE at SNR 15/10/5/0/-5 dB: " + ", ".join(f"{v:.4f}" for v in r) +
            f" (strictly increasing, one tie within 0.002 allowed); reported only: -5 dB RMSE {r[-1]:.4f}, "
            f"SSIM {s[-1]:.4f} vs reference bound RMSE < 0.11 and SSIM > 0.50 ({target})")


def test_criterion_12_trainsize(workdir):
    out = workdir / "c12"
    grid = S["trainsize_grid"]
    cfg = base_config("trainsize_sweep", grid=grid, models=["tst"], ordering="russian_doll", ratio=4)
    run_experiment(cfg, out)
    r = [seed_mean(out, f"n_train={p}", "tst") for p in grid]
    verdict(12, r[-1] <= r[0], "TST RMSE by training size " +
            ", ".join(f"{n}: {v:.4f}" for n, v in zip(grid, r)) + " (need largest <= smallest)")


def test_criterion_13_mismatch(workdir):
    out = workdir / "c13"
    grid = [0.0, 0.1]
    cfg = base_config("mismatch_sweep", grid=grid, models=["tst", "unet_lsqr"], ordering="russian_doll",
                      ratio=4, mismatch_mode="invert_elements")
    run_experiment(cfg, out)
    r = {(p, m): seed_mean(out, f"mismatch={p}", m) for p in grid for m in ("tst", "unet_lsqr")}
    verdict(13, r[(0.1, "tst")] <= r[(0.1, "unet_lsqr")],
            f"10% inverted elements: TST {r[(0.1, 'tst')]:.4f} vs LSQR-input U-Net {r[(0.1, 'unet_lsqr')]:.4f} "
            f"(need TST <= U-Net); no mismatch: TST {r[(0.0, 'tst')]:.4f}, U-Net {r[(0.0, 'unet_lsqr')]:.4f}")


def test_criterion_14_deautocorrelation(workdir):
    out = workdir / "c14"
    cfg = config_from_dict({
        "kind": "deautocorr", "source": "digits", "side": 16, "splits": S["deautocorr_splits"],
        "seeds": S["seeds"], "models": ["tst", "gs"],
        "train": {"epochs": S["epochs"], "batch_size": 50},
        "network": {"fcl_layers": 3, "unet": {"depth": 2, "base_channels": S["unet"]["base_channels"]}},
        "gs": {"iters": 1000, "restarts": 5}, "export_images": 2, "figures": False})
    run_experiment(cfg, out)
    tst = seed_mean(out, "model=autocorrelation", "tst")
    gs = seed_mean(out, "model=autocorrelation", "gs")
    twins, rows, logged = 0, 0, False
    for seed in cfg.seeds:
        log = (out / "points" / "model=autocorrelation" / f"seed{seed}" / "gs_log.csv").read_text().splitlines()
        header = log[0].split(",")
        rows += len(log) - 1
        logged = {"fourier_residual", "rotated", "shift_y", "shift_x", "twin_suspect"} <= set(header)
        twins += sum(int(line.rsplit(",", 1)[1]) for line in log[1:])
    visible = logged and rows == len(cfg.seeds) * cfg.splits[2]
    verdict(14, tst <= gs and visible,
            f"registered RMSE 3-FCL TST {tst:.4f} vs GS {gs:.4f} (need TST <= GS); per-image GS log rows "
            f"{rows} (residual, rotation, shift and twin flag per image: {visible}), flagged twin failures {twins}")


def test_criterion_15_latency(workdir):
    side = 32
    imgs = synth_shapes(160, side, 15)
    model = mm.compress(mm.make_model("russian_doll", side), 4)
    from tstdl.data import build_dataset

    ds = build_dataset(imgs, model, splits=(100, 30, 30), seed=0)
    spec = NetworkSpec(ds.n_measurements, side, unet=UNetSpec(depth=3, base_channels=16))
    trained = train_tst(ds, spec, TrainConfig(epochs=1, batch_size=50))
    lat = measure_latency(trained, ds.measurements, n=1000)
    verdict(15, lat["mean_ms"] <= 10.0,
            f"side-32 TST (D=3, C=16) single-image inference over {lat['n']} calls: mean {lat['mean_ms']:.2f} ms, "
            f"median {lat['median_ms']:.2f} ms, p95 {lat['p95_ms']:.2f} ms (need mean <= 10 ms)")
