"""Training pipelines (two-step, one-step, DCAN decoder, LSQR-input U-Net),
inference helpers and model persistence."""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..data import ImageDataset
from ..errors import DimensionError, FormatError, ParameterError
from ..metrics import SSIM_WINDOW, ssim as _ssim
from ..rng import child_seeds, make_rng
from .losses import loss_mse, loss_rmse_dssim
from .networks import Network, NetworkSpec, UNetSpec

log = logging.getLogger(__name__)

LOSSES = ("mse", "rmse_dssim")


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 50
    loss: str = "rmse_dssim"
    alpha: float = 1.0
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    seed: int = 0
    log_every: int = 1

    def __post_init__(self):
        if self.epochs < 1:
            raise ParameterError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if self.loss not in LOSSES:
            raise ParameterError(f"unknown loss {self.loss!r}")
        if self.alpha < 0:
            raise ParameterError("alpha must be non-negative")
        if self.optimizer not in ("adam", "sgd"):
            raise ParameterError(f"unknown optimizer {self.optimizer!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainedModel:
    kind: str
    network: Network
    history: List[dict] = field(default_factory=list)
    provenance: Dict[str, object] = field(default_factory=dict)

    @property
    def spec(self) -> NetworkSpec:
        return self.network.spec

    def epochs_run(self) -> int:
        return len(self.history)


def _loss(kind, alpha):
    if kind == "mse":
        return loss_mse
    return lambda p, t: loss_rmse_dssim(p, t, alpha)


def _optimizer(cfg: TrainConfig):
    if cfg.optimizer == "sgd":
        return ad.sgd(cfg.learning_rate)
    return ad.adam(cfg.learning_rate)


def _score(pred, target):
    """(rmse, mean ssim) over a stack; SSIM is NaN below the 11-pixel window."""
    r = float(np.sqrt(np.mean((pred.astype(np.float64) - target) ** 2)))
    if pred.shape[-1] < SSIM_WINDOW:
        return r, float("nan")
    return r, float(np.mean([_ssim(np.clip(p, 0, 1), t) for p, t in zip(pred, target)]))


def _fit(net: Network, x, y, xv, yv, cfg: TrainConfig, loss_kind: str, epochs: int,
         names: List[str], step: int, front_only: bool, seed: int, history: List[dict]):
    """Minibatch training of ``names``; restores the best-validation state.

    The untrained state counts as a checkpoint candidate, so the returned
    validation loss never exceeds the initial one.
    """
    if len(x) == 0:
        raise ParameterError("training split is empty")
    if len(xv) == 0:
        raise ParameterError("validation split is empty")
    bn_active = net.spec.batchnorm_after_fcl and any(n.startswith("bn.") for n in names)
    if bn_active and cfg.batch_size < 2:
        raise ParameterError("batchnorm needs batch_size >= 2")
    s_shuffle, s_drop = child_seeds(seed, 2)
    shuffle_rng, drop_rng = make_rng(s_shuffle), make_rng(s_drop)
    loss_fn = _loss(loss_kind, cfg.alpha)
    opt = _optimizer(cfg)
    trainable = {n: net.params[n] for n in names}
    for n in names:
        net.params[n].requires_grad = True

    def validate():
        out, mid = net.infer(xv, front_only=front_only)
        return float(loss_fn(Tensor(out), yv).data), out, mid

    best_loss, _, _ = validate()
    best_state = net.snapshot()
    initial = best_loss
    n = len(x)
    for epoch in range(1, epochs + 1):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(n)
        batches = [order[i:i + cfg.batch_size] for i in range(0, n, cfg.batch_size)]
        if bn_active and len(batches) > 1 and len(batches[-1]) < 2:
            batches[-2] = np.concatenate(batches[-2:])
            batches.pop()
        total = 0.0
        for idx in batches:
            out, _ = net.forward(x[idx], training=True, rng=drop_rng, front_only=front_only)
            loss = loss_fn(out, y[idx])
            for p in net.params.values():
                p.zero_grad()
            ad.backward(loss)
            ad.optimizer_step(opt, trainable)
            total += float(loss.data) * len(idx)
        val_loss, vout, vmid = validate()
        v_rmse, v_ssim = _score(vout, yv)
        rec = {"step": step, "epoch": epoch, "train_loss": total / n, "val_loss": val_loss,
               "val_rmse": v_rmse, "val_ssim": v_ssim,
               "seconds": time.perf_counter() - t0}
        if vmid is not None:
            rec["val_intermediate_rmse"] = float(np.sqrt(np.mean((vmid.astype(np.float64) - yv) ** 2)))
        history.append(rec)
        if cfg.log_every and epoch % cfg.log_every == 0:
            log.info("step %d epoch %d train %.5f val %.5f rmse %.4f", step, epoch,
                     rec["train_loss"], val_loss, v_rmse)
        if val_loss < best_loss:
            best_loss, best_state = val_loss, net.snapshot()
    net.load_state(best_state)
    return initial, best_loss


def _split(dataset: ImageDataset, image_input: bool = False):
    """Arrays for train and validation; ``image_input`` feeds the LSQR channel."""
    if image_input and dataset.lsqr is None:
        raise ParameterError("dataset has no LSQR channel; rebuild it with lsqr=True")
    out = []
    for split in ("train", "validation"):
        meas, imgs, guess = dataset.part(split)
        if image_input:
            meas = guess.reshape(len(guess), -1)
        out += [meas, imgs.astype(np.float32)]
    if len(out[0]) == 0:
        raise ParameterError("dataset has an empty training split")
    return out


def _check_spec(spec: NetworkSpec, dataset: ImageDataset, image_input: bool = False):
    length = dataset.side ** 2 if image_input else dataset.n_measurements
    if spec.input_length != length:
        raise DimensionError(f"spec expects inputs of length {spec.input_length}, dataset has {length}")
    if spec.output_side != dataset.side:
        raise DimensionError(f"spec output side {spec.output_side} != dataset side {dataset.side}")


def _provenance(dataset, spec, cfg, kind, **extra):
    prov = {"kind": kind, "dataset_hash": dataset.content_hash(), "dataset_source": dataset.source,
            "spec": spec.to_dict(), "config": cfg.to_dict(), "seed": cfg.seed}
    prov.update(extra)
    return prov


def default_spec(dataset: ImageDataset, unet: Optional[UNetSpec] = None, **kw) -> NetworkSpec:
    """FCL + batchnorm + U-Net spec sized for ``dataset``."""
    return NetworkSpec(dataset.n_measurements, dataset.side, unet=unet or UNetSpec(), **kw)


def train_tst(dataset: ImageDataset, spec: NetworkSpec, cfg: TrainConfig) -> TrainedModel:
    """Two-step training.

    Step 1 fits the front end alone to the images with MSE. Step 2 freezes
    it (batchnorm included, which then runs in inference mode) and trains
    the back end on the combined loss. The intermediate image of the result
    is the step-1 reconstruction ("FCL-DL").
    """
    if spec.front_end != "fcl":
        raise ParameterError("two-step training needs an FCL front end")
    _check_spec(spec, dataset)
    x, y, xv, yv = _split(dataset)
    spec = NetworkSpec.from_dict(spec.to_dict())
    spec.front_end_frozen = False
    s_init, s1, s2 = child_seeds(cfg.seed, 3)
    net = Network(spec, s_init)
    net.fit_statistics(x, y)
    history: List[dict] = []
    t0 = time.perf_counter()
    init1, best1 = _fit(net, x, y, xv, yv, cfg, "mse", cfg.epochs, net.front_end_names(),
                        1, True, s1, history)
    step1_rmse = history_best(history, 1)
    net.set_front_end_frozen(True)
    init2 = best2 = None
    if spec.back_end != "none":
        init2, best2 = _fit(net, x, y, xv, yv, cfg, cfg.loss, cfg.epochs, net.back_end_names(),
                            2, False, s2, history)
    prov = _provenance(dataset, net.spec, cfg, "tst", train_seconds=time.perf_counter() - t0,
                       initial_val_loss=[init1, init2], best_val_loss=[best1, best2],
                       step1_val_rmse=step1_rmse)
    return TrainedModel("tst", net, history, prov)


def history_best(history: List[dict], step: int) -> Optional[float]:
    """Validation RMSE at the best-loss epoch of ``step``."""
    recs = [r for r in history if r["step"] == step]
    if not recs:
        return None
    return min(recs, key=lambda r: r["val_loss"])["val_rmse"]


def _train_one_step(kind, dataset, spec, cfg, epochs, image_input=False) -> TrainedModel:
    _check_spec(spec, dataset, image_input)
    x, y, xv, yv = _split(dataset, image_input)
    spec = NetworkSpec.from_dict(spec.to_dict())
    spec.front_end_frozen = False
    s_init, s1 = child_seeds(cfg.seed, 2)
    net = Network(spec, s_init)
    net.fit_statistics(x, y)
    history: List[dict] = []
    t0 = time.perf_counter()
    init, best = _fit(net, x, y, xv, yv, cfg, cfg.loss, epochs, list(net.params), 1, False, s1, history)
    prov = _provenance(dataset, net.spec, cfg, kind, train_seconds=time.perf_counter() - t0,
                       initial_val_loss=[init], best_val_loss=[best], epochs=epochs)
    return TrainedModel(kind, net, history, prov)


def train_ost(dataset: ImageDataset, spec: NetworkSpec, cfg: TrainConfig) -> TrainedModel:
    """One-step joint training of the same graph for twice the epochs."""
    if spec.front_end != "fcl":
        raise ParameterError("one-step training needs an FCL front end")
    return _train_one_step("ost", dataset, spec, cfg, 2 * cfg.epochs)


def train_dcan_decoder(dataset: ImageDataset, cfg: TrainConfig, channels: int = 16,
                       spec: Optional[NetworkSpec] = None) -> TrainedModel:
    """DCAN decoder (FCL + three 3x3 convs) trained one-step for 2x epochs."""
    spec = spec or NetworkSpec(dataset.n_measurements, dataset.side, batchnorm_after_fcl=False,
                               dcan_channels=channels)
    if spec.dcan_channels is None:
        raise ParameterError("spec has no DCAN decoder")
    return _train_one_step("dcan", dataset, spec, cfg, 2 * cfg.epochs)


def train_unet_baseline(dataset: ImageDataset, cfg: TrainConfig,
                        unet: Optional[UNetSpec] = None) -> TrainedModel:
    """U-Net trained image-to-image on the LSQR initial guesses."""
    if dataset.lsqr is None:
        raise ParameterError("dataset has no LSQR channel; rebuild it with lsqr=True")
    side = dataset.side
    spec = NetworkSpec(side * side, side, front_end="none", standardize_input=False,
                       batchnorm_after_fcl=False, unet=unet or UNetSpec())
    return _train_one_step("unet_lsqr", dataset, spec, cfg, cfg.epochs, image_input=True)


# ----------------------------------------------------------------------------
# inference
# ----------------------------------------------------------------------------

def _inputs(model: TrainedModel, measurement) -> tuple:
    m = np.asarray(measurement, dtype=np.float32)
    L = model.spec.input_length
    single = m.size == L
    if single:
        m = m.reshape(1, L)
    else:
        m = m.reshape(len(m), -1)
        if m.shape[1] != L:
            raise DimensionError(f"model expects inputs of length {L}, got {m.shape[1]}")
    return m, single


def predict(model: TrainedModel, measurement) -> np.ndarray:
    """Inference-mode reconstruction of one input or a batch of inputs."""
    m, single = _inputs(model, measurement)
    out, _ = model.network.infer(m)
    return out[0] if single else out


def predict_intermediate(model: TrainedModel, measurement) -> np.ndarray:
    """Post-front-end image (the FCL-DL reconstruction for a TST model)."""
    if model.spec.front_end != "fcl":
        raise ParameterError("model has no front end")
    m, single = _inputs(model, measurement)
    out, _ = model.network.infer(m, front_only=True)
    return out[0] if single else out


def measure_latency(model: TrainedModel, inputs, n: int = 1000) -> dict:
    """Wall-clock of single-input :func:`predict` calls, cycling ``inputs``."""
    m, _ = _inputs(model, inputs)
    if n < 1:
        raise ParameterError("need at least one timed call")
    predict(model, m[0])  # warm-up
    times = np.empty(n)
    for i in range(n):
        t0 = time.perf_counter()
        predict(model, m[i % len(m)])
        times[i] = time.perf_counter() - t0
    return {"n": n, "mean_ms": float(times.mean() * 1e3), "median_ms": float(np.median(times) * 1e3),
            "p95_ms": float(np.percentile(times, 95) * 1e3)}


# ----------------------------------------------------------------------------
# persistence: TSTW tensors + JSON manifest
# ----------------------------------------------------------------------------

def _manifest_path(path: Path) -> Path:
    return path.with_suffix(".json")


def _clean(obj):
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def save_model(model: TrainedModel, path) -> None:
    """Write ``path`` (TSTW) and a sibling ``.json`` manifest."""
    path = Path(path)
    state = model.network.state()
    ad.save_tensors(path, state)
    manifest = {"kind": model.kind, "spec": model.spec.to_dict(), "tensors": sorted(state),
                "history": model.history, "provenance": model.provenance}
    tmp = _manifest_path(path).with_name(_manifest_path(path).name + ".tmp")
    tmp.write_text(json.dumps(_clean(manifest), indent=1, sort_keys=True))
    os.replace(tmp, _manifest_path(path))


def load_model(path) -> TrainedModel:
    path = Path(path)
    mpath = _manifest_path(path)
    if not mpath.exists():
        raise FormatError(f"missing model manifest {mpath}")
    manifest = json.loads(mpath.read_text())
    tensors = ad.load_tensors(path)
    if sorted(tensors) != sorted(manifest.get("tensors", [])):
        raise FormatError(f"{path}: tensor names disagree with the manifest")
    spec = NetworkSpec.from_dict(manifest["spec"])
    net = Network(spec)
    net.load_state(tensors)
    net.set_front_end_frozen(spec.front_end_frozen)
    return TrainedModel(manifest["kind"], net, manifest.get("history", []), manifest.get("provenance", {}))
