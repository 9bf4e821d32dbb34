"""Image sources, paired image/measurement datasets, and the TSTD container.

TSTD layout (integers little-endian)::

    b"TSTD"  u32 version  u32 n_images  u32 side  u32 M
    3 x { u32 length, length x u32 index }      # train, validation, test
    f32 images[n_images, side, side]
    f32 measurements[n_images, M]
    u8 has_lsqr  [f32 lsqr[n_images, side, side]]
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Sequence

import numpy as np
from scipy.ndimage import zoom

from .errors import DimensionError, FormatError, ParameterError
from .measurement import MeasurementModel, MismatchSpec, add_noise_snr, forward_measure, perturb_model
from .rng import child_seeds, make_rng
from .solvers.lsqr import LsqrConfig, lsqr_solve

SPLITS = ("train", "validation", "test")
TSTD_MAGIC = b"TSTD"
TSTD_VERSION = 1
STL10_SIDE = 96
STL10_RECORD = STL10_SIDE * STL10_SIDE * 3


@dataclass
class ImageDataset:
    images: np.ndarray
    measurements: np.ndarray
    splits: Dict[str, np.ndarray]
    lsqr: Optional[np.ndarray] = None
    source: str = "synthetic_shapes"
    model: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=np.float32)
        self.measurements = np.ascontiguousarray(self.measurements, dtype=np.float32)
        if self.lsqr is not None:
            self.lsqr = np.ascontiguousarray(self.lsqr, dtype=np.float32)
        self.splits = {k: np.asarray(self.splits.get(k, []), dtype=np.int64) for k in SPLITS}
        n = len(self.images)
        if self.images.ndim != 3 or self.images.shape[1] != self.images.shape[2]:
            raise DimensionError(f"images must be (n, side, side), got {self.images.shape}")
        if len(self.measurements) != n:
            raise DimensionError("images and measurements are not aligned")
        if self.lsqr is not None and self.lsqr.shape != self.images.shape:
            raise DimensionError("LSQR channel must match the image stack")
        seen = set()
        for k in SPLITS:
            idx = self.splits[k]
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise ParameterError(f"split '{k}' indexes outside the dataset")
            if seen.intersection(idx.tolist()):
                raise ParameterError("splits overlap")
            seen.update(idx.tolist())

    @property
    def side(self) -> int:
        return self.images.shape[1]

    @property
    def n_measurements(self) -> int:
        return self.measurements.shape[1]

    def part(self, split: str):
        """(measurements, images, lsqr-or-None) for one split."""
        idx = self.splits[split]
        lsqr = None if self.lsqr is None else self.lsqr[idx]
        return self.measurements[idx], self.images[idx], lsqr

    def subset_train(self, n_train: int) -> "ImageDataset":
        """Same data with the training split truncated to its first ``n_train`` indices."""
        if n_train > len(self.splits["train"]):
            raise ParameterError(f"only {len(self.splits['train'])} training images available")
        splits = dict(self.splits)
        splits["train"] = splits["train"][:n_train]
        return ImageDataset(self.images, self.measurements, splits, self.lsqr, self.source, self.model, self.seed)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(dumps_dataset(self))
        return h.hexdigest()[:16]


# ----------------------------------------------------------------------------
# TSTD container
# ----------------------------------------------------------------------------

def dumps_dataset(ds: ImageDataset) -> bytes:
    n, side = len(ds.images), ds.side
    parts = [TSTD_MAGIC, struct.pack("<IIII", TSTD_VERSION, n, side, ds.n_measurements)]
    for k in SPLITS:
        idx = ds.splits[k]
        parts.append(struct.pack("<I", idx.size))
        parts.append(idx.astype("<u4").tobytes())
    parts.append(ds.images.astype("<f4").tobytes())
    parts.append(ds.measurements.astype("<f4").tobytes())
    parts.append(struct.pack("<B", ds.lsqr is not None))
    if ds.lsqr is not None:
        parts.append(ds.lsqr.astype("<f4").tobytes())
    return b"".join(parts)


def loads_dataset(buf: bytes) -> ImageDataset:
    if buf[:4] != TSTD_MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}, expected {TSTD_MAGIC!r}")
    try:
        version, n, side, m = struct.unpack_from("<IIII", buf, 4)
        if version != TSTD_VERSION:
            raise FormatError(f"unsupported TSTD version {version}")
        pos = 20
        splits = {}
        for k in SPLITS:
            (length,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            splits[k] = np.frombuffer(buf, "<u4", length, pos).astype(np.int64)
            pos += 4 * length

        def block(count, shape):
            nonlocal pos
            arr = np.frombuffer(buf, "<f4", count, pos).reshape(shape).astype(np.float32)
            pos += 4 * count
            return arr

        images = block(n * side * side, (n, side, side))
        meas = block(n * m, (n, m))
        (flag,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        lsqr = block(n * side * side, (n, side, side)) if flag else None
    except (struct.error, ValueError) as exc:
        raise FormatError(f"truncated TSTD data: {exc}") from None
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes in TSTD data")
    return ImageDataset(images, meas, splits, lsqr)


def save_dataset(ds: ImageDataset, path) -> None:
    """Write the container plus a JSON sidecar carrying source/model/seed."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps_dataset(ds))
    os.replace(tmp, path)
    meta = {"source": ds.source, "model": ds.model, "seed": ds.seed,
            "splits": {k: int(v.size) for k, v in ds.splits.items()}}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def load_dataset(path) -> ImageDataset:
    path = Path(path)
    ds = loads_dataset(path.read_bytes())
    side = path.with_suffix(path.suffix + ".json")
    if side.exists():
        meta = json.loads(side.read_text())
        ds.source, ds.model, ds.seed = meta.get("source", ""), meta.get("model", {}), meta.get("seed", 0)
    return ds


# ----------------------------------------------------------------------------
# image sources
# ----------------------------------------------------------------------------

def resize(images: np.ndarray, side: int) -> np.ndarray:
    """Bilinear resize of an (n, h, w) stack to (n, side, side), clipped to [0, 1]."""
    images = np.asarray(images, dtype=np.float64)
    if images.shape[1:] == (side, side):
        return images.copy()
    fy, fx = side / images.shape[1], side / images.shape[2]
    out = np.stack([zoom(im, (fy, fx), order=1, grid_mode=True, mode="nearest") for im in images])
    return np.clip(out, 0.0, 1.0)


def load_idx(images_path, labels_path=None, side: Optional[int] = None):
    """Read an IDX u8 image file (MNIST layout) scaled to [0, 1].

    Returns the image stack, or ``(images, labels)`` when ``labels_path`` is
    given.
    """
    raw = Path(images_path).read_bytes()
    if len(raw) < 4 or struct.unpack(">I", raw[:4])[0] != 0x00000803:
        raise FormatError(f"{images_path}: not an IDX u8 3-D file (magic 0x00000803)")
    if len(raw) < 16:
        raise FormatError(f"{images_path}: truncated header")
    n, h, w = struct.unpack(">III", raw[4:16])
    if len(raw) < 16 + n * h * w:
        raise FormatError(f"{images_path}: expected {n * h * w} pixel bytes, found {len(raw) - 16}")
    images = np.frombuffer(raw, np.uint8, n * h * w, 16).reshape(n, h, w) / 255.0
    if side is not None:
        images = resize(images, side)
    if labels_path is None:
        return images
    lab = Path(labels_path).read_bytes()
    if len(lab) < 8 or struct.unpack(">I", lab[:4])[0] != 0x00000801:
        raise FormatError(f"{labels_path}: not an IDX u8 1-D file (magic 0x00000801)")
    (nl,) = struct.unpack(">I", lab[4:8])
    if nl != n or len(lab) < 8 + nl:
        raise FormatError(f"{labels_path}: label count does not match images")
    return images, np.frombuffer(lab, np.uint8, nl, 8).copy()


def load_stl10(binary_path, side: Optional[int] = None) -> np.ndarray:
    """STL-10 ``*_X.bin``: 96x96x3 records, each channel stored column-major."""
    raw = Path(binary_path).read_bytes()
    if len(raw) % STL10_RECORD:
        raise FormatError(f"{binary_path}: size {len(raw)} is not a multiple of {STL10_RECORD}")
    n = len(raw) // STL10_RECORD
    rgb = np.frombuffer(raw, np.uint8).reshape(n, 3, STL10_SIDE, STL10_SIDE).transpose(0, 1, 3, 2)
    gray = (0.299 * rgb[:, 0] + 0.587 * rgb[:, 1] + 0.114 * rgb[:, 2]) / 255.0
    return resize(gray, side) if side else gray


def load_digits(side: int = 16, frame: int = 2) -> np.ndarray:
    """Handwritten digits bundled with scikit-learn (8x8, 1797 images).

    Each digit is resized to ``side - 2 * frame`` and padded with a blank
    border, mimicking the margin MNIST digits have.
    """
    from sklearn.datasets import load_digits as _sk_digits

    raw = _sk_digits().images / 16.0
    inner = resize(raw, side - 2 * frame)
    return np.pad(inner, ((0, 0), (frame, frame), (frame, frame)))


def _draw_stroke(img, rng, yy, xx):
    s = img.shape[0]
    t = np.linspace(0, 1, 40)
    p0, p1, p2 = rng.uniform(0.15 * s, 0.85 * s, (3, 2))
    curve = ((1 - t) ** 2)[:, None] * p0 + (2 * (1 - t) * t)[:, None] * p1 + (t ** 2)[:, None] * p2
    width = rng.uniform(0.04, 0.09) * s
    d2 = np.min((yy[..., None] - curve[:, 0]) ** 2 + (xx[..., None] - curve[:, 1]) ** 2, axis=-1)
    return np.exp(-d2 / (2 * width ** 2))


def synth_shapes(count: int, side: int, seed: int) -> np.ndarray:
    """Procedural scenes: gradient background plus rectangles, discs and strokes."""
    rng = make_rng(seed)
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    out = np.empty((count, side, side))
    for i in range(count):
        angle = rng.uniform(0, 2 * np.pi)
        ramp = (np.cos(angle) * xx + np.sin(angle) * yy) / side
        img = rng.uniform(0.1, 0.4) + rng.uniform(0.0, 0.3) * (ramp - ramp.min())
        for _ in range(rng.integers(1, 5)):
            kind = rng.integers(0, 3)
            level = rng.uniform(0.0, 1.0)
            if kind == 0:
                y0, x0 = rng.uniform(-0.1, 0.8, 2) * side
                h, w = rng.uniform(0.15, 0.6, 2) * side
                mask = ((yy >= y0) & (yy < y0 + h) & (xx >= x0) & (xx < x0 + w)).astype(float)
            elif kind == 1:
                cy, cx = rng.uniform(0.1, 0.9, 2) * side
                r = rng.uniform(0.08, 0.35) * side
                mask = np.clip(r + 0.5 - np.hypot(yy - cy, xx - cx), 0, 1)
            else:
                mask = _draw_stroke(img, rng, yy, xx)
            img = img * (1 - mask) + level * mask
        out[i] = np.clip(img, 0.0, 1.0)
    return out


# ----------------------------------------------------------------------------
# dataset assembly
# ----------------------------------------------------------------------------

def split_indices(n: int, sizes: Sequence[int], seed: int) -> Dict[str, np.ndarray]:
    if len(sizes) != 3:
        raise ParameterError("split sizes must be (train, validation, test)")
    if sum(sizes) > n:
        raise ParameterError(f"split sizes {tuple(sizes)} exceed {n} images")
    perm = make_rng(seed).permutation(n)
    out, start = {}, 0
    for k, size in zip(SPLITS, sizes):
        out[k] = np.sort(perm[start:start + size])
        start += size
    return out


def build_dataset(images: np.ndarray, model: MeasurementModel, noise_snr: Optional[float] = None,
                  mismatch: Optional[MismatchSpec] = None, lsqr: bool = False,
                  splits: Optional[Sequence[int]] = None, seed: int = 0,
                  source: str = "synthetic_shapes", normalize_autocorr: bool = True) -> ImageDataset:
    """Simulate acquisition for every image.

    Measurements come from the (optionally perturbed) model, then optional
    white noise. The LSQR initial guess always uses the unperturbed model,
    mirroring a physics-based method that does not know about the mismatch.
    Autocorrelation measurements are divided by their per-image maximum.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 3 or images.shape[1:] != (model.image_side, model.image_side):
        raise DimensionError(f"images {images.shape} do not match model side {model.image_side}")
    if images.min() < 0 or images.max() > 1:
        raise ParameterError("images must lie in [0, 1]")
    s_split, s_noise = child_seeds(seed, 2)
    acq = model if mismatch is None else perturb_model(model, mismatch)
    meas = forward_measure(acq, images)
    if model.kind == "autocorrelation" and normalize_autocorr:
        meas = meas / np.maximum(meas.max(axis=1, keepdims=True), 1e-12)
    if noise_snr is not None:
        meas = add_noise_snr(meas, noise_snr, s_noise)
    guess = None
    if lsqr:
        if model.kind != "linear":
            raise ParameterError("an LSQR channel needs a linear model")
        s = model.image_side
        cfg = LsqrConfig()
        guess = np.stack([lsqr_solve(model.H, g, cfg).reshape(s, s) for g in meas])
    n = len(images)
    sizes = splits if splits is not None else (n, 0, 0)
    desc = model.describe()
    if mismatch is not None:
        desc["mismatch"] = {"mode": mismatch.mode, "fraction": mismatch.fraction,
                            "sigma": mismatch.sigma, "seed": mismatch.seed}
    if noise_snr is not None:
        desc["noise_snr_db"] = noise_snr
    return ImageDataset(images, meas, split_indices(n, sizes, s_split), guess, source, desc, seed)
