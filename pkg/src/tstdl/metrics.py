"""Image-quality metrics and their aggregation.

All metrics assume intensities on a [0, 1] scale. Reconstructions are clamped
to that range by :func:`evaluate` (networks can overshoot); the raw
:func:`rmse` and :func:`ssim` functions do not clamp.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, ParameterError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03
CSV_HEADER = ("experiment", "model", "image_id", "rmse", "ssim")


def _same_shape(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def rmse(a, b) -> float:
    a, b = _same_shape(a, b)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def error_image(a, b) -> np.ndarray:
    a, b = _same_shape(a, b)
    return np.abs(a - b)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 1-D Gaussian; the 2-D window is its outer product."""
    x = np.arange(size) - (size - 1) / 2.0
    w = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return w / w.sum()


def _filter_valid(img: np.ndarray, w: np.ndarray) -> np.ndarray:
    k = w.size
    rows = sliding_window_view(img, k, axis=-1) @ w
    return np.swapaxes(sliding_window_view(np.swapaxes(rows, -1, -2), k, axis=-1) @ w, -1, -2)


def ssim_map(a, b, data_range: float = 1.0) -> np.ndarray:
    """Local SSIM over every fully-contained 11x11 Gaussian window."""
    a, b = _same_shape(a, b)
    if a.shape[-1] < SSIM_WINDOW or a.shape[-2] < SSIM_WINDOW:
        raise ParameterError(f"image {a.shape[-2:]} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    w = gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a, mu_b = _filter_valid(a, w), _filter_valid(b, w)
    saa = _filter_valid(a * a, w) - mu_a ** 2
    sbb = _filter_valid(b * b, w) - mu_b ** 2
    sab = _filter_valid(a * b, w) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2)
    return num / den


def ssim(a, b, data_range: float = 1.0) -> float:
    return float(np.mean(ssim_map(a, b, data_range)))


def dssim(a, b) -> float:
    return (1.0 - ssim(a, b)) / 2.0


@dataclass
class ImageMetrics:
    image_id: str
    rmse: float
    ssim: float


@dataclass
class MetricsReport:
    """Per-image metrics plus population mean/std of each."""

    per_image: List[ImageMetrics]
    experiment: str = ""
    model: str = ""
    provenance: dict = field(default_factory=dict)
    clamped: bool = True
    std_kind: str = "population"

    @property
    def rmse_mean(self) -> float:
        return _mean([m.rmse for m in self.per_image])

    @property
    def rmse_std(self) -> float:
        return _pstd([m.rmse for m in self.per_image])

    @property
    def ssim_mean(self) -> float:
        return _mean([m.ssim for m in self.per_image])

    @property
    def ssim_std(self) -> float:
        return _pstd([m.ssim for m in self.per_image])

    def aggregate_dict(self) -> dict:
        return {
            "n": len(self.per_image),
            "rmse_mean": self.rmse_mean,
            "rmse_std": self.rmse_std,
            "ssim_mean": self.ssim_mean,
            "ssim_std": self.ssim_std,
            "clamped_to_unit_range": self.clamped,
            "std": self.std_kind,
        }


def _mean(xs: Sequence[float]) -> float:
    return math.fsum(xs) / len(xs)


def _pstd(xs: Sequence[float]) -> float:
    mu = _mean(xs)
    return math.sqrt(math.fsum((x - mu) ** 2 for x in xs) / len(xs))


def aggregate(records: Iterable[ImageMetrics], experiment: str = "", model: str = "",
              provenance: Optional[dict] = None) -> MetricsReport:
    """Bundle per-image metrics; std uses divisor n (population)."""
    records = list(records)
    if not records:
        raise ParameterError("cannot aggregate an empty list of image metrics")
    return MetricsReport(records, experiment, model, dict(provenance or {}))


def evaluate(preds, truths, ids=None, experiment: str = "", model: str = "",
             provenance: Optional[dict] = None) -> MetricsReport:
    """Score a stack of reconstructions against ground truth (after clamping)."""
    preds = np.clip(np.asarray(preds, dtype=np.float64), 0.0, 1.0)
    truths = np.asarray(truths, dtype=np.float64)
    if preds.shape != truths.shape:
        raise DimensionError(f"prediction stack {preds.shape} vs truth stack {truths.shape}")
    ids = [str(i) for i in (ids if ids is not None else range(len(preds)))]
    use_ssim = min(truths.shape[-2:]) >= SSIM_WINDOW
    records = [ImageMetrics(i, rmse(p, t), ssim(p, t) if use_ssim else float("nan"))
               for i, p, t in zip(ids, preds, truths)]
    return aggregate(records, experiment, model, provenance)


def write_csv(reports: Iterable[MetricsReport], path=None) -> str:
    """CSV with one row per image and ``mean``/``std`` aggregate rows per report."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for rep in reports:
        for m in rep.per_image:
            w.writerow([rep.experiment, rep.model, m.image_id, repr(m.rmse), repr(m.ssim)])
        w.writerow([rep.experiment, rep.model, "mean", repr(rep.rmse_mean), repr(rep.ssim_mean)])
        w.writerow([rep.experiment, rep.model, "std", repr(rep.rmse_std), repr(rep.ssim_std)])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def read_csv(path) -> List[MetricsReport]:
    """Inverse of :func:`write_csv` (aggregate rows are recomputed, not trusted)."""
    groups: dict = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {header}")
        for exp, model, image_id, r, s in reader:
            if image_id in ("mean", "std"):
                continue
            groups.setdefault((exp, model), []).append(ImageMetrics(image_id, float(r), float(s)))
    return [aggregate(recs, exp, model) for (exp, model), recs in groups.items()]
