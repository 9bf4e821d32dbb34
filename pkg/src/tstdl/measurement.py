"""Measurement operators for single-pixel imaging.

Rows of a linear operator are illumination patterns: each pattern, reshaped to
``side x side``, is multiplied pixelwise with the scene and summed by the
detector. The module builds Hadamard bases in several orderings, random
grayscale patterns, and the nonlinear autocorrelation operator, and supplies
the noise and model-mismatch perturbations used by the robustness studies.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DimensionError, ParameterError
from .rng import make_rng

ORDERINGS = ("sylvester", "russian_doll", "random_permutation", "grayscale_random")


@dataclass(frozen=True)
class MeasurementModel:
    """A forward operator plus the metadata needed to reproduce it."""

    kind: str
    image_side: int
    ordering: Optional[str] = None
    H: Optional[np.ndarray] = None
    full_basis_size: int = 0
    seed: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ("linear", "autocorrelation"):
            raise ParameterError(f"unknown model kind {self.kind!r}")
        if (self.H is not None) != (self.kind == "linear"):
            raise ParameterError("H must be present exactly for linear models")
        if self.H is not None and self.H.shape[1] != self.image_side ** 2:
            raise DimensionError(f"H has {self.H.shape[1]} columns, expected {self.image_side ** 2}")

    @property
    def n_pixels(self) -> int:
        return self.image_side ** 2

    @property
    def n_measurements(self) -> int:
        if self.kind == "linear":
            return self.H.shape[0]
        return (2 * self.image_side - 1) ** 2

    @property
    def compression_ratio(self) -> float:
        if self.kind != "linear":
            return 1.0
        return (self.full_basis_size or self.n_pixels) / self.H.shape[0]

    def describe(self) -> dict:
        return {
            "kind": self.kind,
            "ordering": self.ordering,
            "image_side": self.image_side,
            "n_measurements": self.n_measurements,
            "compression_ratio": self.compression_ratio,
            "seed": self.seed,
        }


def _check_power_of_two(side: int) -> None:
    if side < 1 or side & (side - 1):
        raise ParameterError(f"image side must be a power of two, got {side}")


def sylvester(n: int) -> np.ndarray:
    """Sylvester-construction Hadamard matrix of order ``n`` (a power of two)."""
    _check_power_of_two(n)
    h = np.ones((1, 1), dtype=np.int8)
    while h.shape[0] < n:
        h = np.block([[h, h], [h, -h]])
    return h


def hadamard_full(image_side: int) -> np.ndarray:
    """Full Hadamard basis for ``image_side x image_side`` images, shape (N, N).

    Row ``u * side + v`` is the separable pattern ``outer(h_u, h_v)`` in
    row-major order, which is also row ``u * side + v`` of the order-N
    Sylvester matrix.
    """
    _check_power_of_two(image_side)
    h = sylvester(image_side)
    return np.kron(h, h).astype(np.float64)


def sequency(rows: np.ndarray) -> np.ndarray:
    """Number of sign changes along each row."""
    rows = np.atleast_2d(rows)
    return (np.diff(np.sign(rows), axis=1) != 0).sum(axis=1)


def russian_doll_order(image_side: int) -> np.ndarray:
    """Row permutation of :func:`hadamard_full` into nested resolution shells.

    For every k with 4**k <= N, the first 4**k rows of the permuted basis are
    constant on (side/2**k)-pixel blocks and span all such block images.
    Within each new shell, rows are sorted by ascending 2-D sequency.
    """
    _check_power_of_two(image_side)
    side = image_side
    m = int(np.log2(side))
    idx = np.arange(side)
    lev = np.full(side, m)
    for k in range(m, -1, -1):
        lev[idx % (side >> k) == 0] = k
    seq1 = sequency(sylvester(side))
    u, v = np.meshgrid(idx, idx, indexing="ij")
    u, v = u.ravel(), v.ravel()
    shell = np.maximum(lev[u], lev[v])
    total = seq1[u] + seq1[v]
    peak = np.maximum(seq1[u], seq1[v])
    keys = (seq1[v], seq1[u], peak, total, shell)  # np.lexsort sorts by the last key first
    return np.lexsort(keys)


def random_permutation_order(n: int, seed: int) -> np.ndarray:
    return make_rng(seed).permutation(n)


def grayscale_random_patterns(m: int, image_side: int, seed: int) -> np.ndarray:
    """``m`` patterns with i.i.d. uniform [0, 1] pixels, shape (m, side**2)."""
    if m < 1:
        raise ParameterError("need at least one pattern")
    return make_rng(seed).random((m, image_side * image_side))


def make_model(ordering: str, image_side: int, seed: int = 0, n_patterns: Optional[int] = None) -> MeasurementModel:
    """Full (uncompressed) linear model in the requested ordering.

    ``grayscale_random`` has no natural full basis; ``n_patterns`` defaults
    to N for it.
    """
    n = image_side * image_side
    if ordering == "grayscale_random":
        H = grayscale_random_patterns(n_patterns or n, image_side, seed)
        return MeasurementModel("linear", image_side, ordering, H, n, seed)
    full = hadamard_full(image_side)
    if ordering == "sylvester":
        perm = np.arange(n)
    elif ordering == "russian_doll":
        perm = russian_doll_order(image_side)
    elif ordering == "random_permutation":
        perm = random_permutation_order(n, seed)
    else:
        raise ParameterError(f"unknown ordering {ordering!r}; choose from {ORDERINGS}")
    return MeasurementModel("linear", image_side, ordering, full[perm], n, seed)


def autocorrelation_model(image_side: int) -> MeasurementModel:
    return MeasurementModel("autocorrelation", image_side, None, None, 0, None)


def compress(model: MeasurementModel, ratio: Optional[int] = None, n_rows: Optional[int] = None) -> MeasurementModel:
    """Keep the leading rows of an ordered basis.

    Either ``ratio`` (must divide the full basis size exactly) or an explicit
    row count ``n_rows`` is given.
    """
    if model.kind != "linear":
        raise ParameterError("only linear models can be compressed")
    full = model.full_basis_size or model.n_pixels
    if (ratio is None) == (n_rows is None):
        raise ParameterError("give exactly one of ratio or n_rows")
    if ratio is not None:
        if ratio < 1 or full % ratio:
            raise ParameterError(f"ratio {ratio} does not divide basis size {full}")
        n_rows = full // ratio
    if not 1 <= n_rows <= model.H.shape[0]:
        raise ParameterError(f"cannot keep {n_rows} of {model.H.shape[0]} rows")
    return dataclasses.replace(model, H=model.H[:n_rows].copy())


def autocorrelate(image: np.ndarray) -> np.ndarray:
    """Full linear autocorrelation, shape (2s-1, 2s-1), zero shift at the centre."""
    f = np.asarray(image, dtype=np.float64)
    if f.ndim != 2:
        raise DimensionError(f"autocorrelate expects a 2-D image, got {f.shape}")
    size = (2 * f.shape[0] - 1, 2 * f.shape[1] - 1)
    spec = np.fft.fft2(f, s=size)
    acf = np.fft.fftshift(np.fft.ifft2(spec * np.conj(spec)).real)
    # enforce the exact invariants the FFT only meets to rounding: point symmetry and zero-lag energy
    acf = 0.5 * (acf + acf[::-1, ::-1])
    acf[f.shape[0] - 1, f.shape[1] - 1] = np.sum(f * f)
    return acf


def forward_measure(model: MeasurementModel, image: np.ndarray) -> np.ndarray:
    """Measurement vector for one image (or a stack of images, shape (n, s, s))."""
    img = np.asarray(image, dtype=np.float64)
    s = model.image_side
    if img.shape[-2:] != (s, s):
        raise DimensionError(f"image shape {img.shape} does not match model side {s}")
    if model.kind == "linear":
        flat = img.reshape(img.shape[:-2] + (s * s,))
        return flat @ model.H.T
    if img.ndim == 2:
        return autocorrelate(img).ravel()
    return np.stack([autocorrelate(x).ravel() for x in img])


def add_noise_snr(g: np.ndarray, snr_db: float, seed: int) -> np.ndarray:
    """Add white Gaussian noise at the requested SNR.

    Signal power is the mean square of each measurement vector (last axis),
    not its variance, because Hadamard measurements carry a large DC term.
    """
    g = np.asarray(g, dtype=np.float64)
    power = np.mean(g * g, axis=-1, keepdims=True)
    if np.any(power <= 0):
        raise ParameterError("cannot set an SNR for a zero-power signal")
    sigma = np.sqrt(power / 10.0 ** (snr_db / 10.0))
    return g + sigma * make_rng(seed).standard_normal(g.shape)


@dataclass(frozen=True)
class MismatchSpec:
    mode: str
    fraction: float = 0.0
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.mode == "invert_elements":
            if not 0.0 <= self.fraction <= 1.0:
                raise ParameterError(f"inversion fraction must lie in [0, 1], got {self.fraction}")
            if self.sigma:
                raise ParameterError("sigma is not used in invert_elements mode")
        elif self.mode == "gaussian_perturb":
            if self.sigma < 0:
                raise ParameterError(f"sigma must be non-negative, got {self.sigma}")
            if self.fraction:
                raise ParameterError("fraction is not used in gaussian_perturb mode")
        else:
            raise ParameterError(f"unknown mismatch mode {self.mode!r}")


def perturb_model(model: MeasurementModel, spec: MismatchSpec) -> MeasurementModel:
    """Return a copy of ``model`` whose matrix deviates as described by ``spec``."""
    if model.kind != "linear":
        raise ParameterError("model mismatch applies to linear models only")
    H = model.H.copy()
    rng = make_rng(spec.seed)
    if spec.mode == "invert_elements":
        k = int(round(spec.fraction * H.size))
        if k:
            flat = H.reshape(-1)
            pick = rng.choice(H.size, size=k, replace=False)
            flat[pick] = -flat[pick]
    elif spec.sigma > 0:
        H = H + spec.sigma * rng.standard_normal(H.shape)
    return dataclasses.replace(model, H=H)


def write_pgm(path, image: np.ndarray, lo: float = 0.0, hi: float = 1.0) -> None:
    """Binary 8-bit PGM, mapping [lo, hi] linearly onto 0..255 (clipped)."""
    img = np.asarray(image, dtype=np.float64)
    scaled = np.clip(np.rint((img - lo) / (hi - lo) * 255.0), 0, 255).astype(np.uint8)
    h, w = scaled.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(scaled.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = int(tokens[1]), int(tokens[2])
    return np.frombuffer(data[pos + 1:pos + 1 + w * h], dtype=np.uint8).reshape(h, w)


def export_patterns(model: MeasurementModel, directory, limit: Optional[int] = None) -> int:
    """Write each pattern as a PGM (-1 -> 0, +1 -> 255 for Hadamard kinds)."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    lo = 0.0 if model.ordering == "grayscale_random" else -1.0
    rows = model.H if limit is None else model.H[:limit]
    s = model.image_side
    for i, row in enumerate(rows):
        write_pgm(out / f"pattern_{i:05d}.pgm", row.reshape(s, s), lo=lo, hi=1.0)
    return len(rows)
