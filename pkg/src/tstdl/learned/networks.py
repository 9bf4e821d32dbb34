"""Network specifications and the layer graph shared by every learned pipeline.

A :class:`Network` is a front end (one or more dense layers mapping a
measurement vector to a side x side image, optionally batch-normalized)
followed by at most one back end: a small U-Net or the three-conv DCAN
decoder. The front end can also be absent, in which case the input is
already an image (the LSQR-input U-Net baseline).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from .. import autodiff as ad
from ..autodiff import RunningStats, Tensor
from ..errors import DimensionError, ParameterError
from ..rng import make_rng

ACTIVATIONS = ("leaky_relu", "relu", "none")


@dataclass
class UNetSpec:
    depth: int = 3
    base_channels: int = 16
    dropout: float = 0.2
    # add the U-Net output to its input image, final 1x1 conv starts at zero
    residual: bool = True

    def __post_init__(self):
        if self.depth < 0 or self.base_channels < 1:
            raise ParameterError("U-Net needs depth >= 0 and base_channels >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ParameterError(f"dropout rate must lie in [0, 1), got {self.dropout}")


@dataclass
class NetworkSpec:
    input_length: int
    output_side: int
    front_end: str = "fcl"  # "fcl" or "none"
    fcl_layers: int = 1
    hidden_width: Optional[int] = None
    activation: str = "leaky_relu"
    batchnorm_after_fcl: bool = True
    standardize_input: bool = True
    # "global": per-feature centering, one shared scale; "feature": per-feature std
    standardize_scale: str = "global"
    front_end_frozen: bool = False
    unet: Optional[UNetSpec] = None
    dcan_channels: Optional[int] = None

    def __post_init__(self):
        if isinstance(self.unet, dict):
            self.unet = UNetSpec(**self.unet)
        if self.input_length < 1:
            raise ParameterError("input_length must be >= 1")
        if self.output_side < 1:
            raise ParameterError("output_side must be >= 1")
        if self.front_end not in ("fcl", "none"):
            raise ParameterError(f"unknown front end {self.front_end!r}")
        if self.standardize_scale not in ("global", "feature"):
            raise ParameterError(f"unknown standardize_scale {self.standardize_scale!r}")
        if self.fcl_layers < 1:
            raise ParameterError("fcl_layers must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ParameterError(f"unknown activation {self.activation!r}")
        if self.unet is not None and self.dcan_channels is not None:
            raise ParameterError("a network has at most one back end (U-Net or DCAN decoder)")
        if self.front_end == "none":
            if self.unet is None:
                raise ParameterError("a network without a front end needs a U-Net")
            if self.input_length != self.output_side ** 2:
                raise DimensionError("without a front end the input must be a side x side image")
        if self.unet is not None and self.output_side % (2 ** self.unet.depth):
            raise DimensionError(
                f"U-Net depth {self.unet.depth} needs a side divisible by {2 ** self.unet.depth}, "
                f"got {self.output_side}")

    @property
    def n_pixels(self) -> int:
        return self.output_side ** 2

    @property
    def back_end(self) -> str:
        if self.unet is not None:
            return "unet"
        return "dcan" if self.dcan_channels is not None else "none"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(**d)


def _uniform(rng, shape, limit):
    return rng.uniform(-limit, limit, shape).astype(np.float32)


class Network:
    """Parameters, buffers and forward pass for a :class:`NetworkSpec`."""

    def __init__(self, spec: NetworkSpec, seed: int = 0):
        self.spec = spec
        self.params: Dict[str, Tensor] = {}
        self.running: Dict[str, RunningStats] = {}
        self.input_mean = np.zeros(spec.input_length, np.float32)
        self.input_std = np.ones(spec.input_length, np.float32)
        rng = make_rng(seed)
        if spec.front_end == "fcl":
            self._init_front(rng)
        if spec.unet is not None:
            self._init_unet(rng)
        elif spec.dcan_channels is not None:
            self._init_dcan(rng)
        self.set_front_end_frozen(spec.front_end_frozen)

    # -- construction -------------------------------------------------------

    def _add(self, name, array):
        self.params[name] = Tensor(array.astype(np.float32), requires_grad=True, name=name)

    def _dense(self, rng, name, n_in, n_out, gain=1.0):
        # LeCun-uniform keeps unit variance for standardized inputs
        self._add(f"{name}.weight", _uniform(rng, (n_out, n_in), gain * math.sqrt(3.0 / n_in)))
        self._add(f"{name}.bias", np.zeros(n_out))

    def _conv(self, rng, name, c_in, c_out, k=3, zero=False):
        if zero:
            self._add(f"{name}.weight", np.zeros((c_out, c_in, k, k)))
        else:
            # He-uniform for ReLU stacks
            self._add(f"{name}.weight", _uniform(rng, (c_out, c_in, k, k), math.sqrt(6.0 / (c_in * k * k))))
        self._add(f"{name}.bias", np.zeros(c_out))

    def _init_front(self, rng):
        s = self.spec
        width = s.hidden_width or s.n_pixels
        n_in = s.input_length
        for i in range(s.fcl_layers):
            last = i == s.fcl_layers - 1
            n_out = s.n_pixels if last else width
            # the image-producing layer starts small so the data, not the
            # random init, sets its direction
            self._dense(rng, f"fcl{i}", n_in, n_out, gain=0.01 if last else 1.0)
            n_in = n_out
        if s.batchnorm_after_fcl:
            self._add("bn.gamma", np.ones(s.n_pixels))
            self._add("bn.beta", np.zeros(s.n_pixels))
            self.running["bn"] = RunningStats.zeros(s.n_pixels)

    def _init_unet(self, rng):
        u = self.spec.unet
        C, D = u.base_channels, u.depth
        c_in = 1
        for lv in range(D):
            self._conv(rng, f"unet.down{lv}.conv0", c_in, C << lv)
            self._conv(rng, f"unet.down{lv}.conv1", C << lv, C << lv)
            c_in = C << lv
        self._conv(rng, "unet.bottom.conv0", c_in, C << D)
        self._conv(rng, "unet.bottom.conv1", C << D, C << D)
        for lv in reversed(range(D)):
            self._conv(rng, f"unet.up{lv}.upconv", C << (lv + 1), C << lv)
            self._conv(rng, f"unet.up{lv}.conv0", 2 * (C << lv), C << lv)
            self._conv(rng, f"unet.up{lv}.conv1", C << lv, C << lv)
        self._conv(rng, "unet.out", C, 1, k=1, zero=u.residual)

    def _init_dcan(self, rng):
        C = self.spec.dcan_channels
        self._conv(rng, "dcan.conv0", 1, C)
        self._conv(rng, "dcan.conv1", C, C)
        self._conv(rng, "dcan.conv2", C, 1)

    # -- parameter groups ---------------------------------------------------

    def front_end_names(self):
        return [n for n in self.params if n.startswith(("fcl", "bn."))]

    def back_end_names(self):
        return [n for n in self.params if n.startswith(("unet.", "dcan."))]

    def set_front_end_frozen(self, frozen: bool) -> None:
        self.spec.front_end_frozen = bool(frozen)
        for n in self.front_end_names():
            self.params[n].requires_grad = not frozen

    def n_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def state(self) -> Dict[str, np.ndarray]:
        """Every tensor needed to reproduce inference, keyed by name."""
        out = {n: p.data for n, p in self.params.items()}
        for n, rs in self.running.items():
            out[f"{n}.running_mean"] = rs.mean
            out[f"{n}.running_var"] = rs.var
        if self.spec.front_end == "fcl":
            out["input.mean"] = self.input_mean
            out["input.std"] = self.input_std
        return out

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.state().items()}

    def load_state(self, state: Dict[str, np.ndarray]) -> None:
        expected = set(self.state())
        got = set(state)
        if expected != got:
            missing, extra = sorted(expected - got), sorted(got - expected)
            raise ParameterError(f"state mismatch: missing {missing}, unexpected {extra}")
        for n, p in self.params.items():
            if state[n].shape != p.shape:
                raise DimensionError(f"'{n}' has shape {state[n].shape}, expected {p.shape}")
            p.data[...] = state[n]
        for n, rs in self.running.items():
            rs.mean[...] = state[f"{n}.running_mean"]
            rs.var[...] = state[f"{n}.running_var"]
        if self.spec.front_end == "fcl":
            self.input_mean[...] = state["input.mean"]
            self.input_std[...] = state["input.std"]

    def fit_statistics(self, x: np.ndarray, y: Optional[np.ndarray] = None) -> None:
        """Data-dependent setup of the front end from training data.

        Inputs are centred per feature and divided by either one shared
        scale (root-mean-square of the feature stds) or each feature's own
        std, per ``spec.standardize_scale`` (floored). With targets
        ``y``, the front end's output affine (batchnorm gamma/beta, or the last
        dense bias without batchnorm) starts at the per-pixel mean/std of the
        training images instead of at an arbitrary unit scale.
        """
        if self.spec.front_end != "fcl":
            return
        if self.spec.standardize_input:
            x = np.asarray(x, dtype=np.float64)
            std = x.std(axis=0)
            if self.spec.standardize_scale == "global":
                std = np.full_like(std, np.sqrt(np.mean(std ** 2)))
            std = np.maximum(std, 1e-6 * std.max() + 1e-12)
            self.input_mean[...] = x.mean(axis=0)
            self.input_std[...] = std
        if y is None:
            return
        y = np.asarray(y, dtype=np.float64).reshape(len(y), -1)
        if self.spec.batchnorm_after_fcl:
            self.params["bn.beta"].data[...] = y.mean(axis=0)
            self.params["bn.gamma"].data[...] = np.maximum(y.std(axis=0), 1e-3)
        else:
            self.params[f"fcl{self.spec.fcl_layers - 1}.bias"].data[...] = y.mean(axis=0)

    # -- forward ------------------------------------------------------------

    def _front(self, x: np.ndarray, training: bool) -> Tensor:
        s = self.spec
        p = self.params
        if s.standardize_input:
            x = (x - self.input_mean) / self.input_std
        h = Tensor(x.astype(np.float32))
        for i in range(s.fcl_layers):
            h = ad.linear(h, p[f"fcl{i}.weight"], p[f"fcl{i}.bias"])
            if i < s.fcl_layers - 1:
                if s.activation == "leaky_relu":
                    h = ad.leaky_relu(h, 0.01)
                elif s.activation == "relu":
                    h = ad.relu(h)
        if s.batchnorm_after_fcl:
            # a frozen front end keeps its batchnorm in inference mode
            bn_train = training and not s.front_end_frozen
            h = ad.batchnorm(h, p["bn.gamma"], p["bn.beta"], self.running["bn"], bn_train)
        return h

    def _conv_relu(self, x, name):
        p = self.params
        return ad.relu(ad.conv2d(x, p[f"{name}.weight"], p[f"{name}.bias"]))

    def _unet(self, x: Tensor, training: bool, rng) -> Tensor:
        u, p = self.spec.unet, self.params
        skips = []
        h = x
        for lv in range(u.depth):
            h = self._conv_relu(self._conv_relu(h, f"unet.down{lv}.conv0"), f"unet.down{lv}.conv1")
            skips.append(h)
            h, _ = ad.maxpool2(h)
        h = self._conv_relu(self._conv_relu(h, "unet.bottom.conv0"), "unet.bottom.conv1")
        for lv in reversed(range(u.depth)):
            h = self._conv_relu(ad.upsample_nn(h, 2), f"unet.up{lv}.upconv")
            h = ad.concat_channels(skips[lv], h)
            h = self._conv_relu(self._conv_relu(h, f"unet.up{lv}.conv0"), f"unet.up{lv}.conv1")
            h = ad.dropout(h, u.dropout, rng, training)
        out = ad.conv2d(h, p["unet.out.weight"], p["unet.out.bias"])
        return x + out if u.residual else out

    def _dcan(self, x: Tensor) -> Tensor:
        p = self.params
        h = self._conv_relu(x, "dcan.conv0")
        h = self._conv_relu(h, "dcan.conv1")
        return ad.conv2d(h, p["dcan.conv2.weight"], p["dcan.conv2.bias"])

    def forward(self, x, training: bool = False, rng=None,
                front_only: bool = False) -> Tuple[Tensor, Optional[Tensor]]:
        """Map a (B, input_length) batch to ``(output, intermediate)``.

        Both are (B, side, side). ``intermediate`` is the post-front-end image
        (None without a front end). ``front_only`` skips the back end and
        returns the intermediate image as the output.
        """
        s = self.spec
        x = np.asarray(x.data if isinstance(x, Tensor) else x)
        if x.ndim != 2 or x.shape[1] != s.input_length:
            raise DimensionError(f"expected input of shape (B, {s.input_length}), got {x.shape}")
        B, side = x.shape[0], s.output_side
        if s.front_end == "fcl":
            mid = ad.reshape(self._front(x, training), (B, side, side))
        else:
            mid = None
        if front_only or s.back_end == "none":
            if mid is None:
                raise ParameterError("front_only needs a front end")
            return mid, mid
        img = ad.reshape(mid, (B, 1, side, side)) if mid is not None else Tensor(
            x.reshape(B, 1, side, side).astype(np.float32))
        out = self._unet(img, training, rng) if s.back_end == "unet" else self._dcan(img)
        return ad.reshape(out, (B, side, side)), mid

    def infer(self, x, batch: int = 256, front_only: bool = False):
        """Inference-mode numpy outputs ``(images, intermediates)``."""
        x = np.asarray(x, dtype=np.float32)
        outs, mids = [], []
        for i in range(0, len(x), batch):
            out, mid = self.forward(x[i:i + batch], training=False, front_only=front_only)
            outs.append(out.data)
            if mid is not None:
                mids.append(mid.data)
        if not outs:
            side = self.spec.output_side
            empty = np.zeros((0, side, side), np.float32)
            return empty, (empty if self.spec.front_end == "fcl" else None)
        return np.concatenate(outs), (np.concatenate(mids) if mids else None)


# ----------------------------------------------------------------------------
# builders
# ----------------------------------------------------------------------------

def _side_of(n_out: int) -> int:
    side = math.isqrt(n_out)
    if side * side != n_out:
        raise ParameterError(f"output size {n_out} is not a perfect square")
    return side


def build_fcl(M: int, N_out: int, batchnorm: bool = False, standardize: bool = False,
              seed: int = 0) -> Network:
    """Single dense layer M -> N_out reshaped to a side x side image."""
    return Network(NetworkSpec(M, _side_of(N_out), batchnorm_after_fcl=batchnorm,
                               standardize_input=standardize), seed)


def build_multi_fcl(M: int, N_out: int, k: int = 3, activation: str = "leaky_relu",
                    hidden_width: Optional[int] = None, batchnorm: bool = False,
                    standardize: bool = False, seed: int = 0) -> Network:
    """``k`` dense layers with ``activation`` between consecutive layers."""
    return Network(NetworkSpec(M, _side_of(N_out), fcl_layers=k, hidden_width=hidden_width,
                               activation=activation, batchnorm_after_fcl=batchnorm,
                               standardize_input=standardize), seed)


def build_unet(side: int, depth: int = 3, channels: int = 16, dropout: float = 0.2,
               residual: bool = True, seed: int = 0) -> Network:
    """Image-to-image U-Net without a front end."""
    return Network(NetworkSpec(side * side, side, front_end="none", standardize_input=False,
                               batchnorm_after_fcl=False,
                               unet=UNetSpec(depth, channels, dropout, residual)), seed)


def build_dcan(M: int, side: int, channels: int = 16, standardize: bool = True,
               seed: int = 0) -> Network:
    """Dense layer, reshape, then conv3x3+relu, conv3x3+relu, conv3x3."""
    return Network(NetworkSpec(M, side, batchnorm_after_fcl=False, standardize_input=standardize,
                               dcan_channels=channels), seed)
