"""Learned reconstruction: FCL front ends, U-Net and DCAN back ends, training."""

from .losses import loss_mse, loss_rmse_dssim, ssim_tensor, window_matrix
from .networks import (
    Network,
    NetworkSpec,
    UNetSpec,
    build_dcan,
    build_fcl,
    build_multi_fcl,
    build_unet,
)
from .training import (
    TrainConfig,
    TrainedModel,
    default_spec,
    history_best,
    load_model,
    measure_latency,
    predict,
    predict_intermediate,
    save_model,
    train_dcan_decoder,
    train_ost,
    train_tst,
    train_unet_baseline,
)

__all__ = [
    "loss_mse", "loss_rmse_dssim", "ssim_tensor", "window_matrix",
    "Network", "NetworkSpec", "UNetSpec", "build_dcan", "build_fcl", "build_multi_fcl", "build_unet",
    "TrainConfig", "TrainedModel", "default_spec", "history_best", "load_model", "measure_latency",
    "predict", "predict_intermediate", "save_model", "train_dcan_decoder", "train_ost", "train_tst",
    "train_unet_baseline",
]
