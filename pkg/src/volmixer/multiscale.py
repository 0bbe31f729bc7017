"""Multiscale view construction and seasonal/trend decomposition."""

from __future__ import annotations

from volmixer import autodiff as ad
from volmixer.autodiff import Tensor


class ConfigError(ValueError):
    """Requested scale count is incompatible with the series length."""


def build_multiscale(x: Tensor, num_scales: int) -> list[Tensor]:
    """Return [x_0, ..., x_M] where x_m is x average-pooled m times.

    Lengths follow floor(T / 2^m) along the time axis (second-to-last).
    The coarsest scale must keep at least 2 steps so decomposition stays
    meaningful.
    """
    t_len = x.shape[-2]
    if num_scales < 0:
        raise ConfigError(f"negative scale count {num_scales}")
    if t_len // (2 ** num_scales) < 2:
        raise ConfigError(
            f"time length {t_len} too short for {num_scales} halvings "
            f"(coarsest scale would have < 2 steps)")
    scales = [x]
    for _ in range(num_scales):
        scales.append(ad.avg_pool_halve(scales[-1]))
    return scales


def series_decomp(x: Tensor, kernel: int) -> tuple[Tensor, Tensor]:
    """Split x into (seasonal, trend); trend is the centered moving average.

    seasonal + trend reconstructs x exactly by construction.
    """
    trend = ad.moving_average(x, kernel)
    seasonal = ad.subtract(x, trend)
    return seasonal, trend
