"""
Offline signal conditioning: zero-phase Butterworth low-pass filtering and acceleration estimation.

Defaults follow the identification setup: fifth order, 10 Hz cutoff, logs sampled at 100 Hz, filtered
forward then backward so the result has no phase lag.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from jaxtyping import Float
from scipy.interpolate import make_interp_spline
from scipy.signal import butter, sosfiltfilt

from legid.config import FilterConfig
from legid.errors import SignalError

logger = logging.getLogger(__name__)

DEFAULT_ORDER = 5
DEFAULT_CUTOFF_HZ = 10.0
DEFAULT_RATE_HZ = 100.0
JITTER_TOL = 0.01


@dataclass(frozen=True, eq=False)
class TimeSeries:
    t: Float[np.ndarray, "samples"]
    values: Float[np.ndarray, "samples dims"]

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float).reshape(-1)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape[0] != t.size:
            raise SignalError(f"{t.size} timestamps but {values.shape[0]} samples")
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise SignalError("timestamps must be strictly increasing")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.t.size

    @property
    def rate(self) -> float:
        if self.t.size < 2:
            raise SignalError("a single sample has no sampling rate")
        return float(1.0 / np.median(np.diff(self.t)))

    @property
    def is_uniform(self) -> bool:
        dt = np.diff(self.t)
        nominal = np.median(dt)
        return bool(np.all(np.abs(dt - nominal) <= JITTER_TOL * nominal))

    @classmethod
    def uniform(cls, values: np.ndarray, rate: float, t0: float = 0.0) -> TimeSeries:
        values = np.asarray(values, dtype=float)
        return cls(t=t0 + np.arange(values.shape[0]) / rate, values=values)


def ensure_uniform(x: TimeSeries) -> TimeSeries:
    """Return `x`, or `x` linearly resampled onto a uniform grid when jitter exceeds 1%."""
    if x.is_uniform:
        return x
    rate = x.rate
    count = int(round((x.t[-1] - x.t[0]) * rate)) + 1
    t = x.t[0] + np.arange(count) / rate
    t = t[t <= x.t[-1]]
    logger.warning(f"Non-uniform time base ({len(x)} samples), resampling to {rate:.3f} Hz ({t.size} samples)")
    return TimeSeries(t=t, values=make_interp_spline(x.t, x.values, k=1, axis=0)(t))


def _check_finite(x: TimeSeries) -> None:
    if not np.all(np.isfinite(x.values)):
        raise SignalError("time series contains NaN or infinite values")


def butterworth_zero_phase(
    x: TimeSeries, order: int = DEFAULT_ORDER, cutoff_hz: float = DEFAULT_CUTOFF_HZ
) -> TimeSeries:
    """Forward-backward low-pass Butterworth filter with mirrored edge padding of 3 * order samples."""
    if order < 1:
        raise SignalError(f"filter order must be >= 1, got {order}")
    _check_finite(x)
    rate = x.rate
    if not 0 < cutoff_hz < rate / 2:
        raise SignalError(f"cutoff {cutoff_hz} Hz must lie in (0, {rate / 2}) Hz for a {rate} Hz series")
    padlen = 3 * order
    if len(x) <= 3 * padlen:
        raise SignalError(f"series too short to filter: {len(x)} samples, need more than {3 * padlen}")
    sos = butter(order, cutoff_hz, btype="low", fs=rate, output="sos")
    filtered = sosfiltfilt(sos, x.values, axis=0, padtype="even", padlen=padlen)
    return TimeSeries(t=x.t, values=filtered)


def differentiate(x: TimeSeries) -> TimeSeries:
    """Central differences in the interior, second-order one-sided differences at the ends."""
    if len(x) < 3:
        raise SignalError(f"need at least 3 samples to differentiate, got {len(x)}")
    return TimeSeries(t=x.t, values=np.gradient(x.values, x.t, axis=0, edge_order=2))


def estimate_acceleration(
    v: TimeSeries,
    order: int = DEFAULT_ORDER,
    cutoff_hz: float = DEFAULT_CUTOFF_HZ,
    apply_filter: bool = True,
) -> TimeSeries:
    _check_finite(v)
    if not v.is_uniform:
        raise SignalError("acceleration estimation requires uniform sampling")
    derivative = differentiate(v)
    if not apply_filter:
        return derivative
    return butterworth_zero_phase(derivative, order=order, cutoff_hz=cutoff_hz)


def condition(
    t: np.ndarray,
    v: np.ndarray,
    tau: np.ndarray,
    a: np.ndarray | None,
    settings: FilterConfig,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Filter velocity and torque channels, then derive the acceleration from the filtered velocity.

    Configurations are left untouched. A logged acceleration is kept unless `derive_acceleration` is set.

    Returns:
        A tuple of (velocity, acceleration, torque).
    """
    v_series = TimeSeries(t=t, values=v)
    if settings.filter_velocity:
        v_series = butterworth_zero_phase(v_series, settings.order, settings.cutoff_hz)
    if settings.derive_acceleration or a is None:
        a_out = estimate_acceleration(v_series, settings.order, settings.cutoff_hz).values
    else:
        a_out = np.asarray(a, dtype=float)
    tau_out = np.asarray(tau, dtype=float)
    if settings.filter_torque and tau_out.shape[1] > 0:
        tau_out = butterworth_zero_phase(TimeSeries(t=t, values=tau_out), settings.order, settings.cutoff_hz).values
    return v_series.values, a_out, tau_out
