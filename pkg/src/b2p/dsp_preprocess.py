"""Signal conditioning that removes sensing-mechanism differences.

Pipeline order is fixed: rate alignment, respiration-band filtering,
optional Savitzky-Golay smoothing, then amplitude normalization to [-1, 1].
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

from b2p.errors import DegenerateInputError, ParameterError
from b2p.signal_source import Signal, nearest_index


class DownsampleMethod(str, enum.Enum):
    SKIP = "skip"
    AVERAGE = "average"


class FilterKind(str, enum.Enum):
    LOW_PASS = "low_pass"
    BAND_PASS = "band_pass"


# Butterworth design order; band-pass doubles it (4th order overall).
_FILTER_ORDER = 4


@dataclass(frozen=True)
class PreprocessConfig:
    target_rate_hz: float = 64.0
    downsample_method: DownsampleMethod = DownsampleMethod.SKIP
    filter: FilterKind = FilterKind.BAND_PASS
    band_lo_hz: float = 0.1
    band_hi_hz: float = 0.5
    sg_window: int = 21
    sg_order: int = 3
    sg_enabled: bool = True

    def __post_init__(self):
        object.__setattr__(self, "downsample_method", DownsampleMethod(self.downsample_method))
        object.__setattr__(self, "filter", FilterKind(self.filter))

    def validate(self) -> None:
        if not self.target_rate_hz > 0:
            raise ParameterError("target_rate_hz must be positive")
        if not 0 < self.band_lo_hz < self.band_hi_hz:
            raise ParameterError("need 0 < band_lo_hz < band_hi_hz")
        if self.sg_window % 2 != 1 or self.sg_window < 3:
            raise ParameterError("sg_window must be odd and >= 3")
        if not 0 <= self.sg_order < self.sg_window:
            raise ParameterError("sg_order must satisfy 0 <= sg_order < sg_window")


def downsample(s: Signal, target_rate_hz: float, method=DownsampleMethod.SKIP) -> Signal:
    """Bring ``s`` down to ``target_rate_hz``.

    ``skip`` keeps the input sample nearest to each output instant;
    ``average`` replaces each output sample by the mean of the input
    samples whose nearest output instant it is.
    """
    method = DownsampleMethod(method)
    if not target_rate_hz > 0:
        raise ParameterError("target_rate_hz must be positive")
    if target_rate_hz > s.rate_hz:
        raise ParameterError(
            f"cannot upsample {s.rate_hz} Hz -> {target_rate_hz} Hz"
        )
    ratio = s.rate_hz / target_rate_hz
    n_in = len(s)
    n_out = int(math.floor(n_in / ratio + 1e-9))
    if n_out == 0:
        raise DegenerateInputError("signal too short for the requested rate")
    x = s.samples
    if method is DownsampleMethod.SKIP:
        src = np.minimum(nearest_index(np.arange(n_out) * ratio), n_in - 1)
        out = x[src]
    else:
        owner = nearest_index(np.arange(n_in) / ratio)
        keep = owner < n_out
        sums = np.bincount(owner[keep], weights=x[keep], minlength=n_out)
        counts = np.bincount(owner[keep], minlength=n_out)
        out = sums / counts
    return s.with_samples(out, rate_hz=target_rate_hz)


def normalize(s: Signal) -> Signal:
    """Affinely map ``s`` so that its minimum is -1 and its maximum +1."""
    x = s.samples
    if x.size == 0:
        raise DegenerateInputError("empty signal")
    lo, hi = float(x.min()), float(x.max())
    if not hi > lo:
        raise DegenerateInputError("constant signal cannot be normalized")
    return s.with_samples(2.0 * (x - lo) / (hi - lo) - 1.0)


def _design(cfg: PreprocessConfig, rate_hz: float) -> np.ndarray:
    nyq = rate_hz / 2
    if cfg.filter is FilterKind.BAND_PASS:
        if cfg.band_hi_hz >= nyq:
            raise ParameterError(f"cutoff {cfg.band_hi_hz} Hz >= Nyquist {nyq} Hz")
        return sps.butter(_FILTER_ORDER // 2, [cfg.band_lo_hz, cfg.band_hi_hz], btype="bandpass", fs=rate_hz, output="sos")
    if cfg.band_hi_hz >= nyq:
        raise ParameterError(f"cutoff {cfg.band_hi_hz} Hz >= Nyquist {nyq} Hz")
    return sps.butter(_FILTER_ORDER, cfg.band_hi_hz, btype="lowpass", fs=rate_hz, output="sos")


def filter_respiration(s: Signal, cfg: PreprocessConfig = PreprocessConfig()) -> Signal:
    """Zero-phase Butterworth filtering to the respiration band.

    The filter runs forward and backward over a mirror-padded copy, so the
    output has no group delay and keeps the input length.
    """
    if not 0 < cfg.band_lo_hz < cfg.band_hi_hz:
        raise ParameterError("need 0 < band_lo_hz < band_hi_hz")
    sos = _design(cfg, s.rate_hz)
    n = len(s)
    if n < 2:
        raise DegenerateInputError("signal too short to filter")
    padlen = min(n - 1, int(3 * s.rate_hz / cfg.band_lo_hz) if cfg.filter is FilterKind.BAND_PASS else int(3 * s.rate_hz / cfg.band_hi_hz))
    y = sps.sosfiltfilt(sos, s.samples, padtype="even", padlen=padlen)
    return s.with_samples(y)


def smooth_sg(s: Signal, window: int = 21, order: int = 3) -> Signal:
    """Savitzky-Golay smoothing (local least-squares polynomial fit)."""
    if window % 2 != 1 or window < 3:
        raise ParameterError("window must be odd and >= 3")
    if not 0 <= order < window:
        raise ParameterError("order must satisfy 0 <= order < window")
    if window > len(s):
        raise ParameterError(f"window {window} exceeds signal length {len(s)}")
    # Edge windows are fit by the same polynomial, so polynomials of degree
    # <= order pass through unchanged everywhere.
    return s.with_samples(sps.savgol_filter(s.samples, window, order, mode="interp"))


def preprocess(s: Signal, cfg: PreprocessConfig = PreprocessConfig()) -> Signal:
    """downsample -> filter -> optional smoothing -> normalize."""
    cfg.validate()
    out = s
    if s.rate_hz != cfg.target_rate_hz:
        out = downsample(out, cfg.target_rate_hz, cfg.downsample_method)
    out = filter_respiration(out, cfg)
    if cfg.sg_enabled:
        out = smooth_sg(out, cfg.sg_window, cfg.sg_order)
    return normalize(out)
