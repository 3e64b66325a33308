"""Synthetic respiration sources, trace ingestion and the remote observer.

One latent breathing process per subject is sampled by two simulated
sensors: a RIP-like belt (clean, 128 Hz) and an accelerometer-like device
(100 Hz) that adds a Gaussian inter-sensor difference and motion
disturbance.  ``observe_remote`` models what a camera-based adversary
recovers from the victim's breathing.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import signal as sps

from b2p.errors import FormatError, ParameterError

# Internal integration step for the breathing phase.
_FINE_RATE_HZ = 512.0
# Correlation times of the slow rate / amplitude drifts.
_RATE_TAU_S = 3.0
_AMP_TAU_S = 3.0
_HARMONIC_GAIN = 0.2
_PAUSE_FRACTION = 0.10


class Origin(str, enum.Enum):
    RIP_LIKE = "rip_like"
    ACCEL_LIKE = "accel_like"
    REMOTE_OBSERVED = "remote_observed"
    FILE = "file"


@dataclass(frozen=True, eq=False)
class Signal:
    """Uniformly sampled real-valued time series."""

    samples: np.ndarray
    rate_hz: float
    origin: Origin = Origin.FILE

    def __post_init__(self):
        if not (self.rate_hz > 0 and math.isfinite(self.rate_hz)):
            raise ParameterError(f"rate_hz must be positive, got {self.rate_hz!r}")
        arr = np.asarray(self.samples, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.rate_hz

    def with_samples(self, samples, rate_hz: float | None = None, origin=None) -> "Signal":
        return Signal(
            samples,
            self.rate_hz if rate_hz is None else rate_hz,
            self.origin if origin is None else origin,
        )


@dataclass(frozen=True)
class SubjectParams:
    breaths_per_min: float = 15.0
    duration_s: float = 120.0
    rate_variability: float = 2.5  # std of instantaneous rate, breaths/min
    amplitude_variability: float = 0.25  # relative std of cycle amplitude
    diff_mu: float = 0.0
    diff_sigma: float = 0.05
    motion_noise_level: float = 0.05
    rip_rate_hz: float = 128.0
    accel_rate_hz: float = 100.0
    seed: int = 0

    def validate(self) -> None:
        if not 6.0 <= self.breaths_per_min <= 30.0:
            raise ParameterError("breaths_per_min must lie in [6, 30]")
        if not self.duration_s > 0:
            raise ParameterError("duration_s must be positive")
        for name in ("rate_variability", "amplitude_variability", "diff_sigma", "motion_noise_level"):
            value = getattr(self, name)
            if not (value >= 0 and math.isfinite(value)):
                raise ParameterError(f"{name} must be finite and >= 0")
        if not math.isfinite(self.diff_mu):
            raise ParameterError("diff_mu must be finite")
        if not (self.rip_rate_hz > 0 and self.accel_rate_hz > 0):
            raise ParameterError("sensor rates must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise ParameterError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class ObserverParams:
    effective_rate_hz: float = 9.0
    extra_noise_sigma: float = 1.5
    latency_ms: float = 150.0

    def validate(self) -> None:
        if not self.effective_rate_hz > 0:
            raise ParameterError("effective_rate_hz must be positive")
        if not self.extra_noise_sigma >= 0:
            raise ParameterError("extra_noise_sigma must be >= 0")
        if not self.latency_ms >= 0:
            raise ParameterError("latency_ms must be >= 0")


def _ou_path(rng: np.random.Generator, n: int, dt: float, tau: float) -> np.ndarray:
    """Unit-variance Ornstein-Uhlenbeck path, started from stationarity."""
    decay = math.exp(-dt / tau)
    kick = math.sqrt(1.0 - decay * decay)
    xi = rng.standard_normal(n)
    out = np.empty(n)
    out[0] = xi[0]
    for k in range(1, n):
        out[k] = decay * out[k - 1] + kick * xi[k]
    return out


def _waveform(phase: np.ndarray) -> np.ndarray:
    # Fundamental plus a weak 2nd harmonic, with the bottom of each cycle
    # clamped flat to mimic the end-of-exhalation pause.
    grid = np.linspace(0.0, 2 * np.pi, 4097)
    ref = np.sin(grid) + _HARMONIC_GAIN * np.sin(2 * grid)
    lo, hi = ref.min(), ref.max()
    floor = lo + _PAUSE_FRACTION * (hi - lo)
    mid, half = 0.5 * (floor + hi), 0.5 * (hi - floor)
    w = np.sin(phase) + _HARMONIC_GAIN * np.sin(2 * phase)
    return (np.maximum(w, floor) - mid) / half


@dataclass(frozen=True, eq=False)
class _Latent:
    times: np.ndarray
    phase: np.ndarray
    amplitude: np.ndarray

    def at(self, t: np.ndarray) -> np.ndarray:
        phase = np.interp(t, self.times, self.phase)
        amp = np.interp(t, self.times, self.amplitude)
        return amp * _waveform(phase)


def _streams(seed: int, n: int) -> list[np.random.Generator]:
    return [
        np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(k,)))
        for k in range(n)
    ]


def _latent_process(p: SubjectParams, rng_rate, rng_amp) -> _Latent:
    n_fine = int(math.ceil(p.duration_s * _FINE_RATE_HZ)) + 2
    times = np.arange(n_fine) / _FINE_RATE_HZ
    coarse_dt = 0.25
    n_coarse = int(math.ceil(p.duration_s / coarse_dt)) + 2
    t_coarse = np.arange(n_coarse) * coarse_dt

    rate_bpm = p.breaths_per_min + p.rate_variability * _ou_path(rng_rate, n_coarse, coarse_dt, _RATE_TAU_S)
    rate_bpm = np.clip(rate_bpm, 6.0, 30.0)
    freq = np.interp(times, t_coarse, rate_bpm) / 60.0
    phase0 = rng_rate.uniform(0, 2 * np.pi)
    phase = phase0 + 2 * np.pi * np.concatenate(([0.0], np.cumsum(0.5 * (freq[1:] + freq[:-1])) / _FINE_RATE_HZ))

    amp = 1.0 + p.amplitude_variability * _ou_path(rng_amp, n_coarse, coarse_dt, _AMP_TAU_S)
    amp = np.interp(times, t_coarse, np.clip(amp, 0.2, None))
    return _Latent(times, phase, amp)


def _sample_times(duration_s: float, rate_hz: float) -> np.ndarray:
    return np.arange(int(math.floor(duration_s * rate_hz))) / rate_hz


def _motion_disturbance(rng: np.random.Generator, n: int, rate_hz: float, level: float) -> np.ndarray:
    if level == 0:
        return np.zeros(n)
    # Slow body sway below 0.1 Hz carries most of the power; the rest is broadband.
    sos = sps.butter(4, 0.1, btype="low", fs=rate_hz, output="sos")
    pad = int(30 * rate_hz)
    slow = sps.sosfilt(sos, rng.standard_normal(n + pad))[pad:]
    slow /= max(np.std(slow), 1e-12)
    broadband = rng.standard_normal(n)
    return level * (3.0 * slow + 0.5 * broadband)


def generate_subject(p: SubjectParams) -> tuple[Signal, Signal]:
    """Sample one synthetic subject with a RIP-like and an accelerometer-like sensor.

    Returns
    -------
    (rip_like, accel_like)
        Both views of the same latent breathing process, ``p.duration_s``
        long at ``p.rip_rate_hz`` and ``p.accel_rate_hz`` respectively.
    """
    p.validate()
    rng_rate, rng_amp, rng_diff, rng_motion = _streams(p.seed, 4)
    latent = _latent_process(p, rng_rate, rng_amp)

    t_rip = _sample_times(p.duration_s, p.rip_rate_hz)
    rip = latent.at(t_rip)

    t_acc = _sample_times(p.duration_s, p.accel_rate_hz)
    acc = latent.at(t_acc)
    acc = acc + p.diff_mu + p.diff_sigma * rng_diff.standard_normal(t_acc.size)
    acc = acc + _motion_disturbance(rng_motion, t_acc.size, p.accel_rate_hz, p.motion_noise_level)

    return (
        Signal(rip, p.rip_rate_hz, Origin.RIP_LIKE),
        Signal(acc, p.accel_rate_hz, Origin.ACCEL_LIKE),
    )


def load_trace(path, format: str = "csv") -> Signal:
    """Read a single-channel trace file.

    Line 1 is ``rate_hz=<real>``, line 2 the header ``value``, then one
    real sample per row.
    """
    if format != "csv":
        raise ParameterError(f"unsupported trace format {format!r}")
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or not lines[0].startswith("rate_hz="):
        raise FormatError("line 1: expected 'rate_hz=<real>'")
    try:
        rate = float(lines[0][len("rate_hz="):])
    except ValueError:
        raise FormatError(f"line 1: bad rate {lines[0]!r}") from None
    if not (math.isfinite(rate) and rate > 0):
        raise FormatError(f"line 1: rate must be positive and finite, got {rate!r}")
    if len(lines) < 2 or lines[1].strip() != "value":
        raise FormatError("line 2: expected header 'value'")
    values = []
    for lineno, row in enumerate(lines[2:], start=3):
        try:
            v = float(row)
        except ValueError:
            raise FormatError(f"line {lineno}: not a number: {row!r}") from None
        if not math.isfinite(v):
            raise FormatError(f"line {lineno}: non-finite value {row!r}")
        values.append(v)
    if not values:
        raise FormatError("trace has no data rows")
    return Signal(np.array(values), rate, Origin.FILE)


def save_trace(sig: Signal, path) -> None:
    """Write ``sig`` in the trace CSV format read by :func:`load_trace`."""
    rows = [f"rate_hz={sig.rate_hz!r}", "value"]
    rows.extend(repr(float(v)) for v in sig.samples)
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")


def nearest_index(x: np.ndarray) -> np.ndarray:
    """Nearest integer index, ties going to the lower index."""
    return np.ceil(np.asarray(x) - 0.5 - 1e-12).astype(np.int64)


def observe_remote(victim: Signal, o: ObserverParams = ObserverParams(), seed: int = 0) -> Signal:
    """Model a remote (video-based) observation of the victim's breathing.

    The victim is re-sampled at the observer's effective frame rate by
    keeping the nearest sample, delayed by the processing latency, and
    corrupted with additive Gaussian noise.
    """
    o.validate()
    if len(victim) == 0:
        raise ParameterError("victim signal is empty")
    n_out = int(math.floor(len(victim) * o.effective_rate_hz / victim.rate_hz))
    k = np.arange(n_out)
    src = nearest_index(k * victim.rate_hz / o.effective_rate_hz - o.latency_ms * 1e-3 * victim.rate_hz)
    src = np.clip(src, 0, len(victim) - 1)
    out = victim.samples[src]
    if o.extra_noise_sigma > 0:
        rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(0xAD,)))
        out = out + rng.normal(0.0, o.extra_noise_sigma, n_out)
    return Signal(out, o.effective_rate_hz, Origin.REMOTE_OBSERVED)


@dataclass(frozen=True)
class CohortSpec:
    """How a cohort of synthetic subjects is drawn around a base parameter set."""

    base: SubjectParams = field(default_factory=SubjectParams)
    bpm_range: tuple[float, float] = (12.0, 18.0)


def cohort_params(spec: CohortSpec, size: int, seed: int) -> list[SubjectParams]:
    """Draw ``size`` subject parameter sets deterministically from ``seed``."""
    out = []
    for i in range(size):
        ss = np.random.SeedSequence(int(seed), spawn_key=(0, i))
        rng = np.random.default_rng(ss)
        bpm = float(rng.uniform(*spec.bpm_range))
        sub_seed = int(ss.generate_state(1, dtype=np.uint64)[0])
        out.append(replace(spec.base, breaths_per_min=bpm, seed=sub_seed))
    return out
