"""From a preprocessed signal to key-material bits.

Three stages:

* choosing the number of bits per sample that maximizes the expected
  number of agreed key bits when the two devices' signals differ by
  Gaussian noise (:func:`solve_optimal_bits`);
* a Lloyd-Max scalar quantizer fitted to the signal's distribution
  (:func:`fit_lloyd_max`) and Gray/binary encoding of interval indices;
* cutting ``N`` key bits around a change point from sparse, non-adjacent
  segments (:func:`select_key_bits`).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import optimize
from scipy.special import ndtr

from b2p.errors import DegenerateInputError, ParameterError, WindowUnderflowError

MAX_ITERATIONS = 500
TOLERANCE = 1e-9
HISTOGRAM_BINS = 256
PDF_GRID = 1 << 16


class Coding(str, enum.Enum):
    GRAY = "gray"
    BINARY = "binary"


# --------------------------------------------------------------------------
# Optimal bits per sample
# --------------------------------------------------------------------------

def _psi(z):
    """Antiderivative of the standard normal CDF: z*Phi(z) + phi(z)."""
    z = np.asarray(z, dtype=np.float64)
    return z * ndtr(z) + np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)


def agreement_probability(b: float, mu: float, sigma: float, d: float) -> float:
    """Per-sample probability that both devices quantize to the same interval.

    One device sees ``x ~ U[-d/2, d/2]``, the other ``x + D`` with
    ``D ~ N(mu, sigma^2)``.  Both use the same ``2**b``-level equal-width
    quantizer on ``[-d/2, d/2]``; values beyond the range fall into the
    edge intervals.  Real ``b`` is accepted (non-integer level counts)
    for the continuous relaxation.
    """
    if sigma == 0:
        # A constant shift keeps a fraction of every interval in place; the
        # edge interval on the far side of the shift never loses anything.
        m = 2.0 ** b
        delta = d / m
        stay = max(0.0, delta - abs(mu)) / delta
        return float((1.0 + (m - 1.0) * stay) / m)
    m = 2.0 ** b
    delta = d / m
    s = sigma
    # Integrals over one interval of width delta (u = x - left edge):
    #   int_0^delta Phi((delta - u - mu)/s) du   -> stays below the upper edge
    #   int_0^delta Phi((-u - mu)/s) du          -> drops below the lower edge
    below_upper = s * (_psi((delta - mu) / s) - _psi(-mu / s))
    below_lower = s * (_psi(-mu / s) - _psi((-delta - mu) / s))
    interior = below_upper - below_lower
    lower_edge = below_upper
    upper_edge = delta - below_lower
    total = lower_edge + upper_edge + (m - 2.0) * interior
    return float(np.clip(total / d, 0.0, 1.0))


def log_objective(b: float, mu: float, sigma: float, d: float, K: int) -> float:
    """log of ``b * P_agree(b) ** (K / b)``: bits per sample times the
    probability that all ``K / b`` samples behind a K-bit key agree."""
    p = agreement_probability(b, mu, sigma, d)
    if p <= 0:
        return -math.inf
    return math.log(b) + (K / b) * math.log(p)


def _check_solver_args(mu, sigma, d, K, b_max):
    for name, v in (("mu", mu), ("sigma", sigma), ("d", d)):
        if not math.isfinite(v):
            raise ParameterError(f"{name} must be finite")
    if sigma < 0:
        raise ParameterError("sigma must be >= 0")
    if d <= 0:
        raise ParameterError("d must be positive")
    if K < 1:
        raise ParameterError("K must be >= 1")
    if not 1 <= b_max <= 16:
        raise ParameterError("b_max must lie in [1, 16]")


def solve_optimal_bits(mu: float, sigma: float, d: float, K: int, b_max: int = 8) -> int:
    """Integer bits per sample maximizing :func:`log_objective`; ties -> smaller b."""
    _check_solver_args(mu, sigma, d, K, b_max)
    scores = [log_objective(b, mu, sigma, d, K) for b in range(1, b_max + 1)]
    return 1 + int(np.argmax(scores))


def continuous_optimal_bits(mu: float, sigma: float, d: float, K: int, b_max: int = 8) -> float:
    """Real-valued maximizer of the relaxed objective on ``[1, b_max]``.

    The integer answer of :func:`solve_optimal_bits` lies next to it; the
    pair is used as a cross-check.
    """
    _check_solver_args(mu, sigma, d, K, b_max)
    if sigma == 0 and mu == 0:
        return float(b_max)
    res = optimize.minimize_scalar(
        lambda b: -log_objective(b, mu, sigma, d, K),
        bounds=(1.0, float(b_max)),
        method="bounded",
        options={"xatol": 1e-10},
    )
    return float(res.x)


# --------------------------------------------------------------------------
# Lloyd-Max quantizer
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class QuantizerSpec:
    boundaries: np.ndarray
    levels: np.ndarray
    bits: int
    coding: Coding = Coding.GRAY

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=np.float64)
        lv = np.asarray(self.levels, dtype=np.float64)
        if self.bits < 1:
            raise ParameterError("bits per sample must be >= 1")
        m = 1 << self.bits
        if lv.shape != (m,) or b.shape != (m - 1,):
            raise ParameterError(f"expected {m} levels and {m - 1} boundaries")
        if np.any(np.diff(b) <= 0) or np.any(np.diff(lv) <= 0):
            raise ParameterError("boundaries and levels must be strictly ascending")
        if np.any(lv[:-1] > b) or np.any(lv[1:] < b):
            raise ParameterError("every level must lie inside its interval")
        b.setflags(write=False)
        lv.setflags(write=False)
        object.__setattr__(self, "boundaries", b)
        object.__setattr__(self, "levels", lv)
        object.__setattr__(self, "coding", Coding(self.coding))

    @property
    def n_levels(self) -> int:
        return 1 << self.bits

    def with_coding(self, coding) -> "QuantizerSpec":
        return QuantizerSpec(self.boundaries, self.levels, self.bits, Coding(coding))


@dataclass(frozen=True, eq=False)
class _Density:
    """Piecewise-constant density on ``edges`` with bin probabilities ``mass``."""

    edges: np.ndarray
    mass: np.ndarray

    def __post_init__(self):
        h = np.diff(self.edges)
        dens = self.mass / h
        e0 = self.edges[:-1]
        e1 = self.edges[1:]
        zero = np.zeros(1)
        object.__setattr__(self, "_dens", dens)
        object.__setattr__(self, "_c0", np.concatenate((zero, np.cumsum(self.mass))))
        object.__setattr__(self, "_c1", np.concatenate((zero, np.cumsum(dens * (e1**2 - e0**2) / 2))))
        object.__setattr__(self, "_c2", np.concatenate((zero, np.cumsum(dens * (e1**3 - e0**3) / 3))))

    @property
    def lo(self) -> float:
        return float(self.edges[0])

    @property
    def hi(self) -> float:
        return float(self.edges[-1])

    def moments(self, x):
        """Cumulative 0th, 1st and 2nd moments of the density up to ``x``."""
        x = np.clip(np.asarray(x, dtype=np.float64), self.lo, self.hi)
        k = np.clip(np.searchsorted(self.edges, x, side="right") - 1, 0, self.mass.size - 1)
        e = self.edges[k]
        f = self._dens[k]
        m0 = self._c0[k] + f * (x - e)
        m1 = self._c1[k] + f * (x**2 - e**2) / 2
        m2 = self._c2[k] + f * (x**3 - e**3) / 3
        return m0, m1, m2


@dataclass(frozen=True, eq=False)
class LloydMaxResult:
    spec: QuantizerSpec
    mse_history: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False


def _mse(dens: _Density, cuts: np.ndarray, levels: np.ndarray) -> float:
    m0, m1, m2 = dens.moments(cuts)
    p, s1, s2 = np.diff(m0), np.diff(m1), np.diff(m2)
    return float(np.sum(s2 - 2 * levels * s1 + levels**2 * p))


def _centroids(dens: _Density, cuts: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    m0, m1, _ = dens.moments(cuts)
    p, s1 = np.diff(m0), np.diff(m1)
    out = fallback.copy()
    ok = p > 1e-300
    out[ok] = s1[ok] / p[ok]
    return out


def _density_from_samples(samples) -> _Density:
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0 or not np.all(np.isfinite(x)):
        raise DegenerateInputError("need finite, non-empty samples")
    lo, hi = float(x.min()), float(x.max())
    if not hi > lo:
        raise DegenerateInputError("samples are constant")
    counts, edges = np.histogram(x, bins=HISTOGRAM_BINS, range=(lo, hi))
    return _Density(edges, counts / counts.sum())


def _density_from_pdf(pdf: Callable, support: tuple[float, float], grid: int = PDF_GRID) -> _Density:
    lo, hi = map(float, support)
    if not (math.isfinite(lo) and math.isfinite(hi) and hi > lo):
        raise DegenerateInputError("pdf support must be a bounded, non-empty interval")
    edges = np.linspace(lo, hi, grid + 1)
    mid = 0.5 * (edges[:-1] + edges[1:])
    f = np.asarray(pdf(mid), dtype=np.float64) * np.diff(edges)
    if np.any(f < 0) or not np.all(np.isfinite(f)) or f.sum() <= 0:
        raise DegenerateInputError("pdf must be finite, non-negative and integrate to > 0")
    return _Density(edges, f / f.sum())


def lloyd_max(b: int, samples=None, pdf: Callable | None = None,
              support: tuple[float, float] | None = None,
              coding=Coding.GRAY) -> LloydMaxResult:
    """Run the Lloyd-Max fixed-point iteration and keep the MSE trace.

    Exactly one of ``samples`` (empirical mode: a 256-bin histogram) or
    ``pdf`` together with a bounded ``support`` must be given.  The
    iteration starts from the equal-width quantizer, so ``mse_history[0]``
    is that quantizer's distortion.
    """
    if b < 1:
        raise ParameterError("b must be >= 1")
    m = 1 << b
    if (samples is None) == (pdf is None):
        raise ParameterError("pass exactly one of samples or pdf")
    if samples is not None:
        arr = np.asarray(samples, dtype=np.float64).ravel()
        if np.unique(arr).size < m:
            raise DegenerateInputError(f"need at least {m} distinct sample values")
        dens = _density_from_samples(arr)
    else:
        if support is None:
            raise ParameterError("pdf mode needs a bounded support")
        dens = _density_from_pdf(pdf, support)

    lo, hi = dens.lo, dens.hi
    bounds = lo + (hi - lo) * np.arange(1, m) / m
    levels = lo + (hi - lo) * (np.arange(m) + 0.5) / m
    history = [_mse(dens, np.concatenate(([lo], bounds, [hi])), levels)]
    converged = False
    it = 0
    for it in range(1, MAX_ITERATIONS + 1):
        cuts = np.concatenate(([lo], bounds, [hi]))
        mids = 0.5 * (cuts[:-1] + cuts[1:])
        new_levels = _centroids(dens, cuts, mids)
        bounds = 0.5 * (new_levels[:-1] + new_levels[1:])
        history.append(_mse(dens, np.concatenate(([lo], bounds, [hi])), new_levels))
        moved = float(np.max(np.abs(new_levels - levels)))
        levels = new_levels
        if moved < TOLERANCE:
            converged = True
            break
    spec = QuantizerSpec(bounds, levels, b, coding)
    return LloydMaxResult(spec, history, it, converged)


def fit_lloyd_max(b: int, samples=None, pdf: Callable | None = None,
                  support: tuple[float, float] | None = None,
                  coding=Coding.GRAY) -> QuantizerSpec:
    return lloyd_max(b, samples=samples, pdf=pdf, support=support, coding=coding).spec


def uniform_quantizer(b: int, lo: float = -1.0, hi: float = 1.0, coding=Coding.GRAY) -> QuantizerSpec:
    """Equal-width quantizer on ``[lo, hi]`` with mid-interval levels."""
    m = 1 << b
    bounds = lo + (hi - lo) * np.arange(1, m) / m
    levels = lo + (hi - lo) * (np.arange(m) + 0.5) / m
    return QuantizerSpec(bounds, levels, b, coding)


def quantization_mse(samples, spec: QuantizerSpec) -> float:
    x = np.asarray(samples, dtype=np.float64)
    return float(np.mean((x - reconstruct(x, spec)) ** 2))


# --------------------------------------------------------------------------
# Encoding
# --------------------------------------------------------------------------

def interval_index(x, spec: QuantizerSpec) -> np.ndarray:
    """Interval of each sample; a value equal to a boundary goes up."""
    return np.searchsorted(spec.boundaries, np.asarray(x, dtype=np.float64), side="right")


def reconstruct(x, spec: QuantizerSpec) -> np.ndarray:
    return spec.levels[interval_index(x, spec)]


def gray_code(index):
    index = np.asarray(index, dtype=np.int64)
    return index ^ (index >> 1)


def encode_indices(index, bits: int, coding=Coding.GRAY) -> np.ndarray:
    """Encode integer indices in ``bits`` bits each, MSB first, concatenated."""
    index = np.asarray(index, dtype=np.int64).ravel()
    codes = gray_code(index) if Coding(coding) is Coding.GRAY else index
    shifts = np.arange(bits - 1, -1, -1)
    return ((codes[:, None] >> shifts) & 1).astype(np.uint8).ravel()


def quantize_encode(samples, spec: QuantizerSpec) -> np.ndarray:
    """Quantize every sample and return the concatenated code bits."""
    x = samples.samples if hasattr(samples, "samples") else samples
    return encode_indices(interval_index(x, spec), spec.bits, spec.coding)


# --------------------------------------------------------------------------
# Key-bit selection around a change point
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SegmentPolicy:
    n_seg: int = 10
    selected: tuple[int, ...] = (2, 5, 6, 7, 10)

    def __post_init__(self):
        object.__setattr__(self, "selected", tuple(int(i) for i in self.selected))
        self.validate()

    def validate(self) -> None:
        sel = self.selected
        if self.n_seg < 1:
            raise ParameterError("n_seg must be >= 1")
        if not sel:
            raise ParameterError("selected segments must not be empty")
        if any(b <= a for a, b in zip(sel, sel[1:])):
            raise ParameterError("selected segments must be strictly ascending")
        if sel[0] < 1 or sel[-1] > self.n_seg:
            raise ParameterError("selected segment index out of 1..n_seg")


def segment_lengths(N: int, policy: SegmentPolicy) -> list[int]:
    """Bit length of each of the ``n_seg`` segments of the key window.

    The selected segments split ``N`` as evenly as possible (earlier ones
    take the remainder); skipped segments get the nominal length
    ``N // |selected|``, so the window spans ``N * n_seg / |selected|`` bits
    whenever that is an integer.
    """
    k = len(policy.selected)
    q, r = divmod(N, k)
    lengths = [q] * policy.n_seg
    for rank, seg in enumerate(policy.selected):
        lengths[seg - 1] = q + (1 if rank < r else 0)
    return lengths


def select_key_bits(bits, cp_sample_idx: int, N: int, b: int,
                    policy: SegmentPolicy = SegmentPolicy()) -> np.ndarray:
    """Take exactly ``N`` key bits from the window centred on a change point.

    Raises
    ------
    WindowUnderflowError
        If the window does not fit inside ``bits``.
    """
    bits = np.asarray(bits, dtype=np.uint8)
    lengths = segment_lengths(N, policy)
    window = sum(lengths)
    centre = int(cp_sample_idx) * b
    start = centre - window // 2
    if start < 0 or start + window > bits.size:
        raise WindowUnderflowError(
            f"window of {window} bits at bit {centre} does not fit in {bits.size} bits"
        )
    offsets = np.concatenate(([0], np.cumsum(lengths)))
    parts = [bits[start + offsets[s - 1]:start + offsets[s]] for s in policy.selected]
    return np.concatenate(parts)


def bit_agreement(a: Sequence[int], b: Sequence[int]) -> float:
    """Percentage of positions where two equal-length bit strings match."""
    a = np.asarray(a, dtype=np.uint8)
    b = np.asarray(b, dtype=np.uint8)
    if a.shape != b.shape:
        raise ParameterError("bit strings must have equal length")
    if a.size == 0:
        raise ParameterError("bit strings must be non-empty")
    return 100.0 * float(np.mean(a == b))
