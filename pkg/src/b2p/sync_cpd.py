"""Respiration cycles and change points used as synchronization anchors.

Cycles come from alternating peaks and valleys of the preprocessed
signal.  Inside every peak-valley span a two-sided sliding-window contrast
of a statistic (mean, std or rms) locates the span's strongest change
points; these serve as the synchronization anchors both devices share.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import find_peaks

from b2p.errors import ParameterError
from b2p.signal_source import Signal

PROMINENCE = 0.2
MAX_BREATHS_PER_MIN = 30.0
CP_WINDOW_S = 0.5


class Stat(str, enum.Enum):
    MEAN = "mean"
    STD = "std"
    RMS = "rms"


@dataclass(frozen=True)
class Cycle:
    peak_idx: int
    valley_idx: int


@dataclass(frozen=True)
class ChangePoint:
    idx: int
    score: float
    cycle: int
    stat: Stat


@dataclass(frozen=True)
class SyncConfig:
    stat: Stat = Stat.STD
    threshold: float = 0.05
    n_cp_per_cycle: int = 1
    n_offset: int = 2
    sync_offset_ms: float = 250.0

    def __post_init__(self):
        object.__setattr__(self, "stat", Stat(self.stat))

    def validate(self) -> None:
        if not self.threshold >= 0:
            raise ParameterError("threshold must be >= 0")
        if self.n_cp_per_cycle < 1:
            raise ParameterError("n_cp_per_cycle must be >= 1")
        if self.n_offset < 0:
            raise ParameterError("n_offset must be >= 0")
        if not self.sync_offset_ms >= 0:
            raise ParameterError("sync_offset_ms must be >= 0")


def _alternate(peaks: np.ndarray, valleys: np.ndarray, x: np.ndarray) -> list[tuple[int, bool]]:
    """Merge extrema into a strictly alternating sequence of (idx, is_peak).

    Runs of the same kind collapse to their most extreme member.
    """
    events = sorted([(int(i), True) for i in peaks] + [(int(i), False) for i in valleys])
    out: list[tuple[int, bool]] = []
    for idx, is_peak in events:
        if out and out[-1][1] == is_peak:
            prev = out[-1][0]
            better = x[idx] > x[prev] if is_peak else x[idx] < x[prev]
            if better:
                out[-1] = (idx, is_peak)
            continue
        out.append((idx, is_peak))
    return out


def find_extrema(s: Signal) -> list[tuple[int, bool]]:
    x = s.samples
    if x.size < 3 or np.ptp(x) == 0:
        return []
    distance = max(1, int(round(s.rate_hz * 60.0 / MAX_BREATHS_PER_MIN)))
    peaks, _ = find_peaks(x, prominence=PROMINENCE, distance=distance)
    valleys, _ = find_peaks(-x, prominence=PROMINENCE, distance=distance)
    return _alternate(peaks, valleys, x)


def find_cycles(s: Signal) -> list[Cycle]:
    """Pair every detected peak with the valley that follows it."""
    ext = find_extrema(s)
    cycles = []
    for (i, is_peak), (j, next_is_peak) in zip(ext, ext[1:]):
        if is_peak and not next_is_peak:
            cycles.append(Cycle(i, j))
    return cycles


def spans(cycles: list[Cycle]) -> list[tuple[int, int]]:
    """All consecutive extremum pairs: peak->valley and valley->peak spans."""
    points = []
    for c in cycles:
        points.extend((c.peak_idx, c.valley_idx))
    return list(zip(points, points[1:]))


def _window_stat(x: np.ndarray, w: int, stat: Stat) -> np.ndarray:
    win = sliding_window_view(x, w)
    if stat is Stat.MEAN:
        return win.mean(axis=1)
    if stat is Stat.STD:
        return win.std(axis=1)
    return np.sqrt(np.mean(win * win, axis=1))


def span_scores(x: np.ndarray, start: int, end: int, w: int, stat: Stat) -> tuple[np.ndarray, np.ndarray]:
    """Contrast scores for every split ``c`` with ``start <= c <= end``.

    A split compares ``x[c - w:c]`` with ``x[c:c + w]``.  The windows may
    reach past the span into the neighbouring half-cycles so that the span
    edges are not favoured artificially; splits whose windows would leave
    the signal are skipped, and spans shorter than ``w`` yield nothing.
    Returns ``(indices, scores)``.
    """
    x = np.asarray(x, dtype=np.float64)
    lo, hi = max(start, w), min(end, x.size - w)
    if end - start < w or hi < lo:
        return np.empty(0, dtype=np.int64), np.empty(0)
    seg = x[lo - w:hi + w]
    st = _window_stat(seg, w, stat)
    # st[k] covers seg[k:k + w]; split c sits at local offset c - lo + w.
    local = np.arange(hi - lo + 1) + w
    scores = np.abs(st[local] - st[local - w])
    return np.arange(lo, hi + 1), scores


def _top(indices: np.ndarray, scores: np.ndarray, n: int, threshold: float) -> list[int]:
    order = np.lexsort((indices, -scores))
    chosen = [k for k in order[:n] if scores[k] >= threshold]
    return chosen


def detect_change_points(s: Signal, cycles: list[Cycle], cfg: SyncConfig = SyncConfig(),
                         window: int | None = None) -> list[ChangePoint]:
    """Strongest change points per peak-valley span, sorted by index."""
    if not cycles:
        raise ParameterError("detect_change_points needs at least one cycle")
    stat = Stat(cfg.stat)
    w = int(round(CP_WINDOW_S * s.rate_hz)) if window is None else int(window)
    if w < 2:
        raise ParameterError("change-point window must span at least 2 samples")
    out = []
    for ordinal, (a, b) in enumerate(spans(cycles)):
        idx, sc = span_scores(s.samples, min(a, b), max(a, b), w, stat)
        for k in _top(idx, sc, cfg.n_cp_per_cycle, cfg.threshold):
            out.append(ChangePoint(int(idx[k]), float(sc[k]), ordinal, stat))
    out.sort(key=lambda cp: cp.idx)
    return out


def change_points(s: Signal, cfg: SyncConfig = SyncConfig()) -> list[ChangePoint]:
    """Cycles and change points of a preprocessed signal in one call."""
    cycles = find_cycles(s)
    if not cycles:
        return []
    return detect_change_points(s, cycles, cfg)


def candidate_anchors(cps, i: int, n_offset: int) -> list[int]:
    """Indices ``i - n_offset .. i + n_offset`` clipped to ``cps``.

    Ordered by distance from ``i``, the earlier one first on ties.
    """
    n = len(cps)
    if not 0 <= i < n:
        raise ParameterError(f"anchor index {i} out of range for {n} change points")
    if n_offset < 0:
        raise ParameterError("n_offset must be >= 0")
    out = [i]
    for d in range(1, n_offset + 1):
        for j in (i - d, i + d):
            if 0 <= j < n:
                out.append(j)
    return out


def within_sync_offset(t_a_ms: float, t_b_ms: float, sync_offset_ms: float = 250.0) -> bool:
    return abs(t_a_ms - t_b_ms) <= sync_offset_ms
