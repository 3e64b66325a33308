"""Desk-scale evaluation: metrics, parameter sweeps and the impersonation attack.

Every subject of a synthetic cohort wears a RIP-like device (DevA, the
initiator) and an accelerometer-like device (DevB).  Sessions are chained
along each recording: a session ends on success or after the attempt
budget, and the next one starts at DevA's following change point, so each
usable DevA change point is attempted exactly once.

Rates are counted per pairing attempt:

* FNR = 100 FN / EP over legitimate attempts (EP: all of them; FN: those
  not ending in an agreed key),
* FPR = 100 FP / EN over attempts that should fail (DevA of one subject
  against DevB of another, plus adversary attempts when an attack runs),
* KGR = agreed keys per simulated second of legitimate signal.

Seed splitting: subject ``i`` draws its parameters from
``SeedSequence(seed, spawn_key=(0, i))``.  The session stream of a pairing
is keyed by ``(seed, kind, a, b)`` with kind 3 (legitimate), 4 (cross) or
5 (adversary), so results never depend on evaluation order.
"""

from __future__ import annotations

import csv
import dataclasses
import enum
import io
import json
import math
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from b2p.dsp_preprocess import DownsampleMethod, FilterKind, PreprocessConfig, preprocess
from b2p.ecc_bch import make_code, valid_k
from b2p.errors import ParameterError
from b2p.pairing_protocol import Device, Role, SessionConfig, Status, pair_devices, prepare_device
from b2p.quantizer import Coding, SegmentPolicy, bit_agreement
from b2p.signal_source import (
    CohortSpec,
    ObserverParams,
    Signal,
    SubjectParams,
    cohort_params,
    generate_subject,
    observe_remote,
)
from b2p.sync_cpd import Stat, SyncConfig

SCHEMA = 1
DEFAULT_DURATION_S = 180.0
CROSS_PARTNERS = 3
_PERCENTILES = (5, 25, 50, 75, 95)


# --------------------------------------------------------------------------
# Metric formulas
# --------------------------------------------------------------------------

def entropy(bits) -> float:
    """Binary entropy of the 0/1 frequencies of ``bits``, in [0, 1]."""
    b = np.asarray(bits, dtype=np.uint8).ravel()
    if b.size == 0:
        raise ParameterError("entropy of an empty bit string")
    p1 = float(b.mean())
    return float(sum(-p * math.log2(p) for p in (p1, 1.0 - p1) if p > 0))


def fpr_pct(fp: int, en: int) -> float:
    if en <= 0:
        raise ParameterError("EN must be positive")
    return 100.0 * fp / en


def fnr_pct(fn: int, ep: int) -> float:
    if ep <= 0:
        raise ParameterError("EP must be positive")
    return 100.0 * fn / ep


def summarize(values: Sequence[float]) -> dict | None:
    if len(values) == 0:
        return None
    v = np.asarray(values, dtype=np.float64)
    out = {"n": int(v.size), "min": float(v.min()), "mean": float(v.mean()), "max": float(v.max())}
    for q in _PERCENTILES:
        out[f"p{q}"] = float(np.percentile(v, q))
    return out



# --------------------------------------------------------------------------
# Experiment configuration
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    session: SessionConfig = field(default_factory=SessionConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    subject: SubjectParams = field(default_factory=lambda: SubjectParams(duration_s=DEFAULT_DURATION_S))
    bpm_range: tuple[float, float] = (12.0, 18.0)
    cross_partners: int = CROSS_PARTNERS

    def validate(self) -> None:
        self.session.validate()
        self.preprocess.validate()
        self.subject.validate()
        if self.cross_partners < 1:
            raise ParameterError("cross_partners must be >= 1")


def _plain(v):
    if isinstance(v, enum.Enum):
        return v.value
    if dataclasses.is_dataclass(v):
        return {f.name: _plain(getattr(v, f.name)) for f in dataclasses.fields(v)}
    if isinstance(v, (tuple, list)):
        return [_plain(x) for x in v]
    return v


def config_to_dict(cfg) -> dict:
    return _plain(cfg)


def dataclass_from_dict(cls, data: dict | None, nested: dict[str, Any] | None = None):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ParameterError(f"{cls.__name__} config must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ParameterError(f"unknown {cls.__name__} field(s): {sorted(unknown)}")
    kwargs = dict(data)
    for key, sub in (nested or {}).items():
        if key in kwargs:
            kwargs[key] = dataclass_from_dict(sub, kwargs[key])
    for f in dataclasses.fields(cls):
        if f.name in kwargs and isinstance(kwargs[f.name], list):
            kwargs[f.name] = tuple(kwargs[f.name])
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ParameterError(f"bad {cls.__name__} config: {exc}") from None


def session_config_from_dict(d: dict | None) -> SessionConfig:
    return dataclass_from_dict(SessionConfig, d, {"sync_cfg": SyncConfig, "seg_policy": SegmentPolicy})


def config_from_dict(d: dict) -> ExperimentConfig:
    """Parse the JSON layout ``{"session", "preprocess", "subject", ...}``."""
    if not isinstance(d, dict):
        raise ParameterError("config must be a JSON object")
    allowed = {"session", "preprocess", "subject", "bpm_range", "cross_partners"}
    unknown = set(d) - allowed
    if unknown:
        raise ParameterError(f"unknown config section(s): {sorted(unknown)}")
    base = ExperimentConfig()
    subject = dataclass_from_dict(SubjectParams, {"duration_s": DEFAULT_DURATION_S, **d.get("subject", {})})
    cfg = ExperimentConfig(
        session=session_config_from_dict(d.get("session")),
        preprocess=dataclass_from_dict(PreprocessConfig, d.get("preprocess")),
        subject=subject,
        bpm_range=tuple(d.get("bpm_range", base.bpm_range)),
        cross_partners=int(d.get("cross_partners", base.cross_partners)),
    )
    cfg.validate()
    return cfg


# --------------------------------------------------------------------------
# Reports
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricsReport:
    kgr_keys_per_s: float
    entropy_mean: float | None
    fpr_pct: float | None
    fnr_pct: float | None
    bar_pct_distribution: dict | None
    n_attempts: int
    n_success: int
    ep: int
    fn: int
    en: int
    fp: int
    simulated_seconds: float
    legit_sessions: int
    legit_session_timeouts: int
    cross_sessions: int
    cross_session_successes: int
    key_mismatches: int
    config: dict
    schema: int = SCHEMA

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


@dataclass(frozen=True)
class AttackReport:
    n_attempts: int
    n_success: int
    bar_pct_distribution: dict | None
    bar_pct: list
    observer: dict
    config: dict
    schema: int = SCHEMA

    @property
    def bar_max(self) -> float | None:
        return max(self.bar_pct) if self.bar_pct else None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


# --------------------------------------------------------------------------
# Pairing runs
# --------------------------------------------------------------------------

@dataclass
class _Tally:
    attempts: int = 0
    successes: int = 0
    sessions: int = 0
    timeouts: int = 0
    key_mismatches: int = 0
    keys: list = field(default_factory=list)
    bars: list = field(default_factory=list)


def _pair_seed(seed: int, kind: int, a: int, b: int) -> int:
    ss = np.random.SeedSequence(int(seed), spawn_key=(kind, a, b))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def run_pairings(dev_a: Device, dev_b: Device, cfg: SessionConfig, seed: int,
                 tally: _Tally | None = None) -> _Tally:
    """Chain sessions over the whole recording and accumulate outcomes."""
    tally = _Tally() if tally is None else tally
    cfg_a = cfg.as_role(Role.INITIATOR)
    cfg_b = cfg.as_role(Role.RESPONDER)

    def observe(_attempt_id, q_a, resp):
        tried = resp.last_tried
        if q_a is not None and tried:
            tally.bars.append(max(bit_agreement(q_a, q_b) for _, q_b, _ in tried))

    cursor, k = 0, 0
    while cursor < len(dev_a.cps):
        r = pair_devices(dev_a, dev_b, cfg_a, cfg_b, seed=seed, start_cp=cursor,
                         session_index=k, observer=observe)
        k += 1
        out_a, out_b = r.outcome_a, r.outcome_b
        tally.attempts += out_a.attempts_used
        if out_a.attempts_used:
            tally.sessions += 1
        if out_a.status is Status.SUCCESS:
            tally.successes += 1
            tally.keys.append(out_a.key)
            if out_b.key is None or out_b.key != out_a.key:
                tally.key_mismatches += 1
        elif not out_a.exhausted:
            tally.timeouts += 1
        if out_a.exhausted or out_a.next_cp <= cursor:
            break
        cursor = out_a.next_cp
    return tally


def _cohort(size: int, cfg: ExperimentConfig, seed: int) -> list[tuple[Signal, Signal]]:
    spec = CohortSpec(cfg.subject, cfg.bpm_range)
    return [generate_subject(p) for p in cohort_params(spec, size, seed)]


def _devices(raw: Iterable[Signal], cfg: ExperimentConfig, role: Role) -> list[Device]:
    scfg = cfg.session.as_role(role)
    return [prepare_device(preprocess(s, cfg.preprocess), scfg) for s in raw]


def run_experiment(cohort_size: int, cfg: ExperimentConfig = ExperimentConfig(), seed: int = 0) -> MetricsReport:
    """Legitimate and cross-subject pairing over a synthetic cohort.

    Entropy is that of the agreed pre-hash key material (``Q_A`` with its
    parity bit), averaged over agreed keys; the hashed key itself is
    uniform by construction.  ``bar_pct_distribution`` summarizes, per
    legitimate attempt, DevB's best agreement among its candidates.
    """
    if cohort_size < 2:
        raise ParameterError("cohort_size must be >= 2 to count cross-subject false positives")
    cfg.validate()
    subjects = _cohort(cohort_size, cfg, seed)
    devs_a = _devices((rip for rip, _ in subjects), cfg, Role.INITIATOR)
    devs_b = _devices((acc for _, acc in subjects), cfg, Role.RESPONDER)

    legit = _Tally()
    for i in range(cohort_size):
        run_pairings(devs_a[i], devs_b[i], cfg.session, _pair_seed(seed, 3, i, i), legit)
    cross = _Tally()
    partners = min(cfg.cross_partners, cohort_size - 1)
    for i in range(cohort_size):
        for d in range(1, partners + 1):
            j = (i + d) % cohort_size
            run_pairings(devs_a[i], devs_b[j], cfg.session, _pair_seed(seed, 4, i, j), cross)

    seconds = float(sum(len(rip) / rip.rate_hz for rip, _ in subjects))
    ent = [entropy(k.pre_hash) for k in legit.keys]
    return MetricsReport(
        kgr_keys_per_s=legit.successes / seconds,
        entropy_mean=float(np.mean(ent)) if ent else None,
        fpr_pct=fpr_pct(cross.successes, cross.attempts) if cross.attempts else None,
        fnr_pct=fnr_pct(legit.attempts - legit.successes, legit.attempts) if legit.attempts else None,
        bar_pct_distribution=summarize(legit.bars),
        n_attempts=legit.attempts,
        n_success=legit.successes,
        ep=legit.attempts,
        fn=legit.attempts - legit.successes,
        en=cross.attempts,
        fp=cross.successes,
        simulated_seconds=seconds,
        legit_sessions=legit.sessions,
        legit_session_timeouts=legit.timeouts,
        cross_sessions=cross.sessions,
        cross_session_successes=cross.successes,
        key_mismatches=legit.key_mismatches + cross.key_mismatches,
        config={"cohort_size": cohort_size, "seed": int(seed), **config_to_dict(cfg)},
    )


# --------------------------------------------------------------------------
# Sweeps
# --------------------------------------------------------------------------

class Axis(str, enum.Enum):
    KEY_LEN = "key_len"
    ECR = "ecr"
    BITS_PER_SAMPLE = "bits_per_sample"
    CODING = "coding"
    CPD_STAT = "cpd_stat"
    N_CP_PER_CYCLE = "n_cp_per_cycle"
    CPD_THRESHOLD = "cpd_threshold"
    N_OFFSET = "n_offset"
    SYNC_OFFSET = "sync_offset"
    FILTER = "filter"
    DOWNSAMPLE = "downsample"
    SG_ENABLED = "sg_enabled"


@dataclass(frozen=True)
class SweepSpec:
    axis: Axis
    values: tuple
    base: ExperimentConfig = field(default_factory=ExperimentConfig)
    cohort_size: int = 10

    def __post_init__(self):
        object.__setattr__(self, "axis", Axis(self.axis))
        object.__setattr__(self, "values", tuple(self.values))
        if not self.values:
            raise ParameterError("sweep values must not be empty")
        for v in self.values:
            apply_axis(self.base, self.axis, v)


def code_for_ecr(ecr: float, n: int = 255) -> tuple[int, int]:
    """Narrow-sense ``(n, K)`` whose ``t / n`` lies closest to ``ecr``."""
    if not 0 < ecr < 0.5:
        raise ParameterError("ecr must lie in (0, 0.5)")
    best = min(valid_k(n), key=lambda k: (abs(make_code(n, k).t / n - ecr), -k))
    return n, best


def key_len_code(key_len: int, base: tuple[int, int]) -> tuple[int, int]:
    """Code for a key length: ``N + 1`` pre-hash bits match the key length.

    The code keeps the base configuration's error correction rate as
    closely as the valid ``K`` values allow.
    """
    n = key_len - 1
    if key_len not in (128, 256):
        raise ParameterError("key_len must be 128 or 256")
    if n == base[0]:
        return base
    return code_for_ecr(make_code(*base).ecr, n)


def apply_axis(cfg: ExperimentConfig, axis, value) -> ExperimentConfig:
    axis = Axis(axis)
    s, p = cfg.session, cfg.preprocess
    if axis is Axis.KEY_LEN:
        s = replace(s, key_len=int(value), bch=key_len_code(int(value), s.bch))
    elif axis is Axis.ECR:
        s = replace(s, bch=code_for_ecr(float(value), s.bch[0]))
    elif axis is Axis.BITS_PER_SAMPLE:
        s = replace(s, bits_per_sample=int(value))
    elif axis is Axis.CODING:
        s = replace(s, coding=Coding(value))
    elif axis is Axis.CPD_STAT:
        s = replace(s, sync_cfg=replace(s.sync_cfg, stat=Stat(value)))
    elif axis is Axis.N_CP_PER_CYCLE:
        s = replace(s, sync_cfg=replace(s.sync_cfg, n_cp_per_cycle=int(value)))
    elif axis is Axis.CPD_THRESHOLD:
        s = replace(s, sync_cfg=replace(s.sync_cfg, threshold=float(value)))
    elif axis is Axis.N_OFFSET:
        s = replace(s, sync_cfg=replace(s.sync_cfg, n_offset=int(value)))
    elif axis is Axis.SYNC_OFFSET:
        s = replace(s, sync_cfg=replace(s.sync_cfg, sync_offset_ms=float(value)))
    elif axis is Axis.FILTER:
        p = replace(p, filter=FilterKind(value))
    elif axis is Axis.DOWNSAMPLE:
        p = replace(p, downsample_method=DownsampleMethod(value))
    elif axis is Axis.SG_ENABLED:
        if not isinstance(value, bool):
            raise ParameterError("sg_enabled values must be booleans")
        p = replace(p, sg_enabled=value)
    out = replace(cfg, session=s, preprocess=p)
    out.validate()
    return out


def run_sweep(spec: SweepSpec, seed: int = 0) -> list[tuple[Any, MetricsReport]]:
    """One report per axis value; everything else stays at the base config."""
    return [(v, run_experiment(spec.cohort_size, apply_axis(spec.base, spec.axis, v), seed)) for v in spec.values]


SWEEP_COLUMNS = ("axis", "value", "kgr_keys_per_s", "entropy_mean", "fpr_pct", "fnr_pct",
                 "n_attempts", "n_success", "en", "fp", "bar_mean", "bar_max")


def sweep_csv(axis, rows: list[tuple[Any, MetricsReport]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for value, r in rows:
        bars = r.bar_pct_distribution or {}
        w.writerow([Axis(axis).value, value, r.kgr_keys_per_s, r.entropy_mean, r.fpr_pct, r.fnr_pct,
                    r.n_attempts, r.n_success, r.en, r.fp, bars.get("mean"), bars.get("max")])
    return buf.getvalue()


def sweep_spec_from_dict(d: dict) -> SweepSpec:
    if not isinstance(d, dict) or "axis" not in d or "values" not in d:
        raise ParameterError("sweep spec needs 'axis' and 'values'")
    unknown = set(d) - {"axis", "values", "base", "cohort_size"}
    if unknown:
        raise ParameterError(f"unknown sweep spec field(s): {sorted(unknown)}")
    try:
        axis = Axis(d["axis"])
    except ValueError:
        raise ParameterError(f"unknown sweep axis {d['axis']!r}") from None
    return SweepSpec(axis, tuple(d["values"]), config_from_dict(d.get("base", {})),
                     int(d.get("cohort_size", 10)))


# --------------------------------------------------------------------------
# Impersonation attack
# --------------------------------------------------------------------------

def adversary_view(victim: Signal, observer: ObserverParams, target_rate_hz: float, seed: int = 0) -> Signal:
    """The adversary's remote observation, brought to the devices' rate.

    Frames arrive at ``observer.effective_rate_hz``; the adversary
    interpolates them with a cubic spline onto the agreed sample clock so it
    can run the same preprocessing and quantization as the devices.
    """
    obs = observe_remote(victim, observer, seed)
    if obs.rate_hz >= target_rate_hz:
        return obs
    t = np.arange(len(obs)) / obs.rate_hz
    n_out = int(math.floor(len(obs) * target_rate_hz / obs.rate_hz))
    tt = np.arange(n_out) / target_rate_hz
    tt = tt[tt <= t[-1]]
    return obs.with_samples(CubicSpline(t, obs.samples)(tt), rate_hz=target_rate_hz)


def run_attack(cohort_size: int, observer: ObserverParams = ObserverParams(),
               cfg: ExperimentConfig = ExperimentConfig(), seed: int = 0) -> AttackReport:
    """Each subject's adversary pairs with that subject's DevA.

    The adversary watches the RIP-like view of the victim's breathing
    through ``observer`` and plays DevB.  BAR per attempt is the best
    agreement among the candidates the adversary tried.
    """
    if cohort_size < 1:
        raise ParameterError("cohort_size must be >= 1")
    observer.validate()
    cfg.validate()
    subjects = _cohort(cohort_size, cfg, seed)
    devs_a = _devices((rip for rip, _ in subjects), cfg, Role.INITIATOR)
    rate = cfg.preprocess.target_rate_hz
    adv_raw = [adversary_view(rip, observer, rate, _pair_seed(seed, 6, i, i)) for i, (rip, _) in enumerate(subjects)]
    devs_x = _devices(adv_raw, cfg, Role.RESPONDER)
    tally = _Tally()
    for i in range(cohort_size):
        run_pairings(devs_a[i], devs_x[i], cfg.session, _pair_seed(seed, 5, i, i), tally)
    return AttackReport(
        n_attempts=tally.attempts,
        n_success=tally.successes,
        bar_pct_distribution=summarize(tally.bars),
        bar_pct=[float(b) for b in tally.bars],
        observer=config_to_dict(observer),
        config={"cohort_size": cohort_size, "seed": int(seed), **config_to_dict(cfg)},
    )
