import json
import math
from dataclasses import replace

import numpy as np
import pytest

from b2p.dsp_preprocess import FilterKind, PreprocessConfig
from b2p.ecc_bch import make_code
from b2p.errors import ParameterError
from b2p.eval_harness import (
    Axis,
    ExperimentConfig,
    SweepSpec,
    adversary_view,
    apply_axis,
    code_for_ecr,
    config_from_dict,
    config_to_dict,
    entropy,
    fnr_pct,
    fpr_pct,
    key_len_code,
    run_attack,
    run_experiment,
    run_sweep,
    summarize,
    sweep_csv,
    sweep_spec_from_dict,
)
from b2p.pairing_protocol import SessionConfig
from b2p.quantizer import Coding
from b2p.signal_source import ObserverParams, Signal, SubjectParams

SHORT = ExperimentConfig(subject=SubjectParams(duration_s=60.0))


def test_entropy_examples():
    assert entropy([0, 1] * 50) == 1.0
    assert entropy(np.zeros(64)) == 0.0
    assert entropy(np.ones(64)) == 0.0
    h = -(0.25 * math.log2(0.25) + 0.75 * math.log2(0.75))
    assert abs(entropy([1, 0, 0, 0] * 25) - h) < 1e-12
    assert abs(h - 0.811278124459) < 1e-12
    with pytest.raises(ParameterError):
        entropy([])


def test_rate_formulas():
    assert fpr_pct(2, 1000) == pytest.approx(0.2, abs=1e-12)
    assert fnr_pct(3, 40) == pytest.approx(7.5, abs=1e-12)
    with pytest.raises(ParameterError):
        fpr_pct(0, 0)
    with pytest.raises(ParameterError):
        fnr_pct(1, 0)


def test_summarize():
    s = summarize([1.0, 2.0, 3.0, 4.0, 5.0])
    assert (s["min"], s["mean"], s["max"], s["p50"], s["n"]) == (1.0, 3.0, 5.0, 3.0, 5)
    assert summarize([]) is None


def test_cohort_too_small():
    with pytest.raises(ParameterError):
        run_experiment(1, SHORT)


@pytest.fixture(scope="module")
def small_report():
    return run_experiment(3, SHORT, seed=4)


def test_report_fields_consistent(small_report):
    r = small_report
    assert r.kgr_keys_per_s == pytest.approx(r.n_success / r.simulated_seconds)
    assert r.simulated_seconds == pytest.approx(3 * 60.0)
    assert r.ep == r.n_attempts and r.fn == r.ep - r.n_success
    assert r.fnr_pct == pytest.approx(100 * r.fn / r.ep)
    assert r.fpr_pct == pytest.approx(100 * r.fp / r.en)
    assert 0.0 <= r.entropy_mean <= 1.0
    assert r.key_mismatches == 0
    d = json.loads(r.to_json())
    assert d["schema"] == 1 and d["config"]["cohort_size"] == 3


def test_report_reproducible(small_report):
    assert run_experiment(3, SHORT, seed=4).to_json() == small_report.to_json()
    assert run_experiment(3, SHORT, seed=5).to_json() != small_report.to_json()


def test_config_roundtrip():
    cfg = apply_axis(apply_axis(ExperimentConfig(), "coding", "binary"), "n_offset", 1)
    assert config_from_dict(config_to_dict(cfg)) == cfg
    assert config_from_dict({}) == ExperimentConfig()


@pytest.mark.parametrize("d", [
    {"nope": 1},
    {"session": {"bogus": 1}},
    {"session": {"sync_cfg": {"stat": "median"}}},
    {"preprocess": {"sg_window": 4}},
    {"session": {"bch": [255, 250]}},
    {"subject": {"breaths_per_min": 40}},
])
def test_config_errors(d):
    with pytest.raises(ParameterError):
        config_from_dict(d)


def test_code_mapping():
    assert code_for_ecr(21 / 255) == (255, 115)
    assert make_code(*code_for_ecr(0.04)).t == 10
    assert key_len_code(256, (255, 115)) == (255, 115)
    n, k = key_len_code(128, (255, 115))
    assert n == 127 and abs(make_code(n, k).ecr - 21 / 255) < 0.01
    with pytest.raises(ParameterError):
        code_for_ecr(0.6)


@pytest.mark.parametrize("axis,value,check", [
    ("key_len", 128, lambda c: c.session.key_len == 128 and c.session.bch[0] == 127),
    ("bits_per_sample", 3, lambda c: c.session.bits_per_sample == 3),
    ("coding", "binary", lambda c: c.session.coding is Coding.BINARY),
    ("cpd_stat", "rms", lambda c: c.session.sync_cfg.stat.value == "rms"),
    ("n_cp_per_cycle", 2, lambda c: c.session.sync_cfg.n_cp_per_cycle == 2),
    ("cpd_threshold", 0.1, lambda c: c.session.sync_cfg.threshold == 0.1),
    ("n_offset", 0, lambda c: c.session.sync_cfg.n_offset == 0),
    ("sync_offset", 100, lambda c: c.session.sync_cfg.sync_offset_ms == 100),
    ("filter", "low_pass", lambda c: c.preprocess.filter is FilterKind.LOW_PASS),
    ("downsample", "average", lambda c: c.preprocess.downsample_method.value == "average"),
    ("sg_enabled", False, lambda c: c.preprocess.sg_enabled is False),
])
def test_apply_axis(axis, value, check):
    assert check(apply_axis(ExperimentConfig(), axis, value))


@pytest.mark.parametrize("axis,values", [
    ("coding", ()), ("coding", ("ternary",)), ("sg_enabled", ("yes",)), ("key_len", (64,)), ("n_offset", (-1,)),
])
def test_bad_sweep_specs(axis, values):
    with pytest.raises((ParameterError, ValueError)):
        SweepSpec(axis, values)


def test_sweep_spec_from_dict():
    spec = sweep_spec_from_dict({"axis": "coding", "values": ["gray"], "cohort_size": 2,
                                 "base": {"subject": {"duration_s": 40}}})
    assert spec.axis is Axis.CODING and spec.base.subject.duration_s == 40
    with pytest.raises(ParameterError):
        sweep_spec_from_dict({"axis": "colour", "values": [1]})
    with pytest.raises(ParameterError):
        sweep_spec_from_dict({"values": [1]})


def test_sweep_rows_and_csv():
    spec = SweepSpec("coding", ("gray", "binary"), SHORT, cohort_size=2)
    rows = run_sweep(spec, seed=1)
    assert [v for v, _ in rows] == ["gray", "binary"]
    lines = sweep_csv(spec.axis, rows).splitlines()
    assert lines[0].startswith("axis,value,kgr_keys_per_s") and len(lines) == 3
    assert lines[1].startswith("coding,gray,")


def test_adversary_view():
    victim = Signal(np.sin(np.arange(128 * 30) / 50), 128.0)
    v = adversary_view(victim, ObserverParams(), 64.0, seed=1)
    assert v.rate_hz == 64.0
    assert abs(v.duration_s - 30) < 0.2
    same = adversary_view(victim, ObserverParams(128.0, 0.0, 0.0), 64.0)
    assert same.rate_hz == 128.0


def test_perfect_observer_can_pair():
    rep = run_attack(2, ObserverParams(128.0, 0.0, 0.0), SHORT, seed=2)
    assert rep.n_success > 0
    assert rep.bar_max == 100.0


def test_attack_report_shape():
    rep = run_attack(1, ObserverParams(), SHORT, seed=3)
    d = json.loads(rep.to_json())
    assert d["schema"] == 1 and len(d["bar_pct"]) == d["n_attempts"]
    with pytest.raises(ParameterError):
        run_attack(0)


def test_key_length_kgr_near_equal():
    a = run_experiment(6, apply_axis(ExperimentConfig(), "key_len", 128), seed=0)
    b = run_experiment(6, ExperimentConfig(), seed=0)
    assert abs(a.kgr_keys_per_s - b.kgr_keys_per_s) / b.kgr_keys_per_s < 0.2


def test_band_pass_beats_low_pass_under_motion():
    base = ExperimentConfig(subject=SubjectParams(duration_s=120.0, motion_noise_level=0.1))
    bp = run_experiment(4, base, seed=1)
    lp = run_experiment(4, apply_axis(base, "filter", "low_pass"), seed=1)
    assert bp.bar_pct_distribution["mean"] > lp.bar_pct_distribution["mean"]
