import numpy as np
import pytest
from scipy import stats

from b2p.errors import FormatError, ParameterError
from b2p.signal_source import (
    CohortSpec,
    ObserverParams,
    Origin,
    Signal,
    SubjectParams,
    cohort_params,
    generate_subject,
    load_trace,
    observe_remote,
    save_trace,
)


def test_same_seed_bit_identical():
    p = SubjectParams(duration_s=30, seed=7)
    (a1, b1), (a2, b2) = generate_subject(p), generate_subject(p)
    assert a1.samples.tobytes() == a2.samples.tobytes()
    assert b1.samples.tobytes() == b2.samples.tobytes()


def test_different_seed_differs():
    a1, _ = generate_subject(SubjectParams(duration_s=30, seed=1))
    a2, _ = generate_subject(SubjectParams(duration_s=30, seed=2))
    assert not np.array_equal(a1.samples, a2.samples)


def test_rates_lengths_and_origins():
    rip, acc = generate_subject(SubjectParams(duration_s=10))
    assert (rip.rate_hz, len(rip), rip.origin) == (128.0, 1280, Origin.RIP_LIKE)
    assert (acc.rate_hz, len(acc), acc.origin) == (100.0, 1000, Origin.ACCEL_LIKE)


def test_dominant_frequency_at_15_bpm():
    rip, _ = generate_subject(SubjectParams(breaths_per_min=15, duration_s=60, seed=3))
    x = rip.samples - rip.samples.mean()
    spec = np.abs(np.fft.rfft(x))
    freqs = np.fft.rfftfreq(x.size, 1 / rip.rate_hz)
    assert abs(freqs[np.argmax(spec)] - 0.25) <= 0.05


def _aligned_difference(p):
    # Same rates on both sensors so the latent samples line up exactly.
    rip, acc = generate_subject(p)
    return acc.samples - rip.samples


def test_difference_std_matches_diff_sigma():
    p = SubjectParams(duration_s=120, diff_sigma=0.05, motion_noise_level=0.0,
                      rip_rate_hz=100.0, accel_rate_hz=100.0, seed=11)
    d = _aligned_difference(p)
    assert abs(d.std() - 0.05) <= 0.2 * 0.05


def test_difference_is_gaussian_like():
    p = SubjectParams(duration_s=200, diff_sigma=0.05, motion_noise_level=0.0,
                      rip_rate_hz=100.0, accel_rate_hz=100.0, seed=5)
    d = _aligned_difference(p)
    assert d.size >= 10_000
    assert abs(stats.skew(d)) < 0.5
    assert abs(stats.kurtosis(d)) < 0.5


def test_common_latent_without_noise():
    p = SubjectParams(duration_s=20, diff_sigma=0.0, motion_noise_level=0.0,
                      rip_rate_hz=100.0, accel_rate_hz=100.0)
    rip, acc = generate_subject(p)
    np.testing.assert_allclose(rip.samples, acc.samples, atol=1e-12)


@pytest.mark.parametrize("field,value", [
    ("breaths_per_min", 5.0), ("breaths_per_min", 31.0), ("diff_sigma", -0.1),
    ("rip_rate_hz", 0.0), ("duration_s", 0.0), ("motion_noise_level", -1.0),
])
def test_invalid_params(field, value):
    with pytest.raises(ParameterError):
        generate_subject(SubjectParams(**{field: value}))


def test_observer_identity_case():
    x = Signal(np.sin(np.arange(640) / 10), 64.0, Origin.RIP_LIKE)
    out = observe_remote(x, ObserverParams(64.0, 0.0, 0.0))
    np.testing.assert_array_equal(out.samples, x.samples)
    assert out.origin is Origin.REMOTE_OBSERVED


def test_observer_length_at_9_hz():
    x = Signal(np.zeros(6400), 64.0)
    out = observe_remote(x, ObserverParams(9.0, 0.0, 0.0))
    assert abs(len(out) - (6400 * 9) // 64) <= 1
    assert out.rate_hz == 9.0


def test_observer_latency_delays_signal():
    # A ramp delayed by 125 ms at 64 Hz is 8 samples behind.
    x = Signal(np.arange(640, dtype=float), 64.0)
    out = observe_remote(x, ObserverParams(64.0, 0.0, 125.0))
    np.testing.assert_array_equal(out.samples[8:], x.samples[:-8])


def test_observer_deterministic_and_noisy():
    x = Signal(np.zeros(1000), 100.0)
    o = ObserverParams(10.0, 1.0, 0.0)
    a, b = observe_remote(x, o, seed=3), observe_remote(x, o, seed=3)
    assert a.samples.tobytes() == b.samples.tobytes()
    assert 0.7 < a.samples.std() < 1.3


def test_observer_rejects_bad_params():
    with pytest.raises(ParameterError):
        observe_remote(Signal(np.zeros(10), 10.0), ObserverParams(0.0))


def test_trace_roundtrip(tmp_path):
    s = Signal(np.linspace(-1, 1, 640), 64.0)
    path = tmp_path / "t.csv"
    save_trace(s, path)
    back = load_trace(path)
    assert back.rate_hz == 64.0 and len(back) == 640
    np.testing.assert_array_equal(back.samples, s.samples)


@pytest.mark.parametrize("text,needle", [
    ("rate_hz=64\nvalue\n", "no data"),
    ("rate_hz=64\nvalue\n1.0\nabc\n", "line 4"),
    ("rate=64\nvalue\n1\n", "line 1"),
    ("rate_hz=-1\nvalue\n1\n", "line 1"),
    ("rate_hz=64\nvals\n1\n", "line 2"),
    ("rate_hz=64\nvalue\nnan\n", "line 3"),
])
def test_trace_format_errors(tmp_path, text, needle):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(FormatError, match=needle):
        load_trace(path)


def test_cohort_deterministic_and_in_range():
    spec = CohortSpec(SubjectParams(), (12.0, 18.0))
    a, b = cohort_params(spec, 5, 9), cohort_params(spec, 5, 9)
    assert a == b
    assert len({p.seed for p in a}) == 5
    assert all(12.0 <= p.breaths_per_min <= 18.0 for p in a)
