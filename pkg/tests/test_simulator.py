import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.integrate import solve_ivp

from symptom_bench.dataset import WindowBatch
from symptom_bench.simulator import (
    FAULTS,
    SIGNALS,
    CausalSignalSpec,
    DerivedSignalParams,
    FaultKind,
    SimConfig,
    _square_wave,
    build_dataset,
    delay,
    derive_signals,
    generate_causal,
    inject_fault,
    second_order_response,
    simulate_windows,
)


def _segments(x):
    edges = np.flatnonzero(np.diff(x)) + 1
    return np.diff(np.concatenate([[0], edges, [len(x)]]))


def test_degenerate_uniform_and_zero_delay():
    cfg = SimConfig(causal=CausalSignalSpec(min_duration=500, max_duration=500, b_delay=0))
    a, b = generate_causal(cfg, 5000)
    segs = _segments(a)
    assert np.all(segs[:-1] == 500)
    np.testing.assert_array_equal(a, b)


def test_mean_segment_length():
    a, _ = generate_causal(SimConfig(seed=3), 1_100_000)
    segs = _segments(a)[1:-1]
    assert len(segs) >= 1000
    # uniform(500, 1000): mean 750, sd 144; 5-sigma CLT band is well inside [700, 800]
    assert 700 <= segs.mean() <= 800


def test_segment_durations_ks_uniform():
    _, durations = _square_wave(np.random.default_rng(11), CausalSignalSpec(), 1_500_000)
    durations = durations[:-1]
    assert len(durations) >= 1000
    res = stats.kstest(durations, stats.uniform(loc=500, scale=500).cdf)
    assert res.pvalue > 0.01


def test_causal_determinism():
    cfg = SimConfig(seed=42)
    a1, b1 = generate_causal(cfg, 3000)
    a2, b2 = generate_causal(cfg, 3000)
    assert a1.tobytes() == a2.tobytes() and b1.tobytes() == b2.tobytes()


def test_generate_causal_rejects_nonpositive():
    with pytest.raises(ValueError):
        generate_causal(SimConfig(), 0)


def test_delay_left_pads_with_first_value():
    x = np.array([3.0, 1.0, 2.0, 5.0])
    np.testing.assert_array_equal(delay(x, 2), [3.0, 3.0, 3.0, 1.0])


def test_constant_input_settles():
    p = DerivedSignalParams()
    c = 0.7
    sig = derive_signals(np.full(3000, c), np.full(3000, c), p)
    assert abs(sig["a2"][-1] - c) < 1e-3
    assert abs(sig["a3"][-1] - c) < 1e-3
    np.testing.assert_allclose(sig["b3"][-100:], 0.0, atol=1e-12)
    np.testing.assert_array_equal(sig["a1"], c)


def test_second_order_overshoot_matches_continuous_ode():
    zeta, wn = 0.3, DerivedSignalParams().second_order_natural_freq
    u = np.concatenate([np.zeros(10), np.ones(400)])
    y = second_order_response(u, zeta, wn)
    discrete_overshoot = y.max() - 1.0

    # dense simulation of y'' + 2 zeta wn y' + wn^2 y = wn^2 for a unit step
    sol = solve_ivp(lambda t, s: [s[1], wn**2 * (1.0 - s[0]) - 2 * zeta * wn * s[1]],
                    (0, 400), [0.0, 0.0], max_step=0.05, rtol=1e-9, atol=1e-12)
    ode_overshoot = sol.y[0].max() - 1.0
    assert ode_overshoot == pytest.approx(np.exp(-np.pi * zeta / np.sqrt(1 - zeta**2)), abs=1e-3)
    assert discrete_overshoot == pytest.approx(ode_overshoot, abs=0.02)
    assert discrete_overshoot == pytest.approx(0.372, abs=0.02)


def test_derive_signals_length_mismatch():
    with pytest.raises(ValueError):
        derive_signals(np.zeros(10), np.zeros(11), DerivedSignalParams())


def test_b1_noise_level():
    p = DerivedSignalParams(noise_sigma=0.1)
    sig = derive_signals(np.zeros(50_000), np.zeros(50_000), p, rng=np.random.default_rng(0))
    assert np.std(sig["b1"]) == pytest.approx(0.1, rel=0.02)


def test_cross_correlation_peaks_at_delay():
    cfg = SimConfig(seed=5)
    a, b = generate_causal(cfg, 60_000)
    sig = derive_signals(a, b, cfg.derived, rng=np.random.default_rng(1))
    x = sig["a1"] - sig["a1"].mean()
    y = sig["b1"] - sig["b1"].mean()
    lags = np.arange(0, 200)
    xc = [np.dot(x[: len(x) - k], y[k:]) for k in lags]
    assert abs(int(lags[np.argmax(xc)]) - cfg.causal.b_delay) <= 1


def test_healthy_window_cross_correlation_peaks_at_delay():
    # same property measured on the windows the dataset is built from
    cfg = SimConfig(seed=9)
    w = simulate_windows(cfg, 200)
    lags = np.arange(0, 150)
    acc = np.zeros(len(lags))
    for win in w:
        x = win[:, 0] - win[:, 0].mean()
        y = win[:, 3] - win[:, 3].mean()
        acc += [np.dot(x[: len(x) - k], y[k:]) for k in lags]
    assert abs(int(lags[np.argmax(acc)]) - cfg.causal.b_delay) <= 1


@pytest.fixture(scope="module")
def healthy_raw():
    cfg = SimConfig(seed=1)
    return cfg, WindowBatch(simulate_windows(cfg, 20), SIGNALS)


def test_fault1_stuck_at(healthy_raw):
    cfg, batch = healthy_raw
    out = inject_fault(batch, FaultKind.STUCK_AT, cfg)
    np.testing.assert_array_equal(out.column("a1"), -1.0)
    for s in ("a2", "a3", "b1", "b2", "b3"):
        assert out.column(s).tobytes() == batch.column(s).tobytes()


def test_fault1_value_within_healthy_range(healthy_raw):
    _, batch = healthy_raw
    a1 = batch.column("a1")
    assert a1.min() <= -1.0 <= a1.max()


def test_fault2_offset(healthy_raw):
    cfg, batch = healthy_raw
    out = inject_fault(batch, "fault2_offset", cfg)
    assert out.column("b3").mean() - batch.column("b3").mean() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_array_equal(np.delete(out.values, 5, axis=2), np.delete(batch.values, 5, axis=2))


def test_fault3_shifts_subsystem_b_relative_to_a():
    cfg = SimConfig(seed=2)
    healthy = simulate_windows(cfg, 150)
    shifted = inject_fault(WindowBatch(healthy, SIGNALS), FaultKind.SHIFT, cfg, rng=np.random.default_rng(3)).values

    def lag_of(w):
        lags = np.arange(0, 300)
        acc = np.zeros(len(lags))
        for win in w:
            x = win[:, 0] - win[:, 0].mean()
            y = win[:, 3] - win[:, 3].mean()
            acc += [np.dot(x[: len(x) - k], y[k:]) / (len(x) - k) for k in lags]
        return int(lags[np.argmax(acc)])

    assert abs(lag_of(healthy) - cfg.causal.b_delay) <= 1
    assert abs(lag_of(shifted) - (cfg.causal.b_delay + cfg.fault3_shift)) <= 3


def _dominant_period(windows):
    """Lag of the first autocorrelation minimum of a1 pooled over windows (half period)."""
    acc = np.zeros(400)
    for w in windows:
        x = w[:, 0] - w[:, 0].mean()
        acc += [np.dot(x[: len(x) - k], x[k:]) / (len(x) - k) for k in range(400)]
    return int(np.argmin(acc))


def test_fault4_halves_dominant_period():
    cfg = SimConfig(seed=4, window_len=2000)
    healthy = simulate_windows(cfg, 60)
    fast = simulate_windows(cfg, 60, FaultKind.FREQUENCY, split="test")
    # mean dwell 750 healthy vs 375 faulty: the first autocorrelation minimum sits near one dwell time
    h, f = _dominant_period([w for w in healthy]), _dominant_period([w for w in fast])
    assert h > 399 * 0.9 or h > 1.6 * f  # healthy minimum lies beyond the searched lags or far right of faulty
    assert 250 <= f <= 500


def test_fault4_segments_halved():
    cfg = SimConfig(seed=6, window_len=4000)
    fast = simulate_windows(cfg, 30, FaultKind.FREQUENCY, split="test")
    segs = np.concatenate([_segments(w[:, 0])[1:-1] for w in fast])
    assert segs.min() >= 250 and segs.max() <= 500
    assert 350 <= segs.mean() <= 400


def test_fault4_halve_durations_mode():
    cfg = SimConfig(seed=6, window_len=4000, fault4_mode="halve_durations")
    fast = simulate_windows(cfg, 20, FaultKind.FREQUENCY, split="test")
    segs = np.concatenate([_segments(w[:, 0])[1:-1] for w in fast])
    assert segs.min() >= 250 and segs.max() <= 500


def test_regenerating_faults_need_rng(healthy_raw):
    cfg, batch = healthy_raw
    with pytest.raises(ValueError):
        inject_fault(batch, FaultKind.FREQUENCY, cfg)
    with pytest.raises(ValueError):
        inject_fault(batch, "fault9", cfg)


@pytest.fixture(scope="module")
def small_dataset():
    cfg = SimConfig(seed=7, n_train_windows=40, n_val_windows=10, n_test_per_fault=5)
    return cfg, build_dataset(cfg)


def test_dataset_split_sizes_and_labels(small_dataset):
    cfg, ds = small_dataset
    assert len(ds.train) == 40 and len(ds.val) == 10
    assert len(ds.test) == 5 * 4 + 4 * 5
    assert int(np.sum(ds.test_labels("all") == 0)) == 20


def test_default_test_split_composition():
    cfg = SimConfig()
    assert cfg.n_test_per_fault * 4 + cfg.n_test_healthy == 800
    assert cfg.n_test_healthy == 400


def test_label_table_conformance(small_dataset):
    _, ds = small_dataset
    table = {
        "healthy": (0, 0, 0),
        "fault1_stuck_at": (1, 0, 1),
        "fault2_offset": (0, 1, 1),
        "fault3_shift": (0, 0, 1),
        "fault4_frequency": (1, 1, 1),
    }
    seen = set()
    for wid in ds.test.window_ids:
        row = ds.labels[wid]
        assert (row["label_a"], row["label_b"], row["label_all"]) == table[row["fault_kind"]]
        seen.add(row["fault_kind"])
    assert seen == set(table)
    for k in FaultKind:
        assert tuple(k.labels.values()) == table[k.value]


def test_standardization_uses_train_stats(small_dataset):
    _, ds = small_dataset
    flat = ds.train.values.reshape(-1, 6)
    np.testing.assert_allclose(flat.mean(axis=0), 0.0, atol=1e-6)
    np.testing.assert_allclose(flat.std(axis=0), 1.0, atol=1e-6)
    assert len(ds.meta["scaler"]["mean"]) == 6


def test_dataset_determinism(small_dataset):
    cfg, ds = small_dataset
    again = build_dataset(cfg)
    for split in ("train", "val", "test"):
        assert getattr(ds, split).values.tobytes() == getattr(again, split).values.tobytes()


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(0, 50))
def test_windows_independent_of_generation_order(seed, index):
    cfg = SimConfig(seed=seed, window_len=100, causal=CausalSignalSpec(min_duration=50, max_duration=100, b_delay=5))
    batch = simulate_windows(cfg, 3, start=index)
    single = simulate_windows(cfg, 1, start=index + 2)
    assert batch[2].tobytes() == single[0].tobytes()


def test_fault_windows_are_finite(small_dataset):
    _, ds = small_dataset
    assert np.all(np.isfinite(ds.test.values))
    kinds = {ds.labels[w]["fault_kind"] for w in ds.test.window_ids}
    assert {k.value for k in FAULTS} <= kinds


@pytest.mark.parametrize("kwargs", [
    {"min_duration": 600, "max_duration": 500},
    {"b_delay": 500},
    {"b_delay": -1},
])
def test_causal_spec_validation(kwargs):
    with pytest.raises(ValueError):
        CausalSignalSpec(**kwargs)


@pytest.mark.parametrize("kwargs", [
    {"second_order_damping": 1.0},
    {"first_order_tau": 0},
    {"noise_sigma": -0.1},
    {"lowpass_alpha": 1.0},
])
def test_derived_params_validation(kwargs):
    with pytest.raises(ValueError):
        DerivedSignalParams(**kwargs)
