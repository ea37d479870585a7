import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import kurtosis

from slice_attrib.core import InputError, validate_window
from slice_attrib.correction import estimate_autocov
from slice_attrib.kernels import ar1_filter
from slice_attrib.simulator import (
    AttackHop,
    RegimeChange,
    ScenarioConfig,
    apply_allocation_noise,
    ar1_coefficient,
    ar_from_roots,
    companion_radius,
    draw_innovations,
    estimate_ar_radius,
    generate,
    granger_effect,
    load_scenario,
    save_scenario,
    stationary_variance,
    student_dof,
)


def test_generate_is_bit_identical():
    cfg = ScenarioConfig(horizon=200, seed=4, confounder_pairs=((0, 1, 0),),
                         attack_path=(AttackHop(2, 0), AttackHop(3, 50, 1, 0.4)))
    a, b = generate(cfg), generate(cfg)
    np.testing.assert_array_equal(a.window.telemetry, b.window.telemetry)
    np.testing.assert_array_equal(a.window.utilization, b.window.utilization)
    assert a.truth_path == b.truth_path


def test_generated_window_is_valid():
    s = generate(ScenarioConfig(horizon=150, n_metrics=3, seed=1))
    assert validate_window(s.window) == []
    assert s.window.telemetry.shape == (150, 15, 3)
    # noise is clamped entrywise only; column sums may exceed one
    noisy = generate(ScenarioConfig(horizon=150, seed=1, allocation_noise_sigma=0.05)).window
    fields = {v.message for v in validate_window(noisy)}
    assert fields <= {"allocations of one resource sum above 1"}


def test_empty_attack_path_gives_empty_truth():
    s = generate(ScenarioConfig(horizon=100, seed=2))
    assert s.truth_path.hops == ()
    assert s.truth_changepoints == ()


def test_confounders_have_zero_cross_coefficients():
    s = generate(ScenarioConfig(horizon=100, seed=3, confounder_pairs=((0, 1, 0), (3, 4, 2))))
    assert not np.any(s.cross_coefficients)


def test_fitted_spectral_radius_matches_configuration():
    s = generate(ScenarioConfig(horizon=10000, seed=0))
    assert all(companion_radius(a) == pytest.approx(0.72, abs=1e-9) for a in s.ar_coefficients)
    # the AR(1) innovation filter adds one root inside 0.72, hence lags + 1
    fitted = [estimate_ar_radius(s.window.telemetry[:, i, 0], 6) for i in range(15)]
    assert np.mean(fitted) == pytest.approx(0.72, abs=0.02)


@given(st.integers(1, 8), st.floats(0.1, 0.95), st.integers(0, 2**32 - 1))
def test_ar_from_roots_hits_the_radius(p, radius, seed):
    ar = ar_from_roots(np.random.default_rng(seed), p, radius)
    assert companion_radius(ar) == pytest.approx(radius, rel=1e-7)


def test_student_dof_and_kurtosis():
    assert student_dof(0.31) == pytest.approx(23.354838, rel=1e-6)
    assert np.isinf(student_dof(0.0))
    x = draw_innovations(np.random.default_rng(0), 2_000_000, 0.31)
    assert x.mean() == pytest.approx(0.0, abs=0.003)
    assert x.var() == pytest.approx(1.0, abs=0.005)
    assert kurtosis(x) == pytest.approx(0.31, abs=0.05)


def test_longrun_ratio_of_innovation_filter():
    a = ar1_coefficient(1.8)
    assert a == pytest.approx(0.2857142857)
    assert (1 + a) / (1 - a) == pytest.approx(1.8)
    rng = np.random.default_rng(7)
    ratios = [estimate_autocov(ar1_filter(rng.standard_normal((10000, 1)), a)[:, 0]).long_run_ratio
              for _ in range(20)]
    assert np.mean(ratios) == pytest.approx(1.8, abs=0.1)


def test_lyapunov_variance_matches_simulation():
    rng = np.random.default_rng(5)
    ar = np.stack([ar_from_roots(rng, 3, 0.6) for _ in range(3)])
    src, dst = np.array([0, 1]), np.array([1, 2])
    lag, coef = np.array([1, 2]), np.array([0.5, -0.4])
    a = 0.3
    theory = stationary_variance(ar, src, dst, lag, coef, a)
    from slice_attrib.kernels import simulate_var

    n_t = 400_000
    e = ar1_filter(rng.standard_normal((n_t, 3)), a) * np.sqrt(1 - a * a)
    x = simulate_var(ar, src, dst, lag, coef, np.zeros(2, dtype=np.int64), e)[1000:]
    np.testing.assert_allclose(x.var(axis=0), theory, rtol=0.03)


def test_granger_effect_zero_without_coupling_and_positive_with():
    ar = np.stack([ar_from_roots(np.random.default_rng(i), 2, 0.5) for i in range(2)])
    none = granger_effect(ar, np.array([0]), np.array([1]), np.array([1]), np.array([0.0]),
                          0.0, 0, 1, 2, 2)
    some = granger_effect(ar, np.array([0]), np.array([1]), np.array([1]), np.array([0.5]),
                          0.0, 0, 1, 2, 2)
    assert none == pytest.approx(0.0, abs=1e-10)
    assert some > 0.1


def test_effect_scaling_hits_target():
    cfg = ScenarioConfig(n_slices=4, horizon=100, seed=9, hop_scale="effect",
                         attack_path=(AttackHop(0, 0), AttackHop(1, 1, 1, 0.3), AttackHop(2, 2, 1, 0.3)))
    s = generate(cfg)
    a = ar1_coefficient(cfg.longrun_ratio)
    src, dst = np.array([0, 1]), np.array([1, 2])
    coef = np.array([s.cross_coefficients[1, 0], s.cross_coefficients[2, 1]])
    for h in range(2):
        eff = granger_effect(s.ar_coefficients, src, dst, np.ones(2, dtype=int), coef, a,
                             int(src[h]), int(dst[h]), cfg.lags, cfg.lags)
        assert eff == pytest.approx(0.3, rel=1e-6)


def test_regime_change_at_horizon_is_rejected():
    with pytest.raises(InputError):
        generate(ScenarioConfig(horizon=300, regime_changes=(RegimeChange(300, 3.0),)))


def test_zero_magnitude_regime_change_is_a_noop():
    base = ScenarioConfig(horizon=120, seed=11)
    a = generate(base)
    b = generate(ScenarioConfig(**{**base.__dict__, "regime_changes": (RegimeChange(60, 0.0),)}))
    np.testing.assert_array_equal(a.window.telemetry, b.window.telemetry)


def test_regime_change_shifts_level():
    s = generate(ScenarioConfig(horizon=2000, seed=12, regime_changes=(RegimeChange(1000, 3.0),)))
    x = s.window.telemetry[:, :, 0]
    assert x[1100:].mean() - x[:1000].mean() > 3.0  # the VAR amplifies an intercept shift


def test_onsets_must_increase():
    with pytest.raises(InputError):
        ScenarioConfig(attack_path=(AttackHop(0, 5), AttackHop(1, 5)))


def test_allocation_noise():
    w = generate(ScenarioConfig(horizon=80, seed=13)).window
    same = apply_allocation_noise(w, 0.0, 1)
    np.testing.assert_array_equal(same.allocation, w.allocation)
    a = apply_allocation_noise(w, 0.2, 42)
    b = apply_allocation_noise(w, 0.2, 42)
    np.testing.assert_array_equal(a.allocation, b.allocation)
    assert a.allocation.min() >= 0.0 and a.allocation.max() <= 1.0
    assert not np.array_equal(a.allocation, w.allocation)
    np.testing.assert_array_equal(a.telemetry, w.telemetry)


def test_scenario_roundtrip(tmp_path):
    cfg = ScenarioConfig(horizon=50, seed=14, attack_path=(AttackHop(1, 0), AttackHop(2, 10, 1, 0.3)))
    s = generate(cfg)
    t = load_scenario(save_scenario(s, tmp_path / "s"))
    assert t.truth_path.slices == (1, 2)
    assert t.config == cfg
    np.testing.assert_allclose(t.window.telemetry, s.window.telemetry, rtol=0, atol=0)


def test_config_dict_roundtrip():
    cfg = ScenarioConfig(confounder_pairs=((0, 1, 0),), attack_path=(AttackHop(2, 0),),
                         regime_changes=(RegimeChange(100, 2.0),))
    assert ScenarioConfig.from_dict(cfg.to_dict()) == cfg
