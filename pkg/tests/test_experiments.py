import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cooldown_sde.engine import SimConfig
from cooldown_sde.experiments import (
    EnsembleConfig, Moments, NonPositiveMoment, counterexample_config, counterexample_suite,
    dropout_probability_check, escape_probe, fit_rate, rate_config, rate_experiment, restricted_moment,
    run_ensemble,
)
from cooldown_sde.monitors import StoppingRule


def quartic_ensemble(n=4, schedule="zero", x0=(1.0,), t_max=100.0, rule=None, seed=0, **kw):
    return EnsembleConfig(n_paths=n, sim=SimConfig(x0=x0, t_max=t_max, seed=seed), potential="even_power:2:1",
                          schedule=schedule, rule=rule, **kw)


def test_zero_noise_ensemble_is_degenerate():
    res = run_ensemble(quartic_ensemble())
    b = res.batch
    assert np.all(b.states.var(axis=0) == 0.0)
    mom = restricted_moment(b, 0.0)
    assert np.all(mom.stderr == 0.0)
    pairs = list(res)
    assert len(pairs) == 4 and pairs[0][1].noise_energy == 0.0


def test_worker_count_does_not_change_results():
    cfg = quartic_ensemble(n=40, schedule="poly:1:1.2", t_max=50.0, chunk_size=7, seed=5)
    one = restricted_moment(run_ensemble(cfg, workers=1).batch, 0.0).to_csv()
    three = restricted_moment(run_ensemble(cfg, workers=3).batch, 0.0).to_csv()
    assert one == three
    # the chunking itself is also invisible in the output
    other = EnsembleConfig(**{**cfg.__dict__, "chunk_size": 40})
    assert restricted_moment(run_ensemble(other).batch, 0.0).to_csv() == one


def test_worker_env_fallback(monkeypatch):
    from cooldown_sde.experiments import resolve_workers
    monkeypatch.setenv("COOLDOWN_SDE_WORKERS", "3")
    assert resolve_workers(None) == 3
    assert resolve_workers(2) == 2
    monkeypatch.delenv("COOLDOWN_SDE_WORKERS")
    assert resolve_workers(None) == 1
    with pytest.raises(ValueError):
        resolve_workers(0)


def test_default_rule_keeps_quartic_paths_alive():
    cfg = rate_config(1.2, n_paths=1000, t_max=1e3, scale=0.5, seed=2)
    mom = restricted_moment(run_ensemble(cfg).batch, 0.0)
    assert mom.survival[-1] > 0.9
    assert np.all(np.diff(mom.survival) <= 0)


def test_survival_nonincreasing_with_active_barrier():
    # the barrier can only fire when the level sits above min F
    rule = StoppingRule(level=1e-3, theta=0.75, c_w=0.2, enabled=frozenset({"lower_dropout"}))
    cfg = quartic_ensemble(n=200, schedule="poly:1:1.2", t_max=200.0, rule=rule, seed=1)
    mom = restricted_moment(run_ensemble(cfg).batch, 1e-3, rule.barrier)
    assert mom.survival[-1] < 1.0
    assert np.all(np.diff(mom.survival) <= 0)
    assert np.all((0.0 <= mom.survival) & (mom.survival <= 1.0))


def test_restricted_moment_examples():
    # every path leaves the radius-0.5 ball at t = 0
    rule = StoppingRule(radius=0.5, enabled=frozenset({"exit"}))
    mom = restricted_moment(run_ensemble(quartic_ensemble(rule=rule)).batch, 0.0)
    assert np.all(mom.mean == 0.0) and np.all(mom.survival == 0.0)
    # start at the minimum with zero noise: F = level, so the mean is w_t exactly
    b = run_ensemble(quartic_ensemble(x0=(0.0,))).batch
    mom = restricted_moment(b, 0.0, lambda t: (t + 1.0) ** -2)
    np.testing.assert_array_equal(mom.mean, (b.times + 1.0) ** -2)


def test_restricted_moment_zero_noise_matches_ode():
    b = run_ensemble(quartic_ensemble(t_max=1e3)).batch
    mom = restricted_moment(b, 0.0)
    np.testing.assert_allclose(mom.mean, (1.0 + 8.0 * b.times) ** -2, rtol=1e-2)


def test_restricted_moment_plain_mean_without_dropout():
    b = run_ensemble(quartic_ensemble(n=30, schedule="poly:1:1", t_max=50.0)).batch
    mom = restricted_moment(b, 0.0)
    np.testing.assert_allclose(mom.mean, b.F.mean(axis=0), rtol=1e-13)
    np.testing.assert_allclose(mom.stderr, b.F.std(axis=0, ddof=1) / math.sqrt(30), rtol=1e-12)


def test_failed_paths_are_excluded_and_counted():
    cfg = EnsembleConfig(n_paths=3, sim=SimConfig(x0=(10.0,), t_max=5.0, dt0=1.0, dt_cap=1.0, eta_stab=1.0),
                         potential="even_power:2:1", schedule="zero")
    res = run_ensemble(cfg)
    assert res.n_failed == 3
    mom = restricted_moment(res.batch, 0.0)
    assert mom.n_failed == 3 and mom.n_paths == 0


def test_moments_csv_round_trip():
    b = run_ensemble(quartic_ensemble(n=5, schedule="poly:1:1", t_max=20.0)).batch
    mom = restricted_moment(b, 0.0)
    text = mom.to_csv()
    assert text.splitlines()[0] == "t,mean,stderr,survival,n_alive"
    assert "\r" not in text
    back = Moments.from_csv(text)
    np.testing.assert_array_equal(back.mean, mom.mean)
    np.testing.assert_array_equal(back.times, mom.times)
    with pytest.raises(ValueError):
        Moments.from_csv("")


def test_fit_rate_examples():
    t = np.geomspace(1.0, 1e4, 64)
    est = fit_rate(t, (t + 1.0) ** -2)
    assert est.exponent == pytest.approx(2.0, abs=1e-12) and est.stderr < 1e-6
    assert est.window[1] == 1e4 and est.window[0] >= 100.0 and est.n_fit >= 8
    rng = np.random.default_rng(0)
    est = fit_rate(t, (t + 1.0) ** -1.6 * (1 + 0.01 * rng.standard_normal(len(t))))
    assert abs(est.exponent - 1.6) <= 0.05
    assert fit_rate(t, np.full(len(t), 3.0)).exponent == pytest.approx(0.0, abs=1e-12)


def test_fit_rate_errors():
    t = np.geomspace(1.0, 1e4, 64)
    m = (t + 1.0) ** -2
    m[-3] = 0.0
    with pytest.raises(NonPositiveMoment) as info:
        fit_rate(t, m)
    assert info.value.time == t[-3]
    with pytest.raises(ValueError):
        fit_rate(t[:5], m[:5])


@settings(max_examples=50)
@given(st.floats(1e-6, 1e6), st.floats(0.1, 4.0))
def test_fit_rate_scale_invariant(c, p):
    t = np.geomspace(1.0, 1e4, 64)
    m = (t + 1.0) ** -p * (1 + 0.1 * np.sin(t))
    assert fit_rate(t, c * m).exponent == pytest.approx(fit_rate(t, m).exponent, abs=1e-9)


def test_rate_experiment_zero_noise():
    cfg = rate_config(2.5, n_paths=2, t_max=1e4, scale=0.0)
    res = rate_experiment(cfg, 0.75, 2.5)
    assert res.predicted == 2.0 and res.passed
    data = res.to_json()
    assert data["pass"] is True and data["survival_final"] == 1.0


def test_zero_noise_ring_does_not_wind():
    cfg = counterexample_config(n_paths=2, t_max=1e3, x0=(1.0, 0.0), schedule="zero")
    rep = counterexample_suite(cfg)
    assert all(w.mean == 0.0 for w in rep.winding)
    assert rep.radial_fraction == 1.0 and rep.noise_energy_max == 0.0


def test_counterexample_small_ensemble():
    rep = counterexample_suite(counterexample_config(n_paths=40, t_max=1e3, seed=3))
    assert rep.noise_energy_max <= rep.noise_cap == pytest.approx(2.0)
    assert [(w.t0, w.t1) for w in rep.winding] == [(125.0, 250.0), (250.0, 500.0), (500.0, 1000.0)]
    # the +ort drift fixes the sense of rotation
    assert all(w.mean > 0 for w in rep.winding)
    data = rep.to_json()
    assert set(data["pass"]) == {"radial", "winding"}
    with pytest.raises(ValueError):
        counterexample_suite(quartic_ensemble())


def test_dropout_check_zero_noise_and_bound_monotone():
    probe = escape_probe(0.75, (100.0, 400.0), level=0.0)
    cfg = rate_config(1.2, n_paths=2, t_max=1e3, scale=0.0, probe=probe)
    chk = dropout_probability_check(cfg, 0.75, 1.2)
    assert all(r.empirical == 0.0 for r in chk.rows)
    assert chk.rows[0].kappa_arg < chk.rows[1].kappa_arg
    assert chk.rows[0].bound > chk.rows[1].bound
    assert chk.passed
    with pytest.raises(ValueError):
        dropout_probability_check(rate_config(1.2, n_paths=2, t_max=10.0), 0.75, 1.2)


def test_escape_probe_records_rise_after_crossing():
    """With a positive level the probe sees paths dip below it and climb back."""
    level = 2e-3
    probe = escape_probe(0.75, (10.0,), level=level)
    cfg = rate_config(0.6, n_paths=200, t_max=200.0, seed=4, probe=probe)
    res = run_ensemble(cfg)
    esc = res.batch.escape
    crossed = esc["crossed"][:, 0]
    assert crossed.any()
    tc = esc["time"][crossed, 0]
    assert np.all(tc >= 10.0)
    assert np.all(esc["F_cross"][crossed, 0] < level - (tc + 1.0) ** -2)
    assert np.all(esc["F_max"][crossed, 0] >= esc["F_cross"][crossed, 0])
    chk = dropout_probability_check(cfg, 0.75, 0.6, result=res)
    assert 0.0 < chk.rows[0].empirical <= crossed.mean()


def test_ensemble_config_validation():
    with pytest.raises(ValueError):
        quartic_ensemble(n=1)
    with pytest.raises(ValueError):
        EnsembleConfig(n_paths=2, sim=SimConfig(x0=(1.0,), t_max=1.0), potential="bowl")
    with pytest.raises(ValueError):
        EnsembleConfig(n_paths=2, sim=SimConfig(x0=(1.0,), t_max=1.0), schedule="poly:1")
