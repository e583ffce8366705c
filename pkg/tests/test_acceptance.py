"""Acceptance criteria 1-10, each reporting one pass/fail line (see the terminal summary)."""

import math
import time

import numpy as np
import pytest
from scipy import integrate
from scipy.stats import qmc

from cooldown_sde.engine import simulate_radial_exact
from cooldown_sde.experiments import (
    counterexample_config, counterexample_suite, dropout_probability_check, escape_probe, rate_config,
    rate_experiment, restricted_moment, run_ensemble,
)
from cooldown_sde.monitors import locality_series
from cooldown_sde.oracles import (
    bm_drift_overshoot_tail, bm_overshoot_mc, deterministic_rate, ou_euler, ou_variance, phi_kappa,
)
from cooldown_sde.potentials import even_power_well, ring_potential
from cooldown_sde.schedules import Schedule, canonical_envelope, validate_envelope

THETA = 0.75
SEED = 20261015


def timed(fn, *args, **kw):
    t0 = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t0


@pytest.fixture(scope="module")
def noise_limited():
    """Quartic well, sigma = 1.2, N = 2000, T_max = 1e4; also carries the escape probe."""
    cfg = rate_config(1.2, n_paths=2000, t_max=1e4, seed=SEED, probe=escape_probe(THETA, (100.0, 400.0)))
    result, elapsed = timed(run_ensemble, cfg)
    return cfg, result, elapsed


@pytest.fixture(scope="module")
def deterministic_limited():
    cfg = rate_config(2.5, n_paths=2000, t_max=1e4, seed=SEED + 1)
    result, elapsed = timed(run_ensemble, cfg)
    return cfg, result, elapsed


@pytest.fixture(scope="module")
def ring_ensemble():
    cfg = counterexample_config(n_paths=500, t_max=1e3, seed=SEED + 2)
    result, elapsed = timed(run_ensemble, cfg)
    return cfg, result, elapsed


def test_criterion_01_noise_limited_rate(noise_limited, acceptance):
    cfg, result, elapsed = noise_limited
    res = rate_experiment(cfg, THETA, 1.2, tolerance=0.25, result=result)
    ok = res.passed and elapsed < 300.0
    acceptance.record(1, ok, f"sigma=1.2: exponent {res.estimate.exponent:.3f} (se {res.estimate.stderr:.3f}) "
                             f"vs {res.predicted:.2f} +/- 0.25, survival {res.moments.survival[-1]:.3f}, "
                             f"{elapsed:.0f} s")
    assert res.predicted == pytest.approx(1.6)
    assert elapsed < 300.0
    assert abs(res.estimate.exponent - 1.6) <= 0.25


def test_criterion_02_deterministic_limited_rate(deterministic_limited, acceptance):
    cfg, result, elapsed = deterministic_limited
    res = rate_experiment(cfg, THETA, 2.5, tolerance=0.25, result=result)
    acceptance.record(2, res.passed, f"sigma=2.5: exponent {res.estimate.exponent:.3f} "
                                     f"(se {res.estimate.stderr:.3f}) vs {res.predicted:.2f} +/- 0.25, "
                                     f"{elapsed:.0f} s")
    assert res.predicted == pytest.approx(2.0)
    assert abs(res.estimate.exponent - 2.0) <= 0.25


def test_criterion_03_deterministic_baseline(acceptance):
    quart = even_power_well(2, 1)
    rate, elapsed = timed(deterministic_rate, quart, quart.critical_levels[0], [1.0], horizon=1e4)
    exact = (1.0 + 8.0 * rate.times) ** -2
    max_rel = float(np.max(np.abs(rate.values / exact - 1.0)))
    ok = abs(rate.exponent - 2.0) <= 0.05 and elapsed < 1.0 and max_rel < 1e-6
    acceptance.record(3, ok, f"zero noise: exponent {rate.exponent:.4f} vs 2 +/- 0.05, "
                             f"max rel. deviation from (1+8t)^-2 {max_rel:.1e}, {elapsed:.3f} s")
    assert abs(rate.exponent - 2.0) <= 0.05
    assert max_rel < 1e-6
    assert elapsed < 1.0


def test_criterion_04_radial_convergence(ring_ensemble, acceptance):
    cfg, result, elapsed = ring_ensemble
    rep = counterexample_suite(cfg, result=result)
    noise_max = float(result.batch.I_noise[:, -1].max())
    ok = rep.radial_fraction >= 0.95 and noise_max <= 2.0 and rep.n_failed == 0
    acceptance.record(4, ok, f"ring: {rep.radial_fraction:.3f} of paths with ||X|-1| < 0.05, "
                             f"max I_noise {noise_max:.4f} <= 2, {elapsed:.0f} s")
    assert rep.n_failed == 0
    assert rep.radial_fraction >= 0.95
    assert noise_max <= 2.0


def test_criterion_05_winding_persists(ring_ensemble, acceptance):
    cfg, result, _ = ring_ensemble
    rep = counterexample_suite(cfg, result=result)
    means = [w.mean for w in rep.winding]
    ses = [w.stderr for w in rep.winding]
    trend_ok = all(m >= -3.0 * se for m, se in rep.trend)
    ok = all(m >= 0.15 for m in means) and trend_ok
    detail = ", ".join(f"[{w.t0:g},{w.t1:g}] {w.mean:.3f}+/-{w.stderr:.3f}" for w in rep.winding)
    acceptance.record(5, ok, f"winding increments {detail}; target {0.5 * math.sqrt(2 / math.pi) * math.log(2):.3f}")
    assert all(m >= 0.15 for m in means), (means, ses)
    assert trend_ok, rep.trend


def _g(s):
    return integrate.quad(lambda u: math.exp(4 * u) / (u + 1) ** 2, 0, s, epsabs=0, epsrel=1e-13, limit=200)[0]


def test_criterion_06_ou_oracle_equivalence(acceptance):
    n, z0, times = 10_000, 0.5, [1.0, 2.0, 5.0]
    em = ou_euler(0.0, z0, times, n, seed=SEED)
    ex = simulate_radial_exact(0.0, z0, times, seed=SEED + 1, n_paths=n)
    gaps = []
    for j in range(len(times)):
        a, b = em[:, j], ex[:, j]
        se_mean = math.sqrt(a.var(ddof=1) / n + b.var(ddof=1) / n)
        se_var = math.sqrt(2.0 / (n - 1)) * math.hypot(a.var(ddof=1), b.var(ddof=1))
        gaps.append((abs(a.mean() - b.mean()) / se_mean, abs(a.var(ddof=1) - b.var(ddof=1)) / se_var))
    var_err = max(abs(ou_variance(t, s) / (math.exp(-4 * s) * (_g(s) - _g(t))) - 1.0)
                  for t, s in [(0.0, 1.0), (1.0, 2.0), (0.0, 5.0), (2.0, 5.0), (5.0, 12.0)])
    ok = all(m <= 3 and v <= 3 for m, v in gaps) and var_err < 1e-9
    detail = ", ".join(f"s={s:g}: {m:.2f}/{v:.2f} se" for s, (m, v) in zip(times, gaps))
    acceptance.record(6, ok, f"EM vs exact, mean/var gaps {detail}; variance formula rel. err {var_err:.1e}")
    assert all(m <= 3 for m, _ in gaps) and all(v <= 3 for _, v in gaps)
    assert var_err < 1e-9


def test_criterion_07_phi_consistency(acceptance):
    kappas = (0.5, 1.0, 2.0, 5.0, 10.0)
    dominated = all(phi_kappa(k).value >= bm_drift_overshoot_tail(k) for k in kappas)
    mc = bm_overshoot_mc(1.0, n_paths=100_000, seed=SEED)
    mc_ok = abs(mc.value - math.exp(-2.0)) <= 3 * mc.stderr and mc.value < phi_kappa(1.0).value
    b = phi_kappa(1.0)
    longer = math.fsum([1.0] + [2.0 ** (n + 1) / (2.0**n + 1.0) ** 2 for n in range(b.truncation + 40)])
    trunc = abs(longer - b.value)
    ok = dominated and mc_ok and trunc < 1e-10
    acceptance.record(7, ok, f"phi dominates exp(-2k) at {kappas}: {dominated}; MC {mc.value:.4f}+/-{mc.stderr:.4f} "
                             f"vs {math.exp(-2):.4f}; truncation change {trunc:.1e}")
    assert dominated and mc_ok and trunc < 1e-10


def test_criterion_08_dropout_domination(noise_limited, acceptance):
    cfg, result, _ = noise_limited
    chk = dropout_probability_check(cfg, THETA, 1.2, result=result)
    detail = ", ".join(f"t1={r.t1:g}: empirical {r.empirical:.4f}+/-{r.stderr:.4f} "
                       f"({r.n_crossed} crossings) vs bound {r.bound:.3f}" for r in chk.rows)
    acceptance.record(8, chk.passed, detail)
    assert [r.t1 for r in chk.rows] == [100.0, 400.0]
    assert chk.passed


def _fd(fn, x, h=1e-5):
    cols = []
    for i in range(x.shape[1]):
        e = np.zeros(x.shape[1])
        e[i] = h
        cols.append((fn(x + e) - fn(x - e)) / (2 * h))
    return np.stack(cols, axis=-1)


def test_criterion_09_derivatives_envelopes_determinism(acceptance):
    worst = 0.0
    for pot in (even_power_well(1, 2), even_power_well(2, 1), even_power_well(3, 2), ring_potential()):
        x = 2.5 * (2.0 * qmc.Halton(pot.dimension, seed=0).random(1000) - 1.0)
        r = np.linalg.norm(x, axis=1)
        keep = r > 1e-2
        for b in pot.branch_radii:
            keep &= np.abs(r - b) > 1e-3
        x = x[keep]
        for fd, exact in ((_fd(pot.value, x), pot.gradient(x)), (_fd(pot.gradient, x), pot.hessian(x))):
            worst = max(worst, float(np.max(np.abs(fd - exact) / np.maximum(np.abs(exact), 1.0))))
    envelopes_ok = all(validate_envelope(canonical_envelope(THETA, Schedule("poly", 1.0, s)),
                                         Schedule("poly", 1.0, s)).ok for s in (1.2, 2.5))
    cfg = rate_config(1.2, n_paths=24, t_max=100.0, seed=SEED)
    cfg = type(cfg)(**{**cfg.__dict__, "chunk_size": 5})
    one = restricted_moment(run_ensemble(cfg, workers=1).batch, 0.0).to_csv()
    two = restricted_moment(run_ensemble(cfg, workers=2).batch, 0.0).to_csv()
    ok = worst < 1e-5 and envelopes_ok and one == two
    acceptance.record(9, ok, f"max FD rel. error {worst:.1e}; canonical envelopes valid: {envelopes_ok}; "
                             f"1 vs 2 workers byte-identical: {one == two}")
    assert worst < 1e-5 and envelopes_ok and one == two


def test_criterion_10_locality_functional(noise_limited, acceptance):
    from cooldown_sde.engine import DiffusivitySpec, DriftSpec, SimConfig, simulate

    _, result, _ = noise_limited
    b = result.batch
    series = np.maximum.accumulate(b.I_val + b.I_trace, axis=1)
    half = int(np.nonzero(np.isclose(b.times, 0.5 * b.times[-1]))[0][0])
    drift = float(np.max(np.abs(series[:, -1] - series[:, half])))
    pot = even_power_well(1, 1)
    values = []
    for t_max in (100.0, 200.0, 400.0):
        traj = simulate(SimConfig(x0=(0.0,), t_max=t_max, seed=SEED), DriftSpec("zero"),
                        DiffusivitySpec(Schedule("const", 1.0)), pot)
        values.append(float(locality_series(traj)[-1]))
    growth = [b2 - b1 for b1, b2 in zip(values, values[1:])]
    ok = drift <= 1e-2 and all(g > 1.0 for g in growth)
    acceptance.record(10, ok, f"quartic sigma=1.2: max |L(T) - L(T/2)| {drift:.1e} <= 1e-2; "
                              f"constant-noise control grows by {growth[0]:.1f}, {growth[1]:.1f} per doubling")
    assert drift <= 1e-2
    assert all(g > 1.0 for g in growth)
