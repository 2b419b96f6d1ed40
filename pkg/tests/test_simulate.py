import dataclasses
import json
import math

import numpy as np
import pytest

from ergodic_harvest import (
    SimConfig, SimulationError, big_lambda, custom_model, estimate_expected, estimate_pathwise, occupation_check,
    simulate_path, threshold_sweep,
)
from ergodic_harvest.simulate import SimConfigError, calibrate_dt_constant, stationary_cdf, uncontrolled_moment_check


def constant_drift(b0=0.7, payoff=None):
    return custom_model(lambda x: b0 + 0.0 * x, lambda x: 0.0 * x, payoff=payoff, name="constant")


@pytest.mark.parametrize("bad", [
    {"dt": 0.0}, {"dt": -1e-3}, {"horizon": 0.05}, {"n_paths": 0}, {"burn_in": 1.0}, {"floor": -1.0},
    {"scheme": "milstein"}, {"threshold": 0.0}, {"x0": -1.0},
])
def test_config_invariants(bad):
    with pytest.raises(SimConfigError):
        SimConfig(**{"threshold": 1.0, **bad})


def test_initial_impulse_exact(models):
    cfg = SimConfig(threshold=0.4, x0=1.3, horizon=1.0, dt=1e-3, n_paths=1)
    acc = simulate_path(models["logistic_zero"], cfg)
    assert acc.impulse == 1.3 - 0.4
    assert acc.harvests[0] == 1.3 - 0.4


def test_deterministic_overflow():
    # sigma = 0, b = b0 > 0, x0 = beta: every step overflows by b0 dt
    b0 = 0.7
    cfg = SimConfig(threshold=1.0, horizon=10.0, dt=1e-2, n_paths=2, burn_in=0.0)
    res = estimate_expected(constant_drift(b0), cfg)
    assert res.harvest_rate == pytest.approx(b0, rel=1e-12)
    assert res.estimate == pytest.approx(b0, rel=1e-12)
    assert res.stderr == 0.0


def test_deterministic_pathwise_with_payoff():
    b0, c = 0.5, 2.0
    m = constant_drift(b0, payoff=lambda x: c * np.sqrt(x))
    cfg = SimConfig(threshold=0.25, horizon=10.0, dt=1e-2, n_paths=1)
    res = estimate_pathwise(dataclasses.replace(m, price=3.0), cfg)
    assert res.estimate == pytest.approx(3.0 * b0 + c * 0.5, rel=1e-12)


def test_common_seed_gives_zero_stderr(models):
    cfg = SimConfig(threshold=0.6, horizon=5.0, n_paths=4, common_seed=True)
    res = estimate_expected(models["logistic_zero"], cfg)
    assert res.stderr == 0.0
    single = estimate_expected(models["logistic_zero"], dataclasses.replace(cfg, n_paths=1))
    assert res.estimate == single.estimate


def test_paths_differ_without_common_seed(models):
    res = estimate_expected(models["logistic_zero"], SimConfig(threshold=0.6, horizon=5.0, n_paths=4))
    assert len(set(res.values.tolist())) == 4


def test_monotone_harvest_and_confinement(models):
    cfg = SimConfig(threshold=0.5, x0=0.9, horizon=20.0, n_paths=1, n_windows=50)
    acc = simulate_path(models["log_ou_zero"], cfg)
    assert np.all(np.diff(acc.harvests) >= 0.0)
    assert acc.max_state <= 0.5
    assert 0.0 < acc.terminal_state <= 0.5


def test_thread_count_does_not_change_results(models):
    cfg = SimConfig(threshold=0.6, horizon=5.0, n_paths=6, seed=11)
    a = estimate_expected(models["logistic_power"], cfg, threads=1)
    b = estimate_expected(models["logistic_power"], cfg, threads=3)
    assert np.array_equal(a.values, b.values)
    assert json.dumps(a.summary(), sort_keys=True) == json.dumps(b.summary(), sort_keys=True)


def test_negative_states_raise():
    m = custom_model(lambda x: -5.0 + 0.0 * x, lambda x: 0.0 * x)
    with pytest.raises(SimulationError, match="reduce dt"):
        simulate_path(m, SimConfig(threshold=1.0, horizon=2.0, dt=1e-2, n_paths=1))


def test_histogram_is_a_probability(models):
    res = estimate_expected(models["mean_revert_half"], SimConfig(threshold=0.27, horizon=5.0, n_paths=3))
    assert res.occupation.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(res.occupation >= 0)


def test_small_threshold_concentrates_at_threshold(models):
    # b(0) = 1 dominates sigma sqrt(x) when beta is tiny: the state sits at beta
    beta = 1e-4
    cfg = SimConfig(threshold=beta, horizon=20.0, n_paths=1, n_bins=20)
    res = estimate_pathwise(models["mean_revert_half"], cfg)
    assert res.occupation[-2:].sum() > 0.9


def test_stationary_cdf_shape(models):
    x = np.linspace(0.0, 0.6, 7)
    cdf = stationary_cdf(models["logistic_zero"], 0.6, x)
    assert cdf[0] == 0.0 and cdf[-1] == 1.0
    assert np.all(np.diff(cdf) > 0)


def test_pathwise_trace(models, solutions):
    sol = solutions["logistic_zero"]
    cfg = SimConfig(threshold=sol.beta_star, horizon=1000.0, n_paths=1)
    res = estimate_pathwise(models["logistic_zero"], cfg)
    assert res.trace.size == cfg.n_windows - round(cfg.burn_in * cfg.n_windows)
    assert res.extra["trace_is_cauchy"]
    assert abs(res.estimate - sol.lambda_star) <= res.tolerance()


def test_occupation_long_run(models, solutions):
    sol = solutions["logistic_zero"]
    cfg = SimConfig(threshold=sol.beta_star, horizon=2000.0, n_paths=1)
    res = estimate_pathwise(models["logistic_zero"], cfg)
    rep = occupation_check(models["logistic_zero"], cfg, res)
    assert rep["passed"], rep


def test_uncontrolled_moment(models):
    rep = uncontrolled_moment_check(models["logistic_zero"])
    assert rep["passed"], rep


def test_calibration_reports_constant(models):
    cal = calibrate_dt_constant(models["logistic_zero"], SimConfig(threshold=0.6, horizon=20.0, n_paths=16))
    assert cal["c_dt"] > 0 and math.isfinite(cal["c_dt"])


def test_away_from_optimum_matches_lambda(models, solutions):
    # long-run average of threshold beta equals the speed-measure average Lambda(beta)
    m, sol = models["logistic_zero"], solutions["logistic_zero"]
    for beta in (0.5 * sol.beta_star, 2.0 * sol.beta_star):
        cfg = SimConfig(threshold=beta, n_paths=128, horizon=100.0)
        c = calibrate_dt_constant(m, cfg)["c_dt"]
        res = estimate_expected(m, cfg, c_dt=c)
        assert abs(res.estimate - big_lambda(m, beta)) <= res.tolerance()
        assert res.estimate < sol.lambda_star


def test_sweep_singleton_and_empty(models, solutions):
    m, sol = models["logistic_zero"], solutions["logistic_zero"]
    cfg = SimConfig(threshold=sol.beta_star, n_paths=8, horizon=20.0)
    sw = threshold_sweep(m, cfg, [sol.beta_star], sol.lambda_star, calibrate=False)
    direct = estimate_expected(m, cfg)
    assert sw.rows[0]["estimate"] == direct.estimate
    assert sw.rows[0]["oracle"] == pytest.approx(sol.lambda_star, abs=1e-10)
    with pytest.raises(SimConfigError):
        threshold_sweep(m, cfg, [], sol.lambda_star)
