from dataclasses import replace

import numpy as np
import pytest

from collusim import experiment
from collusim.errors import ConfigurationError, InputDomainError
from collusim.experiment import CONDITIONS, Condition, TrialConfig

SMALL = TrialConfig(rounds=1200)


def suite_arrays(suite):
    return {c: [(r.cs_mean, r.platform_mean, r.seller_mean, tuple(r.win_rate)) for r in rs]
            for c, rs in suite.items()}


def test_config_validation():
    with pytest.raises(ConfigurationError):
        TrialConfig(rounds=0)
    with pytest.raises(ConfigurationError):
        TrialConfig(n_sellers=3)
    with pytest.raises(ConfigurationError):
        TrialConfig(channels=("position", "telepathy"))
    with pytest.raises(ConfigurationError):
        TrialConfig(population=((0.5, 1.0),))
    with pytest.raises(ConfigurationError):
        TrialConfig(rank_ties="coin")


def test_config_round_trip_and_strict_keys():
    cfg = replace(SMALL, population=((0.5, 1.0), (0.5, 0.5)), channels=("position",))
    assert TrialConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigurationError):
        TrialConfig.from_dict({"roundz": 10})
    with pytest.raises(ConfigurationError):
        TrialConfig.from_dict({"bias": {"alpha": 0.1, "gamma": 1}})
    with pytest.raises(ConfigurationError):
        TrialConfig.from_dict({"payoff": {"kappa": 3.0}})


def test_seeds_and_window():
    assert [SMALL.seed(t) for t in range(3)] == [42, 142, 242]
    assert TrialConfig().measure_start == 12_000
    assert TrialConfig(rounds=7).measure_rounds == 3


def test_determinism_across_thread_counts():
    one = experiment.run_condition_suite(SMALL, 3, threads=1)
    two = experiment.run_condition_suite(SMALL, 3, threads=2)
    assert suite_arrays(one) == suite_arrays(two)


def test_thread_env_fallback(monkeypatch):
    monkeypatch.setenv("COLLUSIM_THREADS", "3")
    assert experiment.resolve_threads(None) == 3
    monkeypatch.delenv("COLLUSIM_THREADS")
    assert experiment.resolve_threads(None) == 1
    with pytest.raises(ConfigurationError):
        experiment.resolve_threads(0)


@pytest.mark.parametrize("cond", list(CONDITIONS))
def test_channels_off_equals_debiased(cond):
    off = replace(SMALL, channels=())
    deb = replace(SMALL, ai_mode="debiased")
    a = experiment.run_trial(off, cond, 1)
    b = experiment.run_trial(deb, cond, 1)
    assert (a.cs_mean, a.platform_mean, a.seller_mean) == (b.cs_mean, b.platform_mean, b.seller_mean)
    assert np.array_equal(a.win_rate, b.win_rate)


def test_trial_result_consistency():
    r = experiment.run_trial(replace(SMALL, keep_series=True), Condition.JOINT, 0)
    start = SMALL.measure_start
    assert r.win_rate.sum() == pytest.approx(1.0)
    assert r.seller_profit.sum() == pytest.approx(r.seller_mean)
    assert r.cs_mean == pytest.approx(r.series.cs[start:].mean())
    assert 0 <= r.mean_w <= 1 and 0 <= r.mean_manip <= 3 and 0 <= r.mean_bid <= 2


def test_baseline_has_no_learning():
    r = experiment.run_trial(SMALL, Condition.BASELINE, 0)
    assert r.platform_mean == 0 and r.mean_w == 0 and r.mean_manip == 0 and r.mean_bid == 0


def test_sweep_points():
    with pytest.raises(ConfigurationError):
        experiment.sweep_points("nonsense", None, SMALL)
    with pytest.raises(ConfigurationError):
        experiment.sweep_points("algorithm", ["dqn"], SMALL)
    assert len(experiment.sweep_points("factorial", None, SMALL)) == 16
    gk = {p.label: p for p in experiment.sweep_points("gatekeeper-w", None, SMALL)}
    assert gk["0.33"].config_for(Condition.SELLER_ONLY).fixed_w == pytest.approx(1 / 3)
    assert gk["0.33"].conditions == (Condition.BASELINE, Condition.SELLER_ONLY)
    naive = experiment.sweep_points("naive-seller", ["b1m2"], SMALL)[0]
    assert naive.config_for(Condition.PLATFORM_ONLY).naive_seller == (2, 1)
    assert naive.config_for(Condition.JOINT).naive_seller == (0, 0)
    for axis in experiment.SWEEP_AXES:
        assert experiment.sweep_points(axis, None, SMALL)


def test_trailing_means():
    series = np.arange(1, 11, dtype=float)
    assert experiment.trailing_means(series, [5, 10], 0.4).tolist() == [4.5, 8.5]


def test_time_to_threshold():
    cfg = replace(SMALL, checkpoints=(400, 800, 1200))
    suite = experiment.run_condition_suite(cfg, 2)
    stats = experiment.time_to_threshold(suite, cfg.checkpoints, [1e9])
    assert stats[0].fraction_reaching == 0 and stats[0].mean_round is None
    with pytest.raises(InputDomainError):
        experiment.time_to_threshold(suite, cfg.checkpoints, [-1])
