import math
import os
import subprocess
import sys
from dataclasses import fields, replace

import numpy as np
import pytest

from collusim import kernel, market
from collusim._pykernel import MarketState, run_round
from collusim.experiment import CONDITIONS, Condition, TrialConfig, build_plan
from collusim.learners import ALGORITHMS

BASE = TrialConfig(rounds=1500, snapshot_fraction=0.5, snapshot_every=250)
compiled = pytest.mark.skipif("cython" not in kernel.available_backends(), reason="compiled kernel not built")


def outputs(cfg, cond, backend, trial=0):
    rng = np.random.Generator(np.random.PCG64(cfg.seed(trial)))
    plan = build_plan(cfg, cond, rng)
    return kernel.simulate(plan, rng, backend)


def assert_identical(a, b):
    for f in fields(a):
        x, y = getattr(a, f.name), getattr(b, f.name)
        assert np.array_equal(x, y), f.name


@compiled
@pytest.mark.parametrize("alg", ALGORITHMS)
def test_parity_algorithms(alg):
    cfg = replace(BASE, learner=replace(BASE.learner, algorithm=alg))
    assert_identical(outputs(cfg, "joint", "python"), outputs(cfg, "joint", "cython"))


@compiled
@pytest.mark.parametrize("rank_ties", market.TIE_BREAKS)
@pytest.mark.parametrize("badge_ties", market.TIE_BREAKS)
@pytest.mark.parametrize("decoy_ties", market.TIE_BREAKS)
def test_parity_tie_modes(rank_ties, badge_ties, decoy_ties):
    cfg = replace(BASE, rank_ties=rank_ties, badge_ties=badge_ties, decoy_ties=decoy_ties)
    for cond in CONDITIONS:
        assert_identical(outputs(cfg, cond, "python"), outputs(cfg, cond, "cython"))


@compiled
@pytest.mark.parametrize("extra", [
    dict(override_p=0.3), dict(ai_mode="true_random"), dict(ai_mode="debiased"),
    dict(population=((0.5, 1.0), (0.5, 0.5))), dict(bias_noise_cv=0.3), dict(n_sellers=10),
    dict(payoff=replace(BASE.payoff, take_rate=0.1)), dict(naive_seller=(2, 1)), dict(fixed_w=1.0),
    dict(bias=replace(BASE.bias, manipulation_form="additive")),
])
def test_parity_variants(extra):
    cfg = replace(BASE, **extra)
    for cond in ("joint", "seller_only", "platform_only"):
        assert_identical(outputs(cfg, cond, "python"), outputs(cfg, cond, "cython"))


def test_unknown_backend():
    with pytest.raises(ValueError):
        outputs(BASE, "joint", "fortran")


def test_env_forces_python_fallback():
    env = dict(os.environ, COLLUSIM_BACKEND="python")
    out = subprocess.run([sys.executable, "-c", "from collusim import kernel; print(kernel.default_backend())"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_repeated_runs_identical():
    for backend in kernel.available_backends():
        assert_identical(outputs(BASE, "joint", backend), outputs(BASE, "joint", backend))


def _state(cfg, cond, seed=7):
    rng = np.random.Generator(np.random.PCG64(seed))
    return MarketState.start(build_plan(cfg, cond, rng), rng), rng


def test_round_outcomes_deterministic():
    a, ra = _state(BASE, Condition.JOINT)
    b, rb = _state(BASE, Condition.JOINT)
    for _ in range(200):
        assert run_round(a, ra) == run_round(b, rb)


def test_round_outcome_invariants():
    ms, rng = _state(BASE, Condition.JOINT)
    for _ in range(300):
        o = run_round(ms, rng)
        assert sorted(o.rank) == list(range(1, 7))
        assert sum(o.endorsed) <= 1 and sum(o.decoy_target) <= 1
        assert abs(sum(o.choice_prob) - 1.0) <= 1e-12 and min(o.choice_prob) >= 0


def test_baseline_winner_distribution_matches_closed_form():
    ms, rng = _state(BASE, Condition.BASELINE)
    first = run_round(ms, rng)
    expected = np.array(first.choice_prob)
    n = 20_000
    counts = np.bincount([first.winner] + [run_round(ms, rng).winner for _ in range(n - 1)], minlength=6)
    sigma = np.sqrt(n * expected * (1 - expected))
    assert np.all(np.abs(counts - n * expected) <= 4 * sigma)
    assert expected[0] == pytest.approx(0.607, abs=0.001)


def test_true_random_is_uniform():
    cfg = replace(BASE, ai_mode="true_random")
    ms, rng = _state(cfg, Condition.JOINT)
    n = 12_000
    counts = np.bincount([run_round(ms, rng).winner for _ in range(n)], minlength=6)
    sigma = math.sqrt(n * (1 / 6) * (5 / 6))
    assert np.all(np.abs(counts - n / 6) <= 3 * sigma)


def test_state_is_zero_until_history_fills():
    ms, rng = _state(BASE, Condition.JOINT)
    for _ in range(99):
        run_round(ms, rng)
        assert ms.state == 0
