"""Seeded trials of the repeated game, condition suites and robustness sweeps."""

from __future__ import annotations

import math
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np

from . import kernel, market
from .errors import ConfigurationError, InputDomainError
from .kernel import KernelOutput, KernelPlan
from .learners import ALGORITHMS, LearnerConfig, StateCodec
from .market import BIAS_FIELDS, CHANNEL_FIELDS, BiasParams, Catalog, PayoffParams

AI_MODES = ("biased", "debiased", "true_random")
TIE_BREAKS = market.TIE_BREAKS
CHANNELS = tuple(CHANNEL_FIELDS)
LOW_BIAS_MULTIPLIER = 0.5


class Condition(str, Enum):
    BASELINE = "baseline"
    PLATFORM_ONLY = "platform_only"
    SELLER_ONLY = "seller_only"
    JOINT = "joint"

    @property
    def platform_learns(self) -> bool:
        return self in (Condition.PLATFORM_ONLY, Condition.JOINT)

    @property
    def sellers_learn(self) -> bool:
        return self in (Condition.SELLER_ONLY, Condition.JOINT)


CONDITIONS = tuple(Condition)


def _snap_weight(w: float) -> float:
    # 0.33 / 0.67 in tables mean the grid values 1/3 and 2/3
    for grid in market.BID_WEIGHTS:
        if abs(w - grid) < 0.005:
            return grid
    return w


@dataclass(frozen=True)
class TrialConfig:
    n_sellers: int = 6
    rounds: int = 20000
    measure_fraction: float = 0.40
    seed_base: int = 42
    seed_stride: int = 100
    bias: BiasParams = field(default_factory=BiasParams)
    channels: tuple = CHANNELS                 # enabled bias channels
    bias_scale: float = 1.0
    bias_noise_cv: float = 0.0
    payoff: PayoffParams = field(default_factory=PayoffParams)
    override_p: float = 0.0
    population: tuple = ((1.0, 1.0),)          # (fraction, bias multiplier) per consumer class
    codec: StateCodec = field(default_factory=StateCodec)
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    ai_mode: str = "biased"
    checkpoints: tuple = ()
    rank_ties: str = "inverse"
    badge_ties: str = "random"
    decoy_ties: str = "quality"
    fixed_w: float = 0.0
    fixed_endorsement: str = "quality"
    fixed_decoy: int = 0
    naive_seller: tuple = (0, 0)               # (m, b) for sellers that do not learn
    price_decimals: Optional[int] = 2
    snapshot_fraction: float = 0.20
    snapshot_every: int = 1000
    keep_series: bool = False

    def __post_init__(self):
        if self.n_sellers < 4:
            raise ConfigurationError(f"n_sellers must be at least 4, got {self.n_sellers}")
        if self.rounds < 1:
            raise ConfigurationError("rounds must be positive; an empty run has no measurement window")
        if not 0.0 < self.measure_fraction <= 1.0:
            raise ConfigurationError("measure_fraction must lie in (0, 1]")
        if self.seed_base < 0 or self.seed_stride < 1:
            raise ConfigurationError("seed_base must be >= 0 and seed_stride >= 1")
        unknown = set(self.channels) - set(CHANNELS)
        if unknown:
            raise ConfigurationError(f"unknown channels {sorted(unknown)}; choose from {CHANNELS}")
        if self.bias_scale < 0 or self.bias_noise_cv < 0:
            raise ConfigurationError("bias_scale and bias_noise_cv must be non-negative")
        if not 0.0 <= self.override_p <= 1.0:
            raise ConfigurationError("override_p must lie in [0, 1]")
        if not self.population:
            raise ConfigurationError("population needs at least one class")
        for frac, mult in self.population:
            if frac <= 0 or mult < 0:
                raise ConfigurationError("population fractions must be positive and multipliers non-negative")
        if abs(sum(f for f, _ in self.population) - 1.0) > 1e-9:
            raise ConfigurationError("population fractions must sum to 1")
        if self.ai_mode not in AI_MODES:
            raise ConfigurationError(f"ai_mode must be one of {AI_MODES}")
        for name in ("rank_ties", "badge_ties", "decoy_ties"):
            if getattr(self, name) not in TIE_BREAKS:
                raise ConfigurationError(f"{name} must be one of {TIE_BREAKS}")
        if any(c < 1 or c > self.rounds for c in self.checkpoints):
            raise ConfigurationError("checkpoints must lie in 1..rounds")
        if not 0.0 <= self.fixed_w <= 1.0:
            raise ConfigurationError("fixed_w must lie in [0, 1]")
        if self.fixed_endorsement not in market.ENDORSEMENT_RULES:
            raise ConfigurationError(f"fixed_endorsement must be one of {market.ENDORSEMENT_RULES}")
        if self.fixed_decoy not in (0, 1):
            raise ConfigurationError("fixed_decoy must be 0 or 1")
        m, b = self.naive_seller
        if not (0 <= m <= market.MAX_MANIP and 0 <= b <= market.MAX_BID):
            raise ConfigurationError("naive_seller must be (m, b) with m in 0..3 and b in 0..2")
        if not 0.0 <= self.snapshot_fraction <= 1.0 or self.snapshot_every < 1:
            raise ConfigurationError("snapshot_fraction must lie in [0, 1] and snapshot_every >= 1")

    @property
    def measure_rounds(self) -> int:
        return math.ceil(self.measure_fraction * self.rounds)

    @property
    def measure_start(self) -> int:
        return self.rounds - self.measure_rounds

    def seed(self, trial: int) -> int:
        return self.seed_base + self.seed_stride * trial

    def snapshot_rounds(self) -> list:
        if self.snapshot_fraction <= 0:
            return []
        first = self.rounds - int(round(self.snapshot_fraction * self.rounds))
        return list(range(first, self.rounds + 1, self.snapshot_every)) if first >= 0 else []

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in ("bias", "payoff", "codec", "learner"):
                v = asdict(v)
            elif isinstance(v, tuple):
                v = [list(x) if isinstance(x, tuple) else x for x in v]
            out[f.name] = v
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TrialConfig":
        """Build from a JSON-style mapping; unknown keys are rejected."""
        if not isinstance(data, dict):
            raise ConfigurationError("configuration must be a JSON object")
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigurationError(f"unknown configuration keys: {unknown}")
        nested = {"bias": BiasParams, "payoff": PayoffParams, "codec": StateCodec, "learner": LearnerConfig}
        kwargs = {}
        for key, value in data.items():
            if key in nested:
                sub = nested[key]
                if not isinstance(value, dict):
                    raise ConfigurationError(f"{key} must be an object")
                allowed = {f.name for f in fields(sub)}
                bad = sorted(set(value) - allowed)
                if bad:
                    raise ConfigurationError(f"unknown keys in {key}: {bad}")
                try:
                    value = sub(**value)
                except (TypeError, InputDomainError) as exc:
                    raise ConfigurationError(f"invalid {key}: {exc}") from exc
            elif key == "population":
                value = tuple((float(f), float(m)) for f, m in value)
            elif key in ("channels", "checkpoints", "naive_seller"):
                value = tuple(value)
            kwargs[key] = value
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from exc


@dataclass
class TrialResult:
    trial: int
    condition: str
    seed: int
    cs_mean: float
    platform_mean: float
    seller_mean: float                 # total seller profit per round
    win_rate: np.ndarray               # per seller, measurement window
    seller_profit: np.ndarray          # per seller mean profit, measurement window
    mean_w: float
    mean_manip: float
    mean_bid: float
    checkpoint_cs: np.ndarray          # trailing-window CS mean at each checkpoint
    q_change: np.ndarray               # mean |dQ| between consecutive snapshots
    series: Optional[KernelOutput] = None

    @property
    def total_welfare(self) -> float:
        return self.cs_mean + self.platform_mean + self.seller_mean


# -- plan construction -------------------------------------------------------


def _noisy_bias(bias: BiasParams, cv: float, rng: np.random.Generator) -> BiasParams:
    draws = {}
    for name in BIAS_FIELDS:
        mu = getattr(bias, name)
        x = mu + cv * abs(mu) * rng.standard_normal()
        draws[name] = min(x, 0.0) if name == "beta_spon" else max(x, 0.0)
    return replace(bias, **draws)


def consumer_classes(config: TrialConfig, rng: np.random.Generator) -> tuple[list, list]:
    """Per-trial bias parameters for each consumer class (draws noise from ``rng``)."""
    bias = config.bias.scaled(config.bias_scale)
    if config.bias_noise_cv > 0:
        bias = _noisy_bias(bias, config.bias_noise_cv, rng)
    bias = bias.without_channels([c for c in CHANNELS if c not in config.channels])
    if config.ai_mode == "debiased":
        bias = BiasParams.debiased(bias)
    classes = [bias.scaled(mult) for _, mult in config.population]
    fractions = [frac for frac, _ in config.population]
    return classes, fractions


def catalog_for(config: TrialConfig) -> Catalog:
    if config.n_sellers == len(market.DEFAULT_QUALITY):
        base = Catalog(market.DEFAULT_QUALITY, market.DEFAULT_COST, price_decimals=config.price_decimals)
    else:
        q, c = market.interpolated_profile(config.n_sellers)
        base = Catalog(q, c, price_decimals=config.price_decimals)
    return market.compute_prices(base)


def build_plan(config: TrialConfig, condition: Condition, rng: np.random.Generator) -> KernelPlan:
    condition = Condition(condition)
    classes, fractions = consumer_classes(config, rng)
    catalog = catalog_for(config)
    naive = market.encode_seller_action(market.SellerDecision(*config.naive_seller))
    seller_fixed = [-1 if condition.sellers_learn else naive] * catalog.n
    return KernelPlan(
        catalog=catalog,
        rounds=config.rounds,
        classes=classes,
        class_fractions=fractions,
        payoff=config.payoff,
        learner=config.learner,
        codec=config.codec,
        platform_learns=condition.platform_learns,
        fixed_w=_snap_weight(config.fixed_w),
        fixed_e=market.ENDORSEMENT_RULES.index(config.fixed_endorsement),
        fixed_d=config.fixed_decoy,
        seller_fixed=seller_fixed,
        override_p=config.override_p,
        true_random=config.ai_mode == "true_random",
        rank_ties=config.rank_ties,
        badge_ties=config.badge_ties,
        decoy_ties=config.decoy_ties,
        measure_start=config.measure_start,
        snapshot_rounds=config.snapshot_rounds(),
    )


def run_round(ms, rng):
    """Advance a pure-Python ``MarketState`` by one round (see ``_pykernel``)."""
    from ._pykernel import run_round as _run_round

    return _run_round(ms, rng)


def trailing_means(series: np.ndarray, checkpoints: Sequence[int], fraction: float) -> np.ndarray:
    out = np.empty(len(checkpoints))
    for j, k in enumerate(checkpoints):
        width = max(1, math.ceil(fraction * k))
        out[j] = series[k - width:k].mean()
    return out


def run_trial(config: TrialConfig, condition: Condition, trial: int = 0,
              backend: Optional[str] = None) -> TrialResult:
    condition = Condition(condition)
    seed = config.seed(trial)
    rng = np.random.Generator(np.random.PCG64(seed))
    plan = build_plan(config, condition, rng)
    out = kernel.simulate(plan, rng, backend)

    start = plan.measure_start
    window = config.rounds - start
    n = plan.catalog.n
    if condition.platform_learns:
        w_series = np.asarray(market.BID_WEIGHTS)[out.platform_action[start:] // 8]
        mean_w = float(w_series.mean())
    else:
        mean_w = plan.fixed_w
    snaps = out.snapshots
    q_change = np.abs(np.diff(snaps, axis=0)).mean(axis=1) if len(snaps) > 1 and snaps.shape[1] else np.empty(0)
    return TrialResult(
        trial=trial,
        condition=condition.value,
        seed=seed,
        cs_mean=float(out.cs[start:].mean()),
        platform_mean=float(out.platform_profit[start:].mean()),
        seller_mean=float(out.seller_profit[start:].mean()),
        win_rate=out.window_wins / window,
        seller_profit=out.window_profit / window,
        mean_w=mean_w,
        mean_manip=float(out.manip_sum[start:].mean() / n),
        mean_bid=float(out.bid_sum[start:].mean() / n),
        checkpoint_cs=trailing_means(out.cs, config.checkpoints, config.measure_fraction),
        q_change=q_change,
        series=out if config.keep_series else None,
    )


# -- suites ------------------------------------------------------------------


def resolve_threads(threads: Optional[int] = None) -> int:
    if threads is None:
        env = os.environ.get("COLLUSIM_THREADS")
        threads = int(env) if env else 1
    if threads < 1:
        raise ConfigurationError("threads must be >= 1")
    return threads


def _run_task(task):
    config, condition, trial, backend = task
    return run_trial(config, condition, trial, backend)


def run_tasks(tasks: list, threads: Optional[int] = None) -> list:
    """Run ``(config, condition, trial, backend)`` tasks; results keep task order."""
    threads = resolve_threads(threads)
    if threads == 1 or len(tasks) <= 1:
        return [_run_task(t) for t in tasks]
    chunk = max(1, len(tasks) // (threads * 4))
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_run_task, tasks, chunksize=chunk))


def run_condition_suite(config: TrialConfig, trials: int,
                        conditions: Iterable[Condition] = CONDITIONS,
                        threads: Optional[int] = None, backend: Optional[str] = None,
                        configs: Optional[dict] = None) -> dict:
    """Run every condition on the same trial seeds.

    ``configs`` optionally overrides the configuration per condition (used by
    sweeps that only change one arm).  Returns ``{condition name: [TrialResult]}``
    ordered by trial index.
    """
    if trials < 1:
        raise ConfigurationError("need at least one trial")
    conditions = [Condition(c) for c in conditions]
    configs = configs or {}
    tasks = [
        (configs.get(c, config), c, t, backend)
        for c in conditions
        for t in range(trials)
    ]
    results = run_tasks(tasks, threads)
    suite = {}
    for (_, c, _, _), r in zip(tasks, results):
        suite.setdefault(c.value, []).append(r)
    return suite


# -- sweeps ------------------------------------------------------------------


@dataclass
class SweepPoint:
    axis: str
    label: str
    base: TrialConfig
    overrides: dict = field(default_factory=dict)   # Condition -> TrialConfig
    conditions: tuple = CONDITIONS

    def config_for(self, condition: Condition) -> TrialConfig:
        return self.overrides.get(Condition(condition), self.base)


FACTORIAL_MASKS = [tuple(bool(k >> (3 - j) & 1) for j in range(4)) for k in range(15, -1, -1)]


def mask_label(mask: Sequence[bool]) -> str:
    names = ("position", "endorsement", "manipulation", "decoy")
    on = [n for n, flag in zip(names, mask) if flag]
    return "+".join(on) if on else "none"


def _parse_mask(value: str) -> tuple:
    if value == "none":
        return (False,) * 4
    parts = value.split("+")
    for p in parts:
        if p not in CHANNELS:
            raise ConfigurationError(f"unknown channel {p!r} in factorial mask")
    return tuple(c in parts for c in CHANNELS)


def _position_scaled(bias: BiasParams, total: float) -> BiasParams:
    base = bias.beta_prime + bias.beta_pos + bias.beta_rec
    k = total / base
    return replace(bias, beta_prime=bias.beta_prime * k, beta_pos=bias.beta_pos * k, beta_rec=bias.beta_rec * k)


def _equal_weights(bias: BiasParams, name: str) -> tuple[BiasParams, float]:
    """Bias variant and extra bias scale for the equal-weight configurations."""
    if name == "baseline":
        return bias, 1.0
    if name in ("equal-moderate", "equal-strong"):
        level, pos_total = (0.30, 0.45) if name == "equal-moderate" else (0.50, 0.725)
        flat = replace(bias, beta_end=level, beta_manip=level, beta_dec=level)
        return _position_scaled(flat, pos_total), 1.0
    if name == "position-reduced":
        return replace(bias, beta_prime=0.30, beta_pos=0.60, beta_rec=0.10), 1.0
    if name == "quality-boosted":
        return bias, 1.0 / 3.0
    raise ConfigurationError(f"unknown equal-weights configuration {name!r}")


EQUAL_WEIGHT_CONFIGS = ("baseline", "equal-moderate", "equal-strong", "position-reduced", "quality-boosted")


def _float(v) -> float:
    try:
        return float(v)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"expected a number, got {v!r}") from exc


def _naive_seller(value: str) -> tuple:
    m = re.fullmatch(r"b(\d)m(\d)", value)
    if not m:
        raise ConfigurationError(f"naive-seller values look like b1m0 (bid 1, manipulation 0), got {value!r}")
    return int(m.group(2)), int(m.group(1))


def _sweep_point(axis: str, value: str, base: TrialConfig) -> SweepPoint:
    label = str(value)
    if axis == "factorial":
        mask = _parse_mask(value)
        on = tuple(c for c, flag in zip(CHANNELS, mask) if flag)
        return SweepPoint(axis, mask_label(mask), replace(base, channels=on))
    if axis in ("bias-scale", "debias-level"):
        x = _float(value)
        scale = x if axis == "bias-scale" else 1.0 - x
        if scale < 0:
            raise ConfigurationError("debias level must lie in [0, 1]")
        return SweepPoint(axis, label, replace(base, bias_scale=base.bias_scale * scale))
    if axis == "override":
        return SweepPoint(axis, label, replace(base, override_p=_float(value)))
    if axis == "population":
        high = _float(value)
        if not 0.0 <= high <= 1.0:
            raise ConfigurationError("population value is the high-bias fraction in [0, 1]")
        pop = tuple((f, m) for f, m in ((high, 1.0), (1.0 - high, LOW_BIAS_MULTIPLIER)) if f > 0)
        return SweepPoint(axis, label, replace(base, population=pop))
    if axis == "take-rate":
        try:
            payoff = replace(base.payoff, take_rate=_float(value))
        except InputDomainError as exc:
            raise ConfigurationError(str(exc)) from exc
        return SweepPoint(axis, label, replace(base, payoff=payoff))
    if axis == "naive-seller":
        if value == "learning":
            return SweepPoint(axis, label, base)
        naive = replace(base, naive_seller=_naive_seller(value))
        return SweepPoint(axis, label, base, {Condition.PLATFORM_ONLY: naive})
    if axis == "gatekeeper-w":
        fixed = replace(base, fixed_w=_snap_weight(_float(value)))
        return SweepPoint(axis, label, base, {Condition.SELLER_ONLY: fixed},
                          (Condition.BASELINE, Condition.SELLER_ONLY))
    if axis == "position-magnitude":
        row = _float(value)
        bias = _position_scaled(base.bias, row / base.bias.beta_pos * (
            base.bias.beta_prime + base.bias.beta_pos + base.bias.beta_rec))
        return SweepPoint(axis, label, replace(base, bias=bias))
    if axis == "quality-weight":
        alpha_new = _float(value)
        if alpha_new <= 0:
            raise ConfigurationError("quality weight must be positive")
        return SweepPoint(axis, label, replace(base, bias_scale=base.bias_scale * base.bias.alpha / alpha_new))
    if axis == "equal-weights":
        bias, scale = _equal_weights(base.bias, value)
        return SweepPoint(axis, label, replace(base, bias=bias, bias_scale=base.bias_scale * scale))
    if axis == "noise-cv":
        return SweepPoint(axis, label, replace(base, bias_noise_cv=_float(value)))
    if axis == "algorithm":
        if value not in ALGORITHMS:
            raise ConfigurationError(f"unknown algorithm {value!r}; choose from {ALGORITHMS}")
        return SweepPoint(axis, label, replace(base, learner=replace(base.learner, algorithm=value)))
    if axis == "state-space":
        n_states = int(_float(value))
        bins = math.isqrt(n_states)
        if bins * bins != n_states or bins < 1:
            raise ConfigurationError("state-space values must be perfect squares (4, 16, 64)")
        return SweepPoint(axis, label, replace(base, codec=replace(base.codec, bins_m=bins, bins_b=bins)))
    if axis == "long-run":
        rounds = int(_float(value))
        snaps = replace(base, rounds=rounds, checkpoints=tuple(c for c in base.checkpoints if c <= rounds))
        return SweepPoint(axis, label, snaps)
    if axis == "functional-form":
        if value not in ("multiplicative", "additive"):
            raise ConfigurationError("functional-form values are multiplicative or additive")
        return SweepPoint(axis, label, replace(base, bias=replace(base.bias, manipulation_form=value)))
    if axis == "ai-mode":
        if value not in AI_MODES:
            raise ConfigurationError(f"ai-mode values are {AI_MODES}")
        return SweepPoint(axis, label, replace(base, ai_mode=value))
    if axis == "market-size":
        return SweepPoint(axis, label, replace(base, n_sellers=int(_float(value))))
    if axis == "learning-params":
        try:
            a, g = (float(x) for x in value.split(":"))
        except ValueError as exc:
            raise ConfigurationError(f"learning-params values look like 0.12:0.90 (alpha:gamma), got {value!r}") from exc
        return SweepPoint(axis, label, replace(base, learner=replace(base.learner, alpha=a, gamma=g)))
    raise ConfigurationError(f"unknown sweep axis {axis!r}; choose from {sorted(SWEEP_DEFAULTS)}")


SWEEP_DEFAULTS = {
    "factorial": [mask_label(m) for m in FACTORIAL_MASKS],
    "bias-scale": ["0.5", "0.75", "1.0", "1.25", "1.5", "2.0"],
    "override": ["0.0", "0.1", "0.2", "0.3", "0.4", "0.5"],
    "population": ["1.0", "0.75", "0.5", "0.25", "0.0"],
    "take-rate": ["0.0", "0.05", "0.1", "0.15", "0.2"],
    "naive-seller": ["learning", "b1m0", "b2m0", "b1m1", "b1m2"],
    "gatekeeper-w": ["0", "0.33", "0.5", "0.67", "1.0"],
    "position-magnitude": ["0.30", "0.45", "0.60", "0.75", "0.90"],
    "quality-weight": ["0.10", "0.15", "0.25", "0.40", "0.60"],
    "equal-weights": list(EQUAL_WEIGHT_CONFIGS),
    "noise-cv": ["0.0", "0.1", "0.2", "0.3", "0.5"],
    "algorithm": list(ALGORITHMS),
    "state-space": ["4", "16", "64"],
    "long-run": ["100000"],
    "functional-form": ["multiplicative", "additive"],
    "ai-mode": list(AI_MODES),
    "market-size": ["4", "6", "10", "18", "36"],
    "learning-params": [f"{a}:{g}" for a in ("0.08", "0.12", "0.18") for g in ("0.85", "0.90", "0.95")],
    "debias-level": ["0.0", "0.25", "0.5", "0.75", "0.9", "0.95"],
}
SWEEP_AXES = tuple(SWEEP_DEFAULTS)


def sweep_points(axis: str, values: Optional[Sequence[str]], base: TrialConfig) -> list:
    if axis not in SWEEP_DEFAULTS:
        raise ConfigurationError(f"unknown sweep axis {axis!r}; choose from {sorted(SWEEP_DEFAULTS)}")
    values = list(values) if values else SWEEP_DEFAULTS[axis]
    try:
        return [_sweep_point(axis, str(v), base) for v in values]
    except (InputDomainError, TypeError) as exc:
        raise ConfigurationError(f"bad value for {axis}: {exc}") from exc


def run_sweep(axis: str, values: Optional[Sequence[str]], base: TrialConfig, trials: int,
              threads: Optional[int] = None, backend: Optional[str] = None) -> list:
    """Run every configuration of a sweep; returns ``[(SweepPoint, suite)]``.

    All trials of all points go through one worker pool.
    """
    points = sweep_points(axis, values, base)
    tasks, owners = [], []
    for j, point in enumerate(points):
        for c in point.conditions:
            for t in range(trials):
                tasks.append((point.config_for(c), c, t, backend))
                owners.append((j, c.value))
    results = run_tasks(tasks, threads)
    suites = [dict() for _ in points]
    for (j, c), r in zip(owners, results):
        suites[j].setdefault(c, []).append(r)
    return list(zip(points, suites))


# -- convergence speed -------------------------------------------------------


@dataclass
class ThresholdStats:
    threshold: float
    mean_round: Optional[float]
    median_round: Optional[float]
    fraction_reaching: float
    reached: int
    trials: int


def checkpoint_complementarity(suite: dict) -> np.ndarray:
    """Per-trial complementarity (pp) at every checkpoint, shape (trials, checkpoints)."""
    from .analysis import complementarity_paired

    stacked = {c: np.array([r.checkpoint_cs for r in suite[c]]) for c in (x.value for x in CONDITIONS)}
    n_cp = stacked["baseline"].shape[1]
    cols = [
        complementarity_paired(*(stacked[c][:, j] for c in ("platform_only", "seller_only", "baseline", "joint")))
        for j in range(n_cp)
    ]
    return np.column_stack(cols) if cols else np.empty((len(suite["baseline"]), 0))


def time_to_threshold(suite: dict, checkpoints: Sequence[int], thresholds: Sequence[float]) -> list:
    """First checkpoint at which each trial's paired complementarity reaches each threshold."""
    if any(th <= 0 for th in thresholds):
        raise InputDomainError("thresholds must be positive")
    comp = checkpoint_complementarity(suite)
    checkpoints = np.asarray(checkpoints)
    if comp.shape[1] != len(checkpoints):
        raise InputDomainError("suite was not run with these checkpoints")
    out = []
    for th in thresholds:
        hits = []
        for row in comp:
            idx = np.flatnonzero(row >= th)
            if idx.size:
                hits.append(int(checkpoints[idx[0]]))
        n = comp.shape[0]
        out.append(ThresholdStats(
            threshold=float(th),
            mean_round=float(np.mean(hits)) if hits else None,
            median_round=float(np.median(hits)) if hits else None,
            fraction_reaching=len(hits) / n if n else 0.0,
            reached=len(hits),
            trials=n,
        ))
    return out
