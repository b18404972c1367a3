"""Welfare statistics over collections of trial results.

Suites are plain mappings ``{condition name: [TrialResult, ...]}`` with the
lists ordered by trial index, as produced by ``experiment.run_condition_suite``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import special

from .errors import (
    CompletenessError,
    DegenerateSampleError,
    InsufficientDataError,
    NumericInputError,
    PairingError,
)

BASELINE, PLATFORM, SELLER, JOINT = "baseline", "platform_only", "seller_only", "joint"


def relative_harm(cs_condition: float, cs_baseline: float) -> float:
    """Percent drop in consumer surplus relative to baseline (positive = harm)."""
    if not cs_baseline > 0:
        raise NumericInputError(f"baseline consumer surplus must be positive, got {cs_baseline}")
    return (cs_baseline - cs_condition) / cs_baseline * 100.0


def _pair(*arrays) -> list:
    out = [np.asarray(a, dtype=np.float64) for a in arrays]
    n = len(out[0])
    if any(len(a) != n for a in out):
        raise PairingError(f"paired samples differ in length: {[len(a) for a in out]}")
    return out


def complementarity_paired(cs_platform, cs_seller, cs_baseline, cs_joint) -> np.ndarray:
    """Per-trial super-additive harm in percentage points of the same-trial baseline."""
    p, s, b, j = _pair(cs_platform, cs_seller, cs_baseline, cs_joint)
    if np.any(b <= 0):
        raise NumericInputError("baseline consumer surplus must be positive in every trial")
    return (p + s - b - j) / b * 100.0


def paired_harm(cs_condition, cs_baseline) -> np.ndarray:
    c, b = _pair(cs_condition, cs_baseline)
    if np.any(b <= 0):
        raise NumericInputError("baseline consumer surplus must be positive in every trial")
    return (b - c) / b * 100.0


def _moments(samples) -> tuple[np.ndarray, float, float]:
    x = np.asarray(samples, dtype=np.float64)
    if x.size < 2:
        raise InsufficientDataError("need at least two samples")
    sd = float(np.std(x, ddof=1))
    if not sd > 0:
        raise DegenerateSampleError("samples have zero variance")
    return x, float(x.mean()), sd


def cohens_d(samples) -> float:
    """One-sample effect size against zero: mean / sample s.d."""
    _, mean, sd = _moments(samples)
    return mean / sd


def t_sf(t: float, df: float) -> float:
    """Upper tail P(T > t) of Student's t."""
    return float(special.stdtr(df, -t))


@dataclass
class TTest:
    t: float
    p: float
    ci: tuple
    mean: float
    sd: float
    n: int


def t_test_and_ci(samples, level: float = 0.95) -> TTest:
    """Two-sided one-sample t test against zero with a Student-t interval."""
    if not 0 < level < 1:
        raise NumericInputError("confidence level must lie in (0, 1)")
    x, mean, sd = _moments(samples)
    n = x.size
    se = sd / math.sqrt(n)
    t = mean / se
    p = min(1.0, 2.0 * t_sf(abs(t), n - 1))
    crit = float(special.stdtrit(n - 1, 0.5 + level / 2.0))
    return TTest(t, p, (mean - crit * se, mean + crit * se), mean, sd, n)


def harm_rate(cs_condition, cs_baseline) -> float:
    c, b = _pair(cs_condition, cs_baseline)
    if c.size == 0:
        raise InsufficientDataError("no trials")
    return float(np.mean(c < b))


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size != y.size:
        raise PairingError("vectors differ in length")
    if x.size < 3:
        raise InsufficientDataError("need at least three points")
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt(float(dx @ dx)), math.sqrt(float(dy @ dy))
    if sx == 0 or sy == 0:
        raise DegenerateSampleError("zero variance")
    return float(dx @ dy) / (sx * sy)


def quality_win_correlation(win_rates, quality) -> float:
    return pearson(win_rates, quality)


def q_stability(snapshots) -> float:
    """Mean absolute element-wise change between consecutive snapshots, averaged."""
    s = np.asarray(snapshots, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] < 2:
        raise InsufficientDataError("need at least two snapshots")
    return float(np.abs(np.diff(s, axis=0)).mean())


# -- suite summaries ---------------------------------------------------------


def _cs(results) -> np.ndarray:
    return np.array([r.cs_mean for r in results])


def _safe(fn, *args):
    try:
        return fn(*args)
    except (DegenerateSampleError, InsufficientDataError):
        return None


@dataclass
class ConditionStats:
    condition: str
    n: int
    cs_mean: float
    cs_sd: Optional[float]
    effect: Optional[float]             # relative harm vs baseline means, %
    effect_ci: Optional[tuple]          # t interval of paired per-trial harm
    effect_d: Optional[float]           # paired one-sample d of per-trial harm
    harm_rate: Optional[float]
    platform: float
    sellers: float
    total: float
    mean_w: float
    mean_manip: float
    mean_bid: float

    def as_dict(self) -> dict:
        return asdict(self)


def condition_stats(results: Sequence, baseline: Optional[Sequence] = None) -> ConditionStats:
    if not results:
        raise InsufficientDataError("no trials for this condition")
    cs = _cs(results)
    effect = effect_ci = effect_d = rate = None
    if baseline is not None:
        base = _cs(baseline)
        effect = relative_harm(float(cs.mean()), float(base.mean()))
        harm = paired_harm(cs, base)
        rate = harm_rate(cs, base)
        tt = _safe(t_test_and_ci, harm)
        effect_ci = tt.ci if tt else None
        effect_d = _safe(cohens_d, harm)
    platform = float(np.mean([r.platform_mean for r in results]))
    sellers = float(np.mean([r.seller_mean for r in results]))
    return ConditionStats(
        condition=results[0].condition,
        n=len(results),
        cs_mean=float(cs.mean()),
        cs_sd=float(np.std(cs, ddof=1)) if cs.size > 1 else None,
        effect=effect,
        effect_ci=effect_ci,
        effect_d=effect_d,
        harm_rate=rate,
        platform=platform,
        sellers=sellers,
        total=float(cs.mean()) + platform + sellers,
        mean_w=float(np.mean([r.mean_w for r in results])),
        mean_manip=float(np.mean([r.mean_manip for r in results])),
        mean_bid=float(np.mean([r.mean_bid for r in results])),
    )


@dataclass
class ComplementarityStats:
    n: int
    mean: float
    sd: Optional[float]
    ci: Optional[tuple]
    d: Optional[float]
    t: Optional[float]
    p: Optional[float]
    positive: int
    means_based: float                  # formula applied to condition means

    def as_dict(self) -> dict:
        return asdict(self)


def complementarity_stats(suite: dict) -> ComplementarityStats:
    for c in (BASELINE, PLATFORM, SELLER, JOINT):
        if c not in suite:
            raise CompletenessError(f"suite lacks condition {c!r}")
    comp = complementarity_paired(*(_cs(suite[c]) for c in (PLATFORM, SELLER, BASELINE, JOINT)))
    means = [float(_cs(suite[c]).mean()) for c in (PLATFORM, SELLER, BASELINE, JOINT)]
    tt = _safe(t_test_and_ci, comp)
    return ComplementarityStats(
        n=comp.size,
        mean=float(comp.mean()),
        sd=float(np.std(comp, ddof=1)) if comp.size > 1 else None,
        ci=tt.ci if tt else None,
        d=_safe(cohens_d, comp),
        t=tt.t if tt else None,
        p=tt.p if tt else None,
        positive=int(np.sum(comp > 0)),
        means_based=(means[0] + means[1] - means[2] - means[3]) / means[2] * 100.0,
    )


@dataclass
class WelfareRow:
    condition: str
    cs: float
    platform: float
    sellers: float
    total: float


def welfare_decomposition(suite: dict) -> list:
    rows = []
    for c, results in suite.items():
        cs = float(np.mean([r.cs_mean for r in results]))
        pf = float(np.mean([r.platform_mean for r in results]))
        sl = float(np.mean([r.seller_mean for r in results]))
        rows.append(WelfareRow(c, cs, pf, sl, cs + pf + sl))
    return rows


def deadweight_loss(suite: dict, condition: str = JOINT) -> float:
    """Total welfare lost relative to baseline net of the platform's revenue gain."""
    rows = {r.condition: r for r in welfare_decomposition(suite)}
    base, cond = rows[BASELINE], rows[condition]
    return (base.total - cond.total) - (cond.platform - base.platform)


def suite_quality_correlation(results: Sequence, quality: Sequence[float]) -> float:
    """Correlation between quality and the cross-trial mean win rate per seller."""
    rates = np.mean([r.win_rate for r in results], axis=0)
    return quality_win_correlation(rates, quality)


def suite_q_stability(results: Sequence) -> Optional[float]:
    vals = [float(r.q_change.mean()) for r in results if r.q_change.size]
    return float(np.mean(vals)) if vals else None


@dataclass
class SuiteSummary:
    conditions: dict = field(default_factory=dict)
    complementarity: Optional[ComplementarityStats] = None

    def as_dict(self) -> dict:
        return {
            "conditions": {k: v.as_dict() for k, v in self.conditions.items()},
            "complementarity": self.complementarity.as_dict() if self.complementarity else None,
        }


def summarize_suite(suite: dict) -> SuiteSummary:
    base = suite.get(BASELINE)
    out = SuiteSummary()
    for c, results in suite.items():
        out.conditions[c] = condition_stats(results, base if c != BASELINE else None)
    if all(c in suite for c in (BASELINE, PLATFORM, SELLER, JOINT)):
        out.complementarity = complementarity_stats(suite)
    return out


@dataclass
class FactorialRow:
    mask: str
    joint_effect: float
    complementarity: float
    d: Optional[float]


def factorial_table(results: dict) -> list:
    """One row per channel mask from ``{mask label: suite}``; all 16 masks required."""
    from .experiment import FACTORIAL_MASKS, mask_label

    labels = [mask_label(m) for m in FACTORIAL_MASKS]
    missing = [m for m in labels if m not in results]
    if missing:
        raise CompletenessError(f"factorial is missing masks: {missing}")
    rows = []
    for label in labels:
        suite = results[label]
        comp = complementarity_stats(suite)
        joint = relative_harm(float(_cs(suite[JOINT]).mean()), float(_cs(suite[BASELINE]).mean()))
        rows.append(FactorialRow(label, joint, comp.mean, comp.d))
    return rows
