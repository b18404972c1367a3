"""Pure-Python trial loop (fallback backend and reference for the compiled one)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import market
from .kernel import KernelOutput, KernelPlan, allocate_output
from .learners import Learner, make_learner, sample_weights, seq_sum, uniform_index
from .market import N_PLATFORM_ACTIONS, N_SELLER_ACTIONS, RoundOutcome


@dataclass
class MarketState:
    """Mutable per-trial state: learners, trailing history and current state index."""

    plan: KernelPlan
    platform: Learner | None
    sellers: list
    state: int = 0
    t: int = 0
    hist_m: list = field(default_factory=list)
    hist_b: list = field(default_factory=list)
    sum_m: int = 0
    sum_b: int = 0
    last_actions: tuple = ()

    @classmethod
    def start(cls, plan: KernelPlan, rng: np.random.Generator) -> "MarketState":
        platform = None
        if plan.platform_learns:
            platform = make_learner(N_PLATFORM_ACTIONS, plan.learner, plan.codec, rng)
        sellers = [
            make_learner(N_SELLER_ACTIONS, plan.learner, plan.codec, rng) if fixed < 0 else None
            for fixed in plan.seller_fixed
        ]
        window = plan.codec.history_window
        return cls(plan, platform, sellers, hist_m=[0] * window, hist_b=[0] * window)

    def learners(self) -> list:
        return [x for x in [self.platform, *self.sellers] if x is not None]

    def next_state(self, m_round: int, b_round: int) -> int:
        codec = self.plan.codec
        window = codec.history_window
        slot = self.t % window
        self.sum_m += m_round - self.hist_m[slot]
        self.sum_b += b_round - self.hist_b[slot]
        self.hist_m[slot] = m_round
        self.hist_b[slot] = b_round
        if self.t + 1 < window:
            return 0
        denom = window * self.plan.catalog.n
        mean_m = self.sum_m / denom
        mean_b = self.sum_b / denom
        km = 0
        for j in range(1, codec.bins_m):
            if mean_m >= codec.max_manip * j / codec.bins_m:
                km = j
        kb = 0
        for j in range(1, codec.bins_b):
            if mean_b >= codec.max_bid * j / codec.bins_b:
                kb = j
        return km * codec.bins_b + kb


def run_round(ms: MarketState, rng: np.random.Generator) -> RoundOutcome:
    """Advance one round: select, clear the market, pay out, learn."""
    plan = ms.plan
    catalog = plan.catalog
    n = catalog.n
    s, t = ms.state, ms.t

    if ms.platform is None:
        a_p = -1
        pd = market.PlatformDecision(plan.fixed_w, market.ENDORSEMENT_RULES[plan.fixed_e], plan.fixed_d)
    else:
        a_p = ms.platform.select(s, t, rng)
        pd = market.decode_platform_action(a_p)
    a_s = [
        fixed if learner is None else learner.select(s, t, rng)
        for fixed, learner in zip(plan.seller_fixed, ms.sellers)
    ]
    sd = [market.decode_seller_action(a) for a in a_s]
    bids = [x.b for x in sd]
    manip = [x.m for x in sd]

    k = 0
    if len(plan.classes) > 1:
        u = rng.random()
        cum = plan.class_cumulative()
        while k < len(cum) - 1 and not u < cum[k]:
            k += 1
    params = plan.classes[k]

    rank = market.rank_products(catalog, bids, pd.w, rng, plan.rank_ties)
    endorsed = market.assign_endorsement(catalog, bids, pd.e, rng, plan.badge_ties)
    decoy = market.assign_decoy(bids, pd.d, rng, plan.decoy_ties)
    sponsored = [b >= 1 for b in bids]

    if plan.true_random:
        utility = [0.0] * n
        prob = [1.0 / n] * n
        winner = uniform_index(rng.random(), n)
    else:
        utility = market.perceived_utilities(catalog, rank, endorsed, sponsored, decoy, manip, params)
        top = max(utility)
        z = [math.exp((x - top) / params.temperature) for x in utility]
        total = seq_sum(z)
        prob = [x / total for x in z]
        winner = sample_weights(z, total, rng.random())
    if plan.override_p > 0.0 and rng.random() < plan.override_p:
        winner = 0

    cs, r_p, r_s = market.round_payoffs(catalog, bids, winner, plan.payoff)

    s_next = ms.next_state(sum(manip), sum(bids))
    if ms.platform is not None:
        ms.platform.update(s, a_p, r_p, s_next, t, rng)
    for i, learner in enumerate(ms.sellers):
        if learner is not None:
            learner.update(s, a_s[i], r_s[i], s_next, t, rng)
    ms.state = s_next
    ms.t = t + 1
    ms.last_actions = (a_p, a_s)
    return RoundOutcome(rank, endorsed, sponsored, decoy, utility, prob, winner, cs, r_p, r_s)


def simulate(plan: KernelPlan, rng: np.random.Generator) -> KernelOutput:
    ms = MarketState.start(plan, rng)
    table_size = sum(x.snapshot().size for x in ms.learners())
    out = allocate_output(plan, table_size)
    snaps = {r: j for j, r in enumerate(plan.snapshot_rounds)}
    for t in range(plan.rounds):
        o = run_round(ms, rng)
        a_p, a_s = ms.last_actions
        out.cs[t] = o.cs
        out.platform_profit[t] = o.platform_profit
        out.seller_profit[t] = seq_sum(o.seller_profit)
        out.winner[t] = o.winner
        out.platform_action[t] = a_p
        out.manip_sum[t] = sum(a // 3 for a in a_s)
        out.bid_sum[t] = sum(a % 3 for a in a_s)
        if t >= plan.measure_start:
            out.window_wins[o.winner] += 1
            for i, x in enumerate(o.seller_profit):
                out.window_profit[i] += x
        j = snaps.get(t + 1)
        if j is not None and table_size:
            out.snapshots[j] = np.concatenate([x.snapshot() for x in ms.learners()])
    for learner in ms.learners():
        learner.finish()
    return out
