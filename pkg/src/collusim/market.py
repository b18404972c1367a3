"""Single-round market mechanics.

Everything here is a pure function of its arguments (plus an explicit
``numpy.random.Generator`` where sampling is involved).  Seller indices are
0-based in code; index 0 is always the highest-quality seller.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from decimal import ROUND_HALF_UP, Decimal
from typing import Optional, Sequence

import numpy as np

from .errors import InputDomainError, NumericInputError, UnsupportedMarketSizeError

BID_WEIGHTS = (0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0)
ENDORSEMENT_RULES = ("quality", "bid", "hybrid", "none")
HYBRID_QUALITY_FLOOR = 0.5
N_PLATFORM_ACTIONS = 32
N_SELLER_ACTIONS = 12
MAX_BID = 2
MAX_MANIP = 3

DEFAULT_QUALITY = (0.90, 0.75, 0.60, 0.45, 0.30, 0.20)
DEFAULT_COST = (0.15, 0.12, 0.10, 0.08, 0.06, 0.05)

# Names of the bias coefficients, in the order used by the kernels.
BIAS_FIELDS = (
    "beta_prime",
    "beta_pos",
    "beta_rec",
    "beta_end",
    "beta_spon",
    "beta_manip",
    "beta_dec",
)
CHANNEL_FIELDS = {
    "position": ("beta_prime", "beta_pos", "beta_rec"),
    "endorsement": ("beta_end", "beta_spon"),
    "manipulation": ("beta_manip",),
    "decoy": ("beta_dec",),
}


@dataclass(frozen=True)
class BiasParams:
    """AI shopping agent utility weights.

    ``alpha``/``beta`` weight quality and price; the ``beta_*`` fields are the
    bias coefficients.  ``eta`` couples manipulation to display visibility.
    """

    alpha: float = 0.15
    beta: float = 0.30
    beta_prime: float = 0.40
    beta_pos: float = 0.90
    beta_rec: float = 0.15
    beta_end: float = 1.20
    beta_spon: float = -0.35
    beta_manip: float = 0.50
    eta: float = 0.70
    beta_dec: float = 0.40
    temperature: float = 1.0
    manipulation_form: str = "multiplicative"

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise InputDomainError(f"eta must lie in [0, 1], got {self.eta}")
        if not self.temperature > 0.0:
            raise InputDomainError(f"temperature must be positive, got {self.temperature}")
        if self.beta_spon > 0.0:
            raise InputDomainError(f"beta_spon must be <= 0, got {self.beta_spon}")
        for name in BIAS_FIELDS:
            if name != "beta_spon" and getattr(self, name) < 0.0:
                raise InputDomainError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.manipulation_form not in ("multiplicative", "additive"):
            raise InputDomainError(f"unknown manipulation_form {self.manipulation_form!r}")

    @classmethod
    def debiased(cls, base: Optional["BiasParams"] = None) -> "BiasParams":
        base = base or cls()
        return replace(base, **{name: 0.0 for name in BIAS_FIELDS})

    def scaled(self, factor: float) -> "BiasParams":
        """Multiply every bias coefficient by ``factor`` (alpha, beta, eta untouched)."""
        if factor < 0:
            raise InputDomainError("bias scale must be non-negative")
        return replace(self, **{name: getattr(self, name) * factor for name in BIAS_FIELDS})

    def without_channels(self, disabled: Sequence[str]) -> "BiasParams":
        zeroed = {}
        for channel in disabled:
            if channel not in CHANNEL_FIELDS:
                raise InputDomainError(f"unknown bias channel {channel!r}")
            zeroed.update({name: 0.0 for name in CHANNEL_FIELDS[channel]})
        return replace(self, **zeroed)

    def as_vector(self) -> np.ndarray:
        """Pack into the float vector layout consumed by the trial kernels."""
        return np.array(
            [
                self.alpha,
                self.beta,
                self.beta_prime,
                self.beta_pos,
                self.beta_rec,
                self.beta_end,
                self.beta_spon,
                self.beta_manip,
                self.eta,
                self.beta_dec,
                self.temperature,
            ],
            dtype=np.float64,
        )


def round_price(value: float, decimals: int) -> float:
    quantum = Decimal(1).scaleb(-decimals)
    return float(Decimal(repr(value)).quantize(quantum, rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class Catalog:
    quality: tuple
    cost: tuple
    price: tuple = ()
    mu_base: float = 0.25
    mu_q: float = 0.10
    price_decimals: Optional[int] = 2

    def __post_init__(self):
        if len(self.quality) != len(self.cost):
            raise InputDomainError("quality and cost must have the same length")
        if any(b >= a for a, b in zip(self.quality, self.quality[1:])):
            raise InputDomainError("quality must be strictly descending by seller index")
        if any(q <= 0.0 or q > 1.0 for q in self.quality):
            raise InputDomainError("quality values must lie in (0, 1]")
        if any(c < 0.0 for c in self.cost):
            raise InputDomainError("costs must be non-negative")
        if self.price and len(self.price) != len(self.quality):
            raise InputDomainError("price vector has the wrong length")

    @property
    def n(self) -> int:
        return len(self.quality)

    @classmethod
    def default(cls, n: int = 6) -> "Catalog":
        if n == len(DEFAULT_QUALITY):
            return compute_prices(cls(DEFAULT_QUALITY, DEFAULT_COST))
        return compute_prices(cls(*interpolated_profile(n)))


def interpolated_profile(n: int) -> tuple[tuple, tuple]:
    """Stretch the six-seller quality/cost profile to ``n`` sellers."""
    if n < 2:
        raise UnsupportedMarketSizeError("need at least two sellers")
    anchor = np.linspace(0.0, 1.0, len(DEFAULT_QUALITY))
    grid = np.linspace(0.0, 1.0, n)
    quality = np.round(np.interp(grid, anchor, DEFAULT_QUALITY), 6)
    cost = np.round(np.interp(grid, anchor, DEFAULT_COST), 6)
    return tuple(float(x) for x in quality), tuple(float(x) for x in cost)


def cost_plus_price(q: float, c: float, mu_base: float = 0.25, mu_q: float = 0.10,
                    decimals: Optional[int] = 2) -> float:
    """``c + mu_base + mu_q * q``, posted to ``decimals`` places (None keeps full precision)."""
    p = c + mu_base + mu_q * q
    return p if decimals is None else round_price(p, decimals)


def compute_prices(catalog: Catalog) -> Catalog:
    prices = [cost_plus_price(q, c, catalog.mu_base, catalog.mu_q, catalog.price_decimals)
              for q, c in zip(catalog.quality, catalog.cost)]
    return replace(catalog, price=tuple(prices))


@dataclass(frozen=True)
class PlatformDecision:
    w: float
    e: str
    d: int

    @property
    def w_index(self) -> int:
        return BID_WEIGHTS.index(self.w)


@dataclass(frozen=True)
class SellerDecision:
    m: int
    b: int


@dataclass(frozen=True)
class PayoffParams:
    kappa: float = 0.50
    phi_w: float = 0.30
    phi_l: float = 0.02
    take_rate: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.kappa <= 1.0:
            raise InputDomainError("kappa must lie in [0, 1]")
        if not self.phi_w >= self.phi_l >= 0.0:
            raise InputDomainError("need phi_w >= phi_l >= 0")
        if not 0.0 <= self.take_rate < 1.0:
            raise InputDomainError("take_rate must lie in [0, 1)")


@dataclass
class RoundOutcome:
    rank: list
    endorsed: list
    sponsored: list
    decoy_target: list
    utility: list
    choice_prob: list
    winner: int
    cs: float
    platform_profit: float
    seller_profit: list = field(default_factory=list)


def decode_platform_action(a: int) -> PlatformDecision:
    if not 0 <= a < N_PLATFORM_ACTIONS:
        raise InputDomainError(f"platform action {a} outside 0..31")
    return PlatformDecision(w=BID_WEIGHTS[a // 8], e=ENDORSEMENT_RULES[(a // 2) % 4], d=a % 2)


def encode_platform_action(decision: PlatformDecision) -> int:
    return decision.w_index * 8 + ENDORSEMENT_RULES.index(decision.e) * 2 + decision.d


def decode_seller_action(a: int) -> SellerDecision:
    if not 0 <= a < N_SELLER_ACTIONS:
        raise InputDomainError(f"seller action {a} outside 0..11")
    return SellerDecision(m=a // 3, b=a % 3)


def encode_seller_action(decision: SellerDecision) -> int:
    return decision.m * 3 + decision.b


TIE_BREAKS = ("quality", "inverse", "random")


def _check_tie_break(tie_break: str) -> None:
    if tie_break not in TIE_BREAKS:
        raise InputDomainError(f"tie_break must be one of {TIE_BREAKS}, got {tie_break!r}")


def _pick(candidates: list, rng: Optional[np.random.Generator], tie_break: str) -> int:
    # candidates are already in quality order, so the first one wins a quality tie-break
    if tie_break == "random" and len(candidates) > 1:
        if rng is None:
            raise InputDomainError("random tie-breaking needs an rng")
        return candidates[int(rng.random() * len(candidates))]
    if tie_break == "inverse":
        return candidates[-1]
    return candidates[0]


def rank_products(catalog: Catalog, bids: Sequence[int], w: float,
                  rng: Optional[np.random.Generator] = None, tie_break: str = "quality") -> list:
    """Display positions (1-based) from ``(1 - w) * q + w * b / 2``.

    Ties go to the higher-quality seller ("quality"), the lower-quality one
    ("inverse"), or are shuffled uniformly ("random").
    """
    _check_tie_break(tie_break)
    n = catalog.n
    scores = [(1.0 - w) * catalog.quality[i] + w * (bids[i] / MAX_BID) for i in range(n)]
    sign = 1 if tie_break == "inverse" else -1
    order = sorted(range(n), key=lambda i: (-scores[i], sign * catalog.quality[i], -sign * i))
    if tie_break == "random":
        order = _shuffle_ties(order, scores, rng)
    rank = [0] * n
    for pos, i in enumerate(order):
        rank[i] = pos + 1
    return rank


def _shuffle_ties(order: list, scores: list, rng) -> list:
    out = []
    k = 0
    while k < len(order):
        j = k
        while j + 1 < len(order) and scores[order[j + 1]] == scores[order[k]]:
            j += 1
        group = order[k:j + 1]
        # partial Fisher-Yates: draw the occupant of each slot in turn
        while group:
            out.append(group.pop(_pick(list(range(len(group))), rng, "random")))
        k = j + 1
    return out


def position_visibility(r: int, n: int) -> float:
    if n < 4:
        raise UnsupportedMarketSizeError(f"visibility profile needs n >= 4, got {n}")
    if not 1 <= r <= n:
        raise InputDomainError(f"rank {r} outside 1..{n}")
    if r == 1:
        return 1.0
    if r == 2:
        return 0.75
    if r == 3 or r == n:
        return 0.55
    return 0.30


def _argmax_bidders(bids: Sequence[int], eligible: Sequence[int]) -> list:
    if not eligible:
        return []
    top = max(bids[i] for i in eligible)
    return [i for i in eligible if bids[i] == top]


def assign_endorsement(catalog: Catalog, bids: Sequence[int], rule: str,
                       rng: Optional[np.random.Generator] = None, tie_break: str = "quality") -> list:
    n = catalog.n
    endorsed = [False] * n
    if rule == "none":
        return endorsed
    if rule == "quality":
        endorsed[0] = True  # catalog is sorted by quality
        return endorsed
    if rule == "bid":
        pool = _argmax_bidders(bids, range(n))
    elif rule == "hybrid":
        pool = _argmax_bidders(bids, [i for i in range(n) if catalog.quality[i] >= HYBRID_QUALITY_FLOOR])
    else:
        raise InputDomainError(f"unknown endorsement rule {rule!r}")
    if pool:
        endorsed[_pick(pool, rng, tie_break)] = True
    return endorsed


def assign_decoy(bids: Sequence[int], d_flag: int,
                 rng: Optional[np.random.Generator] = None, tie_break: str = "quality") -> list:
    n = len(bids)
    target = [False] * n
    if d_flag:
        target[_pick(_argmax_bidders(bids, range(n)), rng, tie_break)] = True
    return target


def bias_term(i: int, rank: Sequence[int], endorsed: Sequence[bool], sponsored: Sequence[bool],
              decoy_target: Sequence[bool], m_i: int, params: BiasParams) -> float:
    n = len(rank)
    r = rank[i]
    out = 0.0
    if r <= 3:
        out += params.beta_pos
    if r == 1:
        out += params.beta_prime
    if r == n:
        out += params.beta_rec
    if endorsed[i]:
        out += params.beta_end
    if sponsored[i]:
        out += params.beta_spon
    nu = position_visibility(r, n)
    if params.manipulation_form == "multiplicative":
        out += params.beta_manip * m_i * ((1.0 - params.eta) + params.eta * nu)
    else:
        out += params.beta_manip * m_i + params.eta * nu
    if decoy_target[i]:
        out += params.beta_dec
    return out


def perceived_utilities(catalog: Catalog, rank, endorsed, sponsored, decoy_target,
                        manip: Sequence[int], params: BiasParams) -> list:
    return [
        params.alpha * catalog.quality[i]
        - params.beta * catalog.price[i]
        + bias_term(i, rank, endorsed, sponsored, decoy_target, manip[i], params)
        for i in range(catalog.n)
    ]


def choice_distribution(utility: Sequence[float], temperature: float = 1.0) -> np.ndarray:
    u = np.asarray(utility, dtype=np.float64)
    if not np.all(np.isfinite(u)):
        raise NumericInputError("utilities must be finite")
    if not temperature > 0:
        raise NumericInputError("temperature must be positive")
    z = np.exp((u - u.max()) / temperature)
    return z / z.sum()


def sample_winner(choice_prob: Sequence[float], rng: np.random.Generator) -> int:
    """Inverse-CDF draw using one uniform from ``rng``."""
    total = 0.0
    for p in choice_prob:
        if p < 0 or not math.isfinite(p):
            raise NumericInputError("choice probabilities must be finite and non-negative")
        total += p
    if total <= 0.0:
        raise NumericInputError("degenerate choice distribution")
    target = rng.random() * total
    cum = 0.0
    last = 0
    for i, p in enumerate(choice_prob):
        if p > 0.0:
            last = i
            cum += p
            if cum > target:
                return i
    return last


def apply_override(winner: int, catalog: Catalog, override_p: float, rng: np.random.Generator) -> int:
    if not 0.0 <= override_p <= 1.0:
        raise InputDomainError("override probability must lie in [0, 1]")
    if override_p > 0.0 and rng.random() < override_p:
        return 0
    return winner


def round_payoffs(catalog: Catalog, bids: Sequence[int], winner: int,
                  payoff: PayoffParams) -> tuple[float, float, list]:
    q, c, p = catalog.quality[winner], catalog.cost[winner], catalog.price[winner]
    b_win = bids[winner]
    cs = q - p
    platform = b_win * payoff.phi_w * payoff.kappa + payoff.take_rate * p
    sellers = [-b * payoff.phi_l for b in bids]
    sellers[winner] = (p - c) * (1.0 - payoff.take_rate) - b_win * payoff.phi_w
    return cs, platform, sellers


def welfare_identity_rhs(catalog: Catalog, bids: Sequence[int], winner: int, payoff: PayoffParams) -> float:
    """Total round welfare implied by transfers netting out (valid at take rate 0)."""
    losers = sum(bids[i] * payoff.phi_l for i in range(catalog.n) if i != winner)
    return (catalog.quality[winner] - catalog.cost[winner]
            - bids[winner] * payoff.phi_w * (1.0 - payoff.kappa) - losers)


def play_round(catalog: Catalog, platform: PlatformDecision, sellers: Sequence[SellerDecision],
               params: BiasParams, payoff: PayoffParams, rng: np.random.Generator,
               override_p: float = 0.0, tie_break: str = "quality",
               true_random: bool = False, badge_tie_break: Optional[str] = None,
               decoy_tie_break: Optional[str] = None) -> RoundOutcome:
    """One complete market round given already-decoded decisions.

    ``tie_break`` governs ranking ties; badge and decoy ties follow their own
    rules when given, else the same one.
    """
    badge_tie_break = tie_break if badge_tie_break is None else badge_tie_break
    decoy_tie_break = tie_break if decoy_tie_break is None else decoy_tie_break
    bids = [s.b for s in sellers]
    manip = [s.m for s in sellers]
    rank = rank_products(catalog, bids, platform.w, rng, tie_break)
    endorsed = assign_endorsement(catalog, bids, platform.e, rng, badge_tie_break)
    decoy = assign_decoy(bids, platform.d, rng, decoy_tie_break)
    sponsored = [b >= 1 for b in bids]
    if true_random:
        utility = [0.0] * catalog.n
        prob = np.full(catalog.n, 1.0 / catalog.n)
        winner = min(int(rng.random() * catalog.n), catalog.n - 1)
    else:
        utility = perceived_utilities(catalog, rank, endorsed, sponsored, decoy, manip, params)
        prob = choice_distribution(utility, params.temperature)
        winner = sample_winner(prob, rng)
    winner = apply_override(winner, catalog, override_p, rng)
    cs, platform_profit, seller_profit = round_payoffs(catalog, bids, winner, payoff)
    return RoundOutcome(rank, endorsed, sponsored, decoy, utility, list(prob), winner,
                        cs, platform_profit, seller_profit)
