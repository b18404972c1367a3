import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from collusim import market
from collusim.errors import InputDomainError, NumericInputError, UnsupportedMarketSizeError
from collusim.market import (
    BiasParams,
    Catalog,
    PayoffParams,
    PlatformDecision,
    SellerDecision,
)

CAT = market.compute_prices(Catalog(market.DEFAULT_QUALITY, market.DEFAULT_COST))
DEFAULT = BiasParams()
NONE6 = [False] * 6


def rng(seed=0):
    return np.random.Generator(np.random.PCG64(seed))


# -- prices and decoding -------------------------------------------------------


@pytest.mark.parametrize("q,c,p", [(0.90, 0.15, 0.49), (0.20, 0.05, 0.32), (0.0, 0.0, 0.25)])
def test_price_examples(q, c, p):
    assert market.cost_plus_price(q, c) == pytest.approx(p, abs=1e-12)
    assert market.cost_plus_price(q, c, decimals=None) == pytest.approx(p, abs=1e-12)


def test_default_prices_are_cents():
    assert CAT.price == pytest.approx([0.49, 0.445, 0.41, 0.375, 0.34, 0.32], abs=0.006)
    for p in CAT.price:
        assert round(p * 100) == pytest.approx(p * 100, abs=1e-9)


@pytest.mark.parametrize("a,w,e,d", [(0, 0.0, "quality", 0), (13, 1 / 3, "hybrid", 1), (31, 1.0, "none", 1)])
def test_decode_platform_examples(a, w, e, d):
    pd = market.decode_platform_action(a)
    assert (pd.w, pd.e, pd.d) == (pytest.approx(w), e, d)


@pytest.mark.parametrize("a,m,b", [(0, 0, 0), (7, 2, 1), (11, 3, 2)])
def test_decode_seller_examples(a, m, b):
    assert market.decode_seller_action(a) == SellerDecision(m=m, b=b)


def test_decode_bijections_exhaustive():
    platform = {market.decode_platform_action(a) for a in range(32)}
    assert len(platform) == 32
    for a in range(32):
        assert market.encode_platform_action(market.decode_platform_action(a)) == a
    sellers = {market.decode_seller_action(a) for a in range(12)}
    assert sellers == {SellerDecision(m, b) for m in range(4) for b in range(3)}
    for a in range(12):
        assert market.encode_seller_action(market.decode_seller_action(a)) == a


@pytest.mark.parametrize("bad", [-1, 32, 100])
def test_decode_platform_out_of_range(bad):
    with pytest.raises(InputDomainError):
        market.decode_platform_action(bad)


@pytest.mark.parametrize("bad", [-1, 12])
def test_decode_seller_out_of_range(bad):
    with pytest.raises(InputDomainError):
        market.decode_seller_action(bad)


# -- ranking, badges, decoys -----------------------------------------------------


@given(st.lists(st.integers(0, 2), min_size=6, max_size=6))
def test_rank_w0_is_quality_order(bids):
    assert market.rank_products(CAT, bids, 0.0) == [1, 2, 3, 4, 5, 6]


def test_rank_w1_unique_max():
    assert market.rank_products(CAT, [0, 0, 2, 0, 0, 0], 1.0)[2] == 1


def test_rank_two_product_example():
    cat = market.compute_prices(Catalog((0.9, 0.2, 0.1, 0.05), (0.1, 0.05, 0.0, 0.0)))
    rank = market.rank_products(cat, [0, 2, 0, 0], 2 / 3)
    assert rank[1] == 1 and rank[0] == 2


@settings(max_examples=200)
@given(st.lists(st.integers(0, 2), min_size=6, max_size=6), st.sampled_from(market.BID_WEIGHTS),
       st.sampled_from(market.TIE_BREAKS), st.integers(0, 2**32 - 1))
def test_rank_is_permutation_sorted_by_score(bids, w, tie, seed):
    rank = market.rank_products(CAT, bids, w, rng(seed), tie)
    assert sorted(rank) == list(range(1, 7))
    score = [(1 - w) * CAT.quality[i] + w * bids[i] / 2 for i in range(6)]
    by_pos = sorted(range(6), key=lambda i: rank[i])
    assert all(score[a] >= score[b] for a, b in zip(by_pos, by_pos[1:]))


def test_rank_tie_modes():
    bids = [0, 0, 0, 0, 0, 0]
    assert market.rank_products(CAT, bids, 1.0, tie_break="quality") == [1, 2, 3, 4, 5, 6]
    assert market.rank_products(CAT, bids, 1.0, tie_break="inverse") == [6, 5, 4, 3, 2, 1]
    seen = {tuple(market.rank_products(CAT, bids, 1.0, rng(s), "random")) for s in range(200)}
    assert len(seen) > 50


def test_rank_unknown_tie_mode():
    with pytest.raises(InputDomainError):
        market.rank_products(CAT, [0] * 6, 1.0, tie_break="alphabetical")


@pytest.mark.parametrize("r,v", [(1, 1.0), (2, 0.75), (3, 0.55), (4, 0.30), (5, 0.30), (6, 0.55)])
def test_visibility(r, v):
    assert market.position_visibility(r, 6) == v


def test_visibility_small_market():
    with pytest.raises(UnsupportedMarketSizeError):
        market.position_visibility(1, 3)
    with pytest.raises(InputDomainError):
        market.position_visibility(7, 6)


def test_endorsement_rules():
    bids = [0, 0, 2, 0, 0, 2]
    assert market.assign_endorsement(CAT, bids, "quality") == [True] + [False] * 5
    assert market.assign_endorsement(CAT, bids, "none") == NONE6
    assert market.assign_endorsement(CAT, bids, "hybrid").index(True) == 2
    assert market.assign_endorsement(CAT, bids, "bid").index(True) == 2
    assert market.assign_endorsement(CAT, bids, "bid", tie_break="inverse").index(True) == 5
    assert market.assign_endorsement(CAT, [0, 0, 0, 0, 2, 2], "hybrid", tie_break="quality").index(True) == 0
    with pytest.raises(InputDomainError):
        market.assign_endorsement(CAT, bids, "loudest")


def test_hybrid_without_qualifier_gives_no_badge():
    cat = market.compute_prices(Catalog((0.45, 0.40, 0.30, 0.20), (0.1, 0.1, 0.1, 0.1)))
    assert market.assign_endorsement(cat, [2, 0, 0, 0], "hybrid") == [False] * 4


def test_decoy_examples():
    assert market.assign_decoy([0, 1, 0, 2, 0, 0], 0) == NONE6
    assert market.assign_decoy([0, 1, 0, 2, 0, 0], 1).index(True) == 3
    assert market.assign_decoy([0] * 6, 1).index(True) == 0
    assert market.assign_decoy([0] * 6, 1, tie_break="inverse").index(True) == 5


@given(st.lists(st.integers(0, 2), min_size=6, max_size=6), st.integers(0, 2**32 - 1))
def test_random_badge_goes_to_a_top_bidder(bids, seed):
    target = market.assign_decoy(bids, 1, rng(seed), "random")
    assert sum(target) == 1 and bids[target.index(True)] == max(bids)


# -- utilities and choice ----------------------------------------------------------


def test_bias_term_examples():
    rank = [1, 2, 3, 4, 5, 6]
    endorsed = [True] + [False] * 5
    assert market.bias_term(0, rank, endorsed, NONE6, NONE6, 0, DEFAULT) == pytest.approx(2.50)
    assert market.bias_term(3, rank, NONE6, NONE6, NONE6, 2, DEFAULT) == pytest.approx(0.51)
    additive = BiasParams(manipulation_form="additive")
    assert market.bias_term(3, rank, NONE6, NONE6, NONE6, 2, additive) == pytest.approx(1.21)


def test_utility_examples():
    rank = [1, 2, 3, 4, 5, 6]
    u = market.perceived_utilities(CAT, rank, NONE6, NONE6, NONE6, [0] * 6, DEFAULT)
    assert u[0] == pytest.approx(0.135 - 0.147 + 1.30)
    u = market.perceived_utilities(CAT, rank, NONE6, NONE6, NONE6, [0] * 6, BiasParams.debiased())
    assert u[0] == pytest.approx(0.135 - 0.147)
    zero = BiasParams(**{f: 0.0 for f in ("alpha", "beta", "beta_prime", "beta_pos", "beta_rec", "beta_end",
                                         "beta_spon", "beta_manip", "eta", "beta_dec")})
    assert market.perceived_utilities(CAT, rank, [True] * 6, [True] * 6, [True] * 6, [3] * 6, zero) == [0.0] * 6


def test_choice_examples():
    assert market.choice_distribution([0.3] * 6) == pytest.approx([1 / 6] * 6)
    assert market.choice_distribution([math.log(3), 0.0]) == pytest.approx([0.75, 0.25])
    rank = [1, 2, 3, 4, 5, 6]
    u = market.perceived_utilities(CAT, rank, [True] + [False] * 5, NONE6, NONE6, [0] * 6, DEFAULT)
    assert market.choice_distribution(u)[0] == pytest.approx(0.607, abs=0.001)


def test_choice_rejects_bad_input():
    with pytest.raises(NumericInputError):
        market.choice_distribution([0.0, math.inf])
    with pytest.raises(NumericInputError):
        market.choice_distribution([0.0, math.nan])
    with pytest.raises(NumericInputError):
        market.choice_distribution([0.0, 1.0], temperature=0.0)


utilities = st.lists(st.floats(-50, 50), min_size=2, max_size=12)


@given(utilities, st.floats(0.05, 5.0))
def test_choice_normalized(u, temp):
    p = market.choice_distribution(u, temp)
    assert np.all(p >= 0) and p.sum() == pytest.approx(1.0, abs=1e-12)


@given(utilities, st.floats(-100, 100))
def test_choice_shift_invariant(u, c):
    p = market.choice_distribution(u)
    q = market.choice_distribution([x + c for x in u])
    assert np.max(np.abs(p - q)) <= 1e-9


def test_sample_winner_point_mass_and_uniform():
    g = rng(1)
    assert all(market.sample_winner([1, 0, 0, 0, 0, 0], g) == 0 for _ in range(100))
    counts = np.bincount([market.sample_winner([1 / 6] * 6, g) for _ in range(60_000)], minlength=6)
    sigma = math.sqrt(60_000 * (1 / 6) * (5 / 6))
    assert np.all(np.abs(counts - 10_000) <= 3 * sigma)
    with pytest.raises(NumericInputError):
        market.sample_winner([0.0] * 6, g)


def test_sample_winner_deterministic():
    a = [market.sample_winner([0.1, 0.2, 0.7], rng(5)) for _ in range(1)]
    g1, g2 = rng(9), rng(9)
    assert [market.sample_winner([0.1, 0.2, 0.7], g1) for _ in range(50)] == \
           [market.sample_winner([0.1, 0.2, 0.7], g2) for _ in range(50)]
    assert a


def test_override():
    g = rng(2)
    assert all(market.apply_override(3, CAT, 0.0, g) == 3 for _ in range(100))
    assert all(market.apply_override(3, CAT, 1.0, g) == 0 for _ in range(100))
    hits = sum(market.apply_override(3, CAT, 0.5, g) == 0 for _ in range(10_000))
    assert abs(hits - 5000) <= 3 * math.sqrt(10_000 * 0.25)
    with pytest.raises(InputDomainError):
        market.apply_override(3, CAT, 1.5, g)


# -- payoffs -------------------------------------------------------------------------


def test_payoff_examples():
    cs, plat, sellers = market.round_payoffs(CAT, [2, 1, 0, 0, 0, 0], 0, PayoffParams())
    assert sellers[0] == pytest.approx(0.49 - 0.15 - 0.60)
    assert plat == pytest.approx(0.30)
    assert sellers[1] == pytest.approx(-0.02)
    assert cs == pytest.approx(0.90 - 0.49)
    cs, plat, sellers = market.round_payoffs(CAT, [0] * 6, 2, PayoffParams())
    assert plat == 0 and sellers[2] == pytest.approx(CAT.price[2] - CAT.cost[2])


@given(st.lists(st.integers(0, 2), min_size=6, max_size=6), st.integers(0, 5),
       st.floats(0, 1), st.floats(0, 0.3), st.floats(0, 1))
def test_welfare_identity(bids, winner, kappa, phi_w, frac):
    payoff = PayoffParams(kappa=kappa, phi_w=phi_w, phi_l=phi_w * frac)
    cs, plat, sellers = market.round_payoffs(CAT, bids, winner, payoff)
    total = cs + plat + sum(sellers)
    assert total == pytest.approx(market.welfare_identity_rhs(CAT, bids, winner, payoff), abs=1e-12)


def test_payoff_params_validation():
    with pytest.raises(InputDomainError):
        PayoffParams(kappa=1.5)
    with pytest.raises(InputDomainError):
        PayoffParams(phi_w=0.01, phi_l=0.02)
    with pytest.raises(InputDomainError):
        PayoffParams(take_rate=1.0)


def test_play_round_uses_one_rng_stream():
    pd = PlatformDecision(w=1.0, e="bid", d=1)
    sellers = [SellerDecision(1, 2)] * 6
    a = market.play_round(CAT, pd, sellers, DEFAULT, PayoffParams(), rng(3), tie_break="random")
    b = market.play_round(CAT, pd, sellers, DEFAULT, PayoffParams(), rng(3), tie_break="random")
    assert a == b
    assert sum(a.choice_prob) == pytest.approx(1.0)
