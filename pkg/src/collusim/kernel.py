"""Trial-kernel plumbing: the flat plan handed to a backend and backend selection.

Two interchangeable backends run the round loop: the compiled extension
``collusim._ckernel`` and the pure-Python ``collusim._pykernel``.  Both consume
the same ``numpy.random.Generator`` draws in the same order and produce
bit-identical output.  The compiled one is used when importable unless
``COLLUSIM_BACKEND=python`` is set.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .learners import LearnerConfig, StateCodec
from .market import Catalog, PayoffParams

ALGORITHM_CODES = {
    "qlearning": 0,
    "sarsa": 1,
    "gradient_bandit": 2,
    "ucb": 3,
    "thompson": 4,
    "actor_critic": 5,
    "reinforce": 6,
    "exp3": 7,
}


@dataclass
class KernelPlan:
    catalog: Catalog
    rounds: int
    classes: list                     # BiasParams per consumer class
    class_fractions: list             # same length as classes, sums to 1
    payoff: PayoffParams
    learner: LearnerConfig
    codec: StateCodec
    platform_learns: bool = True
    fixed_w: float = 0.0              # used when the platform does not learn
    fixed_e: int = 0                  # index into ENDORSEMENT_RULES
    fixed_d: int = 0
    seller_fixed: list = field(default_factory=list)  # encoded per seller, -1 = learning
    override_p: float = 0.0
    true_random: bool = False
    rank_ties: str = "quality"        # see market.TIE_BREAKS
    badge_ties: str = "quality"
    decoy_ties: str = "quality"
    measure_start: int = 0
    snapshot_rounds: list = field(default_factory=list)

    def __post_init__(self):
        if not self.seller_fixed:
            self.seller_fixed = [-1] * self.catalog.n

    @property
    def additive(self) -> bool:
        return self.classes[0].manipulation_form == "additive"

    def class_cumulative(self) -> np.ndarray:
        cum = np.cumsum(np.asarray(self.class_fractions, dtype=np.float64))
        cum[-1] = 1.0
        return cum

    def bias_matrix(self) -> np.ndarray:
        return np.vstack([c.as_vector() for c in self.classes])


@dataclass
class KernelOutput:
    cs: np.ndarray
    platform_profit: np.ndarray
    seller_profit: np.ndarray          # summed across sellers, per round
    winner: np.ndarray
    platform_action: np.ndarray
    manip_sum: np.ndarray
    bid_sum: np.ndarray
    window_wins: np.ndarray            # per seller, over [measure_start, rounds)
    window_profit: np.ndarray          # per seller profit summed over the window
    snapshots: np.ndarray              # (len(snapshot_rounds), table size)


def allocate_output(plan: KernelPlan, table_size: int) -> KernelOutput:
    T = plan.rounds
    n = plan.catalog.n
    return KernelOutput(
        cs=np.zeros(T),
        platform_profit=np.zeros(T),
        seller_profit=np.zeros(T),
        winner=np.zeros(T, dtype=np.int16),
        platform_action=np.zeros(T, dtype=np.int8),
        manip_sum=np.zeros(T, dtype=np.int32),
        bid_sum=np.zeros(T, dtype=np.int32),
        window_wins=np.zeros(n, dtype=np.int64),
        window_profit=np.zeros(n),
        snapshots=np.zeros((len(plan.snapshot_rounds), table_size)),
    )


def _load_compiled():
    try:
        from . import _ckernel
    except ImportError:
        return None
    return _ckernel.simulate


_compiled = _load_compiled()


def available_backends() -> list:
    return (["cython"] if _compiled is not None else []) + ["python"]


def default_backend() -> str:
    wanted = os.environ.get("COLLUSIM_BACKEND", "").lower()
    if wanted == "python" or _compiled is None:
        return "python"
    return "cython"


def simulate(plan: KernelPlan, rng: np.random.Generator, backend: str | None = None) -> KernelOutput:
    backend = backend or default_backend()
    if backend not in ("cython", "python"):
        raise ConfigurationError(f"unknown backend {backend!r}; choose from {available_backends()}")
    if backend == "cython":
        if _compiled is None:
            raise ConfigurationError("compiled kernel is not built; run `pip install -e .`")
        return _compiled(plan, rng)
    from . import _pykernel

    return _pykernel.simulate(plan, rng)
