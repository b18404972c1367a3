"""Simulator of AI-mediated marketplaces where a platform and sellers learn to exploit a biased shopping agent."""

from .market import BiasParams, Catalog, PayoffParams
from .learners import LearnerConfig, StateCodec
from .experiment import Condition, TrialConfig, TrialResult, run_condition_suite, run_sweep, run_trial

__version__ = "0.1.0"

__all__ = [
    "BiasParams",
    "Catalog",
    "Condition",
    "LearnerConfig",
    "PayoffParams",
    "StateCodec",
    "TrialConfig",
    "TrialResult",
    "run_condition_suite",
    "run_sweep",
    "run_trial",
]
