"""Priors and posterior samplers."""

from sbm_eb.samplers.posterior_mcmc import (
    ChainInit,
    ChainSchedule,
    ChainTrace,
    McmcState,
    run_chain,
)
from sbm_eb.samplers.priors import ConstraintMode, ModelVariant, PriorSpec

__all__ = [
    "ChainInit",
    "ChainSchedule",
    "ChainTrace",
    "ConstraintMode",
    "McmcState",
    "ModelVariant",
    "PriorSpec",
    "run_chain",
]
