"""Metropolis-Hastings-within-Gibbs sampling of block labels and latent positions.

Each iteration performs one systematic Gibbs sweep over the labels in vertex
order, followed (except for the EXACT regime) by one independence Metropolis
step on the whole K x d matrix of latent positions, proposing from the prior.

The sampler keeps block-level sufficient statistics in its state so that a
single-vertex update costs O(K^2) plus an O(n) neighbor-count refresh when the
label changes, and a Metropolis step costs O(K^2 d).
"""

import itertools
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from sbm_eb.core.evaluation import misassignment_rate
from sbm_eb.core.exceptions import ConfigError
from sbm_eb.core.sbm_model import (
    AdjacencyMatrix,
    block_edge_counts,
    block_log_probabilities,
    log_likelihood_from_counts,
    one_hot,
    sample_block_memberships,
)
from sbm_eb.samplers.priors import ModelVariant, PriorSpec, constraint_check, draw_prior_nu

logger = logging.getLogger(__name__)

DEFAULT_ITERS = 10_000
_PROGRESS_EVERY = 1000


@dataclass
class McmcState:
    """Current (tau, nu) with cached sufficient statistics.

    Attributes:
        tau: n block labels in 0..K-1
        nu: K x d latent positions
        counts: block assignment counts T
        loglik: log-likelihood of (tau, nu)
        neighbor_counts: n x K, neighbor_counts[i, k] = number of neighbors of i in block k
        edge_counts: K x K block edge counts (diagonal counts each edge twice)
        accepted: accepted Metropolis proposals
        proposed: Metropolis proposals made
    """

    tau: np.ndarray
    nu: np.ndarray
    counts: np.ndarray
    loglik: float
    neighbor_counts: np.ndarray
    edge_counts: np.ndarray
    accepted: int = 0
    proposed: int = 0

    @classmethod
    def initial(cls, A: AdjacencyMatrix, tau: np.ndarray, nu: np.ndarray) -> "McmcState":
        nu = np.array(nu, dtype=float, copy=True)
        tau = np.array(tau, dtype=np.int64, copy=True)
        K = nu.shape[0]
        if len(tau) != A.n:
            raise ValueError(f"Label vector has {len(tau)} entries for a graph on {A.n} vertices")
        if tau.size and (tau.min() < 0 or tau.max() >= K):
            raise ValueError(f"Labels must lie in 0..{K - 1}")
        counts = np.bincount(tau, minlength=K).astype(np.int64)
        edge_counts = block_edge_counts(A, tau, K)
        neighbor_counts = (A.entries.astype(np.int64) @ one_hot(tau, K)).astype(np.int64)
        return cls(
            tau=tau,
            nu=nu,
            counts=counts,
            loglik=log_likelihood_from_counts(edge_counts, counts, nu),
            neighbor_counts=neighbor_counts,
            edge_counts=edge_counts,
        )

    @property
    def K(self) -> int:
        return int(self.nu.shape[0])


@dataclass(frozen=True)
class ChainInit:
    """Starting point of a chain."""

    tau0: np.ndarray
    nu0: np.ndarray


@dataclass(frozen=True)
class ChainSchedule:
    """Iteration count and thinning.

    burn_in is advisory: the trace keeps every thinned sample and evaluation
    discards those recorded before burn_in. None defers the choice to the
    convergence diagnostic.
    """

    iters: int = DEFAULT_ITERS
    burn_in: Optional[int] = None
    thin: int = 1

    def __post_init__(self) -> None:
        if self.iters < 0:
            raise ConfigError(f"iters must be non-negative, got {self.iters}")
        if self.thin < 1:
            raise ConfigError(f"thin must be at least 1, got {self.thin}")
        if self.burn_in is not None and not 0 <= self.burn_in <= self.iters:
            raise ConfigError(f"burn_in must lie in [0, {self.iters}], got {self.burn_in}")


@dataclass
class ChainTrace:
    """Recorded output of one chain.

    tau_samples and nu_samples hold iteration 0 and every thin-th iteration after
    it; misassign_series and loglik_series hold every iteration.
    """

    tau_samples: np.ndarray
    nu_samples: np.ndarray
    iterations: np.ndarray
    accept_count: int
    propose_count: int
    misassign_series: np.ndarray
    loglik_series: np.ndarray
    variant: ModelVariant
    seed: Optional[int] = None
    burn_in: Optional[int] = None
    final_state: Optional[McmcState] = field(default=None, repr=False)

    @property
    def acceptance_rate(self) -> float:
        """Metropolis acceptance rate; NaN when no proposals were made."""
        if self.propose_count == 0:
            return float("nan")
        return self.accept_count / self.propose_count

    @property
    def n(self) -> int:
        return int(self.tau_samples.shape[1])


def _known_log_rho(prior: PriorSpec) -> Optional[np.ndarray]:
    if not prior.uses_known_rho:
        return None
    with np.errstate(divide="ignore"):
        return np.log(prior.rho)


def _conditional_log_weights(
    state: McmcState,
    prior: PriorSpec,
    i: int,
    log_p: np.ndarray,
    log_q: np.ndarray,
    log_rho: Optional[np.ndarray],
) -> Tuple[np.ndarray, np.ndarray]:
    """Unnormalized log full conditional of tau_i, with its likelihood part.

    Known rho adds log rho_k. Under the Dirichlet(theta) marginal the prior weight
    is Gamma(theta_k + T_k + 1) / Gamma(theta_k + T_k) = theta_k + T_k, where T
    counts the other vertices only.

    Returns:
        (likelihood contribution per block, full log weight per block)
    """
    m = state.neighbor_counts[i]
    others = state.counts.copy()
    others[state.tau[i]] -= 1
    contrib = log_p @ m + log_q @ (others - m)
    prior_part = log_rho if log_rho is not None else np.log(prior.theta + others)
    return contrib, contrib + prior_part


def label_conditional(state: McmcState, prior: PriorSpec, i: int) -> np.ndarray:
    """Full conditional probabilities of tau_i given every other label and nu."""
    log_p, log_q = block_log_probabilities(state.nu)
    _, log_weights = _conditional_log_weights(state, prior, i, log_p, log_q, _known_log_rho(prior))
    return np.exp(log_weights - logsumexp(log_weights))


def gibbs_update_tau(
    state: McmcState, A: AdjacencyMatrix, prior: PriorSpec, rng: np.random.Generator
) -> McmcState:
    """Resample every label from its full conditional, in vertex order.

    The state is updated in place and returned.
    """
    n = len(state.tau)
    log_p, log_q = block_log_probabilities(state.nu)
    log_rho = _known_log_rho(prior)
    uniforms = rng.random(n)
    columns = A.entries

    for i in range(n):
        old = state.tau[i]
        m = state.neighbor_counts[i]
        contrib, log_weights = _conditional_log_weights(state, prior, i, log_p, log_q, log_rho)
        weights = np.exp(log_weights - log_weights.max())
        cumulative = np.cumsum(weights)
        new = int(np.searchsorted(cumulative, uniforms[i] * cumulative[-1], side="right"))
        new = min(new, len(weights) - 1)
        if new == old:
            continue

        state.edge_counts[old, :] -= m
        state.edge_counts[:, old] -= m
        state.edge_counts[new, :] += m
        state.edge_counts[:, new] += m
        column = columns[:, i]
        state.neighbor_counts[:, old] -= column
        state.neighbor_counts[:, new] += column
        state.loglik += float(contrib[new] - contrib[old])
        state.counts[old] -= 1
        state.counts[new] += 1
        state.tau[i] = new

    return state


def acceptance_probability(state: McmcState, nu_proposal: np.ndarray) -> float:
    """min(1, f(A | tau, nu_proposal) / f(A | tau, nu)) for the current labels."""
    proposal_loglik = log_likelihood_from_counts(state.edge_counts, state.counts, nu_proposal)
    return float(min(1.0, np.exp(proposal_loglik - state.loglik)))


def metropolis_update_nu(
    state: McmcState, A: AdjacencyMatrix, prior: PriorSpec, rng: np.random.Generator
) -> McmcState:
    """One independence Metropolis step on nu with the truncated prior as proposal.

    The prior terms cancel in the acceptance ratio, leaving the likelihood ratio.
    The state is updated in place and returned.

    Raises:
        ValueError: the prior is EXACT
        RejectionBudgetExhaustedError: the proposal could not be drawn
    """
    if not prior.samples_nu:
        raise ValueError("The exact model does not update nu")
    proposal = draw_prior_nu(prior, rng).nu
    proposal_loglik = log_likelihood_from_counts(state.edge_counts, state.counts, proposal)
    u = rng.random()
    state.proposed += 1
    if np.log(u) < proposal_loglik - state.loglik:
        state.nu = proposal
        state.loglik = proposal_loglik
        state.accepted += 1
    return state


def initialize_chain(
    prior: PriorSpec,
    tau_hat: np.ndarray,
    rng: np.random.Generator,
    init_prior: Optional[PriorSpec] = None,
) -> ChainInit:
    """Starting point for each regime.

    EXACT: tau ~ Categorical(rho) and the true nu. GOLD and ASGE: the GMM labels
    and a draw from the regime's own prior. FLAT: the GMM labels and a draw from
    init_prior, the ASGE prior fitted to the same embedding.

    Raises:
        ConfigError: FLAT without init_prior
    """
    tau_hat = np.asarray(tau_hat, dtype=np.int64)
    if prior.variant is ModelVariant.EXACT:
        return ChainInit(
            tau0=sample_block_memberships(len(tau_hat), prior.rho, rng),
            nu0=np.asarray(prior.nu, dtype=float),
        )
    if prior.variant is ModelVariant.FLAT:
        if init_prior is None:
            raise ConfigError("The flat model is initialized from the ASGE prior; pass init_prior")
        return ChainInit(tau0=tau_hat.copy(), nu0=draw_prior_nu(init_prior, rng).nu)
    return ChainInit(tau0=tau_hat.copy(), nu0=draw_prior_nu(prior, rng).nu)


def align_labels_to_nu(A: AdjacencyMatrix, tau: np.ndarray, nu: np.ndarray) -> np.ndarray:
    """Relabel tau by the block permutation maximizing the likelihood under nu.

    Searches all K! permutations, so K is limited to 8; larger K returns tau unchanged.
    """
    tau = np.asarray(tau, dtype=np.int64)
    K = nu.shape[0]
    if K > 8:
        logger.debug(f"Skipping likelihood alignment for K={K}")
        return tau.copy()
    edges = block_edge_counts(A, tau, K)
    sizes = np.bincount(tau, minlength=K)

    best_perm = np.arange(K)
    best_loglik = -np.inf
    for perm in itertools.permutations(range(K)):
        perm_array = np.array(perm)
        permuted_edges = np.empty_like(edges)
        permuted_edges[np.ix_(perm_array, perm_array)] = edges
        permuted_sizes = np.empty_like(sizes)
        permuted_sizes[perm_array] = sizes
        loglik = log_likelihood_from_counts(permuted_edges, permuted_sizes, nu)
        if loglik > best_loglik:
            best_loglik, best_perm = loglik, perm_array
    return best_perm[tau]


def run_chain(
    A: AdjacencyMatrix,
    prior: PriorSpec,
    init: ChainInit,
    schedule: Optional[ChainSchedule] = None,
    truth: Optional[np.ndarray] = None,
    rng: Optional[np.random.Generator] = None,
    seed: Optional[int] = None,
) -> ChainTrace:
    """Run one Metropolis-within-Gibbs chain.

    Args:
        A: observed graph
        prior: prior regime
        init: starting labels and latent positions
        schedule: iteration count and thinning
        truth: true labels; when given the per-iteration misassignment is recorded
        rng: random generator; built from seed when omitted
        seed: seed recorded in the trace (and used when rng is omitted)

    Returns:
        ChainTrace whose first sample is the initial state
    """
    schedule = schedule or ChainSchedule()
    rng = rng if rng is not None else np.random.default_rng(seed)
    nu0 = np.asarray(init.nu0, dtype=float)
    if nu0.shape != (prior.K, prior.d):
        raise ValueError(f"Initial nu has shape {nu0.shape}, expected {(prior.K, prior.d)}")
    if prior.samples_nu and not constraint_check(nu0, prior.constraint_mode):
        logger.debug("Initial nu lies outside the constraint set")

    state = McmcState.initial(A, init.tau0, nu0)
    K = prior.K
    tau_samples: List[np.ndarray] = [state.tau.copy()]
    nu_samples: List[np.ndarray] = [state.nu.copy()]
    iterations: List[int] = [0]
    loglik_series: List[float] = [state.loglik]
    misassign_series: List[float] = []
    if truth is not None:
        truth = np.asarray(truth, dtype=np.int64)
        misassign_series.append(misassignment_rate(state.tau, truth, K).error)

    for t in range(1, schedule.iters + 1):
        gibbs_update_tau(state, A, prior, rng)
        if prior.samples_nu:
            metropolis_update_nu(state, A, prior, rng)
        loglik_series.append(state.loglik)
        if truth is not None:
            misassign_series.append(misassignment_rate(state.tau, truth, K).error)
        if t % schedule.thin == 0:
            tau_samples.append(state.tau.copy())
            nu_samples.append(state.nu.copy())
            iterations.append(t)
        if t % _PROGRESS_EVERY == 0:
            logger.debug(
                f"{prior.variant.value} chain iteration {t}/{schedule.iters}, "
                f"loglik {state.loglik:.3f}, accepted {state.accepted}/{state.proposed}"
            )

    return ChainTrace(
        tau_samples=np.array(tau_samples),
        nu_samples=np.array(nu_samples),
        iterations=np.array(iterations),
        accept_count=state.accepted,
        propose_count=state.proposed,
        misassign_series=np.array(misassign_series),
        loglik_series=np.array(loglik_series),
        variant=prior.variant,
        seed=seed,
        burn_in=schedule.burn_in,
        final_state=state,
    )
