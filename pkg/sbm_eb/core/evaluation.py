"""Error metrics, convergence diagnostics and paired comparisons.

Misassignment is always reported after aligning labels by the permutation that
minimizes it, since block labels are only identified up to relabeling.
"""

import itertools
import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Dict, Optional, Sequence

import numpy as np
from scipy import stats
from scipy.optimize import linear_sum_assignment

from sbm_eb.core.exceptions import AllTiesError, InsufficientLengthError

if TYPE_CHECKING:
    from sbm_eb.samplers.posterior_mcmc import ChainTrace

logger = logging.getLogger(__name__)

EXHAUSTIVE_ALIGNMENT_MAX_K = 8
RHAT_THRESHOLD = 1.1
BURN_IN_FALLBACK_FRACTION = 0.2
DEGENERATE_VARIANCE_RTOL = 1e-12


@dataclass(frozen=True)
class AlignmentResult:
    """Best label alignment between an estimate and a reference.

    Attributes:
        permutation: permutation[k] is the estimated label matched to reference label k
        error: fraction of vertices misassigned under that matching
        confusion: confusion[k, l] counts vertices with reference label k and estimated label l
    """

    permutation: np.ndarray
    error: float
    confusion: np.ndarray

    def relabel(self, tau_est: np.ndarray) -> np.ndarray:
        """Map estimated labels onto the reference labels they were matched to."""
        inverse = np.empty_like(self.permutation)
        inverse[self.permutation] = np.arange(len(self.permutation))
        return inverse[np.asarray(tau_est)]


@dataclass(frozen=True)
class ErrorSummary:
    """Location and spread of a set of replicate errors."""

    count: int
    mean: float
    median: float
    standard_error: float
    ci_low: float
    ci_high: float

    def as_dict(self) -> Dict[str, float]:
        return {
            "count": self.count,
            "mean": self.mean,
            "median": self.median,
            "se": self.standard_error,
            "ci95_low": self.ci_low,
            "ci95_high": self.ci_high,
        }


def confusion_matrix(tau_true: np.ndarray, tau_est: np.ndarray, K: int) -> np.ndarray:
    confusion = np.zeros((K, K), dtype=np.int64)
    np.add.at(confusion, (np.asarray(tau_true), np.asarray(tau_est)), 1)
    return confusion


def misassignment_rate(tau_est: np.ndarray, tau_true: np.ndarray, K: int) -> AlignmentResult:
    """Fraction of misassigned vertices, minimized over label permutations.

    Exhaustive over all K! permutations for K <= 8, Hungarian assignment otherwise.
    """
    tau_est = np.asarray(tau_est)
    tau_true = np.asarray(tau_true)
    if tau_est.shape != tau_true.shape:
        raise ValueError(f"Label vectors differ in length: {tau_est.shape} vs {tau_true.shape}")
    n = len(tau_true)
    confusion = confusion_matrix(tau_true, tau_est, K)

    if K <= EXHAUSTIVE_ALIGNMENT_MAX_K:
        best_matched = -1
        best_perm: Sequence[int] = tuple(range(K))
        rows = np.arange(K)
        for perm in itertools.permutations(range(K)):
            matched = int(confusion[rows, perm].sum())
            if matched > best_matched:
                best_matched, best_perm = matched, perm
        permutation = np.array(best_perm)
    else:
        _, permutation = linear_sum_assignment(-confusion)
        best_matched = int(confusion[np.arange(K), permutation].sum())

    error = 1.0 - best_matched / n if n else 0.0
    return AlignmentResult(permutation=permutation, error=error, confusion=confusion)


def gelman_rubin(series: Sequence[Sequence[float]], min_length: int = 10) -> float:
    """Potential scale reduction factor R_hat over parallel chains.

    R_hat = sqrt(((L - 1)/L * W + B/L) / W) with W the mean within-chain variance
    and B = L times the variance of the chain means. Returns inf when W = 0 < B
    and 1 when W = B = 0.

    Raises:
        InsufficientLengthError: fewer than 2 chains, unequal lengths, or chains
            shorter than min_length (never below 2)
    """
    chains = np.asarray(series, dtype=float)
    if chains.ndim != 2 or chains.shape[0] < 2:
        raise InsufficientLengthError("Gelman-Rubin needs at least 2 equal-length chains")
    length = chains.shape[1]
    if length < max(2, min_length):
        raise InsufficientLengthError(
            f"Chains have {length} samples, need at least {max(2, min_length)}"
        )

    within = float(np.mean(np.var(chains, axis=1, ddof=1)))
    between = float(length * np.var(np.mean(chains, axis=1), ddof=1))
    # variances of constant chains come back as rounding noise, not exact zeros
    tolerance = DEGENERATE_VARIANCE_RTOL * max(1.0, float(np.abs(chains).max())) ** 2
    if np.ptp(chains, axis=1).max() == 0.0 or within <= tolerance:
        return 1.0 if between <= tolerance * length else math.inf
    pooled = (length - 1) / length * within + between / length
    return math.sqrt(pooled / within)


def convergence_iteration(
    series: Sequence[Sequence[float]],
    threshold: float = RHAT_THRESHOLD,
    min_length: int = 10,
    stride: int = 10,
) -> Optional[int]:
    """First checkpoint t at which R_hat over series[:, :t] drops below threshold."""
    chains = np.asarray(series, dtype=float)
    total = chains.shape[1]
    for t in range(max(2, min_length), total + 1, max(1, stride)):
        if gelman_rubin(chains[:, :t], min_length=min_length) < threshold:
            return t
    return None


def choose_burn_in(
    series: Sequence[Sequence[float]],
    threshold: float = RHAT_THRESHOLD,
    stride: int = 10,
) -> int:
    """Burn-in from the convergence checkpoint, or 20% of the chain if never converged."""
    chains = np.asarray(series, dtype=float)
    total = chains.shape[1]
    converged_at = None
    if chains.shape[0] >= 2 and total >= 10:
        converged_at = convergence_iteration(chains, threshold=threshold, stride=stride)
    if converged_at is None:
        logger.debug(f"Chains did not reach R_hat < {threshold}; using 20% burn-in")
        return int(BURN_IN_FALLBACK_FRACTION * total)
    return converged_at


def posterior_tau_estimate(
    traces: Sequence["ChainTrace"], burn_in: int, tau_ref: np.ndarray, K: int
) -> np.ndarray:
    """Per-vertex marginal posterior mode over retained, aligned samples.

    Every sample recorded at an iteration >= burn_in is aligned to tau_ref before
    voting. Ties go to the lower block index.
    """
    tau_ref = np.asarray(tau_ref)
    votes = np.zeros((len(tau_ref), K), dtype=np.int64)
    rows = np.arange(len(tau_ref))
    retained = 0
    for trace in traces:
        keep = np.asarray(trace.iterations) >= burn_in
        for sample in np.asarray(trace.tau_samples)[keep]:
            aligned = misassignment_rate(sample, tau_ref, K).relabel(sample)
            votes[rows, aligned] += 1
            retained += 1
    if retained == 0:
        raise InsufficientLengthError(f"No samples recorded at or after burn-in {burn_in}")
    return np.argmax(votes, axis=1)


def paired_sign_test(errors_a: Sequence[float], errors_b: Sequence[float]) -> float:
    """Exact two-sided binomial sign test p-value for paired errors, ties dropped.

    Raises:
        AllTiesError: every pair is tied
    """
    a = np.asarray(errors_a, dtype=float)
    b = np.asarray(errors_b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"Paired samples differ in length: {a.shape} vs {b.shape}")
    diffs = a - b
    untied = diffs[diffs != 0]
    if untied.size == 0:
        raise AllTiesError("Every pair is tied; the sign test is undefined")
    wins = int(np.sum(untied < 0))
    p_value = stats.binomtest(wins, n=int(untied.size), p=0.5, alternative="two-sided").pvalue
    return float(min(1.0, p_value))


def summarize_errors(errors: Sequence[float]) -> ErrorSummary:
    """Mean, median and 95% normal-approximation confidence interval."""
    values = np.asarray(errors, dtype=float)
    if values.size == 0:
        nan = float("nan")
        return ErrorSummary(0, nan, nan, nan, nan, nan)
    mean = float(values.mean())
    se = float(values.std(ddof=1) / math.sqrt(values.size)) if values.size > 1 else 0.0
    return ErrorSummary(
        count=int(values.size),
        mean=mean,
        median=float(np.median(values)),
        standard_error=se,
        ci_low=mean - 1.96 * se,
        ci_high=mean + 1.96 * se,
    )
