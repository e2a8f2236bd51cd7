"""Gaussian mixture EM on embedded points and the empirical Bayes prior it yields."""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from sbm_eb.core.exceptions import DegenerateClusterError
from sbm_eb.samplers.priors import ConstraintMode, PriorSpec

logger = logging.getLogger(__name__)

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class GmmOptions:
    """EM settings.

    Attributes:
        restarts: number of k-means++ initializations
        max_iters: EM iteration cap per restart
        tol: relative log-likelihood change that declares convergence
        reg: diagonal regularization, as a fraction of trace(S)/d of the data covariance S
    """

    restarts: int = 10
    max_iters: int = 500
    tol: float = 1e-8
    reg: float = 1e-9


@dataclass(frozen=True)
class GmmFit:
    """Fitted full-covariance Gaussian mixture, components sorted by ||mean||^2 ascending."""

    means: np.ndarray
    covariances: np.ndarray
    weights: np.ndarray
    responsibilities: np.ndarray
    hard_labels: np.ndarray
    loglik_trace: np.ndarray
    converged: bool = True

    @property
    def K(self) -> int:
        return int(self.means.shape[0])

    @property
    def d(self) -> int:
        return int(self.means.shape[1])

    @property
    def loglik(self) -> float:
        return float(self.loglik_trace[-1])


def _kmeans_plus_plus(points: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = [points[rng.integers(n)]]
    closest = np.sum((points - centers[0]) ** 2, axis=1)
    for _ in range(1, K):
        total = closest.sum()
        if total > 0:
            index = rng.choice(n, p=closest / total)
        else:
            index = rng.integers(n)
        centers.append(points[index])
        closest = np.minimum(closest, np.sum((points - points[index]) ** 2, axis=1))
    return np.array(centers)


def _estimate_log_gaussian(points: np.ndarray, means: np.ndarray, covariances: np.ndarray) -> np.ndarray:
    n, d = points.shape
    log_prob = np.empty((n, len(means)))
    for k, (mean, cov) in enumerate(zip(means, covariances)):
        chol = linalg.cholesky(cov, lower=True)
        solved = linalg.solve_triangular(chol, (points - mean).T, lower=True)
        log_det = 2.0 * np.sum(np.log(np.diag(chol)))
        log_prob[:, k] = -0.5 * (d * _LOG_2PI + log_det + np.sum(solved**2, axis=0))
    return log_prob


def _m_step(points: np.ndarray, resp: np.ndarray, reg_value: float, min_mass: float):
    masses = resp.sum(axis=0)
    if np.any(masses < min_mass):
        raise DegenerateClusterError(
            f"Component mass {masses.min():.3g} below the minimum {min_mass:.3g}"
        )
    weights = masses / masses.sum()
    means = (resp.T @ points) / masses[:, None]
    d = points.shape[1]
    covariances = np.empty((len(masses), d, d))
    for k in range(len(masses)):
        centered = points - means[k]
        cov = (resp[:, k, None] * centered).T @ centered / masses[k]
        covariances[k] = (cov + cov.T) / 2.0 + reg_value * np.eye(d)
    return weights, means, covariances


def _run_em(
    points: np.ndarray, K: int, opts: GmmOptions, reg_value: float, min_mass: float, rng: np.random.Generator
) -> GmmFit:
    centers = _kmeans_plus_plus(points, K, rng)
    nearest = np.argmin(((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2), axis=1)
    resp = np.zeros((points.shape[0], K))
    resp[np.arange(points.shape[0]), nearest] = 1.0
    weights, means, covariances = _m_step(points, resp, reg_value, min_mass)

    trace = []
    converged = False
    for _ in range(opts.max_iters):
        weighted = _estimate_log_gaussian(points, means, covariances) + np.log(weights)
        log_norm = logsumexp(weighted, axis=1)
        loglik = float(log_norm.sum())
        resp = np.exp(weighted - log_norm[:, None])
        trace.append(loglik)
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) <= opts.tol * abs(trace[-1]):
            converged = True
            break
        weights, means, covariances = _m_step(points, resp, reg_value, min_mass)

    return GmmFit(
        means=means,
        covariances=covariances,
        weights=weights,
        responsibilities=resp,
        hard_labels=np.argmax(resp, axis=1),
        loglik_trace=np.array(trace),
        converged=converged,
    )


def _sort_components(fit: GmmFit) -> GmmFit:
    order = np.argsort(np.sum(fit.means**2, axis=1), kind="stable")
    resp = fit.responsibilities[:, order]
    return GmmFit(
        means=fit.means[order],
        covariances=fit.covariances[order],
        weights=fit.weights[order],
        responsibilities=resp,
        hard_labels=np.argmax(resp, axis=1),
        loglik_trace=fit.loglik_trace,
        converged=fit.converged,
    )


def fit_gmm(
    points: np.ndarray,
    K: int,
    opts: Optional[GmmOptions] = None,
    rng: Optional[np.random.Generator] = None,
) -> GmmFit:
    """Fit a K-component full-covariance Gaussian mixture by EM.

    Each restart is seeded by k-means++ from its own child generator; the restart
    with the highest final log-likelihood is returned.

    Args:
        points: n x d data
        K: number of components
        opts: EM settings
        rng: random generator

    Returns:
        GmmFit with components ordered by squared mean norm, ascending

    Raises:
        DegenerateClusterError: fewer than K points, or every restart collapsed a component
    """
    opts = opts or GmmOptions()
    rng = rng if rng is not None else np.random.default_rng()
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    n, d = points.shape
    if n < K:
        raise DegenerateClusterError(f"Need at least K={K} points, got {n}")

    data_cov = np.atleast_2d(np.cov(points, rowvar=False, bias=True))
    reg_value = opts.reg * float(np.trace(data_cov)) / d
    # components cannot all reach d + 1 points on tiny samples
    min_mass = float(d + 1) if n >= K * (d + 1) else 0.5

    best: Optional[GmmFit] = None
    failures = 0
    for restart, child in enumerate(rng.spawn(opts.restarts)):
        try:
            fit = _run_em(points, K, opts, reg_value, min_mass, child)
        except (DegenerateClusterError, linalg.LinAlgError) as e:
            failures += 1
            logger.debug(f"EM restart {restart} failed: {e}")
            continue
        if best is None or fit.loglik > best.loglik:
            best = fit

    if best is None:
        raise DegenerateClusterError(f"All {opts.restarts} EM restarts produced degenerate clusters")
    if failures:
        logger.debug(f"{failures}/{opts.restarts} EM restarts were degenerate")
    return _sort_components(best)


def empirical_prior_from_fit(
    fit: GmmFit,
    constraint_mode: ConstraintMode = ConstraintMode.HOMOPHILIC,
    theta: Optional[np.ndarray] = None,
) -> PriorSpec:
    """ASGE prior with the fitted means and covariances as hyperparameters."""
    return PriorSpec.asge(
        mu_hat=fit.means,
        sigma_hat=fit.covariances,
        theta=theta,
        constraint_mode=constraint_mode,
    )
