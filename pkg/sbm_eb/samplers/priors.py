"""Prior regimes for the latent positions and the constraint set they live on.

Four regimes are supported:

- EXACT: nu and rho known; only tau is sampled.
- GOLD: rho known; nu ~ N(nu*_k, Sigma_k / n) truncated to the constraint set,
  with nu* and Sigma_k from the limiting distribution of the embedding.
- ASGE: nu ~ N(mu_hat_k, Sigma_hat_k) truncated to the constraint set, with the
  hyperparameters fitted by EM on the spectral embedding.
- FLAT: nu uniform on the constraint set.

ASGE and FLAT marginalize rho under a symmetric Dirichlet(theta) prior.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from sbm_eb.core.exceptions import ConfigError, RejectionBudgetExhaustedError

logger = logging.getLogger(__name__)

CONSTRAINT_TOL = 1e-10
MAX_REJECTION_ATTEMPTS = 1_000_000
_INITIAL_BATCH = 64
_MAX_BATCH = 8192


class ModelVariant(Enum):
    """Prior regime for the latent positions."""

    EXACT = "exact"
    GOLD = "gold"
    ASGE = "asge"
    FLAT = "flat"


class ConstraintMode(Enum):
    """Constraint set for nu.

    HOMOPHILIC: 0 <= <nu_i, nu_j> <= <nu_i, nu_i> <= 1 and norms non-decreasing in the block index.
    BOX: 0 <= <nu_i, nu_j> <= 1 only.
    """

    HOMOPHILIC = "homophilic"
    BOX = "box"


@dataclass(frozen=True)
class PriorSpec:
    """Prior on (tau, nu) for one of the four regimes.

    Attributes:
        variant: prior regime
        K: number of blocks
        d: latent dimension
        nu: true latent positions (EXACT)
        rho: known block proportions (EXACT, GOLD)
        means: K x d Gaussian centers (GOLD nu*, ASGE mu_hat)
        covariances: K x d x d Gaussian covariances (GOLD Sigma*, ASGE Sigma_hat)
        theta: Dirichlet hyperparameter on rho (ASGE, FLAT)
        constraint_mode: active constraint set
    """

    variant: ModelVariant
    K: int
    d: int
    nu: Optional[np.ndarray] = None
    rho: Optional[np.ndarray] = None
    means: Optional[np.ndarray] = None
    covariances: Optional[np.ndarray] = None
    theta: Optional[np.ndarray] = None
    constraint_mode: ConstraintMode = ConstraintMode.HOMOPHILIC

    def __post_init__(self) -> None:
        theta = np.ones(self.K) if self.theta is None else np.asarray(self.theta, dtype=float)
        if theta.shape != (self.K,) or np.any(theta <= 0):
            raise ConfigError(f"theta must be {self.K} positive values, got {theta}")
        object.__setattr__(self, "theta", theta)

        if self.variant in (ModelVariant.EXACT, ModelVariant.GOLD):
            if self.rho is None:
                raise ConfigError(f"{self.variant.value} prior requires rho")
            object.__setattr__(self, "rho", np.asarray(self.rho, dtype=float))
        if self.variant is ModelVariant.EXACT:
            if self.nu is None:
                raise ConfigError("exact prior requires nu")
            object.__setattr__(self, "nu", np.asarray(self.nu, dtype=float))
        if self.variant in (ModelVariant.GOLD, ModelVariant.ASGE):
            self._check_gaussian()

    def _check_gaussian(self) -> None:
        if self.means is None or self.covariances is None:
            raise ConfigError(f"{self.variant.value} prior requires means and covariances")
        means = np.asarray(self.means, dtype=float)
        covariances = np.asarray(self.covariances, dtype=float)
        if means.shape != (self.K, self.d) or covariances.shape != (self.K, self.d, self.d):
            raise ConfigError(
                f"Expected means {(self.K, self.d)} and covariances {(self.K, self.d, self.d)}, "
                f"got {means.shape} and {covariances.shape}"
            )
        for k, cov in enumerate(covariances):
            if not np.allclose(cov, cov.T, rtol=1e-8, atol=1e-14):
                raise ConfigError(f"Covariance {k} is not symmetric")
            scale = max(float(np.abs(cov).max()), 1e-300)
            if np.linalg.eigvalsh(cov).min() < -1e-10 * scale:
                raise ConfigError(f"Covariance {k} is not positive semidefinite")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covariances", covariances)

    @classmethod
    def exact(cls, nu, rho, constraint_mode: ConstraintMode = ConstraintMode.HOMOPHILIC) -> "PriorSpec":
        nu = np.asarray(nu, dtype=float)
        return cls(ModelVariant.EXACT, nu.shape[0], nu.shape[1], nu=nu, rho=rho, constraint_mode=constraint_mode)

    @classmethod
    def gold(
        cls, nu_star, sigma_star, rho, constraint_mode: ConstraintMode = ConstraintMode.HOMOPHILIC
    ) -> "PriorSpec":
        nu_star = np.asarray(nu_star, dtype=float)
        return cls(
            ModelVariant.GOLD,
            nu_star.shape[0],
            nu_star.shape[1],
            rho=rho,
            means=nu_star,
            covariances=np.asarray(sigma_star, dtype=float),
            constraint_mode=constraint_mode,
        )

    @classmethod
    def asge(
        cls,
        mu_hat,
        sigma_hat,
        theta=None,
        constraint_mode: ConstraintMode = ConstraintMode.HOMOPHILIC,
    ) -> "PriorSpec":
        mu_hat = np.asarray(mu_hat, dtype=float)
        return cls(
            ModelVariant.ASGE,
            mu_hat.shape[0],
            mu_hat.shape[1],
            means=mu_hat,
            covariances=np.asarray(sigma_hat, dtype=float),
            theta=theta,
            constraint_mode=constraint_mode,
        )

    @classmethod
    def flat(
        cls, K: int, d: int, theta=None, constraint_mode: ConstraintMode = ConstraintMode.HOMOPHILIC
    ) -> "PriorSpec":
        return cls(ModelVariant.FLAT, K, d, theta=theta, constraint_mode=constraint_mode)

    @property
    def uses_known_rho(self) -> bool:
        """Whether the tau full conditional uses rho rather than the Dirichlet marginal."""
        return self.variant in (ModelVariant.EXACT, ModelVariant.GOLD)

    @property
    def samples_nu(self) -> bool:
        return self.variant is not ModelVariant.EXACT


@dataclass(frozen=True)
class PriorDraw:
    """A constrained prior draw and the raw candidates examined to obtain it."""

    nu: np.ndarray
    attempts: int

    @property
    def acceptance_fraction(self) -> float:
        return 1.0 / self.attempts


def _constraint_mask(candidates: np.ndarray, mode: ConstraintMode, tol: float) -> np.ndarray:
    """Vectorized constraint_check over a batch of shape (b, K, d)."""
    gram = np.einsum("bkd,bld->bkl", candidates, candidates)
    ok = np.all(gram >= -tol, axis=(1, 2)) & np.all(gram <= 1.0 + tol, axis=(1, 2))
    if mode is ConstraintMode.HOMOPHILIC:
        diagonal = np.diagonal(gram, axis1=1, axis2=2)
        ok &= np.all(gram <= diagonal[:, :, None] + tol, axis=(1, 2))
        ok &= np.all(np.diff(diagonal, axis=1) >= -tol, axis=1)
    return ok


def constraint_check(nu: np.ndarray, mode: ConstraintMode, tol: float = CONSTRAINT_TOL) -> bool:
    """Whether nu lies in the (closed) constraint set for the given mode."""
    nu = np.asarray(nu, dtype=float)
    return bool(_constraint_mask(nu[None, :, :], mode, tol)[0])


def _candidate_batch(prior: PriorSpec, size: int, rng: np.random.Generator) -> np.ndarray:
    if prior.variant is ModelVariant.FLAT:
        low = np.full((prior.K, prior.d), -1.0)
        low[:, 0] = 0.0
        candidates = rng.uniform(low, 1.0, size=(size, prior.K, prior.d))
        if prior.constraint_mode is ConstraintMode.HOMOPHILIC:
            norms = np.einsum("bkd,bkd->bk", candidates, candidates)
            order = np.argsort(norms, axis=1, kind="stable")
            candidates = np.take_along_axis(candidates, order[:, :, None], axis=1)
        return candidates

    columns = [
        rng.multivariate_normal(prior.means[k], prior.covariances[k], size=size, method="eigh")
        for k in range(prior.K)
    ]
    return np.stack(columns, axis=1)


def draw_prior_nu(
    prior: PriorSpec, rng: np.random.Generator, max_attempts: int = MAX_REJECTION_ATTEMPTS
) -> PriorDraw:
    """Rejection-sample nu from the prior truncated to its constraint set.

    Gaussian regimes draw each nu_k from its own component. FLAT draws from the box
    [0, 1] x [-1, 1]^(d-1) per row; in homophilic mode rows are sorted by norm before
    the check, a relabeling the exchangeable flat prior is invariant to.

    Raises:
        ValueError: the prior is EXACT
        RejectionBudgetExhaustedError: no candidate accepted within max_attempts
    """
    if not prior.samples_nu:
        raise ValueError("The exact prior has no distribution over nu")

    attempts = 0
    batch = _INITIAL_BATCH
    while attempts < max_attempts:
        size = min(batch, max_attempts - attempts)
        candidates = _candidate_batch(prior, size, rng)
        accepted = np.flatnonzero(_constraint_mask(candidates, prior.constraint_mode, CONSTRAINT_TOL))
        if accepted.size:
            first = int(accepted[0])
            return PriorDraw(nu=candidates[first], attempts=attempts + first + 1)
        attempts += size
        batch = min(batch * 2, _MAX_BATCH)

    raise RejectionBudgetExhaustedError(
        f"No {prior.variant.value} prior draw satisfied the {prior.constraint_mode.value} "
        f"constraints in {max_attempts} attempts"
    )


def sample_prior_nu(
    prior: PriorSpec, rng: np.random.Generator, max_attempts: int = MAX_REJECTION_ATTEMPTS
) -> np.ndarray:
    """Draw nu (K x d) from the truncated prior."""
    return draw_prior_nu(prior, rng, max_attempts).nu
