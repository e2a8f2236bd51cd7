"""Adjacency spectral embedding and the limiting covariance of the embedding.

The limiting covariance formula assumes the second moment matrix has distinct
eigenvalues; it is computed regardless when they repeat.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Union

import numpy as np
from scipy import linalg

from sbm_eb.core.exceptions import InsufficientPositiveSpectrumError, SingularDeltaError
from sbm_eb.core.sbm_model import AdjacencyMatrix, LatentMatrix, fix_column_signs

logger = logging.getLogger(__name__)

POSITIVE_EIGENVALUE_TOL = 1e-8
MAX_DELTA_CONDITION = 1e12


@dataclass(frozen=True)
class EmbeddedPoints:
    """Adjacency spectral embedding X_hat = U_A S_A^{1/2}.

    Attributes:
        X_hat: n x d estimated latent positions
        eigenvalues: retained eigenvalues of A, non-increasing
        d: embedding dimension
    """

    X_hat: np.ndarray
    eigenvalues: np.ndarray
    d: int

    @property
    def n(self) -> int:
        return int(self.X_hat.shape[0])


@dataclass(frozen=True)
class TheoreticalMixture:
    """Limiting Gaussian mixture of the embedding for an SBM, in the UPCA basis."""

    nu: np.ndarray
    rho: np.ndarray
    delta: np.ndarray
    sigmas: List[np.ndarray] = field(default_factory=list)

    def scaled_covariances(self, n: int) -> List[np.ndarray]:
        """Covariances of a single embedded point at graph size n (Sigma_k / n)."""
        return [sigma / n for sigma in self.sigmas]


def adjacency_spectral_embedding(A: Union[AdjacencyMatrix, np.ndarray], d: int) -> EmbeddedPoints:
    """Embed a graph into R^d using its d algebraically largest eigenpairs.

    Args:
        A: adjacency matrix, or any symmetric matrix such as P = X X^T
        d: embedding dimension

    Raises:
        InsufficientPositiveSpectrumError: fewer than d eigenvalues exceed 1e-8
    """
    matrix = A.as_float() if isinstance(A, AdjacencyMatrix) else np.asarray(A, dtype=float)
    n = matrix.shape[0]
    if d < 1 or d > n:
        raise ValueError(f"Embedding dimension must be in [1, {n}], got {d}")

    eigenvalues, eigenvectors = linalg.eigh(matrix, subset_by_index=[n - d, n - 1])
    eigenvalues = eigenvalues[::-1]
    eigenvectors = eigenvectors[:, ::-1]
    if np.any(eigenvalues <= POSITIVE_EIGENVALUE_TOL):
        positive = int(np.sum(eigenvalues > POSITIVE_EIGENVALUE_TOL))
        raise InsufficientPositiveSpectrumError(
            f"Only {positive} of the top {d} eigenvalues are positive"
        )

    X_hat = fix_column_signs(eigenvectors) * np.sqrt(eigenvalues)
    logger.debug(f"Embedded {n} vertices into R^{d}, eigenvalues {eigenvalues}")
    return EmbeddedPoints(X_hat=X_hat, eigenvalues=eigenvalues, d=d)


def _upca_rotation(second_moment: np.ndarray) -> np.ndarray:
    """Rotation V such that (X V)^T (X V) is diagonal with non-increasing entries."""
    eigenvalues, V = np.linalg.eigh(second_moment)
    order = np.argsort(eigenvalues)[::-1]
    return V[:, order]


def upca(X: Union[LatentMatrix, np.ndarray]) -> np.ndarray:
    """Uncentered principal components X_tilde = U_P S_P^{1/2} of P = X X^T.

    Computed as X V with V from the eigendecomposition of X^T X, which equals
    U_P S_P^{1/2} without forming the n x n matrix P.
    """
    X = X.X if isinstance(X, LatentMatrix) else np.asarray(X, dtype=float)
    rotated = X @ _upca_rotation(X.T @ X)
    return fix_column_signs(rotated)


def upca_basis(nu: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Rotate block positions nu into the UPCA basis of a graph with block weights.

    Weights may be block counts or proportions; the basis is the same.
    """
    nu = np.asarray(nu, dtype=float)
    weights = np.asarray(weights, dtype=float)
    second_moment = nu.T @ (weights[:, None] * nu)
    rotated = nu @ _upca_rotation(second_moment)
    populated = rotated[weights > 0]
    pivots = np.argmax(np.abs(populated), axis=0)
    signs = np.sign(populated[pivots, np.arange(rotated.shape[1])])
    signs[signs == 0] = 1.0
    return rotated * signs


def second_moment_matrix(nu: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Delta = sum_k rho_k nu_k nu_k^T."""
    nu = np.asarray(nu, dtype=float)
    return nu.T @ (np.asarray(rho, dtype=float)[:, None] * nu)


def limiting_covariance(nu: np.ndarray, rho: np.ndarray, k: int) -> np.ndarray:
    """Limiting covariance Sigma_k of sqrt(n)(X_hat_i - nu_k) given X_i = nu_k.

    Sigma_k = Delta^-1 [sum_l rho_l nu_l nu_l^T (p_kl - p_kl^2)] Delta^-1 with
    p_kl = <nu_k, nu_l>.

    Raises:
        SingularDeltaError: the condition number of Delta exceeds 1e12
    """
    nu = np.asarray(nu, dtype=float)
    rho = np.asarray(rho, dtype=float)
    delta = second_moment_matrix(nu, rho)
    if np.linalg.cond(delta) > MAX_DELTA_CONDITION:
        raise SingularDeltaError("Second moment matrix is singular or nearly so")

    p = nu @ nu[k]
    weights = rho * (p - p**2)
    middle = nu.T @ (weights[:, None] * nu)
    delta_inv = np.linalg.inv(delta)
    sigma = delta_inv @ middle @ delta_inv
    return (sigma + sigma.T) / 2.0


def theoretical_mixture(nu: np.ndarray, rho: np.ndarray) -> TheoreticalMixture:
    """Limiting mixture for an SBM with block positions nu and proportions rho."""
    nu_upca = upca_basis(nu, rho)
    sigmas = [limiting_covariance(nu_upca, rho, k) for k in range(len(rho))]
    return TheoreticalMixture(
        nu=nu_upca,
        rho=np.asarray(rho, dtype=float),
        delta=second_moment_matrix(nu_upca, rho),
        sigmas=sigmas,
    )


def procrustes_align(source: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Orthogonal Q minimizing ||source Q - target||_F."""
    source = np.asarray(source, dtype=float)
    target = np.asarray(target, dtype=float)
    if source.shape != target.shape:
        raise ValueError(f"Shape mismatch: {source.shape} vs {target.shape}")
    rotation, _ = linalg.orthogonal_procrustes(source, target)
    return rotation
