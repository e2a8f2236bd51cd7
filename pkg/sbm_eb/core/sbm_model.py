"""Stochastic blockmodel and random dot product graph model.

Domain types for SBM/RDPG graphs, the generative samplers, and the block
log-likelihood kernel shared by every posterior sampler.

Block labels are 0-based throughout the package; the text formats in
graph_io use 1-based labels.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional, Tuple

import numpy as np

from sbm_eb.core.exceptions import (
    ConfigError,
    DegenerateProbabilityError,
    InvalidConcentrationError,
    NotPSDError,
    ProbabilityOutOfRangeError,
    RankExceedsDError,
)

logger = logging.getLogger(__name__)

# Probabilities are clamped to [PROBABILITY_EPS, 1 - PROBABILITY_EPS] before logs
PROBABILITY_EPS = 1e-12
EIGENVALUE_TOL = 1e-8
B_FACTOR_TOL = 1e-10


def fix_column_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip columns so the largest-magnitude entry of each is positive."""
    vectors = np.array(vectors, dtype=float, copy=True)
    if vectors.size == 0:
        return vectors
    pivots = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivots, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


@dataclass(frozen=True)
class AdjacencyMatrix:
    """Symmetric, hollow, binary adjacency matrix stored densely.

    Attributes:
        entries: n x n uint8 array (read-only after construction)
    """

    entries: np.ndarray

    def __post_init__(self) -> None:
        entries = np.asarray(self.entries)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise ValueError(f"Adjacency matrix must be square, got {entries.shape}")
        if not np.isin(entries, (0, 1)).all():
            raise ValueError("Adjacency matrix entries must be 0 or 1")
        if not np.array_equal(entries, entries.T):
            raise ValueError("Adjacency matrix must be symmetric")
        if np.any(np.diag(entries) != 0):
            raise ValueError("Adjacency matrix must be hollow (zero diagonal)")
        stored = entries.astype(np.uint8, copy=True)
        stored.setflags(write=False)
        object.__setattr__(self, "entries", stored)

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[Tuple[int, int]]) -> "AdjacencyMatrix":
        """Build a graph on n vertices from undirected 0-based edges."""
        entries = np.zeros((n, n), dtype=np.uint8)
        for i, j in edges:
            if i == j:
                raise ValueError(f"Self-loop on vertex {i}")
            entries[i, j] = 1
            entries[j, i] = 1
        return cls(entries)

    @property
    def n(self) -> int:
        return int(self.entries.shape[0])

    @property
    def edge_count(self) -> int:
        return int(self.entries.sum()) // 2

    @property
    def density(self) -> float:
        pairs = self.n * (self.n - 1) / 2
        return self.edge_count / pairs if pairs else 0.0

    def degrees(self) -> np.ndarray:
        return self.entries.sum(axis=1).astype(np.int64)

    def edges(self) -> np.ndarray:
        """Return the edge list as an m x 2 array with i < j."""
        rows, cols = np.nonzero(np.triu(self.entries, k=1))
        return np.column_stack([rows, cols])

    def as_float(self) -> np.ndarray:
        return self.entries.astype(float)

    def subgraph(self, vertices: np.ndarray) -> "AdjacencyMatrix":
        return AdjacencyMatrix(self.entries[np.ix_(vertices, vertices)])


@dataclass(frozen=True)
class SbmParams:
    """Positive semidefinite SBM parameters (K, d, B, rho, nu)."""

    B: np.ndarray
    rho: np.ndarray
    nu: np.ndarray

    def __post_init__(self) -> None:
        B = np.asarray(self.B, dtype=float)
        rho = np.asarray(self.rho, dtype=float)
        nu = np.asarray(self.nu, dtype=float)
        if B.shape != (len(rho), len(rho)) or nu.shape[0] != len(rho):
            raise ConfigError(
                f"Inconsistent shapes: B {B.shape}, rho {rho.shape}, nu {nu.shape}"
            )
        if np.any(B < 0) or np.any(B > 1) or not np.allclose(B, B.T, atol=0):
            raise ConfigError("B must be symmetric with entries in [0, 1]")
        if np.any(rho <= 0) or abs(rho.sum() - 1.0) > 1e-10:
            raise ConfigError(f"rho must be positive and sum to 1, got {rho}")
        if not np.allclose(nu @ nu.T, B, atol=B_FACTOR_TOL, rtol=0):
            raise ConfigError("nu nu^T does not reproduce B")
        if len(np.unique(np.round(B, 12), axis=0)) != len(rho):
            raise ConfigError("Rows of B must be pairwise distinct")
        for name, value in (("B", B), ("rho", rho), ("nu", nu)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @classmethod
    def from_block_matrix(cls, B, rho, d: int) -> "SbmParams":
        """Factor B into latent positions of dimension d."""
        B = np.asarray(B, dtype=float)
        return cls(B=B, rho=np.asarray(rho, dtype=float), nu=latent_positions_from_B(B, d))

    @property
    def K(self) -> int:
        return int(len(self.rho))

    @property
    def d(self) -> int:
        return int(self.nu.shape[1])

    def expected_density(self) -> float:
        """Expected edge density rho^T B rho."""
        return float(self.rho @ self.B @ self.rho)

    def point_mass_sampler(self) -> "LatentSampler":
        return LatentSampler(kind=LatentKind.POINT_MASS, nu=self.nu, rho=self.rho)


class LatentKind(Enum):
    """Latent position distribution families."""

    POINT_MASS = "point_mass"
    DIRICHLET_MIXTURE = "dirichlet_mixture"


@dataclass(frozen=True)
class LatentMatrix:
    """Latent positions X (n x d) with the generating block labels, if any."""

    X: np.ndarray
    tau_true: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return int(self.X.shape[0])

    def edge_probability_matrix(self, clip: bool = False) -> np.ndarray:
        """Return P = X X^T, optionally clipped into [0, 1]."""
        P = self.X @ self.X.T
        if clip:
            return np.clip(P, 0.0, 1.0)
        return P


@dataclass(frozen=True)
class LatentSampler:
    """Mixture distribution F over latent positions.

    Attributes:
        kind: point masses at the rows of nu, or a mixture of Dirichlet(r * nu_k)
        nu: K x d component centers
        rho: K mixture weights
        r: Dirichlet concentration (DIRICHLET_MIXTURE only)
    """

    kind: LatentKind
    nu: np.ndarray
    rho: np.ndarray
    r: Optional[float] = None

    def sample(self, n: int, rng: np.random.Generator) -> LatentMatrix:
        if self.kind is LatentKind.DIRICHLET_MIXTURE:
            return sample_dirichlet_mixture_latents(n, self, rng)
        tau = sample_block_memberships(n, self.rho, rng)
        return LatentMatrix(X=np.asarray(self.nu, dtype=float)[tau], tau_true=tau)


def latent_positions_from_B(B, d: int) -> np.ndarray:
    """Factor a PSD block probability matrix as B = nu nu^T.

    Keeps the top-d eigenpairs of B; each eigenvector is oriented so that its
    largest-magnitude entry is positive.

    Raises:
        NotPSDError: an eigenvalue is below -1e-8
        RankExceedsDError: more than d eigenvalues exceed 1e-8
    """
    B = np.asarray(B, dtype=float)
    if B.ndim != 2 or B.shape[0] != B.shape[1] or not np.allclose(B, B.T):
        raise ConfigError(f"B must be a symmetric square matrix, got shape {B.shape}")
    if d < 1:
        raise ConfigError(f"Latent dimension must be positive, got {d}")
    eigenvalues, eigenvectors = np.linalg.eigh(B)
    if eigenvalues.min() < -EIGENVALUE_TOL:
        raise NotPSDError(f"B is not positive semidefinite (min eigenvalue {eigenvalues.min():.3g})")
    rank = int(np.sum(eigenvalues > EIGENVALUE_TOL))
    if rank > d:
        raise RankExceedsDError(f"B has rank {rank}, which exceeds d={d}")

    order = np.argsort(eigenvalues)[::-1]
    keep = order[: min(d, len(eigenvalues))]
    values = np.clip(eigenvalues[keep], 0.0, None)
    vectors = fix_column_signs(eigenvectors[:, keep])
    nu = vectors * np.sqrt(values)
    if nu.shape[1] < d:
        nu = np.hstack([nu, np.zeros((nu.shape[0], d - nu.shape[1]))])
    return nu


def sample_block_memberships(n: int, rho, rng: np.random.Generator) -> np.ndarray:
    """Draw n i.i.d. block labels from Categorical(rho)."""
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0) or abs(rho.sum() - 1.0) > 1e-8:
        raise ConfigError(f"rho must lie on the simplex, got {rho}")
    return rng.choice(len(rho), size=n, p=rho / rho.sum())


def sample_rdpg(latents: LatentMatrix, rng: np.random.Generator, clip: bool = False) -> AdjacencyMatrix:
    """Sample A_ij ~ Bernoulli(<X_i, X_j>) independently for i < j.

    Args:
        latents: latent positions
        rng: random generator
        clip: clamp dot products into [0, 1] instead of raising

    Raises:
        ProbabilityOutOfRangeError: a dot product lies outside [0, 1] and clip is False
    """
    P = latents.edge_probability_matrix()
    if clip:
        P = np.clip(P, 0.0, 1.0)
    elif P.size and (P.min() < -1e-12 or P.max() > 1 + 1e-12):
        raise ProbabilityOutOfRangeError(
            f"Dot products range over [{P.min():.4g}, {P.max():.4g}], outside [0, 1]"
        )
    n = latents.n
    upper = np.triu(rng.random((n, n)) < P, k=1)
    entries = (upper | upper.T).astype(np.uint8)
    return AdjacencyMatrix(entries)


def sample_dirichlet_mixture_latents(
    n: int, sampler: LatentSampler, rng: np.random.Generator
) -> LatentMatrix:
    """Draw X_i ~ sum_k rho_k Dirichlet(r * nu_k).

    Raises:
        InvalidConcentrationError: r <= 0 or some r * nu_k entry is not positive
    """
    if sampler.r is None or sampler.r <= 0:
        raise InvalidConcentrationError(f"Concentration r must be positive, got {sampler.r}")
    alphas = sampler.r * np.asarray(sampler.nu, dtype=float)
    if np.any(alphas <= 0):
        raise InvalidConcentrationError("Every r * nu_k entry must be positive")
    tau = sample_block_memberships(n, sampler.rho, rng)
    X = np.empty((n, alphas.shape[1]))
    for k, alpha in enumerate(alphas):
        members = np.flatnonzero(tau == k)
        if len(members):
            X[members] = rng.dirichlet(alpha, size=len(members))
    return LatentMatrix(X=X, tau_true=tau)


def one_hot(tau: np.ndarray, K: int) -> np.ndarray:
    Z = np.zeros((len(tau), K))
    Z[np.arange(len(tau)), tau] = 1.0
    return Z


def block_edge_counts(A: AdjacencyMatrix, tau: np.ndarray, K: int) -> np.ndarray:
    """Return E with E[k, l] = sum over i in k, j in l of A_ij (diagonal counts edges twice)."""
    Z = one_hot(tau, K)
    return Z.T @ A.as_float() @ Z


def block_log_probabilities(nu: np.ndarray, clamp: bool = True) -> Tuple[np.ndarray, np.ndarray]:
    """Return (log P, log(1 - P)) for the block probability matrix P = nu nu^T."""
    P = nu @ nu.T
    if clamp:
        P = np.clip(P, PROBABILITY_EPS, 1.0 - PROBABILITY_EPS)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log(P), np.log1p(-P)


def log_likelihood_from_counts(
    edge_counts: np.ndarray, block_sizes: np.ndarray, nu: np.ndarray, clamp: bool = True
) -> float:
    """Bernoulli log-likelihood from block edge counts and block sizes."""
    log_p, log_q = block_log_probabilities(nu, clamp=clamp)
    sizes = np.asarray(block_sizes, dtype=float)
    pairs = np.outer(sizes, sizes)
    np.fill_diagonal(pairs, sizes * (sizes - 1))
    # every unordered pair appears twice in both pairs and edge_counts
    edges = edge_counts
    non_edges = pairs - edges
    if not clamp:
        bad = ((edges > 0) & np.isneginf(log_p)) | ((non_edges > 0) & np.isneginf(log_q))
        if np.any(bad):
            raise DegenerateProbabilityError("Observed outcome has probability zero")
    with np.errstate(invalid="ignore"):
        terms = np.where(edges > 0, edges * log_p, 0.0) + np.where(non_edges > 0, non_edges * log_q, 0.0)
    return float(terms.sum() / 2.0)


def log_likelihood(A: AdjacencyMatrix, tau: np.ndarray, nu: np.ndarray, clamp: bool = True) -> float:
    """Log-likelihood of block labels tau and latent positions nu given A.

    Sums A_ij log<nu_{tau_i}, nu_{tau_j}> + (1 - A_ij) log(1 - <...>) over i < j,
    aggregated through block edge counts.

    Raises:
        DegenerateProbabilityError: clamp is False and an observed outcome has probability zero
    """
    tau = np.asarray(tau)
    nu = np.asarray(nu, dtype=float)
    K = nu.shape[0]
    sizes = np.bincount(tau, minlength=K)
    return log_likelihood_from_counts(block_edge_counts(A, tau, K), sizes, nu, clamp=clamp)

