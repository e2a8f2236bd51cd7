"""Behavioral tests for Task-002: Adjacency spectral embedding and limiting mixture."""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

B_DENSE = np.array([[0.42, 0.42], [0.42, 0.5]])
RHO_DENSE = np.array([0.6, 0.4])


def _block_latents(n0: int, n1: int) -> tuple:
    from sbm_eb.core.sbm_model import latent_positions_from_B

    nu = latent_positions_from_B(B_DENSE, 2)
    tau = np.array([0] * n0 + [1] * n1)
    return nu[tau], tau, nu


def test_embedding_of_noiseless_probability_matrix_recovers_latents():
    """Test embedding P = X X^T returns X up to an orthogonal transformation."""
    from sbm_eb.core.spectral_embed import adjacency_spectral_embedding, procrustes_align

    X, _, _ = _block_latents(120, 80)
    embedded = adjacency_spectral_embedding(X @ X.T, 2)
    Q = procrustes_align(embedded.X_hat, X)

    assert embedded.X_hat.shape == (200, 2)
    assert np.linalg.norm(embedded.X_hat @ Q - X) < 1e-8


def test_embedding_eigenvalues_are_non_increasing():
    """Test retained eigenvalues are sorted largest first."""
    from sbm_eb.core.spectral_embed import adjacency_spectral_embedding

    X, _, _ = _block_latents(30, 20)
    embedded = adjacency_spectral_embedding(X @ X.T, 2)

    assert embedded.eigenvalues[0] >= embedded.eigenvalues[1] > 0
    assert embedded.d == 2
    assert embedded.n == 50


def test_noiseless_embedding_clusters_perfectly():
    """Test the mixture fit on a noiseless embedding has zero misassignment."""
    from sbm_eb.core.evaluation import misassignment_rate
    from sbm_eb.core.gmm_prior import fit_gmm
    from sbm_eb.core.spectral_embed import adjacency_spectral_embedding

    X, tau, _ = _block_latents(120, 80)
    embedded = adjacency_spectral_embedding(X @ X.T, 2)
    fit = fit_gmm(embedded.X_hat, 2, rng=np.random.default_rng(0))

    assert misassignment_rate(fit.hard_labels, tau, 2).error == 0.0


def test_embedding_of_empty_graph_raises():
    """Test a graph without positive spectrum cannot be embedded."""
    from sbm_eb.core.exceptions import InsufficientPositiveSpectrumError
    from sbm_eb.core.sbm_model import AdjacencyMatrix
    from sbm_eb.core.spectral_embed import adjacency_spectral_embedding

    with pytest.raises(InsufficientPositiveSpectrumError):
        adjacency_spectral_embedding(AdjacencyMatrix(np.zeros((5, 5), dtype=np.uint8)), 1)


def test_embedding_rejects_dimension_above_n():
    """Test d larger than the number of vertices raises ValueError."""
    from sbm_eb.core.spectral_embed import adjacency_spectral_embedding

    with pytest.raises(ValueError):
        adjacency_spectral_embedding(np.eye(2), 3)


def test_upca_diagonalizes_second_moment():
    """Test UPCA coordinates have a diagonal, non-increasing Gram matrix."""
    from sbm_eb.core.spectral_embed import upca

    X, _, _ = _block_latents(600, 400)
    X_tilde = upca(X)
    gram = X_tilde.T @ X_tilde

    assert abs(gram[0, 1]) < 1e-8
    assert gram[0, 0] >= gram[1, 1]
    assert np.allclose(X_tilde @ X_tilde.T, X @ X.T, atol=1e-10)


def test_upca_basis_matches_rows_of_upca():
    """Test rotating nu alone lands on the same points as UPCA of the full latent matrix."""
    from sbm_eb.core.spectral_embed import upca, upca_basis

    X, _, nu = _block_latents(600, 400)
    X_tilde = upca(X)
    nu_tilde = upca_basis(nu, np.array([600, 400]))

    assert np.allclose(X_tilde[0], nu_tilde[0], atol=1e-10)
    assert np.allclose(X_tilde[-1], nu_tilde[1], atol=1e-10)
    # proportions and counts give the same basis
    assert np.allclose(upca_basis(nu, RHO_DENSE), nu_tilde, atol=1e-12)


def test_limiting_covariance_single_block_closed_form():
    """Test K=1, d=1 gives Sigma = 1 - a^2 for nu = a."""
    from sbm_eb.core.spectral_embed import limiting_covariance

    a = np.sqrt(0.5)
    sigma = limiting_covariance(np.array([[a]]), np.array([1.0]), 0)

    assert sigma.shape == (1, 1)
    assert sigma[0, 0] == pytest.approx(0.5, abs=1e-12)


def test_limiting_covariance_is_symmetric_psd():
    """Test each block covariance is symmetric positive semidefinite."""
    from sbm_eb.core.spectral_embed import theoretical_mixture

    mixture = theoretical_mixture(np.array([[0.5489, 0.3446], [0.3984, 0.5842]]), RHO_DENSE)

    assert len(mixture.sigmas) == 2
    for sigma in mixture.sigmas:
        assert np.allclose(sigma, sigma.T, atol=1e-14)
        assert np.linalg.eigvalsh(sigma).min() >= -1e-12
    scaled = mixture.scaled_covariances(100)
    assert np.allclose(scaled[0] * 100, mixture.sigmas[0])


def test_theoretical_mixture_is_in_upca_basis():
    """Test the mixture centers have a diagonal weighted second moment."""
    from sbm_eb.core.spectral_embed import theoretical_mixture

    nu = np.array([[0.5489, 0.3446], [0.3984, 0.5842]])
    mixture = theoretical_mixture(nu, RHO_DENSE)

    assert abs(mixture.delta[0, 1]) < 1e-12
    assert np.allclose(mixture.nu @ mixture.nu.T, nu @ nu.T, atol=1e-12)


def test_limiting_covariance_singular_delta():
    """Test identical block positions make the second moment matrix singular."""
    from sbm_eb.core.exceptions import SingularDeltaError
    from sbm_eb.core.spectral_embed import limiting_covariance

    with pytest.raises(SingularDeltaError):
        limiting_covariance(np.array([[0.5, 0.5], [0.5, 0.5]]), np.array([0.5, 0.5]), 0)


def test_procrustes_recovers_rotation():
    """Test the Procrustes solution undoes a known rotation."""
    from sbm_eb.core.spectral_embed import procrustes_align

    rng = np.random.default_rng(1)
    source = rng.normal(size=(40, 3))
    rotation, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    target = source @ rotation

    Q = procrustes_align(source, target)

    assert np.allclose(Q, rotation, atol=1e-10)
    assert np.allclose(Q.T @ Q, np.eye(3), atol=1e-12)


@pytest.mark.slow
def test_embedding_errors_follow_limiting_covariance():
    """Test sqrt(n)(X_hat_i - nu_k) over 50 graphs at n=4000 matches Sigma_k entrywise within 15%."""
    from sbm_eb.core.sbm_model import LatentMatrix, latent_positions_from_B, sample_rdpg
    from sbm_eb.core.spectral_embed import (
        adjacency_spectral_embedding,
        limiting_covariance,
        procrustes_align,
    )

    n, graphs = 4000, 50
    nu = latent_positions_from_B(B_DENSE, 2)
    tau = np.array([0] * 2400 + [1] * 1600)
    X = nu[tau]
    rng = np.random.default_rng(2)
    residuals = {0: [], 1: []}
    for _ in range(graphs):
        A = sample_rdpg(LatentMatrix(X=X, tau_true=tau), rng)
        X_hat = adjacency_spectral_embedding(A, 2).X_hat
        X_hat = X_hat @ procrustes_align(X_hat, X)
        for k in range(2):
            residuals[k].append(np.sqrt(n) * (X_hat[tau == k] - nu[k]))

    for k in range(2):
        expected = limiting_covariance(nu, RHO_DENSE, k)
        empirical = np.cov(np.vstack(residuals[k]), rowvar=False)
        assert np.all(np.abs(empirical - expected) <= 0.15 * np.abs(expected))


@pytest.mark.slow
def test_standardized_embedding_residuals_have_mean_zero():
    """Test whitened residuals of one n=4000 graph have |mean| < 4 SE in each coordinate."""
    from sbm_eb.core.sbm_model import LatentMatrix, latent_positions_from_B, sample_rdpg
    from sbm_eb.core.spectral_embed import (
        adjacency_spectral_embedding,
        limiting_covariance,
        procrustes_align,
    )

    n = 4000
    nu = latent_positions_from_B(B_DENSE, 2)
    tau = np.array([0] * 2400 + [1] * 1600)
    X = nu[tau]
    A = sample_rdpg(LatentMatrix(X=X, tau_true=tau), np.random.default_rng(3))
    X_hat = adjacency_spectral_embedding(A, 2).X_hat
    X_hat = X_hat @ procrustes_align(X_hat, X)

    for k in range(2):
        whitening = np.linalg.inv(np.linalg.cholesky(limiting_covariance(nu, RHO_DENSE, k)))
        standardized = np.sqrt(n) * (X_hat[tau == k] - nu[k]) @ whitening.T
        se = standardized.std(axis=0, ddof=1) / np.sqrt(len(standardized))
        assert np.all(np.abs(standardized.mean(axis=0)) < 4 * se)
