"""Behavioral tests for Task-017: Study-level behavior of the shipped configurations.

Every study here runs at a reduced size (fewer vertices, replicates and
iterations than the shipped configs), so the assertions check orderings and
directions with paired standard-error slack rather than exact error levels.
"""

import os
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from sbm_eb.config.config_loader import load_experiment_config, load_wiki_config
from sbm_eb.core.evaluation import paired_sign_test
from sbm_eb.core.orchestrator import ExperimentRunner

CONFIG_DIR = Path(__file__).parent.parent / "configs"
THREADS = max(1, min(4, os.cpu_count() or 1))

pytestmark = pytest.mark.slow


def _run_study(out_dir: Path, name: str, **overrides):
    config = load_experiment_config(CONFIG_DIR / f"{name}.toml", overrides=overrides)
    result = ExperimentRunner(out_dir=out_dir, threads=THREADS).run_experiment(config)
    assert result.summary["replicates_failed"] <= 1
    return result


def _paired(result, n: int, first: str, second: str) -> tuple:
    """Errors of two models over the replicates of size n where both ran."""
    a, b = [], []
    for replicate in result.replicates:
        if replicate.success and replicate.n == n:
            errors = {outcome.model: outcome.error for outcome in replicate.outcomes}
            a.append(errors[first])
            b.append(errors[second])
    return np.array(a), np.array(b)


def _assert_not_worse(a: np.ndarray, b: np.ndarray, n_se: float = 2.0) -> None:
    """Mean of a exceeds mean of b by at most n_se paired standard errors."""
    diff = a - b
    se = diff.std(ddof=1) / np.sqrt(len(diff)) if len(diff) > 1 else 0.0
    assert diff.mean() <= n_se * se + 1e-12


def _wins_and_losses(a: np.ndarray, b: np.ndarray) -> tuple:
    return int(np.sum(a < b)), int(np.sum(a > b))


@pytest.fixture(scope="module")
def dense_study(tmp_path_factory):
    return _run_study(tmp_path_factory.mktemp("k2_dense"), "k2_dense", n_values=[100, 250], replicates=16, iters=1000)


def test_dense_study_model_ordering(dense_study):
    """Test exact <= gold <= asge <= flat on the two-block SBM, ties allowed within paired SE."""
    for n in (100, 250):
        for better, worse in (("exact", "gold"), ("gold", "asge"), ("asge", "flat")):
            _assert_not_worse(*_paired(dense_study, n, better, worse))


def test_dense_study_errors_do_not_grow_with_n(dense_study):
    """Test every model's mean error at n=250 is no worse than at n=100."""
    by_n = dense_study.summary["by_n"]
    for model in ("exact", "gold", "asge", "flat", "gmm"):
        small, large = by_n["100"]["errors"][model], by_n["250"]["errors"][model]
        slack = 2.0 * np.hypot(small["se"], large["se"])
        assert large["mean"] <= small["mean"] + slack


def test_dense_study_asge_beats_mixture_clustering(dense_study):
    """Test the sampler with the empirical prior improves on the GMM labels it starts from."""
    asge, gmm = _paired(dense_study, 250, "asge", "gmm")
    wins, losses = _wins_and_losses(asge, gmm)

    assert asge.mean() < gmm.mean()
    assert wins > 2 * losses
    assert dense_study.summary["by_n"]["250"]["sign_tests"]["asge_vs_gmm"] is not None


def test_dense_study_asge_sign_test_against_flat(dense_study):
    """Test asge wins at least as often as it loses against the flat prior."""
    asge, flat = _paired(dense_study, 250, "asge", "flat")
    wins, losses = _wins_and_losses(asge, flat)

    assert wins >= losses


def test_three_block_study(tmp_path):
    """Test the K=3 study: asge error is small and its median does not exceed GMM's."""
    result = _run_study(tmp_path, "k3_dense", n_values=[300], replicates=8, iters=800)
    errors = result.summary["by_n"]["300"]["errors"]

    assert errors["asge"]["mean"] < 0.05
    assert errors["asge"]["median"] <= errors["gmm"]["median"]
    _assert_not_worse(*_paired(result, 300, "asge", "flat"))


def test_dirichlet_study(tmp_path):
    """Test asge stays ahead of GMM and flat when latent positions are not point masses."""
    result = _run_study(tmp_path, "dirichlet_r100", n_values=[300], replicates=10, iters=800)

    asge, gmm = _paired(result, 300, "asge", "gmm")
    assert asge.mean() <= gmm.mean()
    _assert_not_worse(*_paired(result, 300, "asge", "flat"))


def test_sparse_study(tmp_path):
    """Test asge mean error is below GMM's on the 1/sqrt(n) sparse SBM."""
    result = _run_study(tmp_path, "k2_sparse", n_values=[500], replicates=8, iters=800)
    errors = result.summary["by_n"]["500"]["errors"]

    assert errors["asge"]["mean"] < errors["gmm"]["mean"]


def test_wiki_bootstrap_sign_test(tmp_path):
    """Test asge beats flat across bootstrap resamples of the observed graph."""
    config = load_wiki_config(CONFIG_DIR / "wiki.toml", overrides={"bootstrap_B": 30, "iters": 1000})
    if not (Path(config.graph_path).exists() and Path(config.labels_path).exists()):
        pytest.skip("Wikipedia graph and label files are not present")

    result = ExperimentRunner(out_dir=tmp_path, threads=THREADS).run_wiki_bootstrap(config)
    n = config.n_per_class * config.K
    asge, flat = _paired(result, n, "asge", "flat")
    wins, losses = _wins_and_losses(asge, flat)

    assert wins > losses
    assert paired_sign_test(asge, flat) < 0.05
