"""Behavioral tests for Task-009: Bootstrap study on an observed labeled graph."""

import csv
import json
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from sbm_eb.config.config_loader import WikiConfig
from sbm_eb.core.orchestrator import ExperimentRunner

B_THREE = np.array([[0.5, 0.1, 0.1], [0.1, 0.6, 0.1], [0.1, 0.1, 0.7]])


def _labeled_graph(tmp_path: Path, n: int = 90, seed: int = 0) -> tuple:
    from sbm_eb.core.graph_io import write_graph, write_labels
    from sbm_eb.core.sbm_model import LatentMatrix, latent_positions_from_B, sample_rdpg

    nu = latent_positions_from_B(B_THREE, 3)
    tau = np.repeat(np.arange(3), n // 3)
    A = sample_rdpg(LatentMatrix(X=nu[tau], tau_true=tau), np.random.default_rng(seed))
    graph_path, labels_path = tmp_path / "graph.txt", tmp_path / "labels.txt"
    write_graph(graph_path, A)
    write_labels(labels_path, tau)
    return str(graph_path), str(labels_path)


def _config(graph_path: str, labels_path: str, **overrides) -> WikiConfig:
    values = dict(
        graph_path=graph_path,
        labels_path=labels_path,
        n_per_class=10,
        bootstrap_B=2,
        iters=20,
        seed=3,
        gmm_restarts=2,
    )
    values.update(overrides)
    return WikiConfig(**values)


def test_bootstrap_writes_reports(tmp_path):
    """Test the bootstrap study writes results, box plot data and its summary."""
    graph_path, labels_path = _labeled_graph(tmp_path)
    out_dir = tmp_path / "results"

    result = ExperimentRunner(out_dir=out_dir).run_wiki_bootstrap(_config(graph_path, labels_path))

    for name in ("wiki.csv", "wiki_plot.csv", "wiki_summary.json", "wiki_boxplot.csv"):
        assert (out_dir / name).exists()
    assert result.paths["boxplot"] == str(out_dir / "wiki_boxplot.csv")

    summary = json.loads((out_dir / "wiki_summary.json").read_text(encoding="utf-8"))
    assert summary["replicates_run"] == 2
    assert summary["models"] == ["asge", "flat", "gmm"]
    assert "disconnected_resamples" in summary
    assert "30" in summary["by_n"]


def test_bootstrap_errors_are_fractions_of_resampled_vertices(tmp_path):
    """Test every reported error is a fraction of the 3 * n_per_class vertices."""
    graph_path, labels_path = _labeled_graph(tmp_path)

    result = ExperimentRunner(out_dir=tmp_path / "out").run_wiki_bootstrap(_config(graph_path, labels_path))

    with open(result.paths["csv"], newline="", encoding="utf-8") as handle:
        rows = list(csv.DictReader(handle))
    for row in rows:
        misassigned = float(row["error"]) * 30
        assert abs(misassigned - round(misassigned)) < 1e-9
        assert 0.0 <= float(row["error"]) <= 2.0 / 3.0


def test_single_vertex_per_class_records_failed_resamples(tmp_path):
    """Test three-vertex resamples, which cannot have two positive eigenvalues, are recorded as failures."""
    graph_path, labels_path = _labeled_graph(tmp_path)
    out_dir = tmp_path / "out"

    result = ExperimentRunner(out_dir=out_dir).run_wiki_bootstrap(
        _config(graph_path, labels_path, n_per_class=1, d=2)
    )

    assert not result.success
    assert [r.success for r in result.replicates] == [False, False]
    assert all(r.outcomes == [] for r in result.replicates)
    assert result.summary["replicates_run"] == 2
    assert result.summary["replicates_failed"] == 2
    failures = result.summary["failures"]
    assert [f["replicate"] for f in failures] == [0, 1]
    assert all(f["n"] == 3 for f in failures)
    assert all(f["error_type"] == "InsufficientPositiveSpectrumError" for f in failures)
    assert result.summary["by_n"]["3"]["errors"]["asge"]["count"] == 0

    with open(out_dir / "wiki.csv", newline="", encoding="utf-8") as handle:
        assert list(csv.DictReader(handle)) == []


def test_disconnected_resamples_are_recorded_and_kept(tmp_path, monkeypatch):
    """Test a disconnected resample is recorded as DisconnectedSampleError while its inference still runs."""
    from sbm_eb.core import orchestrator

    graph_path, labels_path = _labeled_graph(tmp_path)
    checks = {"count": 0}

    def connected_only_for_full_graph(A):
        checks["count"] += 1
        return checks["count"] == 1

    monkeypatch.setattr(orchestrator, "is_connected", connected_only_for_full_graph)
    out_dir = tmp_path / "out"

    config = _config(graph_path, labels_path, models=["gmm"])
    result = orchestrator.ExperimentRunner(out_dir=out_dir).run_wiki_bootstrap(config)

    assert all(r.success for r in result.replicates)
    assert result.summary["disconnected_resamples"] == 2
    records = result.summary["disconnected"]
    assert [record["replicate"] for record in records] == [0, 1]
    assert all(record["error_type"] == "DisconnectedSampleError" for record in records)
    assert all(record["category"] == "data" for record in records)
    saved = json.loads((out_dir / "wiki_summary.json").read_text(encoding="utf-8"))
    assert saved["disconnected_resamples"] == 2


def test_bootstrap_rejects_oversized_classes(tmp_path):
    """Test n_per_class above the smallest class size is a configuration error."""
    from sbm_eb.core.exceptions import ConfigError

    graph_path, labels_path = _labeled_graph(tmp_path)

    with pytest.raises(ConfigError):
        ExperimentRunner(out_dir=tmp_path / "out").run_wiki_bootstrap(
            _config(graph_path, labels_path, n_per_class=1000)
        )


def test_bootstrap_rejects_class_count_mismatch(tmp_path):
    """Test labels with a different number of classes than K are rejected."""
    from sbm_eb.core.exceptions import ConfigError

    graph_path, labels_path = _labeled_graph(tmp_path)

    with pytest.raises(ConfigError):
        ExperimentRunner(out_dir=tmp_path / "out").run_wiki_bootstrap(
            _config(graph_path, labels_path, K=2, d=2)
        )


def test_bootstrap_rejects_disconnected_graph(tmp_path):
    """Test a graph with two components is refused."""
    from sbm_eb.core.exceptions import DataError

    graph_path = tmp_path / "g.txt"
    labels_path = tmp_path / "l.txt"
    graph_path.write_text("6 2\n0 1\n2 3\n", encoding="utf-8")
    labels_path.write_text("1\n2\n3\n1\n2\n3\n", encoding="utf-8")

    with pytest.raises(DataError):
        ExperimentRunner(out_dir=tmp_path / "out").run_wiki_bootstrap(
            _config(str(graph_path), str(labels_path), n_per_class=1)
        )
