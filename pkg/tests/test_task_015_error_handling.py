"""Behavioral tests for Task-015: Error Handling."""

import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from sbm_eb.core.orchestrator import _handle_error, run_replicate


@dataclass
class _FailingTask:
    """Stand-in replicate task that raises a chosen exception."""

    error: Exception
    replicate: int = 3
    n: int = 50

    def run(self):
        raise self.error


def test_exception_families_carry_exit_codes():
    """Test configuration, data and numerical errors map to exit codes 2, 3 and 4."""
    from sbm_eb.core import exceptions

    assert exceptions.ConfigError.exit_code == 2
    assert exceptions.InvalidConcentrationError.exit_code == 2
    assert exceptions.GraphParseError.exit_code == 3
    assert exceptions.AllTiesError.exit_code == 3
    assert exceptions.NotPSDError.exit_code == 4
    assert exceptions.RejectionBudgetExhaustedError.exit_code == 4


def test_exception_hierarchy():
    """Test every package error derives from SbmEbError and its standard base."""
    from sbm_eb.core import exceptions

    assert issubclass(exceptions.SelfLoopError, exceptions.GraphParseError)
    assert issubclass(exceptions.ConfigError, ValueError)
    assert issubclass(exceptions.DataError, ValueError)
    assert issubclass(exceptions.NumericalError, ArithmeticError)
    for name in ("DegenerateClusterError", "SingularDeltaError", "DisconnectedSampleError"):
        assert issubclass(getattr(exceptions, name), exceptions.SbmEbError)


def test_graph_parse_error_message_includes_location():
    """Test parse errors name the file and line."""
    from sbm_eb.core.exceptions import GraphParseError

    error = GraphParseError("bad token", "graph.txt", 7)

    assert str(error) == "graph.txt:7: bad token"
    assert error.line_number == 7


def test_handle_error_returns_required_fields():
    """Test _handle_error returns all required fields."""
    result = _handle_error(ValueError("Test validation error"))

    for key in ("error", "error_type", "category", "recoverable", "message", "suggestion", "stack_trace", "exit_code"):
        assert key in result
    assert result["error_type"] == "ValueError"


def test_handle_error_configuration_errors():
    """Test configuration errors are fatal."""
    from sbm_eb.core.exceptions import ConfigError

    result = _handle_error(ConfigError("chains must be at least 2"))

    assert result["category"] == "configuration"
    assert result["recoverable"] is False
    assert result["exit_code"] == 2


def test_handle_error_data_errors():
    """Test data errors are recoverable per replicate."""
    from sbm_eb.core.exceptions import DisconnectedSampleError

    result = _handle_error(DisconnectedSampleError("resample is disconnected"))

    assert result["category"] == "data"
    assert result["recoverable"] is True
    assert result["exit_code"] == 3


def test_handle_error_numerical_errors():
    """Test numerical failures, including linear algebra errors, are recoverable."""
    from sbm_eb.core.exceptions import DegenerateClusterError

    result = _handle_error(DegenerateClusterError("all restarts collapsed"))
    assert result["category"] == "numerical"
    assert result["recoverable"] is True
    assert result["exit_code"] == 4

    result = _handle_error(np.linalg.LinAlgError("matrix is singular"))
    assert result["category"] == "numerical"


def test_handle_error_filesystem_errors():
    """Test file system errors are fatal."""
    result = _handle_error(PermissionError("Permission denied"))

    assert result["category"] == "filesystem"
    assert result["recoverable"] is False


def test_handle_error_unknown_errors():
    """Test unknown errors are categorized and fatal."""
    result = _handle_error(KeyError("missing"))

    assert result["category"] == "unknown"
    assert result["recoverable"] is False
    assert "Review the stack trace" in result["suggestion"]


def test_run_replicate_records_recoverable_failure():
    """Test a numerical failure becomes a recorded, skipped replicate."""
    from sbm_eb.core.exceptions import InsufficientPositiveSpectrumError

    result = run_replicate(_FailingTask(InsufficientPositiveSpectrumError("no positive eigenvalues")))

    assert not result.success
    assert result.replicate == 3
    assert result.n == 50
    assert result.failure["error_type"] == "InsufficientPositiveSpectrumError"
    assert result.outcomes == []


def test_run_replicate_reraises_configuration_errors():
    """Test configuration errors abort the study."""
    from sbm_eb.core.exceptions import ConfigError

    with pytest.raises(ConfigError):
        run_replicate(_FailingTask(ConfigError("bad B")))


def test_handle_error_plain_value_errors_are_recoverable():
    """Test a ValueError from inside a replicate is recorded rather than fatal."""
    result = _handle_error(ValueError("Embedding dimension must be in [1, 3], got 4"))

    assert result["category"] == "invalid_value"
    assert result["recoverable"] is True
    assert result["exit_code"] == 1


def test_run_replicate_records_value_error():
    """Test run_replicate turns a plain ValueError into a failed replicate."""
    result = run_replicate(_FailingTask(ValueError("Need at least K=2 points, got 1")))

    assert not result.success
    assert result.failure["error_type"] == "ValueError"
    assert result.failure["category"] == "invalid_value"


def test_study_survives_value_error_in_one_replicate(tmp_path, monkeypatch):
    """Test a ValueError in one replicate is reported and the others still run."""
    from sbm_eb.config.config_loader import ExperimentConfig
    from sbm_eb.core import orchestrator

    real_fit_gmm = orchestrator.fit_gmm
    calls = {"count": 0}

    def fit_gmm_failing_once(*args, **kwargs):
        calls["count"] += 1
        if calls["count"] == 1:
            raise ValueError("injected mixture failure")
        return real_fit_gmm(*args, **kwargs)

    monkeypatch.setattr(orchestrator, "fit_gmm", fit_gmm_failing_once)
    config = ExperimentConfig(
        name="flaky",
        B=[[0.5, 0.1], [0.1, 0.7]],
        rho=[0.5, 0.5],
        n_values=[40],
        replicates=2,
        iters=20,
        seed=2,
        gmm_restarts=2,
        models=["asge", "gmm"],
    )

    result = orchestrator.ExperimentRunner(out_dir=tmp_path, threads=1).run_experiment(config)

    assert result.success
    assert result.summary["replicates_failed"] == 1
    assert result.summary["failures"][0]["error_type"] == "ValueError"
    assert result.summary["failures"][0]["replicate"] == 0
    assert [r.success for r in result.replicates] == [False, True]
