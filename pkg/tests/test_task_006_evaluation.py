"""Behavioral tests for Task-006: Misassignment, convergence diagnostics and sign tests."""

import math
import sys
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))


def test_misassignment_counts_best_alignment():
    """Test two wrong labels out of six under the best permutation."""
    from sbm_eb.core.evaluation import misassignment_rate

    result = misassignment_rate(np.array([0, 0, 1, 1, 1, 0]), np.array([0, 0, 0, 1, 1, 1]), 2)

    assert result.error == pytest.approx(2 / 6)
    assert result.permutation.tolist() == [0, 1]
    assert result.confusion.tolist() == [[2, 1], [1, 2]]


def test_misassignment_is_invariant_to_label_swap():
    """Test swapped labels count as a perfect assignment."""
    from sbm_eb.core.evaluation import misassignment_rate

    truth = np.array([0, 0, 0, 1, 1, 1])
    result = misassignment_rate(1 - truth, truth, 2)

    assert result.error == 0.0
    assert np.array_equal(result.relabel(1 - truth), truth)


def test_misassignment_with_many_blocks_uses_assignment_solver():
    """Test K=9 labels under a random permutation align perfectly."""
    from sbm_eb.core.evaluation import misassignment_rate

    rng = np.random.default_rng(0)
    truth = rng.integers(0, 9, size=300)
    permuted = rng.permutation(9)[truth]
    result = misassignment_rate(permuted, truth, 9)

    assert result.error == 0.0
    assert np.array_equal(result.relabel(permuted), truth)


def test_misassignment_of_random_labels():
    """Test uniformly random labels over three blocks score about two thirds."""
    from sbm_eb.core.evaluation import misassignment_rate

    rng = np.random.default_rng(1)
    truth = rng.integers(0, 3, size=10_000)
    guess = rng.integers(0, 3, size=10_000)

    assert abs(misassignment_rate(guess, truth, 3).error - 2 / 3) < 0.02


def test_misassignment_rejects_length_mismatch():
    """Test label vectors of different lengths raise ValueError."""
    from sbm_eb.core.evaluation import misassignment_rate

    with pytest.raises(ValueError):
        misassignment_rate(np.zeros(3, dtype=int), np.zeros(4, dtype=int), 2)


def test_gelman_rubin_identical_constant_chains():
    """Test identical constant chains give R_hat = 1."""
    from sbm_eb.core.evaluation import gelman_rubin

    assert gelman_rubin([[0.3] * 12, [0.3] * 12]) == 1.0


@pytest.mark.parametrize("value", [0.3, 1 / 300, 0.1, 2 / 3])
@pytest.mark.parametrize("length", [12, 50])
def test_gelman_rubin_constant_chains_ignore_rounding(value, length):
    """Test constant error series give exactly 1 even when np.var leaves rounding noise."""
    from sbm_eb.core.evaluation import gelman_rubin

    assert gelman_rubin([[value] * length, [value] * length]) == 1.0
    assert gelman_rubin([[value] * length] * 3) == 1.0


def test_gelman_rubin_constant_chain_burn_in():
    """Test chains stuck at one error value converge at the first checkpoint."""
    from sbm_eb.core.evaluation import convergence_iteration

    assert convergence_iteration([[0.1] * 40, [0.1] * 40]) == 10


def test_gelman_rubin_distinct_constant_chains():
    """Test constant chains at different levels give an infinite R_hat."""
    from sbm_eb.core.evaluation import gelman_rubin

    assert math.isinf(gelman_rubin([[0, 0, 0, 0], [1, 1, 1, 1]], min_length=2))


def test_gelman_rubin_worked_example():
    """Test the four-sample example gives sqrt(1.05)."""
    from sbm_eb.core.evaluation import gelman_rubin

    rhat = gelman_rubin([[0.1, 0.2, 0.3, 0.4], [0.2, 0.3, 0.4, 0.5]], min_length=2)

    assert rhat == pytest.approx(math.sqrt(1.05), abs=1e-9)


def test_gelman_rubin_insufficient_input():
    """Test one chain, or chains below the minimum length, raise InsufficientLengthError."""
    from sbm_eb.core.evaluation import gelman_rubin
    from sbm_eb.core.exceptions import InsufficientLengthError

    with pytest.raises(InsufficientLengthError):
        gelman_rubin([[0.1] * 20])
    with pytest.raises(InsufficientLengthError):
        gelman_rubin([[0.1] * 5, [0.2] * 5])
    with pytest.raises(InsufficientLengthError):
        gelman_rubin([[0.1], [0.2]], min_length=1)


def test_gelman_rubin_for_independent_chains():
    """Test long i.i.d. chains from the same distribution give R_hat near 1."""
    from sbm_eb.core.evaluation import gelman_rubin

    rng = np.random.default_rng(2)
    for _ in range(10):
        rhat = gelman_rubin(rng.normal(size=(2, 5000)))
        assert 0.98 <= rhat < 1.1


def test_burn_in_from_convergence_checkpoint():
    """Test mixed chains converge at an early checkpoint."""
    from sbm_eb.core.evaluation import choose_burn_in, convergence_iteration

    rng = np.random.default_rng(3)
    series = rng.normal(size=(2, 500))
    converged_at = convergence_iteration(series)

    assert converged_at is not None
    assert converged_at % 10 == 0
    assert choose_burn_in(series) == converged_at


def test_burn_in_falls_back_when_chains_disagree():
    """Test chains stuck at different levels fall back to 20% burn-in."""
    from sbm_eb.core.evaluation import choose_burn_in, convergence_iteration

    series = np.vstack([np.zeros(200), np.ones(200)])

    assert convergence_iteration(series) is None
    assert choose_burn_in(series) == 40
    assert choose_burn_in(series[:, :5]) == 1


def test_posterior_estimate_of_constant_chain():
    """Test a chain that never moves returns its labels."""
    from sbm_eb.core.evaluation import posterior_tau_estimate

    tau = np.array([0, 1, 1, 0, 1])
    trace = SimpleNamespace(iterations=np.arange(5), tau_samples=np.tile(tau, (5, 1)))

    assert np.array_equal(posterior_tau_estimate([trace], 0, tau, 2), tau)


def test_posterior_estimate_aligns_label_switched_chains():
    """Test chains that agree up to relabeling vote together."""
    from sbm_eb.core.evaluation import posterior_tau_estimate

    tau = np.array([0, 0, 1, 1, 1])
    straight = SimpleNamespace(iterations=np.arange(3), tau_samples=np.tile(tau, (3, 1)))
    switched = SimpleNamespace(iterations=np.arange(3), tau_samples=np.tile(1 - tau, (3, 1)))

    assert np.array_equal(posterior_tau_estimate([straight, switched], 0, tau, 2), tau)


def test_posterior_estimate_breaks_ties_toward_lower_label():
    """Test a tied vote goes to the lower block index."""
    from sbm_eb.core.evaluation import posterior_tau_estimate

    reference = np.array([0, 0, 1, 1])
    samples = np.array([[0, 0, 1, 1], [1, 0, 1, 1]])
    trace = SimpleNamespace(iterations=np.array([0, 1]), tau_samples=samples)

    assert posterior_tau_estimate([trace], 0, reference, 2).tolist() == [0, 0, 1, 1]


def test_posterior_estimate_discards_burn_in():
    """Test samples before burn-in do not vote and an empty window raises."""
    from sbm_eb.core.evaluation import posterior_tau_estimate
    from sbm_eb.core.exceptions import InsufficientLengthError

    early = np.array([1, 1, 0, 0])
    late = np.array([0, 1, 0, 1])
    trace = SimpleNamespace(iterations=np.array([0, 10]), tau_samples=np.vstack([early, late]))

    assert posterior_tau_estimate([trace], 5, late, 2).tolist() == late.tolist()
    with pytest.raises(InsufficientLengthError):
        posterior_tau_estimate([trace], 11, late, 2)


def test_sign_test_all_wins():
    """Test ten wins out of ten give p = 2 / 1024."""
    from sbm_eb.core.evaluation import paired_sign_test

    p_value = paired_sign_test([0.1] * 10, [0.2] * 10)

    assert p_value == pytest.approx(0.001953125, abs=1e-9)


def test_sign_test_balanced_wins():
    """Test five wins and five losses give p = 1."""
    from sbm_eb.core.evaluation import paired_sign_test

    a = [0.1] * 5 + [0.3] * 5
    b = [0.2] * 10

    assert paired_sign_test(a, b) == pytest.approx(1.0)


def test_sign_test_drops_ties():
    """Test tied pairs are excluded and all ties raise AllTiesError."""
    from sbm_eb.core.evaluation import paired_sign_test
    from sbm_eb.core.exceptions import AllTiesError

    assert paired_sign_test([0.1, 0.2, 0.3], [0.2, 0.2, 0.2]) == pytest.approx(1.0)
    assert paired_sign_test([0.1, 0.2, 0.1], [0.2, 0.2, 0.2]) == pytest.approx(0.5)
    with pytest.raises(AllTiesError):
        paired_sign_test([0.2, 0.3], [0.2, 0.3])


def test_summarize_errors():
    """Test mean, median and the normal-approximation interval."""
    from sbm_eb.core.evaluation import summarize_errors

    summary = summarize_errors([0.1, 0.2, 0.3, 0.4])
    se = np.std([0.1, 0.2, 0.3, 0.4], ddof=1) / 2.0

    assert summary.count == 4
    assert summary.mean == pytest.approx(0.25)
    assert summary.median == pytest.approx(0.25)
    assert summary.standard_error == pytest.approx(se)
    assert summary.ci_low == pytest.approx(0.25 - 1.96 * se)
    assert set(summary.as_dict()) == {"count", "mean", "median", "se", "ci95_low", "ci95_high"}
    assert math.isnan(summarize_errors([]).mean)
