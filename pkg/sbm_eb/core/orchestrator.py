"""Experiment harness - coordinates the estimation pipeline over replicates.

For every replicate the pipeline is: obtain a graph (simulated, or regenerated
from bootstrap latent positions), embed it, fit the Gaussian mixture, build the
priors of each requested model, run parallel chains, and evaluate the posterior
block estimate against the known labels.
"""

import csv
import itertools
import json
import logging
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg

from sbm_eb.config.config_loader import MODELS, ExperimentConfig, WikiConfig
from sbm_eb.core.evaluation import (
    choose_burn_in,
    gelman_rubin,
    misassignment_rate,
    paired_sign_test,
    posterior_tau_estimate,
    summarize_errors,
)
from sbm_eb.core.exceptions import (
    AllTiesError,
    ConfigError,
    DataError,
    DisconnectedSampleError,
    InsufficientLengthError,
    SbmEbError,
)
from sbm_eb.core.gmm_prior import GmmOptions, empirical_prior_from_fit, fit_gmm
from sbm_eb.core.graph_io import is_connected, load_graph, remove_isolates
from sbm_eb.core.sbm_model import (
    AdjacencyMatrix,
    LatentKind,
    LatentMatrix,
    LatentSampler,
    SbmParams,
    sample_rdpg,
)
from sbm_eb.core.spectral_embed import adjacency_spectral_embedding, theoretical_mixture
from sbm_eb.samplers.posterior_mcmc import (
    ChainSchedule,
    ChainTrace,
    align_labels_to_nu,
    initialize_chain,
    run_chain,
)
from sbm_eb.samplers.priors import ConstraintMode, PriorSpec
from sbm_eb.utils.logging import (
    LogContext,
    log_file_operation,
    log_model_result,
    log_phase_end,
    log_phase_start,
    log_replicate,
)

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["replicate", "model", "n", "error", "accept_rate", "rhat"]
MCMC_MODELS = ("exact", "gold", "asge", "flat")


@dataclass(frozen=True)
class InferenceSettings:
    """Everything the per-graph pipeline needs besides the graph itself."""

    K: int
    d: int
    models: Tuple[str, ...]
    schedule: ChainSchedule
    chains: int
    constraint: ConstraintMode
    gmm: GmmOptions
    theta: Optional[Tuple[float, ...]] = None

    @classmethod
    def from_config(cls, config: Union[ExperimentConfig, WikiConfig]) -> "InferenceSettings":
        return cls(
            K=config.K,
            d=config.d,
            models=tuple(config.models),
            schedule=ChainSchedule(iters=config.iters, burn_in=config.burn_in, thin=config.thin),
            chains=config.chains,
            constraint=config.constraint,
            gmm=GmmOptions(
                restarts=config.gmm_restarts,
                max_iters=config.gmm_max_iters,
                tol=config.gmm_tol,
                reg=config.gmm_reg,
            ),
            theta=tuple(config.theta) if config.theta is not None else None,
        )


@dataclass
class ModelOutcome:
    """Result of one model on one graph."""

    model: str
    error: float
    accept_rate: float = float("nan")
    rhat: float = float("nan")
    burn_in: Optional[int] = None
    tau_hat: Optional[np.ndarray] = field(default=None, repr=False)


@dataclass
class ReplicateResult:
    """Outcomes for one replicate, or the error that stopped it."""

    replicate: int
    n: int
    outcomes: List[ModelOutcome] = field(default_factory=list)
    failure: Optional[dict] = None
    notes: Dict[str, object] = field(default_factory=dict)

    @property
    def success(self) -> bool:
        return self.failure is None


@dataclass
class ExperimentResult:
    """Result of a whole study."""

    success: bool
    name: str
    replicates: List[ReplicateResult]
    paths: Dict[str, str]
    summary: dict


def _handle_error(error: Exception) -> dict:
    """Categorize an error for reporting.

    Returns:
        Dict with error, error_type, category, recoverable, message, suggestion,
        stack_trace and exit_code
    """
    error_type = type(error).__name__
    error_message = str(error)
    category, recoverable, user_message, suggestion = _categorize_error(error, error_type, error_message)

    if recoverable:
        logger.warning(f"Recoverable {category} error: {error_type}: {error_message}")
    else:
        logger.error(f"Fatal {category} error: {error_type}: {error_message}")

    return {
        "error": error_message,
        "error_type": error_type,
        "category": category,
        "recoverable": recoverable,
        "message": user_message,
        "suggestion": suggestion,
        "stack_trace": "".join(traceback.format_exception(type(error), error, error.__traceback__)),
        "exit_code": getattr(error, "exit_code", 1),
    }


def _categorize_error(error: Exception, error_type: str, error_message: str) -> Tuple[str, bool, str, str]:
    """Return (category, recoverable, user_message, suggestion)."""
    if isinstance(error, ConfigError):
        return (
            "configuration",
            False,
            f"Configuration error: {error_message}",
            "Check the config keys and parameter values against the documented examples.",
        )
    if isinstance(error, DataError):
        return (
            "data",
            True,
            f"Data error: {error_message}",
            "Check the input file format: 'n m' header, 0-based edges, labels in 1..K.",
        )
    if isinstance(error, (SbmEbError, linalg.LinAlgError, ArithmeticError)):
        return (
            "numerical",
            True,
            f"Numerical failure: {error_message}",
            "This replicate is skipped; persistent failures suggest d, K or the prior scale are mis-set.",
        )
    if isinstance(error, OSError):
        return (
            "filesystem",
            False,
            f"File system error: {error_message}",
            "Check file paths, permissions and that the output directory is writable.",
        )
    if isinstance(error, ValueError):
        return (
            "invalid_value",
            True,
            f"Invalid intermediate value: {error_message}",
            "This replicate is skipped; the graph or its embedding did not fit the configured K and d.",
        )
    return (
        "unknown",
        False,
        f"Unexpected error: {error_type}: {error_message}",
        "Review the stack trace for details.",
    )


def build_prior(
    model: str,
    A: AdjacencyMatrix,
    tau_hat: np.ndarray,
    settings: InferenceSettings,
    asge_prior: PriorSpec,
    params: Optional[SbmParams],
) -> Tuple[PriorSpec, np.ndarray, Optional[PriorSpec]]:
    """Return (prior, labels to start from, prior used to draw the initial nu)."""
    if model in ("exact", "gold") and params is None:
        raise ConfigError(f"The {model} model needs the true parameters")
    if model == "exact":
        return PriorSpec.exact(params.nu, params.rho, settings.constraint), tau_hat, None
    if model == "gold":
        mixture = theoretical_mixture(params.nu, params.rho)
        prior = PriorSpec.gold(
            mixture.nu,
            np.array(mixture.scaled_covariances(A.n)),
            params.rho,
            settings.constraint,
        )
        return prior, align_labels_to_nu(A, tau_hat, mixture.nu), None
    if model == "asge":
        return asge_prior, tau_hat, None
    return PriorSpec.flat(settings.K, settings.d, settings.theta, settings.constraint), tau_hat, asge_prior


def summarize_chains(
    model: str, traces: Sequence[ChainTrace], settings: InferenceSettings, truth: Optional[np.ndarray]
) -> ModelOutcome:
    series = [trace.misassign_series for trace in traces]
    if settings.schedule.burn_in is not None:
        burn_in = settings.schedule.burn_in
    elif truth is not None:
        burn_in = choose_burn_in(series)
    else:
        burn_in = int(0.2 * settings.schedule.iters)
    burn_in = min(burn_in, int(traces[0].iterations[-1]))

    try:
        rhat = gelman_rubin(series, min_length=2) if truth is not None else float("nan")
    except InsufficientLengthError:
        rhat = float("nan")

    tau_ref = truth if truth is not None else traces[0].tau_samples[-1]
    tau_post = posterior_tau_estimate(traces, burn_in, tau_ref, settings.K)
    error = misassignment_rate(tau_post, truth, settings.K).error if truth is not None else float("nan")
    rates = [trace.acceptance_rate for trace in traces if trace.propose_count]
    return ModelOutcome(
        model=model,
        error=error,
        accept_rate=float(np.mean(rates)) if rates else float("nan"),
        rhat=rhat,
        burn_in=burn_in,
        tau_hat=tau_post,
    )


def infer_blocks(
    A: AdjacencyMatrix,
    truth: Optional[np.ndarray],
    settings: InferenceSettings,
    rng: np.random.Generator,
    params: Optional[SbmParams] = None,
) -> List[ModelOutcome]:
    """Run the embedding, mixture fit and every requested model on one graph.

    Args:
        A: observed graph
        truth: true labels (0-based) for error reporting, if known
        settings: models, dimensions and sampler settings
        rng: random generator; each model and chain gets its own child
        params: true SBM parameters, required by exact and gold

    Returns:
        One ModelOutcome per requested model, in MODELS order
    """
    embedding = adjacency_spectral_embedding(A, settings.d)
    gmm_rng, *model_rngs = rng.spawn(1 + len(MCMC_MODELS))
    fit = fit_gmm(embedding.X_hat, settings.K, settings.gmm, gmm_rng)
    tau_hat = fit.hard_labels
    asge_prior = empirical_prior_from_fit(fit, settings.constraint, settings.theta)

    outcomes = []
    for model in MODELS:
        if model not in settings.models:
            continue
        if model == "gmm":
            error = misassignment_rate(tau_hat, truth, settings.K).error if truth is not None else float("nan")
            outcomes.append(ModelOutcome(model="gmm", error=error, tau_hat=tau_hat))
            continue

        model_rng = model_rngs[MCMC_MODELS.index(model)]
        prior, tau_init, init_prior = build_prior(model, A, tau_hat, settings, asge_prior, params)
        traces = []
        for chain_rng in model_rng.spawn(settings.chains):
            init = initialize_chain(prior, tau_init, chain_rng, init_prior)
            traces.append(run_chain(A, prior, init, settings.schedule, truth, chain_rng))
        outcomes.append(summarize_chains(model, traces, settings, truth))
    return outcomes


def params_at(config: ExperimentConfig, n: int) -> SbmParams:
    """SBM parameters for graphs of size n (sparse studies rescale with n)."""
    rho = np.asarray(config.rho, dtype=float)
    if config.nu is None:
        return SbmParams.from_block_matrix(config.block_matrix_at(n), rho, config.d)
    nu = np.asarray(config.nu, dtype=float)
    if config.generator == "sparse_sbm":
        nu = nu / n**0.25
    return SbmParams(B=np.clip(nu @ nu.T, 0.0, 1.0), rho=rho, nu=nu)


def generate_graph(
    config: ExperimentConfig, n: int, rng: np.random.Generator
) -> Tuple[AdjacencyMatrix, LatentMatrix, SbmParams]:
    """Sample one graph of size n from the configured generator."""
    params = params_at(config, n)
    if config.generator == "dirichlet_rdpg":
        sampler = LatentSampler(LatentKind.DIRICHLET_MIXTURE, nu=params.nu, rho=params.rho, r=config.r)
    else:
        sampler = params.point_mass_sampler()
    latents = sampler.sample(n, rng)
    return sample_rdpg(latents, rng), latents, params


@dataclass(frozen=True)
class SimulationTask:
    """One simulated replicate."""

    config: ExperimentConfig
    n: int
    replicate: int
    seed: np.random.SeedSequence

    def run(self) -> ReplicateResult:
        rng = np.random.default_rng(self.seed)
        graph_rng, inference_rng = rng.spawn(2)
        A, latents, params = generate_graph(self.config, self.n, graph_rng)
        settings = InferenceSettings.from_config(self.config)
        # point-mass parameters are only meaningful for the SBM generators
        true_params = params if self.config.generator != "dirichlet_rdpg" else None
        outcomes = infer_blocks(A, latents.tau_true, settings, inference_rng, true_params)
        return ReplicateResult(replicate=self.replicate, n=self.n, outcomes=outcomes)


@dataclass(frozen=True)
class BootstrapTask:
    """One bootstrap resample of embedded latent positions."""

    config: WikiConfig
    X_hat: np.ndarray
    class_members: Tuple[np.ndarray, ...]
    replicate: int
    seed: np.random.SeedSequence

    @property
    def n(self) -> int:
        return self.config.n_per_class * len(self.class_members)

    def run(self) -> ReplicateResult:
        rng = np.random.default_rng(self.seed)
        sample_rng, graph_rng, inference_rng = rng.spawn(3)
        rows = np.concatenate(
            [sample_rng.choice(members, size=self.config.n_per_class, replace=True) for members in self.class_members]
        )
        truth = np.repeat(np.arange(len(self.class_members)), self.config.n_per_class)
        A = sample_rdpg(LatentMatrix(X=self.X_hat[rows], tau_true=truth), graph_rng, clip=self.config.clip)

        notes: Dict[str, object] = {}
        if not is_connected(A):
            # recorded, not raised: inference still runs on the disconnected resample
            record = _handle_error(DisconnectedSampleError(f"Bootstrap resample {self.replicate} is disconnected"))
            notes["disconnected"] = {key: record[key] for key in ("error_type", "error", "category")}
        settings = InferenceSettings.from_config(self.config)
        outcomes = infer_blocks(A, truth, settings, inference_rng)
        return ReplicateResult(replicate=self.replicate, n=A.n, outcomes=outcomes, notes=notes)


def run_replicate(task: Union[SimulationTask, BootstrapTask]) -> ReplicateResult:
    """Run one task, turning recoverable failures into a recorded failure."""
    try:
        return task.run()
    except (SbmEbError, ValueError, linalg.LinAlgError, ArithmeticError) as e:
        n = getattr(task, "n", 0)
        failure = _handle_error(e)
        if not failure["recoverable"]:
            raise
        return ReplicateResult(replicate=task.replicate, n=n, failure=failure)


def pairwise_sign_tests(rows: List[dict], models: Sequence[str]) -> Dict[str, Optional[float]]:
    """Sign test p-values for every model pair over replicates where both succeeded."""
    by_model: Dict[str, Dict[int, float]] = {model: {} for model in models}
    for row in rows:
        by_model[row["model"]][row["replicate"]] = row["error"]
    tests: Dict[str, Optional[float]] = {}
    for a, b in itertools.combinations(models, 2):
        common = sorted(set(by_model[a]) & set(by_model[b]))
        name = f"{a}_vs_{b}"
        if not common:
            tests[name] = None
            continue
        try:
            tests[name] = paired_sign_test([by_model[a][r] for r in common], [by_model[b][r] for r in common])
        except AllTiesError:
            tests[name] = None
    return tests


def _difference_counts(rows: List[dict], n: int, first: str = "asge", second: str = "gmm") -> Dict[str, int]:
    """Histogram of per-replicate differences in misassigned vertex counts (first minus second)."""
    errors: Dict[str, Dict[int, float]] = {first: {}, second: {}}
    for row in rows:
        if row["n"] == n and row["model"] in errors:
            errors[row["model"]][row["replicate"]] = row["error"]
    common = sorted(set(errors[first]) & set(errors[second]))
    counts: Dict[str, int] = {}
    for r in common:
        diff = int(round((errors[first][r] - errors[second][r]) * n))
        counts[str(diff)] = counts.get(str(diff), 0) + 1
    return dict(sorted(counts.items(), key=lambda item: int(item[0])))


class ExperimentRunner:
    """Runs simulation studies and bootstrap studies and writes their reports."""

    def __init__(self, out_dir: Union[str, Path] = "results", threads: int = 1):
        """Initialize runner.

        Args:
            out_dir: Directory receiving CSV, plot-data and summary files
            threads: Worker processes for replicates (1 runs in-process)
        """
        self.out_dir = Path(out_dir)
        self.threads = max(1, int(threads))

    def run_experiment(self, config: ExperimentConfig) -> ExperimentResult:
        """Run every (n, replicate) of a simulation study and write its reports."""
        log_phase_start(f"EXPERIMENT {config.name}")
        children = np.random.SeedSequence(config.seed).spawn(len(config.n_values) * config.replicates)
        tasks = [
            SimulationTask(config=config, n=int(n), replicate=r, seed=children[i * config.replicates + r])
            for i, n in enumerate(config.n_values)
            for r in range(config.replicates)
        ]
        results = self._execute(tasks)
        result = self._write_reports(config.name, results, config.models, [int(n) for n in config.n_values])
        log_phase_end(f"EXPERIMENT {config.name}", result.success)
        return result

    def run_wiki_bootstrap(self, config: WikiConfig) -> ExperimentResult:
        """Bootstrap study on an observed labeled graph.

        Raises:
            DataError: the graph is disconnected after removing isolated vertices
            ConfigError: a class has fewer than n_per_class vertices, or label count differs from K
        """
        log_phase_start("WIKI BOOTSTRAP")
        A, labels = load_graph(config.graph_path, config.labels_path)
        A, labels, _ = remove_isolates(A, labels)
        if not is_connected(A):
            raise DataError("The graph is disconnected after removing isolated vertices")
        classes = np.unique(labels)
        if len(classes) != config.K:
            raise ConfigError(f"Labels define {len(classes)} classes but K={config.K}")
        class_members = tuple(np.flatnonzero(labels == k) for k in classes)
        sizes = [len(members) for members in class_members]
        if min(sizes) < config.n_per_class:
            raise ConfigError(f"n_per_class={config.n_per_class} exceeds the smallest class size {min(sizes)}")
        logger.info(f"Loaded graph with n={A.n}, class sizes {sizes}")

        X_hat = adjacency_spectral_embedding(A, config.d).X_hat
        children = np.random.SeedSequence(config.seed).spawn(config.bootstrap_B)
        tasks = [
            BootstrapTask(config=config, X_hat=X_hat, class_members=class_members, replicate=b, seed=children[b])
            for b in range(config.bootstrap_B)
        ]
        results = self._execute(tasks)
        result = self._write_reports("wiki", results, config.models, [config.n_per_class * config.K])
        disconnected = [
            {"replicate": r.replicate, **r.notes["disconnected"]} for r in results if "disconnected" in r.notes
        ]
        result.summary["disconnected_resamples"] = len(disconnected)
        result.summary["disconnected"] = disconnected
        self._write_json(self.out_dir / "wiki_summary.json", result.summary)
        self._write_boxplot_data(self.out_dir / "wiki_boxplot.csv", result)
        log_phase_end("WIKI BOOTSTRAP", result.success)
        return result

    def _execute(self, tasks: Sequence[Union[SimulationTask, BootstrapTask]]) -> List[ReplicateResult]:
        """Run tasks on the worker pool; results come back in task order."""
        total = len(tasks)
        results: List[ReplicateResult] = []
        if self.threads == 1:
            iterator = map(run_replicate, tasks)
            for index, result in enumerate(iterator, start=1):
                self._report_progress(index, total, result)
                results.append(result)
            return results

        with ProcessPoolExecutor(max_workers=self.threads) as executor:
            for index, result in enumerate(executor.map(run_replicate, tasks), start=1):
                self._report_progress(index, total, result)
                results.append(result)
        return results

    @staticmethod
    def _report_progress(index: int, total: int, result: ReplicateResult) -> None:
        if result.success:
            status = ", ".join(f"{o.model} {o.error:.3f}" for o in result.outcomes)
        else:
            status = f"skipped ({result.failure['error_type']})"
        log_replicate(index, total, f"n={result.n} #{result.replicate}: {status}")

    def _write_reports(
        self, name: str, results: List[ReplicateResult], models: Sequence[str], n_values: Sequence[int]
    ) -> ExperimentResult:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        ordered_models = [model for model in MODELS if model in models]
        rows = [
            {
                "replicate": result.replicate,
                "model": outcome.model,
                "n": result.n,
                "error": outcome.error,
                "accept_rate": outcome.accept_rate,
                "rhat": outcome.rhat,
            }
            for result in results
            if result.success
            for outcome in result.outcomes
        ]

        csv_path = self.out_dir / f"{name}.csv"
        with open(csv_path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.DictWriter(handle, fieldnames=CSV_COLUMNS)
            writer.writeheader()
            writer.writerows(rows)
        log_file_operation("Wrote", str(csv_path))

        plot_path = self.out_dir / f"{name}_plot.csv"
        per_n: Dict[str, dict] = {}
        with open(plot_path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["n", "model", "count", "mean", "se", "median", "ci95_low", "ci95_high"])
            for n in n_values:
                n_rows = [row for row in rows if row["n"] == n]
                summaries = {}
                with LogContext(f"n = {n}"):
                    for model in ordered_models:
                        summary = summarize_errors([row["error"] for row in n_rows if row["model"] == model])
                        summaries[model] = summary.as_dict()
                        writer.writerow(
                            [n, model, summary.count, summary.mean, summary.standard_error,
                             summary.median, summary.ci_low, summary.ci_high]
                        )
                        details = f"median {summary.median:.4f}, {summary.count} replicates"
                        log_model_result(model, summary.mean, details)
                per_n[str(n)] = {
                    "errors": summaries,
                    "sign_tests": pairwise_sign_tests(n_rows, ordered_models),
                }
                if "asge" in ordered_models and "gmm" in ordered_models:
                    per_n[str(n)]["asge_minus_gmm_error_counts"] = _difference_counts(n_rows, n)
        log_file_operation("Wrote", str(plot_path))

        failures = [
            {"replicate": r.replicate, "n": r.n, "error_type": r.failure["error_type"], "error": r.failure["error"]}
            for r in results
            if not r.success
        ]
        summary = {
            "name": name,
            "models": ordered_models,
            "replicates_run": len(results),
            "replicates_failed": len(failures),
            "alignment": "errors minimized over block label permutations",
            "by_n": per_n,
            "failures": failures,
        }
        summary_path = self.out_dir / f"{name}_summary.json"
        self._write_json(summary_path, summary)

        return ExperimentResult(
            success=len(failures) < len(results),
            name=name,
            replicates=results,
            paths={"csv": str(csv_path), "plot": str(plot_path), "summary": str(summary_path)},
            summary=summary,
        )

    @staticmethod
    def _write_json(path: Path, data: dict) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(data, handle, indent=2, sort_keys=True, default=_json_default)
            handle.write("\n")
        log_file_operation("Wrote", str(path))

    @staticmethod
    def _write_boxplot_data(path: Path, result: ExperimentResult) -> None:
        """Five-number summaries per model for box plots."""
        errors: Dict[str, List[float]] = {}
        for replicate in result.replicates:
            for outcome in replicate.outcomes:
                errors.setdefault(outcome.model, []).append(outcome.error)
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["model", "min", "q1", "median", "q3", "max"])
            for model in MODELS:
                if model in errors:
                    q = np.quantile(errors[model], [0.0, 0.25, 0.5, 0.75, 1.0])
                    writer.writerow([model, *(float(v) for v in q)])
        result.paths["boxplot"] = str(path)
        log_file_operation("Wrote", str(path))


def _json_default(value):
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    raise TypeError(f"Cannot serialize {type(value).__name__}")
