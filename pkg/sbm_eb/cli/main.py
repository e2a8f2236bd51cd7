"""Main CLI entry point for sbm-eb."""

import argparse
import csv
import json
import math
import sys
from pathlib import Path
from typing import Dict, List, Optional

try:
    from importlib.metadata import version
except ImportError:
    from importlib_metadata import version

import numpy as np
from rich.console import Console
from rich.panel import Panel

from sbm_eb.config.config_loader import (
    MODELS,
    CLIConfig,
    get_config_example,
    load_config,
    load_experiment_config,
    load_wiki_config,
    resolve_threads,
)
from sbm_eb.core.evaluation import (
    RHAT_THRESHOLD,
    choose_burn_in,
    gelman_rubin,
    misassignment_rate,
    posterior_tau_estimate,
    summarize_errors,
)
from sbm_eb.core.exceptions import ConfigError, InsufficientLengthError, SbmEbError
from sbm_eb.core.gmm_prior import GmmOptions, fit_gmm
from sbm_eb.core.graph_io import (
    read_graph,
    read_labels,
    read_matrix,
    read_params,
    read_prior,
    read_trace,
    read_trace_header,
    write_graph,
    write_labels,
    write_matrix,
    write_params,
    write_prior,
    write_trace,
)
from sbm_eb.core.orchestrator import (
    CSV_COLUMNS,
    ExperimentRunner,
    InferenceSettings,
    pairwise_sign_tests,
    build_prior,
    generate_graph,
    summarize_chains,
)
from sbm_eb.core.spectral_embed import adjacency_spectral_embedding
from sbm_eb.samplers.posterior_mcmc import ChainSchedule, ChainTrace, initialize_chain, run_chain
from sbm_eb.samplers.priors import ConstraintMode, ModelVariant, PriorSpec
from sbm_eb.utils.logging import log_convergence_result, log_file_operation, setup_logging

console = Console()

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


def _print_error(message: str, suggestion: Optional[str] = None, details: Optional[str] = None) -> None:
    """Print a formatted error message with optional suggestions."""
    console.print(f"[bold red]❌ Error:[/bold red] {message}")
    if details:
        console.print(f"[dim]{details}[/dim]")
    if suggestion:
        console.print(f"[yellow]💡 Suggestion:[/yellow] {suggestion}")


def _print_success(message: str, details: Optional[dict] = None) -> None:
    """Print a formatted success message."""
    console.print(f"[bold green]✅ {message}[/bold green]")
    if details:
        for key, value in details.items():
            console.print(f"  [cyan]{key}:[/cyan] {value}")


def _out_dir(args: argparse.Namespace) -> Path:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sbm-eb",
        description="Empirical Bayes block membership estimation for stochastic blockmodels",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Simulate a graph from a study config
  sbm-eb simulate --config configs/k2_dense.toml --n 500 --seed 1 --out-dir run/

  # Embed, fit the mixture prior, and sample the posterior
  sbm-eb embed run/graph.txt --d 2 --out-dir run/
  sbm-eb fit-gmm run/embedding.txt --K 2 --out-dir run/
  sbm-eb sample-posterior run/graph.txt --model asge --prior run/prior.txt \\
      --init-labels run/gmm_labels.txt --truth run/labels.txt --out-dir run/

  # Reproduce a study
  sbm-eb experiment --config configs/k2_dense.toml --out-dir results/
  sbm-eb wiki --config configs/wiki.toml --out-dir results/wiki/
        """,
    )
    parser.add_argument("--version", action="version", version=f"sbm-eb {version('sbm-eb')}")
    parser.add_argument("--config-example", action="store_true", help="Print example .sbm-eb.toml and exit")
    parser.add_argument("-v", "--verbose", action="store_true", help="Enable verbose output (DEBUG)")
    parser.add_argument("-q", "--quiet", action="store_true", help="Suppress non-essential output (ERROR)")
    parser.add_argument(
        "--log-level",
        type=str,
        default=None,
        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
        help="Set logging level explicitly (overrides -v/-q)",
    )

    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    simulate = subparsers.add_parser("simulate", help="Sample a graph from a study config")
    simulate.add_argument("--config", required=True, help="Experiment config file (key = value)")
    simulate.add_argument("--n", type=int, default=None, help="Vertices (default: first n_values entry)")
    simulate.add_argument("--seed", type=int, default=None, help="Random seed (default: config seed)")
    simulate.add_argument("--out-dir", default=".", help="Output directory")

    embed = subparsers.add_parser("embed", help="Adjacency spectral embedding of a graph file")
    embed.add_argument("graph", help="Graph file")
    embed.add_argument("--d", type=int, required=True, help="Embedding dimension")
    embed.add_argument("--out-dir", default=".", help="Output directory")

    fit = subparsers.add_parser("fit-gmm", help="Fit the Gaussian mixture prior to an embedding")
    fit.add_argument("embedding", help="Embedding file (n rows of d values)")
    fit.add_argument("--K", type=int, required=True, help="Number of blocks")
    fit.add_argument("--seed", type=int, default=0, help="Random seed")
    fit.add_argument("--out-dir", default=".", help="Output directory")

    sample = subparsers.add_parser("sample-posterior", help="Run Metropolis-within-Gibbs chains")
    sample.add_argument("graph", help="Graph file")
    sample.add_argument("--model", required=True, choices=["exact", "gold", "asge", "flat"])
    sample.add_argument("--prior", default=None, help="Prior file from fit-gmm (asge, flat)")
    sample.add_argument("--params", default=None, help="True params file (exact, gold)")
    sample.add_argument("--init-labels", default=None, help="Initial labels (default: GMM labels)")
    sample.add_argument("--truth", default=None, help="True labels for error tracking")
    sample.add_argument("--K", type=int, default=None, help="Number of blocks (default: from prior/params)")
    sample.add_argument("--d", type=int, default=None, help="Latent dimension (default: from prior/params)")
    sample.add_argument("--iters", type=int, default=None, help="Iterations per chain")
    sample.add_argument("--burn-in", type=int, default=None, help="Burn-in iterations")
    sample.add_argument("--thin", type=int, default=None, help="Thinning interval")
    sample.add_argument("--chains", type=int, default=None, help="Parallel chains")
    sample.add_argument("--seed", type=int, default=0, help="Random seed")
    sample.add_argument("--constraint", default="homophilic", choices=[m.value for m in ConstraintMode])
    sample.add_argument("--out-dir", default=".", help="Output directory")

    evaluate = subparsers.add_parser("evaluate", help="Summarize traces or replicate results")
    evaluate.add_argument("--traces", nargs="+", default=None, help="Trace files of one model's chains")
    evaluate.add_argument("--truth", default=None, help="True labels (required with --traces)")
    evaluate.add_argument("--K", type=int, default=None, help="Number of blocks (default: from truth)")
    evaluate.add_argument("--burn-in", type=int, default=None, help="Burn-in iteration")
    evaluate.add_argument("--replicate", type=int, default=0, help="Replicate index for the CSV row")
    evaluate.add_argument("--results", default=None, help="Replicate CSV from an experiment run")
    evaluate.add_argument("--out-dir", default=".", help="Output directory")

    for name, help_text in (
        ("experiment", "Run a simulation study from a config file"),
        ("wiki", "Run the bootstrap study on an observed labeled graph"),
    ):
        study = subparsers.add_parser(name, help=help_text)
        study.add_argument("--config", required=True, help="Study config file (key = value)")
        study.add_argument("--out-dir", default="results", help="Output directory")
        study.add_argument("--threads", type=int, default=None, help="Worker processes")
        study.add_argument("--iters", type=int, default=None, help="Override MCMC iterations")
        study.add_argument("--seed", type=int, default=None, help="Override seed")
        if name == "experiment":
            study.add_argument("--replicates", type=int, default=None, help="Override replicate count")
        else:
            study.add_argument("--bootstrap", type=int, default=None, help="Override resample count")
            study.add_argument("--n-per-class", type=int, default=None, help="Override vertices per class")
    return parser


def _cmd_simulate(args: argparse.Namespace, config: CLIConfig) -> Dict[str, object]:
    experiment = load_experiment_config(Path(args.config), defaults=config)
    n = args.n if args.n is not None else int(experiment.n_values[0])
    seed = args.seed if args.seed is not None else experiment.seed
    A, latents, params = generate_graph(experiment, n, np.random.default_rng(seed))

    out_dir = _out_dir(args)
    write_graph(out_dir / "graph.txt", A)
    write_labels(out_dir / "labels.txt", latents.tau_true)
    write_matrix(out_dir / "latents.txt", latents.X)
    write_params(out_dir / "params.txt", params)
    for name in ("graph.txt", "labels.txt", "latents.txt", "params.txt"):
        log_file_operation("Wrote", str(out_dir / name))
    return {"n": A.n, "edges": A.edge_count, "density": f"{A.density:.4f}"}


def _cmd_embed(args: argparse.Namespace, config: CLIConfig) -> Dict[str, object]:
    A = read_graph(args.graph)
    embedding = adjacency_spectral_embedding(A, args.d)
    path = _out_dir(args) / "embedding.txt"
    write_matrix(path, embedding.X_hat, header="eigenvalues " + " ".join(f"{v:.17g}" for v in embedding.eigenvalues))
    log_file_operation("Wrote", str(path))
    return {"n": embedding.n, "d": embedding.d, "eigenvalues": np.round(embedding.eigenvalues, 4).tolist()}


def _gmm_options(config: CLIConfig) -> GmmOptions:
    return GmmOptions(
        restarts=config.gmm_restarts, max_iters=config.gmm_max_iters, tol=config.gmm_tol, reg=config.gmm_reg
    )


def _cmd_fit_gmm(args: argparse.Namespace, config: CLIConfig) -> Dict[str, object]:
    points = read_matrix(args.embedding)
    fit = fit_gmm(points, args.K, _gmm_options(config), np.random.default_rng(args.seed))
    out_dir = _out_dir(args)
    write_prior(out_dir / "prior.txt", fit.weights, fit.means, fit.covariances)
    write_labels(out_dir / "gmm_labels.txt", fit.hard_labels)
    for name in ("prior.txt", "gmm_labels.txt"):
        log_file_operation("Wrote", str(out_dir / name))
    return {"loglik": f"{fit.loglik:.4f}", "converged": fit.converged, "weights": np.round(fit.weights, 4).tolist()}


def _cmd_sample_posterior(args: argparse.Namespace, config: CLIConfig) -> Dict[str, object]:
    A = read_graph(args.graph)
    model = args.model
    params = read_params(args.params) if args.params else None
    means = covariances = None
    if args.prior:
        _, means, covariances = read_prior(args.prior)

    if params is not None:
        K, d = params.K, params.d
    elif means is not None:
        K, d = means.shape
    else:
        K, d = args.K, args.d
    if K is None or d is None:
        raise ConfigError("Pass --K and --d, or a prior or params file to infer them")

    rng = np.random.default_rng(args.seed)
    gmm_rng, chains_rng = rng.spawn(2)
    tau_hat = read_labels(args.init_labels, A.n) if args.init_labels else None
    if (model in ("asge", "flat") and means is None) or tau_hat is None:
        fit = fit_gmm(adjacency_spectral_embedding(A, d).X_hat, K, _gmm_options(config), gmm_rng)
        if means is None:
            means, covariances = fit.means, fit.covariances
        if tau_hat is None:
            tau_hat = fit.hard_labels

    constraint = ConstraintMode(args.constraint)
    settings = InferenceSettings(
        K=K,
        d=d,
        models=(model,),
        schedule=ChainSchedule(
            iters=args.iters if args.iters is not None else config.iters,
            burn_in=args.burn_in,
            thin=args.thin if args.thin is not None else config.thin,
        ),
        chains=args.chains if args.chains is not None else config.chains,
        constraint=constraint,
        gmm=_gmm_options(config),
    )
    asge_prior = PriorSpec.asge(means, covariances, constraint_mode=constraint) if means is not None else None
    prior, tau_init, init_prior = build_prior(model, A, tau_hat, settings, asge_prior, params)
    truth = read_labels(args.truth, A.n) if args.truth else None

    out_dir = _out_dir(args)
    traces = []
    for c, chain_rng in enumerate(chains_rng.spawn(settings.chains)):
        init = initialize_chain(prior, tau_init, chain_rng, init_prior)
        trace = run_chain(A, prior, init, settings.schedule, truth, chain_rng, seed=args.seed)
        path = out_dir / f"trace_chain{c}.txt"
        header = (
            f"variant={model} chain={c} seed={args.seed} "
            f"accepted={trace.accept_count} proposed={trace.propose_count}"
        )
        write_trace(path, trace.iterations, trace.tau_samples, header=header)
        log_file_operation("Wrote", str(path))
        traces.append(trace)

    outcome = summarize_chains(model, traces, settings, truth)
    summary = {
        "model": model,
        "n": A.n,
        "chains": settings.chains,
        "iters": settings.schedule.iters,
        "burn_in": outcome.burn_in,
        "accept_rate": outcome.accept_rate,
        "rhat": outcome.rhat,
        "final_error": outcome.error,
    }
    if truth is not None and not math.isnan(outcome.rhat):
        log_convergence_result(model, outcome.rhat, outcome.rhat < RHAT_THRESHOLD)
    write_labels(out_dir / "posterior_labels.txt", outcome.tau_hat)
    with open(out_dir / "sample_summary.json", "w", encoding="utf-8") as handle:
        json.dump(summary, handle, indent=2, sort_keys=True)
    return summary


def _load_trace(path: str, truth: np.ndarray, K: int) -> ChainTrace:
    iterations, tau_samples = read_trace(path)
    header = read_trace_header(path)
    return ChainTrace(
        tau_samples=tau_samples,
        nu_samples=np.empty((len(iterations), 0, 0)),
        iterations=iterations,
        accept_count=int(header.get("accepted", 0)),
        propose_count=int(header.get("proposed", 0)),
        misassign_series=np.array([misassignment_rate(tau, truth, K).error for tau in tau_samples]),
        loglik_series=np.empty(0),
        variant=ModelVariant(header.get("variant", "asge")),
    )


def _cmd_evaluate(args: argparse.Namespace, config: CLIConfig) -> Dict[str, object]:
    if args.results:
        return _evaluate_results(args)
    if not args.traces or not args.truth:
        raise ConfigError("evaluate needs --results, or --traces with --truth")

    truth = read_labels(args.truth)
    K = args.K if args.K is not None else int(truth.max()) + 1
    traces = [_load_trace(path, truth, K) for path in args.traces]
    series = [trace.misassign_series for trace in traces]
    iterations = traces[0].iterations

    if args.burn_in is not None:
        burn_in = args.burn_in
    else:
        burn_in = int(iterations[min(choose_burn_in(series), len(iterations) - 1)])
    try:
        rhat = gelman_rubin(series, min_length=2)
    except InsufficientLengthError:
        rhat = float("nan")
    tau_post = posterior_tau_estimate(traces, burn_in, truth, K)
    error = misassignment_rate(tau_post, truth, K).error
    rates = [t.acceptance_rate for t in traces if t.propose_count]
    accept_rate = float(np.mean(rates)) if rates else float("nan")
    model = traces[0].variant.value

    row = {"replicate": args.replicate, "model": model, "n": len(truth), "error": error,
           "accept_rate": accept_rate, "rhat": rhat}
    path = _out_dir(args) / "evaluation.csv"
    new_file = not path.exists()
    with open(path, "a", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=CSV_COLUMNS)
        if new_file:
            writer.writeheader()
        writer.writerow(row)
    log_file_operation("Appended", str(path))

    summary = summarize_errors([t.misassign_series[-1] for t in traces]).as_dict()
    return {**row, "burn_in": burn_in, "final_chain_errors": summary}


def _evaluate_results(args: argparse.Namespace) -> Dict[str, object]:
    rows: List[dict] = []
    with open(args.results, newline="", encoding="utf-8") as handle:
        for raw in csv.DictReader(handle):
            rows.append(
                {"replicate": int(raw["replicate"]), "model": raw["model"], "n": int(raw["n"]),
                 "error": float(raw["error"])}
            )
    models = [model for model in MODELS if any(row["model"] == model for row in rows)]
    report: Dict[str, object] = {}
    for n in sorted({row["n"] for row in rows}):
        n_rows = [row for row in rows if row["n"] == n]
        report[str(n)] = {
            "errors": {
                model: summarize_errors([r["error"] for r in n_rows if r["model"] == model]).as_dict()
                for model in models
            },
            "sign_tests": pairwise_sign_tests(n_rows, models),
        }
    path = _out_dir(args) / "evaluation_summary.json"
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(report, handle, indent=2, sort_keys=True)
    log_file_operation("Wrote", str(path))
    console.print_json(json.dumps(report))
    return {"summary": str(path)}


def _cmd_experiment(args: argparse.Namespace, config: CLIConfig) -> Dict[str, object]:
    overrides = {"iters": args.iters, "seed": args.seed, "replicates": args.replicates}
    experiment = load_experiment_config(Path(args.config), overrides, defaults=config)
    threads = resolve_threads(args.threads if args.threads is not None else config.threads)
    result = ExperimentRunner(args.out_dir, threads=threads).run_experiment(experiment)
    return {**result.paths, "failed replicates": result.summary["replicates_failed"]}


def _cmd_wiki(args: argparse.Namespace, config: CLIConfig) -> Dict[str, object]:
    overrides = {
        "iters": args.iters,
        "seed": args.seed,
        "bootstrap_B": args.bootstrap,
        "n_per_class": args.n_per_class,
    }
    wiki = load_wiki_config(Path(args.config), overrides, defaults=config)
    threads = resolve_threads(args.threads if args.threads is not None else config.threads)
    result = ExperimentRunner(args.out_dir, threads=threads).run_wiki_bootstrap(wiki)
    return {**result.paths, "failed resamples": result.summary["replicates_failed"]}


_COMMANDS = {
    "simulate": _cmd_simulate,
    "embed": _cmd_embed,
    "fit-gmm": _cmd_fit_gmm,
    "sample-posterior": _cmd_sample_posterior,
    "evaluate": _cmd_evaluate,
    "experiment": _cmd_experiment,
    "wiki": _cmd_wiki,
}


def main(argv: Optional[List[str]] = None) -> None:
    """Main CLI entry point."""
    parser = _build_parser()
    args = parser.parse_args(argv)

    if args.config_example:
        console.print(Panel(get_config_example(), title="📄 Example .sbm-eb.toml", border_style="cyan"))
        console.print("\n[dim]Save this as .sbm-eb.toml in your project root or ~/.sbm-eb.toml[/dim]")
        sys.exit(EXIT_OK)

    try:
        config = load_config()
    except ConfigError as e:
        _print_error(str(e), suggestion="Unset SBM_EB_THREADS or set it to a positive integer")
        sys.exit(EXIT_CONFIG)

    if args.log_level:
        log_level = args.log_level
    elif args.verbose:
        log_level = "DEBUG"
    elif args.quiet:
        log_level = "ERROR"
    else:
        log_level = config.log_level
    setup_logging(level=log_level)

    if not args.command:
        parser.print_help()
        sys.exit(1)

    try:
        details = _COMMANDS[args.command](args, config)
    except SbmEbError as e:
        _print_error(str(e), suggestion=_suggestion_for(e), details=type(e).__name__)
        sys.exit(e.exit_code)
    except (FileNotFoundError, IsADirectoryError) as e:
        _print_error(f"Cannot read input: {e}", suggestion="Check the file paths")
        sys.exit(EXIT_DATA)
    except KeyboardInterrupt:
        console.print("\n[yellow]⚠️  Interrupted by user[/yellow]")
        sys.exit(130)

    _print_success(f"{args.command} completed", details)
    sys.exit(EXIT_OK)


def _suggestion_for(error: SbmEbError) -> str:
    if error.exit_code == EXIT_CONFIG:
        return "Check the config file keys and values; see --help for each subcommand"
    if error.exit_code == EXIT_DATA:
        return "Check the input file format: 'n m' header, 0-based edges, one label in 1..K per line"
    if error.exit_code == EXIT_NUMERICAL:
        return "Check that d and K suit the graph and that parameters are positive semidefinite"
    return "Re-run with -v for details"


if __name__ == "__main__":
    main()
