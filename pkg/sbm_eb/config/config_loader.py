"""Configuration loading for the sbm-eb CLI and experiment harness.

Tool settings are loaded from:
1. ~/.sbm-eb.toml (user-level)
2. .sbm-eb.toml (project-level, current directory)
3. Defaults (if no config files found)

CLI arguments always override config file values, and SBM_EB_THREADS
overrides the worker count.

Experiment and Wikipedia bootstrap runs are described by flat ``key = value``
files (TOML syntax, top-level keys only) whose keys match the fields of
ExperimentConfig and WikiConfig.
"""

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from sbm_eb.core.exceptions import ConfigError, InvalidConcentrationError, SbmEbError
from sbm_eb.core.sbm_model import latent_positions_from_B
from sbm_eb.samplers.priors import ConstraintMode

_PROJECT_CONFIG_FILENAME = ".sbm-eb.toml"
THREADS_ENV_VAR = "SBM_EB_THREADS"

_CLI_FIELD_MAPPING = {
    "log_level": "log_level",
    "threads": "threads",
}

_MCMC_FIELD_MAPPING = {
    "iters": "iters",
    "chains": "chains",
    "thin": "thin",
}

_GMM_FIELD_MAPPING = {
    "restarts": "gmm_restarts",
    "max_iters": "gmm_max_iters",
    "tol": "gmm_tol",
    "reg": "gmm_reg",
}

_SECTION_MAPPINGS: List[Tuple[str, Dict[str, str]]] = [
    ("cli", _CLI_FIELD_MAPPING),
    ("mcmc", _MCMC_FIELD_MAPPING),
    ("gmm", _GMM_FIELD_MAPPING),
]

GENERATORS = ("sbm", "sparse_sbm", "dirichlet_rdpg")
MODELS = ("exact", "gold", "asge", "flat", "gmm")


@dataclass
class CLIConfig:
    """Tool-wide defaults from file or built-ins."""

    log_level: str = "INFO"
    threads: int = 1

    # MCMC defaults
    iters: int = 10_000
    chains: int = 2
    thin: int = 1

    # EM defaults
    gmm_restarts: int = 10
    gmm_max_iters: int = 500
    gmm_tol: float = 1e-8
    gmm_reg: float = 1e-9


def load_config() -> CLIConfig:
    """Load CLIConfig from the user then project TOML files, then apply SBM_EB_THREADS.

    Missing or unreadable files are silently ignored.
    """
    config = CLIConfig()
    for config_path in _get_config_paths():
        if config_path.exists():
            config = _merge_config(config, config_path)
    config.threads = resolve_threads(config.threads)
    return config


def resolve_threads(configured: int) -> int:
    """Worker count: SBM_EB_THREADS when set to a positive integer, else configured."""
    raw = os.environ.get(THREADS_ENV_VAR)
    if raw:
        try:
            value = int(raw)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV_VAR} must be an integer, got {raw!r}")
        if value < 1:
            raise ConfigError(f"{THREADS_ENV_VAR} must be positive, got {value}")
        return value
    return max(1, int(configured))


def _merge_config(base_config: CLIConfig, config_path: Path) -> CLIConfig:
    toml_data = _load_toml_file(config_path)
    if toml_data is None:
        return base_config
    for section_name, field_mapping in _SECTION_MAPPINGS:
        section_data = toml_data.get(section_name, {})
        for toml_key, attribute in field_mapping.items():
            if toml_key in section_data:
                setattr(base_config, attribute, section_data[toml_key])
    return base_config


def _get_config_paths() -> List[Path]:
    """User config first, then project config (which wins)."""
    return [Path.home() / _PROJECT_CONFIG_FILENAME, Path.cwd() / _PROJECT_CONFIG_FILENAME]


def _load_toml_file(config_path: Path) -> Optional[Dict[str, Any]]:
    """Parse a TOML file, returning None if it is unreadable or invalid."""
    try:
        with open(config_path, "rb") as toml_file:
            return tomllib.load(toml_file)
    except (OSError, ValueError, tomllib.TOMLDecodeError):
        return None


def parse_flat_toml(config_path: Path) -> Dict[str, Any]:
    """Parse a flat key = value file.

    Raises:
        ConfigError: the file is missing, is not valid TOML, or contains tables
    """
    try:
        with open(config_path, "rb") as toml_file:
            data = tomllib.load(toml_file)
    except FileNotFoundError:
        raise ConfigError(f"Config file not found: {config_path}")
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"Invalid config file {config_path}: {e}")
    nested = [key for key, value in data.items() if isinstance(value, dict)]
    if nested:
        raise ConfigError(f"Config files must be flat key = value; found tables {nested}")
    return data


@dataclass
class ExperimentConfig:
    """One simulation study.

    The generator is one of:
      - sbm: point masses at nu (factored from B unless given) with weights rho
      - sparse_sbm: as sbm with B scaled by 1/sqrt(n) at each n
      - dirichlet_rdpg: X_i ~ sum_k rho_k Dirichlet(r * nu_k)
    """

    name: str
    B: List[List[float]]
    rho: List[float]
    n_values: List[int]
    generator: str = "sbm"
    nu: Optional[List[List[float]]] = None
    r: Optional[float] = None
    replicates: int = 100
    models: List[str] = field(default_factory=lambda: list(MODELS))
    iters: int = 10_000
    chains: int = 2
    thin: int = 1
    burn_in: Optional[int] = None
    d: int = 2
    K: int = 2
    seed: int = 0
    constraint_mode: str = "homophilic"
    theta: Optional[List[float]] = None
    gmm_restarts: int = 10
    gmm_max_iters: int = 500
    gmm_tol: float = 1e-8
    gmm_reg: float = 1e-9

    def __post_init__(self) -> None:
        if self.generator not in GENERATORS:
            raise ConfigError(f"generator must be one of {GENERATORS}, got {self.generator!r}")
        _check_models(self.models)
        _check_common(self.replicates, self.chains, self.iters, self.thin, self.K, self.d)
        _check_constraint_mode(self.constraint_mode)

        B = np.asarray(self.B, dtype=float)
        rho = np.asarray(self.rho, dtype=float)
        if B.shape != (self.K, self.K):
            raise ConfigError(f"B must be {self.K}x{self.K}, got shape {B.shape}")
        if rho.shape != (self.K,):
            raise ConfigError(f"rho must have {self.K} entries, got {rho.shape}")
        if self.nu is not None:
            nu = np.asarray(self.nu, dtype=float)
            if nu.shape != (self.K, self.d):
                raise ConfigError(f"nu must be {self.K}x{self.d}")
            # published positions are rounded, so agreement with B is loose
            if np.abs(nu @ nu.T - B).max() > 1e-3:
                raise ConfigError("nu nu^T does not reproduce B")
        if self.generator == "dirichlet_rdpg":
            if self.r is None or self.r <= 0:
                raise InvalidConcentrationError("dirichlet_rdpg requires a positive concentration r")
            _check_dirichlet_centers(self.nu, B, self.d, self.r)
            if {"exact", "gold"} & set(self.models):
                raise ConfigError("exact and gold assume point-mass latent positions; drop them for dirichlet_rdpg")
        if not self.n_values or any(int(n) < self.K for n in self.n_values):
            raise ConfigError(f"n_values must be non-empty and each at least K={self.K}")
        if self.theta is not None and len(self.theta) != self.K:
            raise ConfigError(f"theta must have {self.K} entries")
        if self.burn_in is not None and not 0 <= self.burn_in <= self.iters:
            raise ConfigError(f"burn_in must lie in [0, {self.iters}]")

    @property
    def constraint(self) -> ConstraintMode:
        return ConstraintMode(self.constraint_mode)

    def block_matrix_at(self, n: int) -> np.ndarray:
        """B used to generate graphs of size n."""
        B = np.asarray(self.B, dtype=float)
        if self.generator == "sparse_sbm":
            return B / np.sqrt(n)
        return B


@dataclass
class WikiConfig:
    """Bootstrap study on an observed labeled graph."""

    graph_path: str
    labels_path: str
    n_per_class: int = 100
    bootstrap_B: int = 200
    d: int = 3
    K: int = 3
    seed: int = 0
    models: List[str] = field(default_factory=lambda: ["asge", "flat", "gmm"])
    iters: int = 10_000
    chains: int = 2
    thin: int = 1
    burn_in: Optional[int] = None
    constraint_mode: str = "box"
    clip: bool = True
    theta: Optional[List[float]] = None
    gmm_restarts: int = 10
    gmm_max_iters: int = 500
    gmm_tol: float = 1e-8
    gmm_reg: float = 1e-9

    def __post_init__(self) -> None:
        _check_models(self.models)
        if any(model in ("exact", "gold") for model in self.models):
            raise ConfigError("exact and gold need true parameters, which an observed graph lacks")
        _check_common(self.bootstrap_B, self.chains, self.iters, self.thin, self.K, self.d)
        _check_constraint_mode(self.constraint_mode)
        if self.n_per_class < 1:
            raise ConfigError(f"n_per_class must be positive, got {self.n_per_class}")

    @property
    def constraint(self) -> ConstraintMode:
        return ConstraintMode(self.constraint_mode)


def _check_dirichlet_centers(nu: Optional[List[List[float]]], B: np.ndarray, d: int, r: float) -> None:
    """Every Dirichlet parameter r * nu_k must be entrywise positive.

    Without an explicit nu the centers come from factoring B, whose trailing
    coordinates usually take both signs.
    """
    if nu is None:
        try:
            centers = latent_positions_from_B(B, d)
        except SbmEbError as e:
            raise ConfigError(f"B cannot be factored into Dirichlet centers: {e}")
        source = "the factorization of B"
    else:
        centers = np.asarray(nu, dtype=float)
        source = "nu"
    if np.any(r * centers <= 0):
        raise InvalidConcentrationError(
            f"dirichlet_rdpg needs r * nu_k > 0 entrywise; {source} has non-positive entries. "
            "Give positive simplex centers as nu."
        )


def _check_models(models: List[str]) -> None:
    unknown = sorted(set(models) - set(MODELS))
    if unknown or not models:
        raise ConfigError(f"models must be a non-empty subset of {MODELS}, got {models}")


def _check_common(replicates: int, chains: int, iters: int, thin: int, K: int, d: int) -> None:
    if replicates < 1:
        raise ConfigError(f"replicates must be at least 1, got {replicates}")
    if chains < 2:
        raise ConfigError(f"chains must be at least 2 for Gelman-Rubin, got {chains}")
    if iters < 0 or thin < 1:
        raise ConfigError(f"iters must be >= 0 and thin >= 1, got {iters}, {thin}")
    if K < 1 or d < 1:
        raise ConfigError(f"K and d must be positive, got K={K}, d={d}")


def _check_constraint_mode(mode: str) -> None:
    if mode not in {m.value for m in ConstraintMode}:
        raise ConfigError(f"constraint_mode must be homophilic or box, got {mode!r}")


def _build(cls, data: Dict[str, Any], defaults: Optional[CLIConfig]):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"Unknown {cls.__name__} keys: {unknown}")
    values = dict(data)
    if defaults is not None:
        for key, attribute in (
            ("iters", "iters"),
            ("chains", "chains"),
            ("thin", "thin"),
            ("gmm_restarts", "gmm_restarts"),
            ("gmm_max_iters", "gmm_max_iters"),
            ("gmm_tol", "gmm_tol"),
            ("gmm_reg", "gmm_reg"),
        ):
            values.setdefault(key, getattr(defaults, attribute))
    try:
        return cls(**values)
    except TypeError as e:
        raise ConfigError(f"Invalid {cls.__name__}: {e}")


def load_experiment_config(
    config_path: Path,
    overrides: Optional[Dict[str, Any]] = None,
    defaults: Optional[CLIConfig] = None,
) -> ExperimentConfig:
    """Read an ExperimentConfig file; overrides (e.g. from CLI flags) win over file values."""
    data = parse_flat_toml(Path(config_path))
    data.setdefault("name", Path(config_path).stem)
    data.update({key: value for key, value in (overrides or {}).items() if value is not None})
    return _build(ExperimentConfig, data, defaults)


def load_wiki_config(
    config_path: Path,
    overrides: Optional[Dict[str, Any]] = None,
    defaults: Optional[CLIConfig] = None,
) -> WikiConfig:
    """Read a WikiConfig file; relative data paths resolve against the file's directory."""
    config_path = Path(config_path)
    data = parse_flat_toml(config_path)
    data.update({key: value for key, value in (overrides or {}).items() if value is not None})
    for key in ("graph_path", "labels_path"):
        if key in data and not Path(data[key]).is_absolute():
            data[key] = str(config_path.parent / data[key])
    return _build(WikiConfig, data, defaults)


def get_config_example() -> str:
    """Example .sbm-eb.toml content."""
    return """# sbm-eb configuration file
# Place this file as .sbm-eb.toml in your project root or ~/.sbm-eb.toml for user defaults

[cli]
# Logging level: DEBUG, INFO, WARNING, ERROR, CRITICAL
log_level = "INFO"

# Worker processes for replicates (SBM_EB_THREADS overrides)
threads = 1

[mcmc]
# Iterations per chain, parallel chains per model, thinning interval
iters = 10000
chains = 2
thin = 1

[gmm]
# EM restarts, iteration cap, relative tolerance, covariance regularization
restarts = 10
max_iters = 500
tol = 1e-8
reg = 1e-9
"""
