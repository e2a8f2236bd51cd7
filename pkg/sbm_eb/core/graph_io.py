"""Text formats for graphs, labels, parameters, embeddings, priors and traces.

Graph file: first line ``n m``, then m lines ``i j`` with 0-based endpoints.
Label file: n lines, one integer in 1..K per vertex. Prior file: ``K d``, then per
component a weight line, a mean row and d covariance rows. Blank lines and text after
``#`` are ignored everywhere. Labels are converted to 0-based on read and back
to 1-based on write.
"""

import logging
from pathlib import Path
from typing import Iterator, List, Optional, Tuple, Union

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from sbm_eb.core.exceptions import GraphParseError, SelfLoopError
from sbm_eb.core.sbm_model import AdjacencyMatrix, SbmParams

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
_FLOAT_FORMAT = "%.17g"


def _data_lines(path: PathLike) -> Iterator[Tuple[int, List[str]]]:
    """Yield (line_number, tokens) for every non-empty, non-comment line."""
    with open(path, "r", encoding="utf-8") as handle:
        for line_number, raw in enumerate(handle, start=1):
            content = raw.split("#", 1)[0].strip()
            if content:
                yield line_number, content.split()


def _parse_ints(tokens: List[str], path: PathLike, line_number: int) -> List[int]:
    try:
        return [int(token) for token in tokens]
    except ValueError:
        raise GraphParseError(f"expected integers, got {' '.join(tokens)!r}", str(path), line_number)


def _parse_floats(tokens: List[str], path: PathLike, line_number: int) -> List[float]:
    try:
        return [float(token) for token in tokens]
    except ValueError:
        raise GraphParseError(f"expected numbers, got {' '.join(tokens)!r}", str(path), line_number)


def read_graph(path: PathLike) -> AdjacencyMatrix:
    """Read an undirected graph from an edge list file.

    Duplicate edges collapse into one with a warning.

    Raises:
        GraphParseError: malformed header or edge line, out-of-range endpoint,
            or an edge count that disagrees with the header
        SelfLoopError: an edge joins a vertex to itself
    """
    lines = _data_lines(path)
    try:
        header_line, header = next(lines)
    except StopIteration:
        raise GraphParseError("missing 'n m' header", str(path), 1)
    values = _parse_ints(header, path, header_line)
    if len(values) != 2 or values[0] < 0 or values[1] < 0:
        raise GraphParseError("header must be two non-negative integers 'n m'", str(path), header_line)
    n, m = values

    entries = np.zeros((n, n), dtype=np.uint8)
    listed = 0
    duplicates = 0
    for line_number, tokens in lines:
        edge = _parse_ints(tokens, path, line_number)
        if len(edge) != 2:
            raise GraphParseError("edge line must hold two endpoints", str(path), line_number)
        i, j = edge
        if not (0 <= i < n and 0 <= j < n):
            raise GraphParseError(f"endpoint out of range 0..{n - 1}", str(path), line_number)
        if i == j:
            raise SelfLoopError(f"self-loop on vertex {i}", str(path), line_number)
        if entries[i, j]:
            duplicates += 1
        entries[i, j] = entries[j, i] = 1
        listed += 1

    if listed != m:
        raise GraphParseError(f"header declares {m} edges but {listed} were listed", str(path), header_line)
    if duplicates:
        logger.warning(f"{path}: collapsed {duplicates} duplicate edge(s)")
    return AdjacencyMatrix(entries)


def read_labels(path: PathLike, n: Optional[int] = None) -> np.ndarray:
    """Read 1-based block labels and return them 0-based.

    Raises:
        GraphParseError: a non-integer or non-positive label, or a count different from n
    """
    labels = []
    for line_number, tokens in _data_lines(path):
        values = _parse_ints(tokens, path, line_number)
        if len(values) != 1 or values[0] < 1:
            raise GraphParseError("label line must hold one integer >= 1", str(path), line_number)
        labels.append(values[0] - 1)
    if n is not None and len(labels) != n:
        raise GraphParseError(f"expected {n} labels, found {len(labels)}", str(path), 0)
    return np.array(labels, dtype=np.int64)


def load_graph(
    graph_path: PathLike, labels_path: Optional[PathLike] = None
) -> Tuple[AdjacencyMatrix, Optional[np.ndarray]]:
    """Read a graph and, when given, its vertex labels (0-based)."""
    A = read_graph(graph_path)
    labels = read_labels(labels_path, A.n) if labels_path is not None else None
    logger.debug(f"Loaded {graph_path}: n={A.n}, m={A.edge_count}")
    return A, labels


def write_graph(path: PathLike, A: AdjacencyMatrix) -> None:
    edges = A.edges()
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(f"{A.n} {len(edges)}\n")
        for i, j in edges:
            handle.write(f"{i} {j}\n")


def write_labels(path: PathLike, tau: np.ndarray) -> None:
    np.savetxt(path, np.asarray(tau, dtype=np.int64) + 1, fmt="%d")


def write_matrix(path: PathLike, matrix: np.ndarray, header: str = "") -> None:
    """Write a real matrix, one row per line, with full double precision."""
    np.savetxt(path, np.atleast_2d(matrix), fmt=_FLOAT_FORMAT, header=header)


def read_matrix(path: PathLike) -> np.ndarray:
    rows = [_parse_floats(tokens, path, line_number) for line_number, tokens in _data_lines(path)]
    if not rows or len({len(row) for row in rows}) != 1:
        raise GraphParseError("matrix rows are missing or ragged", str(path), 0)
    return np.array(rows)


def write_params(path: PathLike, params: SbmParams) -> None:
    """Write ``K d``, then rho on one line, then the K rows of B."""
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(f"{params.K} {params.d}\n")
        handle.write(" ".join(_FLOAT_FORMAT % value for value in params.rho) + "\n")
        for row in params.B:
            handle.write(" ".join(_FLOAT_FORMAT % value for value in row) + "\n")


def read_params(path: PathLike) -> SbmParams:
    """Read a params file written by write_params; nu is refactored from B."""
    lines = list(_data_lines(path))
    if not lines:
        raise GraphParseError("empty params file", str(path), 1)
    header_line, header = lines[0]
    values = _parse_ints(header, path, header_line)
    if len(values) != 2:
        raise GraphParseError("header must be 'K d'", str(path), header_line)
    K, d = values
    if len(lines) != K + 2:
        raise GraphParseError(f"expected rho and {K} rows of B after the header", str(path), header_line)
    rho = _parse_floats(lines[1][1], path, lines[1][0])
    B = [_parse_floats(tokens, path, line_number) for line_number, tokens in lines[2:]]
    if len(rho) != K or any(len(row) != K for row in B):
        raise GraphParseError(f"rho and B rows must have {K} entries", str(path), lines[1][0])
    return SbmParams.from_block_matrix(np.array(B), np.array(rho), d)


def write_prior(path: PathLike, weights: np.ndarray, means: np.ndarray, covariances: np.ndarray) -> None:
    """Write ``K d``, then per component its weight, its mean row and d covariance rows."""
    means = np.asarray(means, dtype=float)
    K, d = means.shape
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(f"{K} {d}\n")
        for weight, mean, cov in zip(np.asarray(weights, dtype=float), means, covariances):
            handle.write(_FLOAT_FORMAT % weight + "\n")
            handle.write(" ".join(_FLOAT_FORMAT % value for value in mean) + "\n")
            for row in cov:
                handle.write(" ".join(_FLOAT_FORMAT % value for value in row) + "\n")


def read_prior(path: PathLike) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read (weights, means, covariances) written by write_prior."""
    lines = list(_data_lines(path))
    if not lines:
        raise GraphParseError("empty prior file", str(path), 1)
    header_line, header = lines[0]
    values = _parse_ints(header, path, header_line)
    if len(values) != 2 or min(values) < 1:
        raise GraphParseError("header must be 'K d' with positive entries", str(path), header_line)
    K, d = values
    rows_per_component = d + 2
    if len(lines) != 1 + K * rows_per_component:
        raise GraphParseError(f"expected {K} components of {rows_per_component} rows", str(path), header_line)

    weights = np.empty(K)
    means = np.empty((K, d))
    covariances = np.empty((K, d, d))
    for k in range(K):
        block = lines[1 + k * rows_per_component : 1 + (k + 1) * rows_per_component]
        for offset, (line_number, tokens) in enumerate(block):
            expected = 1 if offset == 0 else d
            if len(tokens) != expected:
                raise GraphParseError(f"expected {expected} entries, got {len(tokens)}", str(path), line_number)
            row = _parse_floats(tokens, path, line_number)
            if offset == 0:
                weights[k] = row[0]
            elif offset == 1:
                means[k] = row
            else:
                covariances[k, offset - 2] = row
    return weights, means, covariances


def write_trace(path: PathLike, iterations: np.ndarray, tau_samples: np.ndarray, header: str = "") -> None:
    """Write one row per recorded iteration: the iteration, then 1-based labels."""
    table = np.column_stack([np.asarray(iterations, dtype=np.int64), np.asarray(tau_samples) + 1])
    np.savetxt(path, table, fmt="%d", header=header)


def read_trace(path: PathLike) -> Tuple[np.ndarray, np.ndarray]:
    """Return (iterations, 0-based tau samples) from a trace file."""
    rows = [_parse_ints(tokens, path, line_number) for line_number, tokens in _data_lines(path)]
    if not rows or len({len(row) for row in rows}) != 1:
        raise GraphParseError("trace rows are missing or ragged", str(path), 0)
    table = np.array(rows, dtype=np.int64)
    return table[:, 0], table[:, 1:] - 1


def remove_isolates(A: AdjacencyMatrix, labels: Optional[np.ndarray] = None):
    """Drop zero-degree vertices; returns (graph, labels, kept vertex indices)."""
    kept = np.flatnonzero(A.degrees() > 0)
    removed = A.n - len(kept)
    if removed:
        logger.info(f"Removed {removed} isolated vertices")
    sub_labels = labels[kept] if labels is not None else None
    return A.subgraph(kept), sub_labels, kept


def is_connected(A: AdjacencyMatrix) -> bool:
    if A.n == 0:
        return True
    n_components, _ = connected_components(csr_matrix(A.entries), directed=False)
    return n_components == 1


def read_trace_header(path: PathLike) -> dict:
    """Parse ``key=value`` tokens from the leading comment line of a trace file."""
    with open(path, "r", encoding="utf-8") as handle:
        first = handle.readline().strip()
    if not first.startswith("#"):
        return {}
    pairs = (token.split("=", 1) for token in first.lstrip("#").split() if "=" in token)
    return {key: value for key, value in pairs}
