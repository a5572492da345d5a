"""Attributed graphs: I/O, Laplacian positional encodings, k-hop subgraphs,
neighborhood statistics, stochastic block models and anomaly injection."""

from __future__ import annotations

import csv
import hashlib
import logging
import os
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, GraphShapeError, ParseError, RangeError

log = logging.getLogger(__name__)

VAR_FLOOR = 1e-3
EIG_ZERO_TOL = 1e-8
BUNDLE_CACHE_VERSION = 1


@dataclass(frozen=True, eq=False)
class Graph:
    adjacency: np.ndarray
    features: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        a = np.asarray(self.adjacency, dtype=np.float64)
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise GraphShapeError(f"adjacency must be square, got {a.shape}")
        if x.shape[0] != a.shape[0]:
            raise GraphShapeError(f"features have {x.shape[0]} rows for {a.shape[0]} nodes")
        if not np.array_equal(a, a.T):
            raise GraphShapeError("adjacency is not symmetric")
        if np.any(np.diag(a) != 0):
            raise GraphShapeError("adjacency has self-loops")
        if not np.all((a == 0) | (a == 1)):
            raise GraphShapeError("adjacency entries must be 0 or 1")
        a.setflags(write=False)
        x.setflags(write=False)
        object.__setattr__(self, "adjacency", a)
        object.__setattr__(self, "features", x)
        if self.labels is not None:
            y = np.asarray(self.labels, dtype=np.int64).reshape(-1)
            if y.shape[0] != a.shape[0]:
                raise GraphShapeError(f"{y.shape[0]} labels for {a.shape[0]} nodes")
            if not np.all((y == 0) | (y == 1)):
                raise GraphShapeError("labels must be 0/1")
            y.setflags(write=False)
            object.__setattr__(self, "labels", y)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def num_edges(self) -> int:
        return int(self.adjacency.sum() // 2)

    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    def neighbors(self, v: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[v])

    def with_labels(self, labels) -> "Graph":
        return Graph(self.adjacency, self.features, labels)

    def permuted(self, perm) -> "Graph":
        """Relabel nodes so that new node i is old node ``perm[i]``."""
        perm = np.asarray(perm)
        labels = None if self.labels is None else self.labels[perm]
        return Graph(self.adjacency[np.ix_(perm, perm)], self.features[perm], labels)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.adjacency).tobytes())
        h.update(np.ascontiguousarray(self.features).tobytes())
        return h.hexdigest()

    @classmethod
    def from_edges(cls, n: int, edges, features, labels=None) -> "Graph":
        a = np.zeros((n, n))
        for u, v in edges:
            if u != v:
                a[u, v] = a[v, u] = 1.0
        return cls(a, features, labels)


# ---------------------------------------------------------------- file I/O


def _read_rows(path):
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            yield lineno, row


def load_graph(nodes_path, edges_path, labels_path=None) -> Graph:
    """Read the three header-less CSV files into a :class:`Graph`.

    Edges are symmetrized and deduplicated; self-loops are dropped (the count
    is logged as a warning).
    """
    feats = []
    for lineno, row in _read_rows(nodes_path):
        try:
            feats.append([float(c) for c in row])
        except ValueError:
            raise ParseError(f"{nodes_path}:{lineno}: non-numeric feature value") from None
    if not feats:
        raise GraphShapeError(f"{nodes_path}: no node rows")
    widths = {len(r) for r in feats}
    if len(widths) != 1:
        raise GraphShapeError(f"{nodes_path}: rows have differing widths {sorted(widths)}")
    x = np.array(feats)
    n = x.shape[0]

    a = np.zeros((n, n))
    self_loops = 0
    for lineno, row in _read_rows(edges_path):
        if len(row) != 2:
            raise ParseError(f"{edges_path}:{lineno}: expected 'src,dst', got {len(row)} fields")
        try:
            u, v = int(row[0]), int(row[1])
        except ValueError:
            raise ParseError(f"{edges_path}:{lineno}: node ids must be integers") from None
        if not (0 <= u < n and 0 <= v < n):
            raise RangeError(f"{edges_path}:{lineno}: node id out of range [0, {n})")
        if u == v:
            self_loops += 1
            continue
        a[u, v] = a[v, u] = 1.0
    if self_loops:
        log.warning("dropped %d self-loop(s) from %s", self_loops, edges_path)

    labels = None
    if labels_path is not None:
        vals = []
        for lineno, row in _read_rows(labels_path):
            if len(row) != 1 or row[0].strip() not in ("0", "1"):
                raise ParseError(f"{labels_path}:{lineno}: label must be 0 or 1")
            vals.append(int(row[0]))
        if len(vals) != n:
            raise GraphShapeError(f"{labels_path}: {len(vals)} labels for {n} nodes")
        labels = np.array(vals)
    return Graph(a, x, labels)


def save_graph(g: Graph, nodes_path, edges_path, labels_path=None) -> None:
    np.savetxt(nodes_path, g.features, delimiter=",", fmt="%.17g")
    iu, ju = np.nonzero(np.triu(g.adjacency, k=1))
    with open(edges_path, "w") as fh:
        for u, v in zip(iu, ju):
            fh.write(f"{u},{v}\n")
    if labels_path is not None:
        if g.labels is None:
            raise GraphShapeError("graph has no labels to write")
        np.savetxt(labels_path, g.labels, fmt="%d")


# ---------------------------------------------------------------- Laplacian


@dataclass(frozen=True, eq=False)
class LaplacianBundle:
    laplacian: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    pe: np.ndarray


def normalized_laplacian(adjacency: np.ndarray) -> np.ndarray:
    deg = adjacency.sum(axis=1)
    with np.errstate(divide="ignore"):
        inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(deg), 0.0)
    lap = np.eye(adjacency.shape[0]) - inv_sqrt[:, None] * adjacency * inv_sqrt[None, :]
    return (lap + lap.T) / 2.0


def _canonical_signs(vecs: np.ndarray) -> np.ndarray:
    vecs = vecs.copy()
    for j in range(vecs.shape[1]):
        nz = np.flatnonzero(np.abs(vecs[:, j]) > EIG_ZERO_TOL)
        if nz.size and vecs[nz[0], j] < 0:
            vecs[:, j] *= -1.0
    return vecs


def build_laplacian_bundle(g: Graph, d_h: int) -> LaplacianBundle:
    """Eigendecompose the normalized Laplacian and take positional encodings.

    Node i's encoding is its row across the ``d_h`` eigenvectors with the
    smallest eigenvalues, after dropping the zero-eigenvalue (per-component
    constant) eigenvectors when something else is left. Missing columns are
    zero-padded.
    """
    if d_h < 1:
        raise ConfigError("d_h must be >= 1")
    lap = normalized_laplacian(g.adjacency)
    vals, vecs = np.linalg.eigh(lap)
    vals = np.clip(vals, 0.0, None)
    vecs = _canonical_signs(vecs)

    trivial = int(np.sum(vals < EIG_ZERO_TOL))
    start = trivial if trivial < g.n else 0
    chosen = vecs[:, start:start + d_h]
    pe = np.zeros((g.n, d_h))
    pe[:, :chosen.shape[1]] = chosen
    for arr in (lap, vals, vecs, pe):
        arr.setflags(write=False)
    return LaplacianBundle(lap, vals, vecs, pe)


def cached_laplacian_bundle(g: Graph, d_h: int, cache_dir) -> LaplacianBundle:
    """Like :func:`build_laplacian_bundle`, reusing an ``.npz`` keyed by (graph hash, d_h)."""
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = cache_dir / f"lap_v{BUNDLE_CACHE_VERSION}_{g.content_hash()[:24]}_{d_h}.npz"
    if path.exists():
        with np.load(path) as z:
            if int(z["version"]) == BUNDLE_CACHE_VERSION:
                return LaplacianBundle(z["laplacian"], z["eigenvalues"], z["eigenvectors"], z["pe"])
    b = build_laplacian_bundle(g, d_h)
    tmp = path.with_suffix(".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, version=BUNDLE_CACHE_VERSION, laplacian=b.laplacian,
                 eigenvalues=b.eigenvalues, eigenvectors=b.eigenvectors, pe=b.pe)
    os.replace(tmp, path)
    return b


# ---------------------------------------------------------------- local structure


def extract_k_hop_subgraph(g: Graph, v: int, k: int) -> tuple[list[int], np.ndarray]:
    """Nodes within ``k`` hops of ``v`` (``v`` first, then BFS order) and their induced adjacency."""
    if not 0 <= v < g.n:
        raise RangeError(f"node {v} out of range [0, {g.n})")
    if k < 1:
        raise ConfigError("k must be >= 1")
    dist = {v: 0}
    order = [v]
    queue = deque([v])
    while queue:
        u = queue.popleft()
        if dist[u] == k:
            continue
        for w in np.flatnonzero(g.adjacency[u]):
            w = int(w)
            if w not in dist:
                dist[w] = dist[u] + 1
                order.append(w)
                queue.append(w)
    return order, g.adjacency[np.ix_(order, order)].copy()


@dataclass(frozen=True)
class NeighborhoodStats:
    count: int
    mean: np.ndarray
    var: np.ndarray
    degenerate: bool = False


def neighborhood_statistics(g: Graph, v: int) -> NeighborhoodStats:
    nbrs = g.neighbors(v)
    c = len(nbrs)
    if c == 0:
        return NeighborhoodStats(0, np.zeros(g.d), np.zeros(g.d), degenerate=True)
    xs = g.features[nbrs]
    mu = xs.mean(axis=0)
    if c == 1:
        return NeighborhoodStats(1, mu, np.full(g.d, VAR_FLOOR))
    return NeighborhoodStats(c, mu, xs.var(axis=0, ddof=1))


@dataclass(frozen=True, eq=False)
class NeighborhoodTable:
    """Per-node neighborhood statistics stacked into arrays."""

    count: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    degenerate: np.ndarray


def neighborhood_table(g: Graph) -> NeighborhoodTable:
    a, x = g.adjacency, g.features
    c = a.sum(axis=1)
    safe = np.maximum(c, 1.0)[:, None]
    mu = (a @ x) / safe
    # sum over neighbours of (x_j - mu_i)^2 = sum x_j^2 - c * mu_i^2
    sq = a @ (x * x) - c[:, None] * mu * mu
    var = np.maximum(sq, 0.0) / np.maximum(c - 1.0, 1.0)[:, None]
    var[c == 1] = VAR_FLOOR
    var[c == 0] = 0.0
    mu[c == 0] = 0.0
    return NeighborhoodTable(c, mu, var, c == 0)


# ---------------------------------------------------------------- synthetic data


@dataclass(frozen=True)
class InjectionSpec:
    clique_count: int
    clique_size: int
    attribute_candidates: int = 50
    seed: int = 0
    attribute_count: int | None = None  # defaults to clique_count * clique_size

    def validate(self, n: int):
        if self.clique_count < 0:
            raise ConfigError("clique_count must be >= 0")
        if self.clique_size < 2:
            raise ConfigError("clique_size must be >= 2")
        if self.attribute_candidates < 1:
            raise ConfigError("attribute_candidates must be >= 1")
        if self.clique_count * self.clique_size > n:
            raise ConfigError(f"{self.clique_count} cliques of size {self.clique_size} exceed {n} nodes")

    @property
    def n_attribute(self) -> int:
        if self.attribute_count is None:
            return self.clique_count * self.clique_size
        return self.attribute_count


def inject_anomalies(g: Graph, spec: InjectionSpec) -> Graph:
    """Plant clique (structural) and feature-swap (attribute) anomalies.

    Structural: ``clique_count`` disjoint random node sets of ``clique_size``
    nodes are fully connected. Attribute: as many further nodes each take the
    features of whichever of ``attribute_candidates`` random nodes is farthest
    from them in Euclidean distance. Existing labels are discarded.
    """
    spec.validate(g.n)
    n_struct = spec.clique_count * spec.clique_size
    n_attr = spec.n_attribute
    if n_struct + n_attr > g.n:
        raise ConfigError(f"need {n_struct + n_attr} distinct anomalous nodes, graph has {g.n}")
    rng = np.random.default_rng(spec.seed)
    a = g.adjacency.copy()
    x = g.features.copy()
    labels = np.zeros(g.n, dtype=np.int64)

    picked = rng.permutation(g.n)[: n_struct + n_attr]
    for c in range(spec.clique_count):
        members = picked[c * spec.clique_size:(c + 1) * spec.clique_size]
        a[np.ix_(members, members)] = 1.0
        labels[members] = 1
    np.fill_diagonal(a, 0.0)

    for v in picked[n_struct:]:
        cand = rng.choice(g.n, size=min(spec.attribute_candidates, g.n), replace=False)
        dists = np.linalg.norm(g.features[cand] - g.features[v], axis=1)
        x[v] = g.features[cand[int(np.argmax(dists))]]
        labels[v] = 1
    return Graph(a, x, labels)


@dataclass(frozen=True)
class SBMSpec:
    blocks: int = 2
    per_block: int = 150
    p_in: float = 0.05
    p_out: float = 0.005
    d: int = 16
    seed: int = 0
    mean_scale: float = 1.0
    noise: float = 1.0


def generate_sbm(blocks: int, per_block: int, p_in: float, p_out: float, d: int,
                 seed: int = 0, mean_scale: float = 1.0, noise: float = 1.0) -> Graph:
    """Undirected stochastic block model with block-dependent Gaussian features.

    Each block draws a mean vector from N(0, mean_scale^2 I); node features are
    that mean plus N(0, noise^2 I) noise.
    """
    for name, p in (("p_in", p_in), ("p_out", p_out)):
        if not 0.0 <= p <= 1.0:
            raise ConfigError(f"{name}={p} is not a probability")
    if blocks < 1 or per_block < 1 or d < 1:
        raise ConfigError("blocks, per_block and d must be positive")
    rng = np.random.default_rng(seed)
    n = blocks * per_block
    block_of = np.repeat(np.arange(blocks), per_block)
    prob = np.where(block_of[:, None] == block_of[None, :], p_in, p_out)
    upper = np.triu(rng.random((n, n)) < prob, k=1)
    a = (upper | upper.T).astype(np.float64)
    means = rng.normal(0.0, mean_scale, size=(blocks, d))
    x = means[block_of] + rng.normal(0.0, noise, size=(n, d))
    return Graph(a, x)
