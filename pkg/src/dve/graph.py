"""Signed directed graphs: parsing, validation, decoupling, splitting, stats."""

from __future__ import annotations

import io
import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from .sparse import SparseMatrix, build_propagation


class GraphError(ValueError):
    pass


class ParseError(GraphError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class GraphValidationError(GraphError):
    pass


class SignedEdge(NamedTuple):
    source: int
    target: int
    sign: int


def _frozen(a) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.int64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SignedDigraph:
    """Node count plus signed directed edge list, stored column-wise.

    Construct through ``SignedDigraph.from_arrays`` (validates) rather than
    the raw constructor.
    """

    num_nodes: int
    sources: np.ndarray
    targets: np.ndarray
    signs: np.ndarray

    @classmethod
    def from_arrays(cls, num_nodes, sources, targets, signs) -> "SignedDigraph":
        sources, targets, signs = _frozen(sources), _frozen(targets), _frozen(signs)
        num_nodes = int(num_nodes)
        if not (len(sources) == len(targets) == len(signs)):
            raise GraphValidationError("edge arrays differ in length")
        if num_nodes < 0:
            raise GraphValidationError("negative node count")
        if len(sources):
            if min(sources.min(), targets.min()) < 0:
                raise GraphValidationError("negative node index")
            hi = max(sources.max(), targets.max())
            if hi >= num_nodes:
                raise GraphValidationError(f"node index {hi} >= num_nodes {num_nodes}")
        loops = np.flatnonzero(sources == targets)
        if len(loops):
            u = int(sources[loops[0]])
            raise GraphValidationError(f"self-loop on node {u}")
        bad = np.flatnonzero((signs != 1) & (signs != -1))
        if len(bad):
            raise GraphValidationError(f"sign {int(signs[bad[0]])} not in {{1, -1}}")
        codes = sources * max(num_nodes, 1) + targets
        uniq, counts = np.unique(codes, return_counts=True)
        if len(uniq) != len(codes):
            dup = int(uniq[np.argmax(counts > 1)])
            u, v = divmod(dup, max(num_nodes, 1))
            raise GraphValidationError(f"duplicate edge {u} -> {v}")
        return cls(num_nodes, sources, targets, signs)

    @classmethod
    def from_edges(cls, num_nodes: int, edges: Iterable) -> "SignedDigraph":
        edges = list(edges)
        arr = np.array(edges, dtype=np.int64).reshape(-1, 3)
        return cls.from_arrays(num_nodes, arr[:, 0], arr[:, 1], arr[:, 2])

    def __len__(self) -> int:
        return len(self.sources)

    @property
    def edges(self) -> list[SignedEdge]:
        return [SignedEdge(int(u), int(v), int(s))
                for u, v, s in zip(self.sources, self.targets, self.signs)]

    @property
    def positive_count(self) -> int:
        return int(np.count_nonzero(self.signs == 1))

    @property
    def negative_count(self) -> int:
        return int(np.count_nonzero(self.signs == -1))

    def edge_codes(self) -> np.ndarray:
        """Sorted ``source * N + target`` codes, for fast membership tests."""
        return np.sort(self.sources * self.num_nodes + self.targets)

    def subgraph_edges(self, index) -> "SignedDigraph":
        index = np.asarray(index, dtype=np.int64)
        return SignedDigraph(self.num_nodes, _frozen(self.sources[index]),
                             _frozen(self.targets[index]), _frozen(self.signs[index]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, SignedDigraph):
            return NotImplemented
        return (self.num_nodes == other.num_nodes
                and np.array_equal(self.sources, other.sources)
                and np.array_equal(self.targets, other.targets)
                and np.array_equal(self.signs, other.signs))

    __hash__ = None


_HEADER = re.compile(r"#\s*nodes\s*[:=]?\s*(\d+)\s*$", re.IGNORECASE)


def _lines(text_stream) -> Iterable[str]:
    if isinstance(text_stream, str):
        return io.StringIO(text_stream)
    return text_stream


def _parse_rows(text_stream):
    header_n = None
    rows = []
    for lineno, line in enumerate(_lines(text_stream), start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            m = _HEADER.match(line)
            if m:
                header_n = int(m.group(1))
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ParseError(lineno, f"expected '<source> <target> <sign>', got {line!r}")
        try:
            u, v, s = (int(p) for p in parts)
        except ValueError:
            raise ParseError(lineno, f"non-integer token in {line!r}") from None
        rows.append((u, v, s, lineno))
    return header_n, rows


def _check_row(u, v, s, lineno):
    if s not in (1, -1):
        raise GraphValidationError(f"line {lineno}: sign {s} not in {{1, -1}}")
    if u == v:
        raise GraphValidationError(f"line {lineno}: self-loop on node {u}")


def parse_edge_list(text_stream) -> SignedDigraph:
    """Read ``<source> <target> <sign>`` lines into a validated graph.

    A ``# nodes: N`` comment line fixes the node count (allowing isolated
    nodes); otherwise N is one past the largest index.
    """
    header_n, rows = _parse_rows(text_stream)
    seen = set()
    for u, v, s, lineno in rows:
        _check_row(u, v, s, lineno)
        if u < 0 or v < 0:
            raise GraphValidationError(f"line {lineno}: negative node index")
        if (u, v) in seen:
            raise GraphValidationError(f"line {lineno}: duplicate edge {u} -> {v}")
        seen.add((u, v))
    max_index = max((max(u, v) for u, v, _, _ in rows), default=-1)
    n = max_index + 1 if header_n is None else header_n
    if n <= max_index:
        raise GraphValidationError(f"header declares {n} nodes but index {max_index} appears")
    arr = np.array([r[:3] for r in rows], dtype=np.int64).reshape(-1, 3)
    return SignedDigraph.from_arrays(n, arr[:, 0], arr[:, 1], arr[:, 2])


def parse_edge_list_remapped(text_stream) -> tuple[SignedDigraph, list[int]]:
    """Like ``parse_edge_list`` but maps arbitrary ids onto 0..N-1.

    Dense indices follow first appearance. Returns the graph and the table
    ``original_ids[dense_index]``.
    """
    _, rows = _parse_rows(text_stream)
    table: dict[int, int] = {}
    out = []
    seen = set()
    for u, v, s, lineno in rows:
        _check_row(u, v, s, lineno)
        a = table.setdefault(u, len(table))
        b = table.setdefault(v, len(table))
        if (a, b) in seen:
            raise GraphValidationError(f"line {lineno}: duplicate edge {u} -> {v}")
        seen.add((a, b))
        out.append((a, b, s))
    graph = SignedDigraph.from_edges(len(table), out)
    original = [0] * len(table)
    for orig, dense in table.items():
        original[dense] = orig
    return graph, original


def write_id_map(original_ids: list[int], path) -> None:
    with open(path, "w") as fh:
        fh.write("# dense_index original_id\n")
        for dense, orig in enumerate(original_ids):
            fh.write(f"{dense} {orig}\n")


def format_edge_list(g: SignedDigraph) -> str:
    buf = [f"# nodes: {g.num_nodes}\n"]
    buf.extend(f"{u} {v} {s}\n" for u, v, s in zip(g.sources.tolist(), g.targets.tolist(), g.signs.tolist()))
    return "".join(buf)


def read_edge_list(path) -> SignedDigraph:
    with open(path) as fh:
        return parse_edge_list(fh)


def write_edge_list(g: SignedDigraph, path) -> None:
    with open(path, "w") as fh:
        fh.write(format_edge_list(g))


@dataclass(frozen=True)
class DecoupledAdjacency:
    """Undirected positive and negative adjacency plus their propagation matrices."""

    positive: SparseMatrix
    negative: SparseMatrix
    positive_prop: SparseMatrix
    negative_prop: SparseMatrix


def _symmetric_binary(n: int, u: np.ndarray, v: np.ndarray) -> SparseMatrix:
    rows = np.concatenate([u, v])
    cols = np.concatenate([v, u])
    codes = np.unique(rows * max(n, 1) + cols)
    r, c = np.divmod(codes, max(n, 1))
    return SparseMatrix.from_coo(n, n, r, c, np.ones(len(r)))


def decouple(g: SignedDigraph) -> DecoupledAdjacency:
    """Split into undirected 0/1 positive and negative graphs.

    A pair linked positively in one direction and negatively in the other
    appears in both matrices.
    """
    pos = g.signs == 1
    neg = ~pos
    a_p = _symmetric_binary(g.num_nodes, g.sources[pos], g.targets[pos])
    a_n = _symmetric_binary(g.num_nodes, g.sources[neg], g.targets[neg])
    return DecoupledAdjacency(a_p, a_n, build_propagation(a_p, "positive"),
                              build_propagation(a_n, "negative"))


@dataclass(frozen=True, eq=False)
class EdgeSplit:
    train: SignedDigraph
    test: SignedDigraph
    seed: int
    train_fraction: float

    @property
    def test_edges(self) -> list[SignedEdge]:
        return self.test.edges

    def metadata(self) -> dict:
        return {
            "seed": self.seed,
            "fraction": self.train_fraction,
            "counts": {
                "nodes": self.train.num_nodes,
                "train": len(self.train),
                "test": len(self.test),
                "train_positive": self.train.positive_count,
                "train_negative": self.train.negative_count,
                "test_positive": self.test.positive_count,
                "test_negative": self.test.negative_count,
            },
        }


def split_edges(g: SignedDigraph, train_fraction: float = 0.8, seed: int = 0) -> EdgeSplit:
    """Uniform random edge split; both sides keep the original edge order."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(g))
    n_train = int(round(train_fraction * len(g)))
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])
    return EdgeSplit(g.subgraph_edges(train_idx), g.subgraph_edges(test_idx), int(seed), float(train_fraction))


def write_split(split: EdgeSplit, out_dir) -> dict[str, str]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"train": out_dir / "train.txt", "test": out_dir / "test.txt", "meta": out_dir / "split.json"}
    write_edge_list(split.train, paths["train"])
    write_edge_list(split.test, paths["test"])
    with open(paths["meta"], "w") as fh:
        json.dump(split.metadata(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return {k: os.fspath(p) for k, p in paths.items()}


def read_split(out_dir) -> EdgeSplit:
    out_dir = Path(out_dir)
    with open(out_dir / "split.json") as fh:
        meta = json.load(fh)
    return EdgeSplit(read_edge_list(out_dir / "train.txt"), read_edge_list(out_dir / "test.txt"),
                     meta["seed"], meta["fraction"])


@dataclass(frozen=True)
class StatsReport:
    num_nodes: int
    num_edges: int
    positive_edges: int
    negative_edges: int
    undirected_positive_edges: int
    undirected_negative_edges: int
    positive_density: float
    negative_density: float
    # |E^sign| / (N (N - 1)); the convention behind published dataset tables
    positive_directed_density: float
    negative_directed_density: float
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d.update(d.pop("extra"))
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def graph_stats(g: SignedDigraph) -> StatsReport:
    n = g.num_nodes
    pairs = n * (n - 1)
    adj = decouple(g)
    up = adj.positive.nnz // 2
    un = adj.negative.nnz // 2
    dens = (lambda m: m / pairs if pairs else 0.0)
    return StatsReport(
        num_nodes=n,
        num_edges=len(g),
        positive_edges=g.positive_count,
        negative_edges=g.negative_count,
        undirected_positive_edges=up,
        undirected_negative_edges=un,
        positive_density=dens(2 * up),
        negative_density=dens(2 * un),
        positive_directed_density=dens(g.positive_count),
        negative_directed_density=dens(g.negative_count),
    )


def planted_communities(n_nodes: int, n_communities: int) -> np.ndarray:
    """Balanced contiguous community labels used by the planted generator."""
    return (np.arange(n_nodes) * n_communities) // max(n_nodes, 1)


def generate_planted_sign_graph(n_nodes: int = 200, n_communities: int = 2, p_intra: float = 0.1,
                                p_inter: float = 0.05, flip_noise: float = 0.0, seed: int = 0) -> SignedDigraph:
    """Community graph: intra-community links positive, inter negative, signs flipped with ``flip_noise``."""
    for name, p in (("p_intra", p_intra), ("p_inter", p_inter), ("flip_noise", flip_noise)):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {p}")
    if n_nodes < 2:
        raise ValueError("n_nodes must be at least 2")
    if not 1 <= n_communities <= n_nodes:
        raise ValueError("n_communities must lie in [1, n_nodes]")
    rng = np.random.default_rng(seed)
    comm = planted_communities(n_nodes, n_communities)
    same = comm[:, None] == comm[None, :]
    prob = np.where(same, p_intra, p_inter)
    np.fill_diagonal(prob, 0.0)
    linked = rng.random((n_nodes, n_nodes)) < prob
    flips = rng.random((n_nodes, n_nodes)) < flip_noise
    u, v = np.nonzero(linked)
    sign = np.where(same[u, v], 1, -1)
    sign = np.where(flips[u, v], -sign, sign)
    return SignedDigraph.from_arrays(n_nodes, u, v, sign)
