"""Compressed sparse row matrices and GCN propagation matrices."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Immutable CSR matrix, float64 values, no explicit zeros.

    ``kind`` tags propagation matrices ("positive", "negative", "signed");
    plain matrices leave it as None.
    """

    n_rows: int
    n_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray
    kind: str | None = None

    def __post_init__(self):
        ro, ci, va = self.row_offsets, self.col_indices, self.values
        if len(ro) != self.n_rows + 1 or ro[0] != 0 or ro[-1] != len(va) or len(ci) != len(va):
            raise ValueError("inconsistent CSR arrays")
        if np.any(np.diff(ro) < 0):
            raise ValueError("row_offsets must be nondecreasing")
        for a in (ro, ci, va):
            a.setflags(write=False)

    @classmethod
    def from_coo(cls, n_rows: int, n_cols: int, rows, cols, values, kind=None) -> "SparseMatrix":
        """Build from coordinates; duplicates are summed and zeros dropped."""
        m = sp.coo_matrix((np.asarray(values, dtype=np.float64),
                           (np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64))),
                          shape=(n_rows, n_cols)).tocsr()
        m.sum_duplicates()
        m.eliminate_zeros()
        m.sort_indices()
        return cls(n_rows, n_cols, m.indptr.astype(np.int64), m.indices.astype(np.int64),
                   m.data.astype(np.float64), kind)

    @classmethod
    def from_dense(cls, dense, kind=None) -> "SparseMatrix":
        dense = np.asarray(dense, dtype=np.float64)
        r, c = np.nonzero(dense)
        return cls.from_coo(dense.shape[0], dense.shape[1], r, c, dense[r, c], kind)

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        idx = np.arange(n)
        return cls.from_coo(n, n, idx, idx, np.ones(n))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return len(self.values)

    @cached_property
    def _csr(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.values, self.col_indices, self.row_offsets), shape=self.shape)

    def row_indices(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_rows), np.diff(self.row_offsets))

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.row_indices(), self.col_indices] = self.values
        return out

    def transpose(self) -> "SparseMatrix":
        return SparseMatrix.from_coo(self.n_cols, self.n_rows, self.col_indices,
                                     self.row_indices(), self.values, self.kind)

    @cached_property
    def transposed(self) -> "SparseMatrix":
        """Cached transpose; the matrix itself when symmetric."""
        return self if self.is_symmetric() else self.transpose()

    def is_symmetric(self) -> bool:
        if self.n_rows != self.n_cols:
            return False
        t = self.transpose()
        return (np.array_equal(self.row_offsets, t.row_offsets)
                and np.array_equal(self.col_indices, t.col_indices)
                and np.array_equal(self.values, t.values))

    def degrees(self) -> np.ndarray:
        return np.diff(self.row_offsets)

    def dump_coo(self) -> str:
        """Coordinate-list debug text: ``row col value`` per stored entry."""
        lines = [f"# {self.n_rows} {self.n_cols} {self.nnz}"]
        lines += [f"{r} {c} {v!r}" for r, c, v in
                  zip(self.row_indices().tolist(), self.col_indices.tolist(), self.values.tolist())]
        return "\n".join(lines) + "\n"


def spmm(s: SparseMatrix, d: np.ndarray) -> np.ndarray:
    """Sparse @ dense. Rows accumulate sequentially, so results do not depend on threading."""
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != s.n_cols:
        raise ValueError(f"spmm dimension mismatch: {s.shape} @ {d.shape}")
    return np.asarray(s._csr @ d)


def _check_adjacency(adj: SparseMatrix) -> None:
    if adj.n_rows != adj.n_cols:
        raise ValueError(f"adjacency must be square, got {adj.shape}")
    if not adj.is_symmetric():
        raise ValueError("adjacency must be symmetric")
    if np.any(adj.values != 1.0):
        raise ValueError("adjacency must be binary")
    if np.any(adj.row_indices() == adj.col_indices):
        raise ValueError("adjacency must have a zero diagonal")


def build_propagation(adj: SparseMatrix, kind: str | None = None) -> SparseMatrix:
    """Renormalized propagation D^-1/2 (A + I) D^-1/2, D the degree matrix of A + I."""
    _check_adjacency(adj)
    n = adj.n_rows
    deg = adj.degrees().astype(np.float64) + 1.0
    rows = np.concatenate([adj.row_indices(), np.arange(n)])
    cols = np.concatenate([adj.col_indices, np.arange(n)])
    # integer degree products are exact, so 1/sqrt(d_i d_j) rounds once (d=2,2 gives exactly 0.5)
    vals = 1.0 / np.sqrt(deg[rows] * deg[cols])
    return SparseMatrix.from_coo(n, n, rows, cols, vals, kind)


def signed_adjacency(g) -> SparseMatrix:
    """Symmetric +1/-1 adjacency; opposite-direction edges are summed then clamped by sign.

    Conflicting pairs (one positive, one negative) sum to zero and are dropped.
    """
    n = g.num_nodes
    u, v = g.sources, g.targets
    lo, hi = np.minimum(u, v), np.maximum(u, v)
    m = sp.coo_matrix((g.signs.astype(np.float64), (lo, hi)), shape=(n, n)).tocsr()
    m.sum_duplicates()
    m.data = np.sign(m.data)
    m.eliminate_zeros()
    m = m.tocoo()
    rows = np.concatenate([m.row, m.col])
    cols = np.concatenate([m.col, m.row])
    vals = np.concatenate([m.data, m.data])
    return SparseMatrix.from_coo(n, n, rows, cols, vals)


def build_signed_propagation(g) -> SparseMatrix:
    """D^-1/2 (A_signed + I) D^-1/2 with D the degree matrix of |A_signed| + I."""
    a = signed_adjacency(g)
    n = a.n_rows
    deg = np.abs(a.values)
    deg = np.bincount(a.row_indices(), weights=deg, minlength=n) + 1.0
    rows = np.concatenate([a.row_indices(), np.arange(n)])
    cols = np.concatenate([a.col_indices, np.arange(n)])
    vals = np.concatenate([a.values, np.ones(n)]) / np.sqrt(deg[rows] * deg[cols])
    return SparseMatrix.from_coo(n, n, rows, cols, vals, "signed")
