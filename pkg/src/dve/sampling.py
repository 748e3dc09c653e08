"""Triplet batches with uniformly sampled non-linked targets."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .graph import SignedDigraph


class SamplingExhaustedError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class TripletBatch:
    """``pos`` rows are (i, j, k), ``neg`` rows are (i, k, r); ``edge_ids`` index the train edges sliced into this batch."""

    pos: np.ndarray
    neg: np.ndarray
    epoch: int
    batch: int
    edge_ids: np.ndarray

    @property
    def pos_triplets(self) -> list[tuple[int, int, int]]:
        return [tuple(r) for r in self.pos.tolist()]

    @property
    def neg_triplets(self) -> list[tuple[int, int, int]]:
        return [tuple(r) for r in self.neg.tolist()]


class NoiseSampler:
    """Draws k uniformly from nodes with no observed train edge i -> k, k != i."""

    def __init__(self, graph: SignedDigraph, max_retries: int = 50):
        self.n = graph.num_nodes
        self.codes = graph.edge_codes()
        self.max_retries = max_retries
        out_deg = np.bincount(graph.sources, minlength=self.n)
        self.saturated = np.flatnonzero(out_deg >= self.n - 1)

    def _illegal(self, sources: np.ndarray, ks: np.ndarray) -> np.ndarray:
        codes = sources * self.n + ks
        pos = np.searchsorted(self.codes, codes)
        pos = np.minimum(pos, max(len(self.codes) - 1, 0))
        hit = self.codes[pos] == codes if len(self.codes) else np.zeros(len(codes), dtype=bool)
        return hit | (ks == sources)

    def legal_candidates(self, i: int) -> np.ndarray:
        ks = np.arange(self.n)
        return ks[~self._illegal(np.full(self.n, i), ks)]

    def sample(self, sources: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        sources = np.asarray(sources, dtype=np.int64)
        if len(self.saturated):
            bad = np.intersect1d(sources, self.saturated)
            if len(bad):
                raise SamplingExhaustedError(f"node {int(bad[0])} links to every other node; no noise target exists")
        ks = rng.integers(0, self.n, size=len(sources))
        todo = np.flatnonzero(self._illegal(sources, ks))
        for _ in range(self.max_retries):
            if not len(todo):
                break
            ks[todo] = rng.integers(0, self.n, size=len(todo))
            todo = todo[self._illegal(sources[todo], ks[todo])]
        # retry cap hit: pick directly from the explicit candidate set (still uniform)
        for t in todo.tolist():
            ks[t] = rng.choice(self.legal_candidates(int(sources[t])))
        return ks


def batches_per_epoch(n_edges: int, batch_size: int) -> int:
    return -(-n_edges // batch_size)


def sample_batches(train: SignedDigraph, batch_size: int = 1000, n_noise: int = 5, seed: int = 0,
                   epoch: int = 0, max_retries: int = 50) -> Iterator[TripletBatch]:
    """Shuffle train edges per (seed, epoch), slice into batches, attach n_noise targets per edge."""
    if batch_size < 1 or n_noise < 1:
        raise ValueError("batch_size and n_noise must be >= 1")
    if len(train) == 0:
        raise ValueError("empty training graph")
    sampler = NoiseSampler(train, max_retries)
    rng = np.random.default_rng([seed, 1, epoch])
    order = rng.permutation(len(train))
    for b, start in enumerate(range(0, len(order), batch_size)):
        ids = order[start:start + batch_size]
        src, dst, sgn = train.sources[ids], train.targets[ids], train.signs[ids]
        i = np.repeat(src, n_noise)
        other = np.repeat(dst, n_noise)
        is_pos = np.repeat(sgn == 1, n_noise)
        k = sampler.sample(i, rng)
        pos = np.stack([i[is_pos], other[is_pos], k[is_pos]], axis=1)
        neg = np.stack([i[~is_pos], k[~is_pos], other[~is_pos]], axis=1)
        yield TripletBatch(pos, neg, epoch, b, ids)
