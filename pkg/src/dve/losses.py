"""Balance pair-wise ranking loss, Gaussian KL regularizers, and full objectives."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Var
from .encoders import LatentEmbeddings
from .sampling import TripletBatch


@dataclass(frozen=True)
class LossBreakdown:
    bpwr_pos_term: float
    bpwr_neg_term: float
    kl_source: float
    kl_target: float
    total: float

    FIELDS = ("bpwr_pos_term", "bpwr_neg_term", "kl_source", "kl_target", "total")

    def as_row(self) -> list[float]:
        return [getattr(self, f) for f in self.FIELDS]


def score(z_s: np.ndarray, z_t: np.ndarray, i: int, j: int) -> float:
    """Positive-link existence score f(i -> j) = <Z_s[i], Z_t[j]>."""
    n = z_s.shape[0]
    if not (0 <= i < n and 0 <= j < z_t.shape[0]):
        raise IndexError(f"node index out of range: ({i}, {j})")
    return float(z_s[i] @ z_t[j])


def _zero(tape) -> Var:
    return tape.constant(np.zeros((1, 1)))


def _ranking_term(z_s: Var, z_t: Var, i, hi, lo) -> Var:
    # -mean ln sigmoid(f(i->hi) - f(i->lo)), with f(i->a) - f(i->b) = <Z_s[i], Z_t[a] - Z_t[b]>
    zi = ag.row_gather(z_s, i)
    diff = ag.sub(ag.row_gather(z_t, hi), ag.row_gather(z_t, lo))
    margin = ag.sum(ag.mul(zi, diff), axis=1)
    return ag.scalar_mul(ag.mean(ag.log_sigmoid(margin)), -1.0)


def bpwr_terms(z_s: Var, z_t: Var, batch: TripletBatch) -> tuple[Var, Var]:
    """(positive-vs-null, null-vs-negative) terms; an empty triplet kind contributes 0."""
    tape = z_s.tape
    pos = batch.pos
    neg = batch.neg
    t_pos = _ranking_term(z_s, z_t, pos[:, 0], pos[:, 1], pos[:, 2]) if len(pos) else _zero(tape)
    t_neg = _ranking_term(z_s, z_t, neg[:, 0], neg[:, 1], neg[:, 2]) if len(neg) else _zero(tape)
    return t_pos, t_neg


def bpwr_loss(z_s: Var, z_t: Var, batch: TripletBatch) -> Var:
    if len(batch.pos) + len(batch.neg) == 0:
        raise ValueError("empty triplet batch")
    return ag.add(*bpwr_terms(z_s, z_t, batch))


def kl_gaussian(mu: Var, logsigma: Var) -> Var:
    """Mean over nodes (rows) of KL(N(mu, diag sigma^2) || N(0, I)), summed over coordinates."""
    if mu.shape != logsigma.shape:
        raise ag.ShapeError(f"kl_gaussian: {mu.shape} vs {logsigma.shape}")
    n, d = mu.shape
    two_ls = ag.scalar_mul(logsigma, 2.0)
    inner = ag.sub(ag.add(ag.square(mu), ag.exp(two_ls)), two_ls)
    return ag.shift(ag.scalar_mul(ag.sum(inner), 0.5 / n), -0.5 * d)


def assemble_objective(variant: str, latent: LatentEmbeddings, batch: TripletBatch,
                       kl_weight: float = 1.0) -> tuple[LossBreakdown, Var]:
    """Ranking terms plus, for the variational variants, one KL term per Gaussian branch.

    The reported KL fields are already multiplied by ``kl_weight``.
    """
    t_pos, t_neg = bpwr_terms(latent.z_s, latent.z_t, batch)
    total = ag.add(t_pos, t_neg)
    kl = {}
    for role in ("s", "t"):
        terms = [kl_gaussian(mu, ls) for mu, ls in latent.gaussians.get(role, [])] if variant in ("dve", "slve") else []
        if terms:
            acc = terms[0]
            for t in terms[1:]:
                acc = ag.add(acc, t)
            if kl_weight != 1.0:
                acc = ag.scalar_mul(acc, kl_weight)
            total = ag.add(total, acc)
            kl[role] = float(acc.value[0, 0])
        else:
            kl[role] = 0.0
    breakdown = LossBreakdown(float(t_pos.value[0, 0]), float(t_neg.value[0, 0]), kl["s"], kl["t"],
                              float(total.value[0, 0]))
    return breakdown, total
