"""Link sign prediction, node recommendation, and closeness statistics."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from . import autograd as ag
from .autograd import Tape, backward
from .graph import SignedDigraph
from .optim import RMSProp


class EvaluationError(ValueError):
    pass


def link_representation(z_s: np.ndarray, z_t: np.ndarray, sources, targets, mode: str = "directional") -> np.ndarray:
    """Concatenated edge features.

    ``directional``: [Z_s[source], Z_t[target]].
    ``symmetric``: each endpoint as [Z_s, Z_t] of that node, i.e.
    [Z_s[u], Z_t[u], Z_s[v], Z_t[v]].
    """
    u = np.atleast_1d(np.asarray(sources, dtype=np.int64))
    v = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    n = z_s.shape[0]
    if len(u) and (min(u.min(), v.min()) < 0 or max(u.max(), v.max()) >= n):
        raise IndexError("edge endpoint out of range")
    if mode == "directional":
        return np.concatenate([z_s[u], z_t[v]], axis=1)
    if mode == "symmetric":
        return np.concatenate([z_s[u], z_t[u], z_s[v], z_t[v]], axis=1)
    raise ValueError(f"unknown representation mode {mode!r}")


def auc_score(scores, labels) -> float:
    """Rank-based (Mann-Whitney) AUC; tied scores get half credit."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError("AUC undefined: test set holds a single class")
    ranks = rankdata(scores)
    # twice the U statistic is an integer, so this division is exact for moderate sizes
    u2 = 2.0 * ranks[labels].sum() - n_pos * (n_pos + 1)
    return float(u2 / (2.0 * n_pos * n_neg))


def f1_score(predicted, labels) -> float:
    predicted = np.asarray(predicted).astype(bool)
    labels = np.asarray(labels).astype(bool)
    tp = int(np.sum(predicted & labels))
    fp = int(np.sum(predicted & ~labels))
    fn = int(np.sum(~predicted & labels))
    if tp == 0:
        return 0.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


@dataclass
class ProbeConfig:
    hidden: int = 64
    epochs: int = 100
    learning_rate: float = 0.01
    batch_size: int = 1000
    representation: str = "directional"


class SignPredProbe:
    """Two-layer ReLU MLP over frozen link representations, trained with cross-entropy."""

    def __init__(self, in_width: int, config: ProbeConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng([seed, 3])
        h = config.hidden
        # last row of each matrix is the bias (inputs carry an appended ones column)
        lim0 = np.sqrt(6.0 / (in_width + h))
        lim1 = np.sqrt(6.0 / (h + 1))
        self.weights = {
            "probe.0": np.vstack([rng.uniform(-lim0, lim0, (in_width, h)), np.zeros((1, h))]),
            "probe.1": np.vstack([rng.uniform(-lim1, lim1, (h, 1)), np.zeros((1, 1))]),
        }
        self.opt = RMSProp(config.learning_rate)
        self.seed = seed

    def _logits(self, tape: Tape, x: np.ndarray, params):
        ones = tape.constant(np.ones((x.shape[0], 1)))
        h = ag.relu(ag.matmul(ag.concat_cols([tape.constant(x), ones]), params["probe.0"]))
        return ag.matmul(ag.concat_cols([h, ones]), params["probe.1"])

    def fit(self, x: np.ndarray, y: np.ndarray) -> "SignPredProbe":
        y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
        rng = np.random.default_rng([self.seed, 4])
        for _ in range(self.config.epochs):
            order = rng.permutation(len(x))
            for start in range(0, len(x), self.config.batch_size):
                idx = order[start:start + self.config.batch_size]
                tape = Tape()
                params = {k: tape.leaf(w, name=k) for k, w in self.weights.items()}
                z = self._logits(tape, x[idx], params)
                yc = tape.constant(y[idx])
                # -[y ln s(z) + (1 - y) ln s(-z)]
                ll = ag.add(ag.mul(yc, ag.log_sigmoid(z)),
                            ag.mul(tape.constant(1.0 - y[idx]), ag.log_sigmoid(ag.scalar_mul(z, -1.0))))
                loss = ag.scalar_mul(ag.mean(ll), -1.0)
                self.weights = self.opt.step(self.weights, backward(tape, loss))
        return self

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        tape = Tape()
        params = {k: tape.constant(w) for k, w in self.weights.items()}
        return expit(self._logits(tape, x, params).value[:, 0])


def _labels(g: SignedDigraph) -> np.ndarray:
    return (g.signs == 1).astype(np.int64)


def eval_sign_prediction(z_s: np.ndarray, z_t: np.ndarray, train: SignedDigraph, test: SignedDigraph,
                         probe_config: ProbeConfig | None = None, seed: int = 0) -> dict:
    """Train the probe on train edges, report AUC and F1 (class +1 positive, threshold 0.5) on test edges."""
    cfg = probe_config or ProbeConfig()
    y_train, y_test = _labels(train), _labels(test)
    if len(np.unique(y_test)) < 2:
        raise EvaluationError("degenerate test set: both signs are required for AUC")
    if len(np.unique(y_train)) < 2:
        raise EvaluationError("degenerate train set: both signs are required to fit the probe")
    x_train = link_representation(z_s, z_t, train.sources, train.targets, cfg.representation)
    x_test = link_representation(z_s, z_t, test.sources, test.targets, cfg.representation)
    probe = SignPredProbe(x_train.shape[1], cfg, seed).fit(x_train, y_train)
    p = probe.predict_proba(x_test)
    return {"auc": auc_score(p, y_test), "f1": f1_score(p >= 0.5, y_test)}


@dataclass
class RankingReport:
    recall_at: dict[int, float] = field(default_factory=dict)
    precision_at: dict[int, float] = field(default_factory=dict)
    k_values: tuple[int, ...] = (10, 20, 50)
    num_evaluated_sources: int = 0

    def to_dict(self) -> dict:
        d = {f"recall@{k}": self.recall_at[k] for k in self.k_values}
        d.update({f"precision@{k}": self.precision_at[k] for k in self.k_values})
        d["num_evaluated_sources"] = self.num_evaluated_sources
        return d


def eval_recommendation(z_s: np.ndarray, z_t: np.ndarray, train: SignedDigraph, test: SignedDigraph,
                        k_values=(10, 20, 50)) -> RankingReport:
    """Recall@k / Precision@k of positive test targets, ranking by <Z_s[i], Z_t[j]>.

    Candidates exclude i and anything i links to in the train split. Ties
    break by ascending node index.
    """
    k_values = tuple(int(k) for k in k_values)
    if not k_values or min(k_values) < 1:
        raise ValueError("k values must be positive")
    n = z_s.shape[0]
    pos = test.signs == 1
    relevant: dict[int, set] = {}
    for u, v in zip(test.sources[pos].tolist(), test.targets[pos].tolist()):
        relevant.setdefault(u, set()).add(v)
    if not relevant:
        raise EvaluationError("no source node has a positive test edge")
    linked: dict[int, list] = {}
    for u, v in zip(train.sources.tolist(), train.targets.tolist()):
        linked.setdefault(u, []).append(v)
    kmax = max(k_values)
    hits = {k: [] for k in k_values}
    sources = sorted(relevant)
    scores_all = z_s[sources] @ z_t.T
    for row, i in enumerate(sources):
        scores = scores_all[row]
        cand = np.ones(n, dtype=bool)
        cand[i] = False
        cand[linked.get(i, [])] = False
        idx = np.flatnonzero(cand)
        order = idx[np.argsort(-scores[idx], kind="stable")][:kmax]
        is_rel = np.fromiter((int(j) in relevant[i] for j in order), dtype=bool, count=len(order))
        cum = np.cumsum(is_rel)
        for k in k_values:
            hits[k].append(int(cum[min(k, len(cum)) - 1]) if len(cum) else 0)
    counts = np.array([len(relevant[i]) for i in sources], dtype=np.float64)
    report = RankingReport(k_values=k_values, num_evaluated_sources=len(sources))
    for k in k_values:
        h = np.array(hits[k], dtype=np.float64)
        report.recall_at[k] = float(np.mean(h / counts))
        report.precision_at[k] = float(np.mean(h / k))
    return report


def _cosines(z_s, z_t, u, v):
    a, b = z_s[u], z_t[v]
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    ok = (na > 0) & (nb > 0)
    cos = np.sum(a[ok] * b[ok], axis=1) / (na[ok] * nb[ok])
    return np.clip(cos, -1.0, 1.0), int(np.count_nonzero(~ok))


def closeness_stats(z_s: np.ndarray, z_t: np.ndarray, graph: SignedDigraph, n_null_samples: int = 10000,
                    seed: int = 0, bins: int = 64) -> dict:
    """Cosine similarity of (Z_s[i], Z_t[j]) for positive, negative, and random non-linked pairs."""
    n = graph.num_nodes
    rng = np.random.default_rng([seed, 5])
    codes = graph.edge_codes()
    u = rng.integers(0, n, size=4 * n_null_samples + 16)
    v = rng.integers(0, n, size=len(u))
    c = u * n + v
    pos = np.minimum(np.searchsorted(codes, c), max(len(codes) - 1, 0))
    linked = (codes[pos] == c) if len(codes) else np.zeros(len(c), dtype=bool)
    keep = np.flatnonzero(~linked & (u != v))[:n_null_samples]
    pairs = {
        "positive": (graph.sources[graph.signs == 1], graph.targets[graph.signs == 1]),
        "negative": (graph.sources[graph.signs == -1], graph.targets[graph.signs == -1]),
        "null": (u[keep], v[keep]),
    }
    edges = np.linspace(-1.0, 1.0, bins + 1)
    out = {"bin_edges": edges.tolist(), "classes": {}}
    for name, (a, b) in pairs.items():
        cos, skipped = _cosines(z_s, z_t, a, b)
        hist, _ = np.histogram(cos, bins=edges)
        out["classes"][name] = {
            "count": int(len(cos)),
            "skipped_zero_norm": skipped,
            "mean": float(cos.mean()) if len(cos) else float("nan"),
            "variance": float(cos.var()) if len(cos) else float("nan"),
            "histogram": hist.tolist(),
        }
    return out


def write_histogram_csv(stats: dict, path) -> None:
    edges = stats["bin_edges"]
    names = list(stats["classes"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_left", "bin_right"] + names)
        for b in range(len(edges) - 1):
            w.writerow([repr(edges[b]), repr(edges[b + 1])] + [stats["classes"][c]["histogram"][b] for c in names])


def export_embeddings_csv(z_s: np.ndarray, z_t: np.ndarray, path) -> None:
    """One row per (node, role): ``node_id, role, v0 .. v{w-1}``; 2N rows in total."""
    width = z_s.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node_id", "role"] + [f"v{c}" for c in range(width)])
        for role, z in (("source", z_s), ("target", z_t)):
            for i, row in enumerate(z.tolist()):
                w.writerow([i, role] + [repr(x) for x in row])


def ordering_fraction(z_s: np.ndarray, z_t: np.ndarray, graph: SignedDigraph, n_samples: int = 5000,
                      seed: int = 0, exclude: SignedDigraph | None = None) -> float:
    """Share of sampled (i, j, k, r) with f(i->j) > f(i->k) > f(i->r).

    j, r are positive / negative out-neighbours of i in ``graph``; k has no
    edge from i in ``graph`` (nor in ``exclude`` when given).
    """
    n = graph.num_nodes
    pos_out: dict[int, list] = {}
    neg_out: dict[int, list] = {}
    for u, v, s in zip(graph.sources.tolist(), graph.targets.tolist(), graph.signs.tolist()):
        (pos_out if s == 1 else neg_out).setdefault(u, []).append(v)
    linked = set(zip(graph.sources.tolist(), graph.targets.tolist()))
    if exclude is not None:
        linked |= set(zip(exclude.sources.tolist(), exclude.targets.tolist()))
    eligible = sorted(set(pos_out) & set(neg_out))
    if not eligible:
        raise EvaluationError("no node has both positive and negative out-edges")
    rng = np.random.default_rng([seed, 6])
    good = 0
    for _ in range(n_samples):
        i = eligible[rng.integers(len(eligible))]
        j = pos_out[i][rng.integers(len(pos_out[i]))]
        r = neg_out[i][rng.integers(len(neg_out[i]))]
        while True:
            k = int(rng.integers(n))
            if k != i and (i, k) not in linked:
                break
        f = z_s[i] @ z_t[[j, k, r]].T
        good += bool(f[0] > f[1] > f[2])
    return good / n_samples


def aggregate_metrics(paths) -> dict:
    """Mean and sample standard deviation of every numeric field across metrics JSON files."""
    values: dict[str, list] = {}
    for p in paths:
        with open(p) as fh:
            m = json.load(fh)
        for k, v in m.get("metrics", m).items():
            if isinstance(v, (int, float)) and not isinstance(v, bool):
                values.setdefault(k, []).append(float(v))
    return {k: {"mean": float(np.mean(v)), "std": float(np.std(v, ddof=1)) if len(v) > 1 else 0.0, "n": len(v)}
            for k, v in sorted(values.items())}
