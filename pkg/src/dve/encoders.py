"""Encoders producing source and target embeddings for every model variant.

Parameter names follow ``<role>.<branch>.<stat>.<layer>`` with role in
{s, t}, branch in {p, n, signed}, stat in {mu, sigma}; fusion weights are
``<role>.fuse`` and embedding tables ``<role>.table``. ``param_shapes``
defines the canonical order, which is also the checkpoint order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tape, Var
from .graph import DecoupledAdjacency, SignedDigraph, decouple
from .sparse import SparseMatrix, build_signed_propagation

VARIANTS = ("dve", "de", "slve", "bpwr", "mf")
FUSIONS = ("concat", "concat_mlp", "elementwise_product", "elementwise_product_mlp")
ROLES = ("s", "t")
LOGSIGMA_CLAMP = 10.0


@dataclass(frozen=True)
class EncoderSpec:
    variant: str = "dve"
    n_nodes: int = 0
    n_features: int = 0
    d1: int = 128
    d: int = 64
    n_layers: int = 2
    fusion: str = "concat"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.fusion not in FUSIONS:
            raise ValueError(f"unknown fusion {self.fusion!r}; expected one of {FUSIONS}")
        if self.fusion != "concat" and self.variant not in ("dve", "de"):
            raise ValueError(f"fusion {self.fusion!r} only applies to the decoupled variants")
        if not 1 <= self.n_layers <= 4:
            raise ValueError(f"n_layers must lie in [1, 4], got {self.n_layers}")
        if min(self.d1, self.d) < 1 or self.n_nodes < 1:
            raise ValueError("dimensions must be positive")

    @property
    def is_variational(self) -> bool:
        return self.variant in ("dve", "slve")

    @property
    def embedding_width(self) -> int:
        if self.fusion.startswith("elementwise_product"):
            return self.d
        return 2 * self.d

    def _chain(self, out: int) -> list[tuple[int, int]]:
        dims = [self.n_features] + [self.d1] * (self.n_layers - 1) + [out]
        return list(zip(dims[:-1], dims[1:]))

    def param_shapes(self) -> dict[str, tuple[int, int]]:
        shapes: dict[str, tuple[int, int]] = {}
        if self.variant in ("bpwr", "mf"):
            for role in ROLES:
                shapes[f"{role}.table"] = (self.n_nodes, 2 * self.d)
            return shapes
        branches = ("signed",) if self.variant == "slve" else ("p", "n")
        stats = ("mu", "sigma") if self.is_variational else ("mu",)
        out = 2 * self.d if self.variant == "slve" else self.d
        for role in ROLES:
            for branch in branches:
                for stat in stats:
                    for layer, shape in enumerate(self._chain(out)):
                        shapes[f"{role}.{branch}.{stat}.{layer}"] = shape
            if self.fusion == "concat_mlp":
                shapes[f"{role}.fuse"] = (2 * self.d, 2 * self.d)
            elif self.fusion == "elementwise_product_mlp":
                shapes[f"{role}.fuse"] = (self.d, self.d)
        return shapes


def init_weights(spec: EncoderSpec, seed: int) -> dict[str, np.ndarray]:
    """Glorot-uniform GCN weights; embedding tables drawn from N(0, 0.01^2)."""
    rng = np.random.default_rng(seed)
    out = {}
    for name, (fan_in, fan_out) in spec.param_shapes().items():
        if name.endswith(".table"):
            out[name] = rng.normal(0.0, 0.01, size=(fan_in, fan_out))
        else:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            out[name] = rng.uniform(-limit, limit, size=(fan_in, fan_out))
    return out


@dataclass
class LatentEmbeddings:
    z_s: Var
    z_t: Var
    # per role: (mu, logsigma) for each variational branch, in branch order
    gaussians: dict[str, list[tuple[Var, Var]]] = field(default_factory=lambda: {"s": [], "t": []})
    # per (role, branch): the sample entering fusion
    parts: dict[tuple[str, str], Var] = field(default_factory=dict)


def _gcn_stack(prop: SparseMatrix, features: Var | None, weights: list[Var], masks) -> Var:
    """Stacked ``prop @ h @ W`` layers; ReLU (and dropout) on every hidden layer.

    ``features=None`` means X = I_N, so the first product X W is W itself.
    """
    h = None
    for layer, w in enumerate(weights):
        if layer == 0:
            hw = w if features is None else ag.matmul(features, w)
        else:
            hw = ag.matmul(h, w)
        h = ag.spmm_const(prop, hw)
        if layer < len(weights) - 1:
            h = ag.relu(h)
            if masks is not None:
                h = ag.mul(h, masks[layer])
    return h


def encode_branch_variational(prop: SparseMatrix, features: Var | None, mu_weights: list[Var],
                              sigma_weights: list[Var], mu_masks=None, sigma_masks=None,
                              eps: Var | None = None) -> tuple[Var, Var, Var]:
    """One role/branch of the variational encoder. Returns (Z, mu, logsigma).

    ``eps=None`` is the deterministic path: Z is the mean.
    """
    mu = _gcn_stack(prop, features, mu_weights, mu_masks)
    logsigma = ag.clip(_gcn_stack(prop, features, sigma_weights, sigma_masks),
                       -LOGSIGMA_CLAMP, LOGSIGMA_CLAMP)
    if eps is None:
        return mu, mu, logsigma
    z = ag.add(mu, ag.mul(ag.exp(logsigma), eps))
    return z, mu, logsigma


def fuse(kind: str, zp: Var, zn: Var, weight: Var | None = None) -> Var:
    if kind == "concat":
        return ag.concat_cols([zp, zn])
    if kind == "concat_mlp":
        return ag.matmul(ag.concat_cols([zp, zn]), weight)
    if kind == "elementwise_product":
        return ag.mul(zp, zn)
    if kind == "elementwise_product_mlp":
        return ag.matmul(ag.mul(zp, zn), weight)
    raise ValueError(f"unknown fusion {kind!r}")


class StepNoise:
    """Per-step dropout masks and reparameterization noise, drawn in a fixed order.

    ``rng=None`` (evaluation) yields no masks and no noise.
    """

    def __init__(self, tape: Tape, rng: np.random.Generator | None, keep_prob: float = 0.8):
        if not 0.0 < keep_prob <= 1.0:
            raise ValueError(f"keep probability must lie in (0, 1], got {keep_prob}")
        self.tape = tape
        self.rng = rng
        self.keep_prob = keep_prob

    def masks(self, n_rows: int, widths: list[int]) -> list[Var] | None:
        if self.rng is None:
            return None
        out = []
        for w in widths:
            keep = self.rng.random((n_rows, w)) < self.keep_prob
            out.append(self.tape.constant(keep / self.keep_prob))
        return out

    def eps(self, shape) -> Var | None:
        if self.rng is None:
            return None
        return self.tape.constant(self.rng.standard_normal(shape))


def _hidden_widths(weights: list[Var]) -> list[int]:
    return [w.shape[1] for w in weights[:-1]]


def _path(params, role, branch, stat, n_layers):
    return [params[f"{role}.{branch}.{stat}.{layer}"] for layer in range(n_layers)]


def encode_dve(spec: EncoderSpec, decoupled: DecoupledAdjacency, params: dict[str, Var],
               noise: StepNoise, features: Var | None = None) -> LatentEmbeddings:
    """Decoupled variational encoder: four independent branch encoders fused per role."""
    n = spec.n_nodes
    props = {"p": decoupled.positive_prop, "n": decoupled.negative_prop}
    z = {}
    lat = LatentEmbeddings(None, None)
    for role in ROLES:
        for branch in ("p", "n"):
            mu_w = _path(params, role, branch, "mu", spec.n_layers)
            sg_w = _path(params, role, branch, "sigma", spec.n_layers)
            mu_m = noise.masks(n, _hidden_widths(mu_w))
            sg_m = noise.masks(n, _hidden_widths(sg_w))
            eps = noise.eps((n, spec.d))
            zb, mu, ls = encode_branch_variational(props[branch], features, mu_w, sg_w, mu_m, sg_m, eps)
            lat.gaussians[role].append((mu, ls))
            lat.parts[(role, branch)] = zb
        z[role] = fuse(spec.fusion, lat.parts[(role, "p")], lat.parts[(role, "n")], params.get(f"{role}.fuse"))
    lat.z_s, lat.z_t = z["s"], z["t"]
    return lat


def encode_de(spec: EncoderSpec, decoupled: DecoupledAdjacency, params: dict[str, Var],
              noise: StepNoise, features: Var | None = None) -> LatentEmbeddings:
    """Non-variational decoupled encoder: mean paths only, no KL terms."""
    n = spec.n_nodes
    props = {"p": decoupled.positive_prop, "n": decoupled.negative_prop}
    z = {}
    lat = LatentEmbeddings(None, None)
    for role in ROLES:
        for branch in ("p", "n"):
            mu_w = _path(params, role, branch, "mu", spec.n_layers)
            lat.parts[(role, branch)] = _gcn_stack(props[branch], features, mu_w, noise.masks(n, _hidden_widths(mu_w)))
        z[role] = fuse(spec.fusion, lat.parts[(role, "p")], lat.parts[(role, "n")], params.get(f"{role}.fuse"))
    lat.z_s, lat.z_t = z["s"], z["t"]
    return lat


def encode_slve(spec: EncoderSpec, signed_prop: SparseMatrix, params: dict[str, Var],
                noise: StepNoise, features: Var | None = None) -> LatentEmbeddings:
    """Single variational branch per role over the signed propagation matrix."""
    n = spec.n_nodes
    lat = LatentEmbeddings(None, None)
    z = {}
    for role in ROLES:
        mu_w = _path(params, role, "signed", "mu", spec.n_layers)
        sg_w = _path(params, role, "signed", "sigma", spec.n_layers)
        mu_m = noise.masks(n, _hidden_widths(mu_w))
        sg_m = noise.masks(n, _hidden_widths(sg_w))
        eps = noise.eps((n, 2 * spec.d))
        z[role], mu, ls = encode_branch_variational(signed_prop, features, mu_w, sg_w, mu_m, sg_m, eps)
        lat.gaussians[role].append((mu, ls))
        lat.parts[(role, "signed")] = z[role]
    lat.z_s, lat.z_t = z["s"], z["t"]
    return lat


def lookup_table_embeddings(params: dict[str, Var]) -> LatentEmbeddings:
    return LatentEmbeddings(params["s.table"], params["t.table"])


class Encoder:
    """Binds a variant to the propagation matrices of one training graph."""

    def __init__(self, spec: EncoderSpec, graph: SignedDigraph, features: np.ndarray | None = None,
                 keep_prob: float = 0.8):
        if graph.num_nodes != spec.n_nodes:
            raise ValueError(f"graph has {graph.num_nodes} nodes, spec expects {spec.n_nodes}")
        if features is not None:
            features = np.asarray(features, dtype=np.float64)
            if features.shape != (spec.n_nodes, spec.n_features):
                raise ValueError(f"features must be {(spec.n_nodes, spec.n_features)}, got {features.shape}")
        elif spec.variant not in ("bpwr", "mf") and spec.n_features != spec.n_nodes:
            raise ValueError("featureless mode requires n_features == n_nodes")
        self.spec = spec
        self.features = features
        self.keep_prob = keep_prob
        self.decoupled = decouple(graph) if spec.variant in ("dve", "de") else None
        self.signed_prop = build_signed_propagation(graph) if spec.variant == "slve" else None

    def forward(self, tape: Tape, params: dict[str, Var], rng: np.random.Generator | None = None) -> LatentEmbeddings:
        """Training forward when ``rng`` is given, deterministic evaluation forward otherwise."""
        noise = StepNoise(tape, rng, self.keep_prob)
        feats = None if self.features is None else tape.constant(self.features)
        v = self.spec.variant
        if v == "dve":
            return encode_dve(self.spec, self.decoupled, params, noise, feats)
        if v == "de":
            return encode_de(self.spec, self.decoupled, params, noise, feats)
        if v == "slve":
            return encode_slve(self.spec, self.signed_prop, params, noise, feats)
        return lookup_table_embeddings(params)

    def embed(self, weights: dict[str, np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
        """Evaluation-mode (mean, no dropout) embeddings as plain arrays."""
        tape = Tape()
        params = {k: tape.leaf(w, name=k, trainable=False) for k, w in weights.items()}
        lat = self.forward(tape, params, None)
        return lat.z_s.value.copy(), lat.z_t.value.copy()


def param_leaves(tape: Tape, weights: dict[str, np.ndarray], spec: EncoderSpec | None = None) -> dict[str, Var]:
    if spec is not None:
        expected = spec.param_shapes()
        for name, shape in expected.items():
            if name not in weights or weights[name].shape != shape:
                raise ValueError(f"weight {name!r} missing or not of shape {shape}")
    return {k: tape.leaf(w, name=k) for k, w in weights.items()}
