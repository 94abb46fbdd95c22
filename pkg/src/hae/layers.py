"""Model layers: semantic convolution (SCL), masked content attention (CAL),
and the stack composer.

An SCL mixes the per-structure similarity matrices with trainable simplex
weights (softmax-reparameterized), degree-normalizes the mixture inside the
differentiation graph, and applies graph-convolution sublayers. A CAL runs
multi-head masked self-attention over the binary structure neighborhood,
with LeakyReLU attention scoring and ELU head outputs, concatenating heads
so output width equals the embedding width.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import RngStream, Tensor
from .errors import ConfigError, DataError
from .hin import HeteroGraph
from .semantics import BinaryAdjacency, SemanticCache, binary_adjacency

DEFAULT_STRUCTURES = [
    "A-P-C-P-A",
    "A-P-T-P-A",
    "A-P-(A|C)-P-A",
    "A-P-(C|T)-P-A",
]

_VARIANT = re.compile(r"(gnn|scl|cal)-([0-9]+)l")

_ACTIVATIONS = {
    "relu": ad.relu,
    "elu": ad.elu,
    "sigmoid": ad.sigmoid,
    "identity": lambda t: t,
}


@dataclass
class ModelConfig:
    """Declarative model description; round-trips through JSON."""

    variant: str | None = "gnn-2l"
    layers: list[str] | None = None
    dim: int = 64
    heads: int = 8
    scl_sublayers: int = 2
    structures: list[str] = field(default_factory=lambda: list(DEFAULT_STRUCTURES))
    dropout_first_cal: float = 0.4
    attention_slope: float = 0.2
    scl_hidden_activation: str = "relu"
    cal_activation: str = "elu"

    def layer_kinds(self) -> list[str]:
        if self.layers is not None:
            kinds = [k.lower() for k in self.layers]
            if not kinds or any(k not in ("scl", "cal") for k in kinds):
                raise ConfigError(f"invalid explicit layer list {self.layers!r}")
            return kinds
        m = _VARIANT.fullmatch(self.variant or "")
        if not m:
            raise ConfigError(f"unknown variant {self.variant!r}")
        family, k = m.group(1), int(m.group(2))
        if k < 1:
            raise ConfigError(f"variant order must be >= 1: {self.variant!r}")
        if family == "gnn":
            return ["scl"] + ["cal"] * (k - 1)
        return [family] * k

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        d = dict(d)
        variant = d.pop("variant", "gnn-2l")
        layers = d.pop("layers", None)
        if isinstance(variant, dict):
            layers = variant.get("layers")
            variant = None
        cfg = ModelConfig(variant=variant, layers=layers)
        for key in (
            "dim", "heads", "scl_sublayers", "structures",
            "dropout_first_cal", "attention_slope",
            "scl_hidden_activation", "cal_activation",
        ):
            if key in d:
                setattr(cfg, key, d.pop(key))
        if d:
            raise ConfigError(f"unknown model config keys: {sorted(d)}")
        return cfg

    def to_dict(self) -> dict:
        out = {
            "dim": self.dim,
            "heads": self.heads,
            "scl_sublayers": self.scl_sublayers,
            "structures": list(self.structures),
            "dropout_first_cal": self.dropout_first_cal,
            "attention_slope": self.attention_slope,
            "scl_hidden_activation": self.scl_hidden_activation,
            "cal_activation": self.cal_activation,
        }
        if self.layers is not None:
            out["variant"] = {"layers": list(self.layers)}
        else:
            out["variant"] = self.variant
        return out


@dataclass
class GraphInputs:
    """Model-side view of a graph: target features, per-structure similarity
    matrices (unit diagonal), and the binary neighborhood adjacency."""

    features: np.ndarray
    sims: list[np.ndarray]
    adjacency: BinaryAdjacency
    structures: list[str] = field(default_factory=list)
    sims_stack: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = self.features.shape[0]
        for s in self.sims:
            if s.shape != (n, n):
                raise ConfigError(f"similarity shape {s.shape} does not match N={n}")
            if not np.allclose(np.diag(s), 1.0, atol=1e-12):
                raise ConfigError("similarity matrix diagonal must be 1")
        if self.adjacency.mask.shape != (n, n):
            raise ConfigError("adjacency shape does not match N")
        self.sims_stack = np.stack([s.reshape(-1) for s in self.sims])

    @property
    def n_nodes(self) -> int:
        return self.features.shape[0]


def build_graph_inputs(g: HeteroGraph, structures: Sequence[str]) -> GraphInputs:
    """Compile structures against ``g`` and assemble the model inputs."""
    if g.target_type is None:
        raise ConfigError("graph has no target type")
    if g.target_type not in g.features:
        raise ConfigError(f"no features for target type {g.target_type!r}")
    if not structures:
        raise ConfigError("need at least one semantic structure")
    cache = SemanticCache(g)
    counts = [cache.commuting(s) for s in structures]
    sims = [cache.similarity(s).values for s in structures]
    for c in counts:
        if c.structure.source_type != g.target_type:
            raise ConfigError(
                f"structure {c.structure.canonical()!r} does not start at the "
                f"target type {g.target_type!r}"
            )
    return GraphInputs(
        features=g.features[g.target_type],
        sims=sims,
        adjacency=binary_adjacency(counts),
        structures=[c.structure.canonical() for c in counts],
    )


@dataclass
class SclParams:
    theta_omega: Tensor  # 1 x M, softmax gives the structure weights
    sublayer_weights: list[Tensor]
    hidden_activation: str = "relu"

    def omega(self) -> np.ndarray:
        v = self.theta_omega.values[0]
        e = np.exp(v - v.max())
        return e / e.sum()


@dataclass
class CalParams:
    heads: int
    head_dim: int
    w: list[Tensor]  # per head, head_dim x in_dim
    a: list[Tensor]  # per head, 2*head_dim x 1
    dropout_rate: float
    attention_slope: float = 0.2
    activation: str = "elu"


@dataclass
class LayerStack:
    layers: list[tuple[str, SclParams | CalParams]]
    classifier_w: Tensor  # c x d
    classifier_b: Tensor  # 1 x c
    config: ModelConfig

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = []
        for i, (kind, p) in enumerate(self.layers):
            if kind == "scl":
                out.append((f"layer{i}.theta", p.theta_omega))
                out.extend(
                    (f"layer{i}.w{j}", w) for j, w in enumerate(p.sublayer_weights)
                )
            else:
                for h in range(p.heads):
                    out.append((f"layer{i}.h{h}.w", p.w[h]))
                    out.append((f"layer{i}.h{h}.a", p.a[h]))
        out.append(("classifier.w", self.classifier_w))
        out.append(("classifier.b", self.classifier_b))
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def omegas(self) -> dict[int, list[float]]:
        """Learned structure weights, per SCL layer index."""
        return {
            i: p.omega().tolist()
            for i, (kind, p) in enumerate(self.layers)
            if kind == "scl"
        }

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters():
            if name not in values:
                raise DataError(f"checkpoint is missing parameter {name!r}")
            if values[name].shape != p.values.shape:
                raise DataError(
                    f"checkpoint parameter {name!r} has shape "
                    f"{values[name].shape}, expected {p.values.shape}"
                )
            p.values = values[name].copy()

    def snapshot(self) -> list[np.ndarray]:
        return [p.values.copy() for p in self.parameters()]

    def restore(self, snap: list[np.ndarray]) -> None:
        for p, v in zip(self.parameters(), snap):
            p.values = v.copy()


def build_stack(
    cfg: ModelConfig,
    feature_dim: int,
    n_classes: int,
    n_structures: int,
    rng: RngStream,
) -> LayerStack:
    """Allocate a stack per the config, with Xavier initialization and the
    halving CAL dropout schedule (0.4, 0.2, 0.1, ...)."""
    kinds = cfg.layer_kinds()
    d = cfg.dim
    if d <= 0 or cfg.heads <= 0 or cfg.scl_sublayers < 1:
        raise ConfigError("dim, heads and scl_sublayers must be positive")
    if d % cfg.heads != 0:
        raise ConfigError(f"dim {d} not divisible by heads {cfg.heads}")
    if cfg.scl_hidden_activation not in _ACTIVATIONS:
        raise ConfigError(f"unknown activation {cfg.scl_hidden_activation!r}")
    if cfg.cal_activation not in _ACTIVATIONS:
        raise ConfigError(f"unknown activation {cfg.cal_activation!r}")
    layers: list[tuple[str, SclParams | CalParams]] = []
    in_dim = feature_dim
    cal_rate = cfg.dropout_first_cal
    stream = rng.child(0)
    for i, kind in enumerate(kinds):
        if kind == "scl":
            dims = [in_dim] + [d] * cfg.scl_sublayers
            weights = [
                ad.xavier_init(a, b, stream.child(i, j), name=f"layer{i}.w{j}")
                for j, (a, b) in enumerate(zip(dims, dims[1:]))
            ]
            limit = np.sqrt(6.0 / (1 + n_structures))
            theta = ad.parameter(
                stream.child(i, 99).uniform(-limit, limit, (1, n_structures)),
                name=f"layer{i}.theta",
            )
            layers.append(
                ("scl", SclParams(theta, weights, cfg.scl_hidden_activation))
            )
        else:
            hd = d // cfg.heads
            w = [
                ad.xavier_init(hd, in_dim, stream.child(i, 2 * h), name=f"layer{i}.h{h}.w")
                for h in range(cfg.heads)
            ]
            a = [
                ad.xavier_init(2 * hd, 1, stream.child(i, 2 * h + 1), name=f"layer{i}.h{h}.a")
                for h in range(cfg.heads)
            ]
            layers.append(
                (
                    "cal",
                    CalParams(
                        heads=cfg.heads,
                        head_dim=hd,
                        w=w,
                        a=a,
                        dropout_rate=cal_rate,
                        attention_slope=cfg.attention_slope,
                        activation=cfg.cal_activation,
                    ),
                )
            )
            cal_rate *= 0.5
        in_dim = d
    classifier_w = ad.xavier_init(n_classes, d, stream.child(98), name="classifier.w")
    classifier_b = ad.parameter(np.zeros((1, n_classes)), name="classifier.b")
    return LayerStack(layers, classifier_w, classifier_b, cfg)


def scl_forward(
    inputs: GraphInputs, p: SclParams, h: Tensor, training: bool = False
) -> Tensor:
    """One SCL pass: mix the similarity matrices with softmax(theta),
    degree-normalize, and apply the convolution sublayers. Gradients flow
    through the normalization (the degrees depend on the weights)."""
    n = inputs.n_nodes
    omega = ad.row_softmax(p.theta_omega)
    stack = ad.constant(inputs.sims_stack)
    a = ad.reshape(ad.matmul(omega, stack), (n, n))
    deg = ad.matmul(a, ad.constant(np.ones((n, 1))))
    inv_sqrt = ad.powf(deg, -0.5)
    a_hat = ad.hadamard(ad.matmul(inv_sqrt, ad.transpose(inv_sqrt)), a)
    act = _ACTIVATIONS[p.hidden_activation]
    last = len(p.sublayer_weights) - 1
    for j, w in enumerate(p.sublayer_weights):
        h = ad.matmul(ad.matmul(a_hat, h), w)
        if j < last:
            h = act(h)
    return h


def cal_forward(
    h: Tensor,
    adj: BinaryAdjacency,
    p: CalParams,
    training: bool = False,
    rng: RngStream | None = None,
    alphas_out: list[np.ndarray] | None = None,
) -> Tensor:
    """One CAL pass: per-head masked attention over the structure
    neighborhood, ELU head outputs, heads concatenated."""
    mask = adj.mask.astype(bool)
    if training:
        h = ad.dropout(h, p.dropout_rate, training, rng)
    act = _ACTIVATIONS[p.activation]
    hd = p.head_dim
    outs = []
    for w, a in zip(p.w, p.a):
        z = ad.matmul(h, ad.transpose(w))
        a_src = ad.select_rows(a, np.arange(hd))
        a_dst = ad.select_rows(a, np.arange(hd, 2 * hd))
        f_src = ad.matmul(z, a_src)
        f_dst = ad.matmul(z, a_dst)
        e = ad.outer_sum(f_src, ad.transpose(f_dst))
        e = ad.leaky_relu(e, p.attention_slope)
        alpha = ad.masked_row_softmax(e, mask)
        if alphas_out is not None:
            alphas_out.append(alpha.values.copy())
        if training:
            alpha = ad.dropout(alpha, p.dropout_rate, training, rng)
        outs.append(act(ad.matmul(alpha, z)))
    return ad.concat_cols(outs)


def model_forward(
    stack: LayerStack,
    inputs: GraphInputs,
    training: bool = False,
    rng: RngStream | None = None,
    alphas_out: list[np.ndarray] | None = None,
    features: Tensor | None = None,
) -> tuple[Tensor, Tensor]:
    """Thread the features through the stack; returns (embeddings, logits).

    Embeddings are the last layer's output, logits come from the linear
    classifier head. ``features`` may override the graph features with a
    differentiable tensor (used by the receptive-field probes).
    """
    h = features if features is not None else ad.constant(inputs.features)
    if h.shape[0] != inputs.n_nodes:
        raise ConfigError("feature row count does not match the graph")
    for kind, p in stack.layers:
        if kind == "scl":
            h = scl_forward(inputs, p, h, training)
        else:
            h = cal_forward(h, inputs.adjacency, p, training, rng, alphas_out)
    n = h.shape[0]
    logits = ad.add(
        ad.matmul(h, ad.transpose(stack.classifier_w)),
        ad.matmul(ad.constant(np.ones((n, 1))), stack.classifier_b),
    )
    return h, logits
