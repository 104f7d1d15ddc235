"""Two-layer node classifiers and their parameter stores.

Every kind maps node features to per-class logits in two layers (LogReg: one). Graph
operators (normalized adjacency, neighbour means, pseudo-coordinates) are derived from
the dataset once and cached per dataset object.
"""

from __future__ import annotations

import dataclasses
import functools
import logging
from collections.abc import Callable, Iterator, Mapping
from dataclasses import dataclass, field
from enum import StrEnum
from typing import Any

import numpy as np
import numpy.typing as npt

from . import autodiff as ad
from .autodiff import SparseOperator, Tensor
from .errors import DivergenceError, UsageError
from .graph import Dataset, add_self_loops
from .propagation import PropagationConfig, PropagationMode
from .rng import RngStream

__all__ = [
    "TRAINABLE_KINDS",
    "TUNED_DEFAULTS",
    "GraphContext",
    "ModelKind",
    "ModelSpec",
    "ParamStore",
    "build_model",
    "forward",
    "graph_context",
    "param_count",
]

logger = logging.getLogger(__name__)


class ModelKind(StrEnum):
    """Every method the benchmark compares."""

    GCN = "GCN"
    GAT = "GAT"
    MONET = "MoNet"
    GS_MEAN = "GS-mean"
    GS_MEANPOOL = "GS-meanpool"
    GS_MAXPOOL = "GS-maxpool"
    MLP = "MLP"
    LOGREG = "LogReg"
    LABELPROP = "LabelProp"
    LABELPROP_NL = "LabelProp NL"


TRAINABLE_KINDS = frozenset(
    {
        ModelKind.GCN,
        ModelKind.GAT,
        ModelKind.MONET,
        ModelKind.GS_MEAN,
        ModelKind.GS_MEANPOOL,
        ModelKind.GS_MAXPOOL,
        ModelKind.MLP,
        ModelKind.LOGREG,
    }
)
_GRAPHSAGE = (ModelKind.GS_MEAN, ModelKind.GS_MEANPOOL, ModelKind.GS_MAXPOOL)


@dataclass(frozen=True)
class ModelSpec:
    """Architecture identity and hyperparameters of one method.

    ``hidden_size`` is the effective hidden size: GAT splits it over ``heads``, MoNet over
    its ``heads`` Gaussian kernels, and GraphSAGE sums a self and a neighbour transform of
    that width. ``l2_scope`` is ``"first_layer"`` or ``"all"``; ``None`` picks the
    default of the kind (first layer for GCN, all weight matrices otherwise).
    """

    kind: ModelKind
    hidden_size: int = 64
    heads: int = 1
    output_heads: int = 1
    pool_size: int = 0
    feature_dropout: float = 0.5
    attention_dropout: float = 0.0
    l2_strength: float = 5e-4
    learning_rate: float = 0.01
    l2_scope: str | None = None
    propagation: PropagationConfig | None = None

    def __post_init__(self) -> None:
        """Normalize the kind and check structural constraints."""
        try:
            object.__setattr__(self, "kind", ModelKind(self.kind))
        except ValueError as e:
            raise UsageError(f"Unknown model kind {self.kind!r}") from e
        if self.kind in (ModelKind.LABELPROP, ModelKind.LABELPROP_NL):
            mode = (
                PropagationMode.ROW_NORMALIZED
                if self.kind is ModelKind.LABELPROP
                else PropagationMode.SYMMETRIC_NORMALIZED
            )
            base = self.propagation or PropagationConfig()
            object.__setattr__(self, "propagation", dataclasses.replace(base, mode=mode))
            return
        for label, p in (("feature", self.feature_dropout), ("attention", self.attention_dropout)):
            if not 0 <= p < 1:
                raise UsageError(f"{label} dropout must be in [0, 1), got {p}")
        if self.l2_strength < 0 or self.learning_rate <= 0:
            raise UsageError("l2_strength must be >= 0 and learning_rate > 0")
        if self.l2_scope not in (None, "first_layer", "all"):
            raise UsageError(f"l2_scope must be 'first_layer' or 'all', got {self.l2_scope!r}")
        if self.kind is not ModelKind.LOGREG and self.hidden_size < 1:
            raise UsageError(f"{self.kind}: hidden_size must be >= 1")
        if self.kind in (ModelKind.GAT, ModelKind.MONET) and (
            self.heads < 1 or self.hidden_size % self.heads
        ):
            raise UsageError(
                f"{self.kind}: hidden_size {self.hidden_size} not divisible by {self.heads} heads"
            )
        if self.kind in (ModelKind.GS_MEANPOOL, ModelKind.GS_MAXPOOL) and self.pool_size < 1:
            raise UsageError(f"{self.kind}: pool_size must be >= 1")

    @property
    def trainable(self) -> bool:
        """Whether this method is fitted by gradient descent."""
        return self.kind in TRAINABLE_KINDS

    @property
    def effective_l2_scope(self) -> str:
        """Resolved L2 scope."""
        if self.l2_scope is not None:
            return self.l2_scope
        return "first_layer" if self.kind is ModelKind.GCN else "all"

    def to_dict(self) -> dict[str, Any]:
        """JSON-ready representation."""
        data = dataclasses.asdict(self)
        data["kind"] = str(self.kind)
        if self.propagation is not None:
            data["propagation"]["mode"] = str(self.propagation.mode)
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ModelSpec:
        """Build from a JSON object; unspecified fields come from the tuned defaults."""
        if "kind" not in data:
            raise UsageError("model entry needs a 'kind'")
        try:
            kind = ModelKind(data["kind"])
        except ValueError as e:
            raise UsageError(f"Unknown model kind {data['kind']!r}") from e
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise UsageError(f"Unknown model fields {unknown}")
        overrides = {k: v for k, v in data.items() if k != "kind"}
        if isinstance(overrides.get("propagation"), Mapping):
            try:
                overrides["propagation"] = PropagationConfig(**overrides["propagation"])
            except TypeError as e:
                raise UsageError(f"Invalid propagation settings: {e}") from e
        return dataclasses.replace(TUNED_DEFAULTS[kind], **overrides)


# Best configurations found by the grid search over CORA and CiteSeer.
TUNED_DEFAULTS: dict[ModelKind, ModelSpec] = {
    ModelKind.GCN: ModelSpec(
        ModelKind.GCN, hidden_size=64, learning_rate=0.01, feature_dropout=0.8, l2_strength=1e-3
    ),
    ModelKind.GAT: ModelSpec(
        ModelKind.GAT,
        hidden_size=64,
        heads=8,
        learning_rate=0.01,
        feature_dropout=0.6,
        attention_dropout=0.3,
        l2_strength=1e-2,
    ),
    ModelKind.MONET: ModelSpec(
        ModelKind.MONET,
        hidden_size=64,
        heads=2,
        learning_rate=0.003,
        feature_dropout=0.7,
        l2_strength=5e-2,
    ),
    ModelKind.GS_MEAN: ModelSpec(
        ModelKind.GS_MEAN, hidden_size=32, learning_rate=0.001, feature_dropout=0.4, l2_strength=0.1
    ),
    ModelKind.GS_MAXPOOL: ModelSpec(
        ModelKind.GS_MAXPOOL,
        hidden_size=32,
        pool_size=32,
        learning_rate=0.001,
        feature_dropout=0.3,
        l2_strength=5e-3,
    ),
    ModelKind.GS_MEANPOOL: ModelSpec(
        ModelKind.GS_MEANPOOL,
        hidden_size=32,
        pool_size=8,
        learning_rate=0.001,
        feature_dropout=0.2,
        l2_strength=1e-2,
    ),
    ModelKind.MLP: ModelSpec(
        ModelKind.MLP, hidden_size=64, learning_rate=0.005, feature_dropout=0.8, l2_strength=1e-2
    ),
    ModelKind.LOGREG: ModelSpec(
        ModelKind.LOGREG, hidden_size=0, learning_rate=0.1, feature_dropout=0.0, l2_strength=5e-4
    ),
    ModelKind.LABELPROP: ModelSpec(ModelKind.LABELPROP),
    ModelKind.LABELPROP_NL: ModelSpec(ModelKind.LABELPROP_NL),
}


# --------------------------------------------------------------------------- #
# Parameters
# --------------------------------------------------------------------------- #
@dataclass
class ParamStore:
    """Named trainable tensors of one model instance."""

    kind: ModelKind
    tensors: dict[str, Tensor] = field(default_factory=dict)
    l2_names: tuple[str, ...] = ()

    def __getitem__(self, name: str) -> Tensor:
        """Tensor called ``name``."""
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        """Parameter names in allocation order."""
        return iter(self.tensors)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        """(name, tensor) pairs in allocation order."""
        return iter(self.tensors.items())

    def num_scalars(self) -> int:
        """Total count of trainable scalars."""
        return sum(t.data.size for t in self.tensors.values())

    def zero_grad(self) -> None:
        """Reset every gradient buffer."""
        for t in self.tensors.values():
            t.zero_grad()

    def snapshot(self) -> dict[str, npt.NDArray[np.floating]]:
        """Copy of every parameter value."""
        return {name: t.data.copy() for name, t in self.tensors.items()}

    def restore(self, snapshot: Mapping[str, npt.NDArray[np.floating]]) -> None:
        """Overwrite parameter values from :meth:`snapshot` output."""
        for name, t in self.tensors.items():
            t.data = snapshot[name].copy()

    def l2_term(self, strength: float) -> Tensor:
        """Differentiable ``strength / 2 * sum ||W||^2`` over the regularized weights."""
        dtype = next(iter(self.tensors.values())).dtype
        total = Tensor(np.zeros((1, 1), dtype=dtype))
        for name in self.l2_names:
            total = ad.add(total, ad.sum_all(ad.square(self.tensors[name])))
        return ad.scale(total, 0.5 * strength)

    def _add(self, name: str, tensor: Tensor) -> None:
        tensor.name = name
        self.tensors[name] = tensor


def param_count(spec: ModelSpec, in_dim: int, num_classes: int) -> int:
    """Exact number of trainable scalars.

    With D inputs, C classes, effective hidden size h, H heads/kernels and pool width P:

    - GCN, MLP: ``D*h + h + h*C + C``
    - LogReg: ``D*C + C``
    - GAT (O output heads): ``D*h + 2*h + h + O*(h*C + 2*C) + C``
    - MoNet: ``D*h + 4*H + h + 4*H + h*C + C``
    - GS-mean: ``2*D*h + h + 2*h*C + C``
    - GS-meanpool / GS-maxpool:
      ``D*P + P + D*h + P*h + h + h*P + P + h*C + P*C + C``
    - label propagation: 0
    """
    d, c, h = in_dim, num_classes, spec.hidden_size
    kind = spec.kind
    if kind in (ModelKind.GCN, ModelKind.MLP):
        return d * h + h + h * c + c
    if kind is ModelKind.LOGREG:
        return d * c + c
    if kind is ModelKind.GAT:
        return d * h + 2 * h + h + spec.output_heads * (h * c + 2 * c) + c
    if kind is ModelKind.MONET:
        k = spec.heads
        return d * h + 4 * k + h + 4 * k + h * c + c
    if kind is ModelKind.GS_MEAN:
        return 2 * d * h + h + 2 * h * c + c
    if kind in (ModelKind.GS_MEANPOOL, ModelKind.GS_MAXPOOL):
        p = spec.pool_size
        first = d * p + p + d * h + p * h + h
        second = h * p + p + h * c + p * c + c
        return first + second
    return 0


def build_model(
    spec: ModelSpec,
    in_dim: int,
    num_classes: int,
    rng: RngStream,
    dtype: npt.DTypeLike = np.float32,
) -> ParamStore:
    """Allocate Glorot-initialized weights and zero biases for ``spec``.

    Each tensor draws from its own sub-stream keyed by its name, so kinds sharing a
    layout (GCN and MLP) start from identical weights.
    """
    if not spec.trainable:
        raise UsageError(f"{spec.kind} has no trainable parameters")
    if in_dim < 1 or num_classes < 1:
        raise UsageError(f"dimensions must be >= 1, got in_dim={in_dim}, classes={num_classes}")
    store = ParamStore(kind=spec.kind)
    c, h = num_classes, spec.hidden_size

    def weight(name: str, fan_in: int, fan_out: int) -> None:
        store._add(name, ad.glorot_init(fan_in, fan_out, rng.child("param", name), dtype))

    def bias(name: str, width: int) -> None:
        store._add(name, ad.zeros(1, width, dtype))

    kind = spec.kind
    if kind in (ModelKind.GCN, ModelKind.MLP):
        weight("layer1.weight", in_dim, h)
        bias("layer1.bias", h)
        weight("layer2.weight", h, c)
        bias("layer2.bias", c)
    elif kind is ModelKind.LOGREG:
        weight("layer1.weight", in_dim, c)
        bias("layer1.bias", c)
    elif kind is ModelKind.GAT:
        per_head = h // spec.heads
        for k in range(spec.heads):
            weight(f"layer1.head{k}.weight", in_dim, per_head)
            weight(f"layer1.head{k}.att_src", per_head, 1)
            weight(f"layer1.head{k}.att_dst", per_head, 1)
        bias("layer1.bias", h)
        for k in range(spec.output_heads):
            weight(f"layer2.head{k}.weight", h, c)
            weight(f"layer2.head{k}.att_src", c, 1)
            weight(f"layer2.head{k}.att_dst", c, 1)
        bias("layer2.bias", c)
    elif kind is ModelKind.MONET:
        per_kernel = h // spec.heads
        for k in range(spec.heads):
            weight(f"layer1.kernel{k}.weight", in_dim, per_kernel)
        for layer in ("layer1", "layer2"):
            for k in range(spec.heads):
                # Gaussian means start Glorot-uniform, log-variances at zero
                weight(f"{layer}.kernel{k}.mu", 1, 2)
                bias(f"{layer}.kernel{k}.log_sigma", 2)
        bias("layer1.bias", h)
        weight("layer2.weight", h, c)
        bias("layer2.bias", c)
    else:
        pooled = kind is not ModelKind.GS_MEAN
        p = spec.pool_size
        for layer, fan_in, fan_out in (("layer1", in_dim, h), ("layer2", h, c)):
            if pooled:
                weight(f"{layer}.pool_weight", fan_in, p)
                bias(f"{layer}.pool_bias", p)
            weight(f"{layer}.self_weight", fan_in, fan_out)
            weight(f"{layer}.neigh_weight", p if pooled else fan_in, fan_out)
            bias(f"{layer}.bias", fan_out)

    scope = spec.effective_l2_scope
    store.l2_names = tuple(
        name
        for name in store
        if name.endswith("weight") and (scope == "all" or name.startswith("layer1."))
    )
    expected = param_count(spec, in_dim, num_classes)
    if store.num_scalars() != expected:
        raise AssertionError(f"{kind}: built {store.num_scalars()} scalars, formula {expected}")
    return store


# --------------------------------------------------------------------------- #
# Graph operators
# --------------------------------------------------------------------------- #
@dataclass(frozen=True, eq=False)
class GraphContext:
    """Constant operators a forward pass needs, in one floating dtype."""

    features: Tensor
    # self-looped structure: GCN propagation, GAT segments, MoNet edges
    loop_rows: npt.NDArray[np.int64]
    loop_cols: npt.NDArray[np.int64]
    gcn_op: SparseOperator
    loop_op: SparseOperator
    pseudo_coords: Tensor
    # neighbours without the node itself: GraphSAGE aggregation
    neigh_indptr: npt.NDArray[np.int64]
    neigh_cols: npt.NDArray[np.int64]
    neigh_mean_op: SparseOperator


@functools.lru_cache(maxsize=16)
def graph_context(ds: Dataset, dtype: np.dtype[Any]) -> GraphContext:
    """Derive (and cache per dataset object) every operator the models use."""
    n = ds.num_nodes
    looped = add_self_loops(ds.adjacency)
    rows, cols = looped.row_ids(), looped.indices
    deg = looped.degrees().astype(np.float64)
    inv_sqrt = 1.0 / np.sqrt(deg)
    gcn_values = Tensor((inv_sqrt[rows] * inv_sqrt[cols])[:, None], dtype=dtype)
    gcn_op = SparseOperator(n, n, looped.indptr, cols, gcn_values)
    loop_op = gcn_op.with_values(Tensor(np.ones((len(cols), 1)), dtype=dtype))
    pseudo = np.stack([inv_sqrt[rows], inv_sqrt[cols]], axis=1)

    raw_rows = ds.adjacency.row_ids()
    off = raw_rows != ds.adjacency.indices
    neigh_rows = raw_rows[off]
    neigh_cols = ds.adjacency.indices[off]
    counts = np.bincount(neigh_rows, minlength=n)
    neigh_indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    with np.errstate(divide="ignore"):
        inv_counts = np.where(counts > 0, 1.0 / np.maximum(counts, 1), 0.0)
    mean_values = Tensor(inv_counts[neigh_rows][:, None], dtype=dtype)
    neigh_mean_op = SparseOperator(n, n, neigh_indptr, neigh_cols, mean_values)

    return GraphContext(
        features=Tensor(ds.features, dtype=dtype),
        loop_rows=rows,
        loop_cols=cols,
        gcn_op=gcn_op,
        loop_op=loop_op,
        pseudo_coords=Tensor(pseudo, dtype=dtype),
        neigh_indptr=neigh_indptr,
        neigh_cols=neigh_cols,
        neigh_mean_op=neigh_mean_op,
    )


# --------------------------------------------------------------------------- #
# Forward passes
# --------------------------------------------------------------------------- #
_ForwardFn = Callable[[ModelSpec, ParamStore, GraphContext, RngStream, bool], Tensor]


def _dense_forward(
    spec: ModelSpec, params: ParamStore, ctx: GraphContext, rng: RngStream, training: bool
) -> Tensor:
    p = spec.feature_dropout
    h = ad.dropout(ctx.features, p, rng, training)
    h = ad.add(h @ params["layer1.weight"], params["layer1.bias"])
    if spec.kind is ModelKind.LOGREG:
        return h
    h = ad.dropout(ad.elementwise("relu", h), p, rng, training)
    return ad.add(h @ params["layer2.weight"], params["layer2.bias"])


def _gcn_forward(
    spec: ModelSpec, params: ParamStore, ctx: GraphContext, rng: RngStream, training: bool
) -> Tensor:
    p = spec.feature_dropout
    h = ad.dropout(ctx.features, p, rng, training)
    h = ad.add(ad.spmm(ctx.gcn_op, h @ params["layer1.weight"]), params["layer1.bias"])
    h = ad.dropout(ad.elementwise("relu", h), p, rng, training)
    return ad.add(ad.spmm(ctx.gcn_op, h @ params["layer2.weight"]), params["layer2.bias"])


def _attention_head(
    h: Tensor,
    prefix: str,
    spec: ModelSpec,
    params: ParamStore,
    ctx: GraphContext,
    rng: RngStream,
    training: bool,
) -> Tensor:
    z = h @ params[f"{prefix}.weight"]
    src = ad.gather_rows(z @ params[f"{prefix}.att_src"], ctx.loop_rows)
    dst = ad.gather_rows(z @ params[f"{prefix}.att_dst"], ctx.loop_cols)
    scores = ad.elementwise("leaky_relu", ad.add(src, dst))
    coeffs = ad.segment_softmax(scores, ctx.loop_op.indptr)
    coeffs = ad.dropout(coeffs, spec.attention_dropout, rng, training)
    return ad.spmm(ctx.loop_op.with_values(coeffs), z)


def _gat_forward(
    spec: ModelSpec, params: ParamStore, ctx: GraphContext, rng: RngStream, training: bool
) -> Tensor:
    p = spec.feature_dropout
    h = ad.dropout(ctx.features, p, rng, training)
    heads = [
        _attention_head(h, f"layer1.head{k}", spec, params, ctx, rng, training)
        for k in range(spec.heads)
    ]
    h = ad.elementwise("elu", ad.add(ad.concat_cols(heads), params["layer1.bias"]))
    h = ad.dropout(h, p, rng, training)
    outputs = [
        _attention_head(h, f"layer2.head{k}", spec, params, ctx, rng, training)
        for k in range(spec.output_heads)
    ]
    return ad.add(ad.mean_of(outputs), params["layer2.bias"])


def _kernel_weights(prefix: str, params: ParamStore, ctx: GraphContext) -> Tensor:
    diff = ad.sub(ctx.pseudo_coords, params[f"{prefix}.mu"])
    precision = ad.elementwise("exp", ad.scale(params[f"{prefix}.log_sigma"], -1.0))
    dist = ad.sum_cols(ad.mul(ad.square(diff), precision))
    return ad.elementwise("exp", ad.scale(dist, -0.5))


def _kernel_operator(prefix: str, params: ParamStore, ctx: GraphContext) -> SparseOperator:
    return ctx.loop_op.with_values(_kernel_weights(prefix, params, ctx))


def _monet_forward(
    spec: ModelSpec, params: ParamStore, ctx: GraphContext, rng: RngStream, training: bool
) -> Tensor:
    p = spec.feature_dropout
    h = ad.dropout(ctx.features, p, rng, training)
    # layer 1: each kernel aggregates into its own slice of the hidden state
    parts = [
        ad.spmm(
            _kernel_operator(f"layer1.kernel{k}", params, ctx),
            h @ params[f"layer1.kernel{k}.weight"],
        )
        for k in range(spec.heads)
    ]
    h = ad.elementwise("relu", ad.add(ad.concat_cols(parts), params["layer1.bias"]))
    h = ad.dropout(h, p, rng, training)
    # layer 2: kernel aggregations summed, one shared linear map
    z = h @ params["layer2.weight"]
    total = ad.spmm(_kernel_operator("layer2.kernel0", params, ctx), z)
    for k in range(1, spec.heads):
        total = ad.add(total, ad.spmm(_kernel_operator(f"layer2.kernel{k}", params, ctx), z))
    return ad.add(total, params["layer2.bias"])


def _sage_neighbourhood(
    h: Tensor, layer: str, spec: ModelSpec, params: ParamStore, ctx: GraphContext
) -> Tensor:
    if spec.kind is ModelKind.GS_MEAN:
        return ad.spmm(ctx.neigh_mean_op, h @ params[f"{layer}.neigh_weight"])
    pooled = ad.elementwise(
        "relu", ad.add(h @ params[f"{layer}.pool_weight"], params[f"{layer}.pool_bias"])
    )
    if spec.kind is ModelKind.GS_MEANPOOL:
        agg = ad.spmm(ctx.neigh_mean_op, pooled)
    else:
        agg = ad.segment_max(ad.gather_rows(pooled, ctx.neigh_cols), ctx.neigh_indptr)
    return agg @ params[f"{layer}.neigh_weight"]


def _sage_forward(
    spec: ModelSpec, params: ParamStore, ctx: GraphContext, rng: RngStream, training: bool
) -> Tensor:
    p = spec.feature_dropout
    h = ad.dropout(ctx.features, p, rng, training)
    own = h @ params["layer1.self_weight"]
    neigh = _sage_neighbourhood(h, "layer1", spec, params, ctx)
    h = ad.elementwise("relu", ad.add(ad.add(own, neigh), params["layer1.bias"]))
    h = ad.dropout(h, p, rng, training)
    own = h @ params["layer2.self_weight"]
    neigh = _sage_neighbourhood(h, "layer2", spec, params, ctx)
    return ad.add(ad.add(own, neigh), params["layer2.bias"])


FORWARDS: dict[ModelKind, _ForwardFn] = {
    ModelKind.GCN: _gcn_forward,
    ModelKind.GAT: _gat_forward,
    ModelKind.MONET: _monet_forward,
    ModelKind.GS_MEAN: _sage_forward,
    ModelKind.GS_MEANPOOL: _sage_forward,
    ModelKind.GS_MAXPOOL: _sage_forward,
    ModelKind.MLP: _dense_forward,
    ModelKind.LOGREG: _dense_forward,
}


def forward(
    spec: ModelSpec,
    params: ParamStore,
    ds: Dataset,
    rng: RngStream,
    training: bool,
    kind: ModelKind | None = None,
) -> Tensor:
    """Compute ``N x C`` logits.

    ``kind`` overrides ``spec.kind`` to run one architecture with another's weights
    (GCN weights through the MLP path, for instance).

    Raises:
        DivergenceError: the logits contain NaN or infinity.
    """
    kind = ModelKind(kind or spec.kind)
    if kind not in FORWARDS:
        raise UsageError(f"{kind} has no forward pass")
    run_spec = spec if kind is spec.kind else dataclasses.replace(spec, kind=kind)
    ctx = graph_context(ds, np.dtype(next(iter(params.tensors.values())).dtype))
    logits = FORWARDS[kind](run_spec, params, ctx, rng, training)
    if not np.all(np.isfinite(logits.data)):
        raise DivergenceError(f"{kind}: non-finite logits")
    return logits
