"""
Graph transformer for layer thickness - spatial encoder, temporal attention, head

The network:
- Encodes each of the k shallow-layer graphs with a stack of GraphSAGE layers
  and stacks the per-graph node embeddings along a time axis (n x k x d)
- Runs N post-norm transformer blocks whose attention axis is time, each node
  attending over its own k steps
- Mixes every block output with the original embedding through a learnable
  scalar and a LayerNorm (adaptive long-range skip)
- Projects the time axis away and maps each node to m thickness predictions
"""

from collections import OrderedDict
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
import scipy.sparse as sp
import structlog
from pydantic import BaseModel, ConfigDict, model_validator

from graphbuild.partition import PartitionSpec, build_partitioned_edges
from model.params import ModelParams, Shape, init_params
from numcore import ops
from numcore.gradcheck import GradcheckResult, check_gradients
from numcore.tensor import Tensor

logger = structlog.get_logger(__name__)

IN_FEATURES = 3


class ModelConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    d: int = 64
    sage_layers: int = 5
    n_blocks: int = 8
    n_heads: int = 8
    d_ff: Optional[int] = None
    dropout_p: float = 0.1
    alpha0: float = 0.25
    m: int = 15
    k: int = 5
    aggregator: Literal["mean", "weighted-mean"] = "mean"
    # ablation switches
    use_graph: bool = True
    use_lr_skip: bool = True
    shared_alpha: bool = False
    per_graph_sage: bool = False

    @model_validator(mode="after")
    def _check_extents(self) -> "ModelConfig":
        for name in ("d", "n_heads", "m", "k"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.n_blocks < 0:
            raise ValueError(f"n_blocks must be non-negative, got {self.n_blocks}")
        if self.use_graph and self.sage_layers < 1:
            raise ValueError(f"sage_layers must be positive when the graph encoder is on, got {self.sage_layers}")
        if self.d % self.n_heads != 0:
            raise ValueError(f"d={self.d} is not divisible by n_heads={self.n_heads}")
        if self.d_ff is not None and self.d_ff < 1:
            raise ValueError(f"d_ff must be positive, got {self.d_ff}")
        if not 0.0 <= self.alpha0 <= 1.0:
            raise ValueError(f"alpha0 must lie in [0, 1], got {self.alpha0}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")
        return self

    @property
    def ff_width(self) -> int:
        return self.d_ff if self.d_ff is not None else 4 * self.d

    @property
    def head_dim(self) -> int:
        return self.d // self.n_heads

    def uses_attention(self) -> bool:
        return self.n_blocks > 0


def _sage_prefixes(config: ModelConfig) -> List[str]:
    if config.per_graph_sage:
        return [f"sage.{t}" for t in range(config.k)]
    return ["sage"]


def alpha_name(config: ModelConfig, block: int) -> str:
    return "alpha" if config.shared_alpha else f"block.{block}.alpha"


def param_shapes(config: ModelConfig) -> Dict[str, Shape]:
    """Name and shape of every parameter; the parameter count depends on nothing else"""
    d, ff = config.d, config.ff_width
    shapes: Dict[str, Shape] = OrderedDict()
    if config.use_graph:
        for prefix in _sage_prefixes(config):
            for layer in range(config.sage_layers):
                width_in = IN_FEATURES if layer == 0 else d
                shapes[f"{prefix}.{layer}.w1"] = (d, width_in)
                shapes[f"{prefix}.{layer}.w2"] = (d, width_in)
                shapes[f"{prefix}.{layer}.bias"] = (d,)
    else:
        shapes["lift.weight"] = (d, IN_FEATURES)
        shapes["lift.bias"] = (d,)

    for block in range(config.n_blocks):
        p = f"block.{block}"
        for name in ("wq", "wk", "wv", "wo"):
            shapes[f"{p}.{name}"] = (d, d)
        shapes[f"{p}.ffn1.weight"] = (ff, d)
        shapes[f"{p}.ffn1.bias"] = (ff,)
        shapes[f"{p}.ffn2.weight"] = (d, ff)
        shapes[f"{p}.ffn2.bias"] = (d,)
        for norm in ("ln1", "ln2"):
            shapes[f"{p}.{norm}.gain"] = (d,)
            shapes[f"{p}.{norm}.bias"] = (d,)
        if config.use_lr_skip:
            if not config.shared_alpha:
                shapes[f"{p}.alpha"] = (1,)
            shapes[f"skip.{block}.gain"] = (d,)
            shapes[f"skip.{block}.bias"] = (d,)
    if config.use_lr_skip and config.shared_alpha and config.n_blocks > 0:
        shapes["alpha"] = (1,)

    shapes["head.temporal.weight"] = (1, config.k)
    shapes["head.temporal.bias"] = (1,)
    shapes["head.fc1.weight"] = (d, d)
    shapes["head.fc1.bias"] = (d,)
    shapes["head.fc2.weight"] = (d, d)
    shapes["head.fc2.bias"] = (d,)
    shapes["head.out.weight"] = (config.m, d)
    shapes["head.out.bias"] = (config.m,)
    return shapes


def count_params(config: ModelConfig) -> int:
    return int(sum(np.prod(shape) for shape in param_shapes(config).values()))


def build_params(config: ModelConfig, rng: np.random.Generator) -> ModelParams:
    params = init_params(param_shapes(config), rng, config.alpha0)
    logger.info(
        "model built",
        entries=params.count(),
        n_blocks=config.n_blocks,
        use_graph=config.use_graph,
        use_lr_skip=config.use_lr_skip,
    )
    return params


def sage_layer(features, adjacency: sp.spmatrix, w1, w2, bias=None) -> Tensor:
    """Root transform plus transformed neighbour mean.

    ``features`` is (n, ..., d_in) and may carry trailing axes (such as time)
    that are aggregated together, node by node.
    """
    root = ops.linear(features, w1, bias)
    neighbors = ops.linear(ops.segment_mean(features, adjacency), w2)
    return ops.add(root, neighbors)


def _sage_stack(features, adjacency: sp.spmatrix, params: ModelParams, prefix: str, layers: int) -> Tensor:
    h = features
    for layer in range(layers):
        p = f"{prefix}.{layer}"
        h = sage_layer(h, adjacency, params[f"{p}.w1"], params[f"{p}.w2"], params[f"{p}.bias"])
        if layer < layers - 1:
            h = ops.relu(h)
    return h


def spatial_encode(features: np.ndarray, adjacency: sp.spmatrix, params: ModelParams, config: ModelConfig) -> Tensor:
    """Node embeddings per time step, (n, k, 3) in and (n, k, d) out"""
    n, k, _ = features.shape
    if not config.use_graph:
        return ops.linear(features, params["lift.weight"], params["lift.bias"])
    if not config.per_graph_sage:
        # shared weights: all k graphs share the edge set, so one pass covers them
        return _sage_stack(features, adjacency, params, "sage", config.sage_layers)
    per_step = [
        ops.reshape(_sage_stack(features[:, t, :], adjacency, params, f"sage.{t}", config.sage_layers), (n, 1, config.d))
        for t in range(k)
    ]
    return ops.concat(per_step, axis=1)


def _split_heads(x: Tensor, n: int, k: int, heads: int, head_dim: int) -> Tensor:
    x = ops.reshape(x, (n, k, heads, head_dim))
    x = ops.transpose(x, (0, 2, 1, 3))
    return ops.reshape(x, (n * heads, k, head_dim))


def temporal_block(
    z: Tensor,
    params: ModelParams,
    block: int,
    config: ModelConfig,
    rng: Optional[np.random.Generator] = None,
    train: bool = False,
    return_attention: bool = False,
):
    """Post-norm transformer block with attention over the time axis of each node.

    Returns the (n, k, d) output, plus the (n, heads, k, k) attention weights
    when ``return_attention`` is set.
    """
    p = f"block.{block}"
    n, k, d = z.shape
    heads, head_dim = config.n_heads, config.head_dim

    q = _split_heads(ops.linear(z, params[f"{p}.wq"]), n, k, heads, head_dim)
    key = _split_heads(ops.linear(z, params[f"{p}.wk"]), n, k, heads, head_dim)
    v = _split_heads(ops.linear(z, params[f"{p}.wv"]), n, k, heads, head_dim)
    scores = ops.scale(ops.matmul(q, ops.transpose(key, (0, 2, 1))), 1.0 / np.sqrt(head_dim))
    attention = ops.softmax_lastdim(scores)
    context = ops.matmul(attention, v)
    context = ops.reshape(ops.transpose(ops.reshape(context, (n, heads, k, head_dim)), (0, 2, 1, 3)), (n, k, d))
    mha = ops.linear(context, params[f"{p}.wo"])

    a = ops.layernorm(
        ops.add(z, ops.dropout(mha, config.dropout_p, rng, train)), params[f"{p}.ln1.gain"], params[f"{p}.ln1.bias"]
    )
    ff = ops.relu(ops.linear(a, params[f"{p}.ffn1.weight"], params[f"{p}.ffn1.bias"]))
    ff = ops.linear(ff, params[f"{p}.ffn2.weight"], params[f"{p}.ffn2.bias"])
    out = ops.layernorm(
        ops.add(a, ops.dropout(ff, config.dropout_p, rng, train)), params[f"{p}.ln2.gain"], params[f"{p}.ln2.bias"]
    )
    if return_attention:
        return out, attention.data.reshape(n, heads, k, k)
    return out


def adaptive_lr_skip(y, x, alpha, gain, bias) -> Tensor:
    """LayerNorm of ``(1 - alpha) * y + alpha * x``"""
    return ops.layernorm(ops.scalar_mix(alpha, x, y), gain, bias)


def head(z: Tensor, params: ModelParams) -> Tensor:
    """(n, k, d) -> (n, m): learned mix over time, then three linears with hardswish between"""
    n, k, d = z.shape
    over_time = ops.linear(ops.transpose(z, (0, 2, 1)), params["head.temporal.weight"], params["head.temporal.bias"])
    h = ops.reshape(over_time, (n, d))
    h = ops.hardswish(ops.linear(h, params["head.fc1.weight"], params["head.fc1.bias"]))
    h = ops.hardswish(ops.linear(h, params["head.fc2.weight"], params["head.fc2.bias"]))
    return ops.linear(h, params["head.out.weight"], params["head.out.bias"])


def forward(
    features: np.ndarray,
    adjacency: sp.spmatrix,
    params: ModelParams,
    config: ModelConfig,
    rng: Optional[np.random.Generator] = None,
    train: bool = False,
) -> Tensor:
    """Predictions (n, m) from normalised (n, k, 3) node features"""
    if features.ndim != 3 or features.shape[1] != config.k or features.shape[2] != IN_FEATURES:
        raise ValueError(f"features must be (n, {config.k}, {IN_FEATURES}), got {features.shape}")
    x = spatial_encode(features, adjacency, params, config)
    z = x
    for block in range(config.n_blocks):
        y = temporal_block(z, params, block, config, rng, train)
        if config.use_lr_skip:
            z = adaptive_lr_skip(
                y, x, params[alpha_name(config, block)], params[f"skip.{block}.gain"], params[f"skip.{block}.bias"]
            )
        else:
            z = y
    return head(z, params)


def attention_maps(
    features: np.ndarray, adjacency: sp.spmatrix, params: ModelParams, config: ModelConfig
) -> List[np.ndarray]:
    """Eval-mode attention weights of every block, each (n, heads, k, k)"""
    x = spatial_encode(features, adjacency, params, config)
    z, maps = x, []
    for block in range(config.n_blocks):
        y, weights = temporal_block(z, params, block, config, return_attention=True)
        maps.append(weights)
        if config.use_lr_skip:
            z = adaptive_lr_skip(
                y, x, params[alpha_name(config, block)], params[f"skip.{block}.gain"], params[f"skip.{block}.bias"]
            )
        else:
            z = y
    return maps


def tiny_config(**overrides) -> ModelConfig:
    """Smallest configuration that exercises every component"""
    values = dict(d=4, sage_layers=2, n_blocks=2, n_heads=2, m=2, k=3, dropout_p=0.1)
    values.update(overrides)
    return ModelConfig(**values)


def tiny_inputs(
    seed: int, n: int = 8, k: int = 3, m: int = 2
) -> Tuple[np.ndarray, sp.csr_matrix, np.ndarray]:
    """Random features, a sliding-window adjacency and targets for gradient checks"""
    rng = np.random.default_rng(seed)
    edges = build_partitioned_edges(n, PartitionSpec(window_size=3, stride=2))
    neighbors: List[List[int]] = [[] for _ in range(n)]
    for i, j in edges:
        neighbors[i].append(int(j))
        neighbors[j].append(int(i))
    return rng.normal(size=(n, k, IN_FEATURES)), ops.mean_aggregator(neighbors), rng.normal(size=(n, m)) * 3.0


def gradcheck_model(seed: int = 0, config: Optional[ModelConfig] = None) -> List[GradcheckResult]:
    """Finite-difference check of every model parameter at a tiny configuration.

    Dropout stays on with a freshly seeded generator per evaluation, so every
    loss evaluation draws the same masks.
    """
    config = config or tiny_config()
    features, adjacency, targets = tiny_inputs(seed, k=config.k, m=config.m)
    params = build_params(config, np.random.default_rng(seed))

    def loss_fn() -> Tensor:
        rng = np.random.default_rng(seed + 1)
        return ops.mse_loss(forward(features, adjacency, params, config, rng, train=True), targets)

    errors = check_gradients(loss_fn, list(params))
    results = [GradcheckResult(f"model:{name}", err) for name, err in errors.items()]
    logger.info("model gradcheck", params=len(results), worst=max(r.max_rel_error for r in results))
    return results
