"""Two-pathway lightweight ResNet.

The mel axis of the input is split into a low and a high half, each half
runs through its own stack of inverted residual blocks, the two outputs are
stacked back along the mel axis and pass through max pooling, one more
inverted residual block, global average pooling, a dense layer and softmax.

Inverted residual block layout::

    expand 1x1 -> BN -> ReLU -> depthwise 3x3 -> BN -> ReLU
      -> project 1x1 -> BN -> [channel attention] -> [+ input] -> [max pool]

The skip connection is added only when the block input and the attention
output have the same shape.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..params import ModelParams
from . import layers as L

N_CLASSES = 10


@dataclass(frozen=True)
class BlockSpec:
    expand: int
    out: int
    use_ca: bool = True
    pool: bool = True


@dataclass(frozen=True)
class NetworkConfig:
    input_shape: Tuple[int, int, int] = (128, 423, 3)
    pathway: Tuple[BlockSpec, ...] = ()
    trunk: BlockSpec = BlockSpec(64, 48, True, False)
    reduction: int = 4
    n_classes: int = N_CLASSES
    bn_eps: float = L.BN_EPS
    bn_momentum: float = L.BN_MOMENTUM

    def __post_init__(self):
        h, w, c = self.input_shape
        if self.n_classes != N_CLASSES:
            raise ValueError(f"the classifier has {N_CLASSES} scene classes, got {self.n_classes}")
        if h % 2:
            raise ValueError(f"input height {h} cannot be split into equal halves")
        if not self.pathway:
            raise ValueError("each pathway needs at least one block")
        self.shapes()

    def block_plan(self) -> List[Tuple[str, BlockSpec, Tuple[int, int, int]]]:
        """(prefix, spec, input shape) for every block, in execution order."""
        h, w, c = self.input_shape
        plan = []
        shape = (h // 2, w, c)
        for side in ("low", "high"):
            s = shape
            for i, spec in enumerate(self.pathway):
                plan.append((f"{side}.{i}", spec, s))
                s = _block_out_shape(spec, s)
        h2, w2, c2 = _block_out_shape_seq(self.pathway, shape)
        merged = (2 * h2, w2, c2)
        _check_poolable(merged, "merged pathways")
        plan.append(("trunk", self.trunk, (merged[0] // 2, merged[1] // 2, merged[2])))
        return plan

    def shapes(self) -> Dict[str, Tuple[int, int, int]]:
        """Output shape of every block, keyed by block prefix."""
        out = {}
        for prefix, spec, shape in self.block_plan():
            if spec.use_ca and spec.out % self.reduction:
                raise ValueError(f"reduction {self.reduction} does not divide {spec.out} channels ({prefix})")
            out[prefix] = _block_out_shape(spec, shape)
        return out


def _check_poolable(shape, where):
    if shape[0] < 2 or shape[1] < 2:
        raise ValueError(f"{where}: cannot max-pool a {shape[0]}x{shape[1]} map")


def _block_out_shape(spec: BlockSpec, shape):
    h, w, _ = shape
    if spec.pool:
        _check_poolable(shape, "block")
        return (h // 2, w // 2, spec.out)
    return (h, w, spec.out)


def _block_out_shape_seq(specs, shape):
    for spec in specs:
        shape = _block_out_shape(spec, shape)
    return shape


def paper_config(input_shape=(128, 423, 3)) -> NetworkConfig:
    return NetworkConfig(
        input_shape=tuple(input_shape),
        pathway=(BlockSpec(16, 16), BlockSpec(32, 24), BlockSpec(48, 32)),
        trunk=BlockSpec(64, 48, True, False),
        reduction=4,
    )


def tiny_config(input_shape=(8, 16, 3), channels: int = 4) -> NetworkConfig:
    return NetworkConfig(
        input_shape=tuple(input_shape),
        pathway=(BlockSpec(2 * channels, channels),),
        trunk=BlockSpec(2 * channels, channels, True, False),
        reduction=2,
    )


PRESETS = {"paper": paper_config, "tiny": tiny_config}


# -- parameters -----------------------------------------------------------------------

BN_SLOTS = ("gamma", "beta", "mean", "var")


def _glorot(rng, shape, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def _block_param_shapes(prefix, spec, c_in, reduction):
    e, o = spec.expand, spec.out
    shapes = [
        (f"{prefix}.expand.w", (c_in, e)), (f"{prefix}.expand.b", (e,)),
        *[(f"{prefix}.bn1.{s}", (e,)) for s in BN_SLOTS],
        (f"{prefix}.dw.w", (3, 3, e)), (f"{prefix}.dw.b", (e,)),
        *[(f"{prefix}.bn2.{s}", (e,)) for s in BN_SLOTS],
        (f"{prefix}.project.w", (e, o)), (f"{prefix}.project.b", (o,)),
        *[(f"{prefix}.bn3.{s}", (o,)) for s in BN_SLOTS],
    ]
    if spec.use_ca:
        r = o // reduction
        shapes += [(f"{prefix}.ca.w1", (o, r)), (f"{prefix}.ca.b1", (r,)),
                   (f"{prefix}.ca.w2", (r, o)), (f"{prefix}.ca.b2", (o,))]
    return shapes


def param_shapes(config: NetworkConfig) -> List[Tuple[str, Tuple[int, ...]]]:
    shapes = []
    for prefix, spec, in_shape in config.block_plan():
        shapes += _block_param_shapes(prefix, spec, in_shape[2], config.reduction)
    shapes += [("dense.w", (config.trunk.out, config.n_classes)), ("dense.b", (config.n_classes,))]
    return shapes


def trainable(name: str) -> bool:
    return not (name.endswith(".mean") or name.endswith(".var"))


def init_params(config: NetworkConfig, rng: np.random.Generator, dtype=np.float32) -> ModelParams:
    """Glorot-uniform weights, zero biases, unit BN scale and unit running variance."""
    tensors = {}
    for name, shape in param_shapes(config):
        slot = name.rsplit(".", 1)[1]
        if slot in ("gamma", "var"):
            tensors[name] = np.ones(shape, dtype=dtype)
        elif slot in ("beta", "mean", "b", "b1", "b2"):
            tensors[name] = np.zeros(shape, dtype=dtype)
        elif name.endswith(".dw.w"):
            tensors[name] = _glorot(rng, shape, 9, 9, dtype)
        else:
            tensors[name] = _glorot(rng, shape, shape[0], shape[1], dtype)
    return ModelParams(tensors)


def check_params(params: ModelParams, config: NetworkConfig) -> None:
    expected = dict(param_shapes(config))
    missing = [n for n in expected if n not in params]
    extra = [n for n in params if n not in expected]
    if missing or extra:
        raise ValueError(f"parameters do not match the network config: missing {missing[:4]}, unexpected {extra[:4]}")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise ValueError(f"{name}: expected shape {shape}, got {params[name].shape}")


# -- forward ----------------------------------------------------------------------------

@dataclass
class BlockCache:
    x: np.ndarray
    bn1: L.BNCache
    r1: np.ndarray
    bn2: L.BNCache
    r2: np.ndarray
    bn3: L.BNCache
    ca: Optional[L.CACache]
    z: np.ndarray
    skip: bool
    pre_pool_shape: Tuple[int, ...]
    pool_idx: Optional[np.ndarray]


def _bn(x, p, name, mode, cfg, stats):
    y, cache, new = L.batchnorm_forward(
        x, p[f"{name}.gamma"], p[f"{name}.beta"], p[f"{name}.mean"], p[f"{name}.var"],
        mode, cfg.bn_eps, cfg.bn_momentum)
    if mode == "train":
        stats[f"{name}.mean"], stats[f"{name}.var"] = new
    return y, cache


def inverted_residual_forward(x, p, prefix: str, spec: BlockSpec, config: NetworkConfig,
                              mode: str = "infer", stats: Optional[dict] = None):
    """Run one block on a batch. Returns ``(out, cache)``; train-mode BN statistics land in ``stats``."""
    stats = {} if stats is None else stats
    a1 = L.pointwise_conv_forward(x, p[f"{prefix}.expand.w"], p[f"{prefix}.expand.b"])
    n1, bn1 = _bn(a1, p, f"{prefix}.bn1", mode, config, stats)
    r1 = L.relu(n1)
    a2 = L.depthwise_conv_forward(r1, p[f"{prefix}.dw.w"], p[f"{prefix}.dw.b"])
    n2, bn2 = _bn(a2, p, f"{prefix}.bn2", mode, config, stats)
    r2 = L.relu(n2)
    a3 = L.pointwise_conv_forward(r2, p[f"{prefix}.project.w"], p[f"{prefix}.project.b"])
    n3, bn3 = _bn(a3, p, f"{prefix}.bn3", mode, config, stats)
    ca = None
    if spec.use_ca:
        z, ca = L.channel_attention_forward(
            n3, p[f"{prefix}.ca.w1"], p[f"{prefix}.ca.b1"], p[f"{prefix}.ca.w2"], p[f"{prefix}.ca.b2"],
            return_cache=True)
    else:
        z = n3
    skip = z.shape == x.shape
    out = z + x if skip else z
    pre_pool_shape = out.shape
    idx = None
    if spec.pool:
        out, idx = L.maxpool2d(out, return_indices=True)
    return out, BlockCache(x, bn1, r1, bn2, r2, bn3, ca, z, skip, pre_pool_shape, idx)


def inverted_residual_backward(g, cache: BlockCache, p, prefix: str, spec: BlockSpec):
    """Returns ``(dx, grads)`` for one block given the gradient of its output."""
    grads = {}
    if spec.pool:
        g = L.maxpool2d_backward(g, cache.pool_idx, cache.pre_pool_shape)
    dx_skip = g if cache.skip else None
    if spec.use_ca:
        g, dw1, db1, dw2, db2 = L.channel_attention_backward(
            g, cache.ca, p[f"{prefix}.ca.w1"], p[f"{prefix}.ca.w2"])
        grads.update({f"{prefix}.ca.w1": dw1, f"{prefix}.ca.b1": db1,
                      f"{prefix}.ca.w2": dw2, f"{prefix}.ca.b2": db2})
    g, grads[f"{prefix}.bn3.gamma"], grads[f"{prefix}.bn3.beta"] = L.batchnorm_backward(g, cache.bn3)
    g, grads[f"{prefix}.project.w"], grads[f"{prefix}.project.b"] = L.pointwise_conv_backward(
        cache.r2, p[f"{prefix}.project.w"], g)
    # relu(n) > 0 exactly where n > 0, so the activations double as masks
    g = L.relu_backward(cache.r2, g)
    g, grads[f"{prefix}.bn2.gamma"], grads[f"{prefix}.bn2.beta"] = L.batchnorm_backward(g, cache.bn2)
    g, grads[f"{prefix}.dw.w"], grads[f"{prefix}.dw.b"] = L.depthwise_conv_backward(
        cache.r1, p[f"{prefix}.dw.w"], g)
    g = L.relu_backward(cache.r1, g)
    g, grads[f"{prefix}.bn1.gamma"], grads[f"{prefix}.bn1.beta"] = L.batchnorm_backward(g, cache.bn1)
    g, grads[f"{prefix}.expand.w"], grads[f"{prefix}.expand.b"] = L.pointwise_conv_backward(
        cache.x, p[f"{prefix}.expand.w"], g)
    if dx_skip is not None:
        g = g + dx_skip
    return g, grads


@dataclass
class ForwardCache:
    config: NetworkConfig
    params: ModelParams
    blocks: Dict[str, BlockCache] = field(default_factory=dict)
    merged_shape: Tuple[int, ...] = ()
    merge_idx: Optional[np.ndarray] = None
    trunk_out_shape: Tuple[int, ...] = ()
    pooled: Optional[np.ndarray] = None
    probs: Optional[np.ndarray] = None
    stats: Dict[str, np.ndarray] = field(default_factory=dict)


def forward(x, params: ModelParams, config: NetworkConfig, mode: str = "infer"):
    """Batched forward pass. Returns ``(probs, cache)`` with probs of shape (N, classes).

    ``cache.stats`` holds the advanced BN running statistics in train mode;
    the caller decides whether to commit them to ``params``.
    """
    x = np.asarray(x)
    if x.ndim == 3:
        x = x[None]
    if x.shape[1:] != tuple(config.input_shape):
        raise ValueError(f"input shape {x.shape[1:]} does not match config {config.input_shape}")
    cache = ForwardCache(config, params)
    halves = L.split_frequency(x)
    outs = []
    for side, h in zip(("low", "high"), halves):
        for i, spec in enumerate(config.pathway):
            prefix = f"{side}.{i}"
            h, cache.blocks[prefix] = inverted_residual_forward(h, params, prefix, spec, config, mode, cache.stats)
        outs.append(h)
    merged = L.merge_frequency(*outs)
    cache.merged_shape = merged.shape
    t, cache.merge_idx = L.maxpool2d(merged, return_indices=True)
    t, cache.blocks["trunk"] = inverted_residual_forward(t, params, "trunk", config.trunk, config, mode, cache.stats)
    cache.trunk_out_shape = t.shape
    cache.pooled = L.global_avg_pool(t)
    logits = L.dense_forward(cache.pooled, params["dense.w"], params["dense.b"])
    cache.probs = L.softmax(logits)
    return cache.probs, cache


def network_forward(feature, params: ModelParams, config: NetworkConfig, mode: str = "infer"):
    """Class probabilities for one feature map (length-10 vector) or a batch (N x 10)."""
    single = np.ndim(feature) == 3
    probs, _ = forward(feature, params, config, mode)
    return probs[0] if single else probs


def network_backward(cache: ForwardCache, targets) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
    """Gradients of the batch-mean cross entropy.

    Returns ``(grads, dinput)``: one gradient per trainable tensor (BN running
    statistics are not trained and get none) and the gradient with respect
    to the input batch.
    """
    if cache is None or cache.probs is None:
        raise ValueError("backward needs the cache of a forward pass")
    config, p = cache.config, cache.params
    targets = np.asarray(targets, dtype=cache.probs.dtype)
    if targets.ndim == 1:
        targets = targets[None]
    if targets.shape != cache.probs.shape:
        raise ValueError(f"targets {targets.shape} do not match outputs {cache.probs.shape}")
    grads = {}
    g = L.softmax_cross_entropy_backward(cache.probs, targets)
    g, grads["dense.w"], grads["dense.b"] = L.dense_backward(cache.pooled, p["dense.w"], g)
    g = L.global_avg_pool_backward(g, cache.trunk_out_shape)
    g, block_grads = inverted_residual_backward(g, cache.blocks["trunk"], p, "trunk", config.trunk)
    grads.update(block_grads)
    g = L.maxpool2d_backward(g, cache.merge_idx, cache.merged_shape)
    halves = L.split_frequency(g)
    dins = []
    for side, gh in zip(("low", "high"), halves):
        for i in reversed(range(len(config.pathway))):
            prefix = f"{side}.{i}"
            gh, block_grads = inverted_residual_backward(gh, cache.blocks[prefix], p, prefix, config.pathway[i])
            grads.update(block_grads)
        dins.append(gh)
    ordered = {name: grads[name] for name in p if name in grads}
    return ordered, L.merge_frequency(*dins)


def predict_proba(features, params: ModelParams, config: NetworkConfig, batch_size: int = 64) -> np.ndarray:
    """Inference-mode probabilities for a stack of feature maps, in chunks."""
    features = np.asarray(features)
    out = [forward(features[i:i + batch_size], params, config, "infer")[0]
           for i in range(0, features.shape[0], batch_size)]
    return np.concatenate(out, axis=0) if out else np.zeros((0, config.n_classes))
