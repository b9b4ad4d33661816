"""
Toy CTC sequence encoder with LoRA adapters.

Feature frames go through an input projection, a stack of pre-layer-norm
transformer blocks and a final projection to `vocab_size + 1` logits (blank in
the last column). Base weights are frozen read-only arrays; trainable low-rank
pairs (A: r x d_in, B: d_out x r) sit on the attention projections named in
`ModelConfig.lora_targets` and are merged as W + (alpha / r) * B @ A on every
forward pass.

Gradients are computed by reverse accumulation written out for this exact
architecture; there is no general autodiff layer.
"""

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np

from anchorstream.core.tensor import RngState, Tensor, gaussian, matmul
from anchorstream.exceptions import DomainError, ShapeError
from anchorstream.schemas.config import ModelConfig

logger = logging.getLogger(__name__)

Subset = Literal["lora", "base", "full"]
GradientSet = Dict[str, Tensor]

LN_EPS = 1e-5
_GELU_K = np.sqrt(2.0 / np.pi)
_GELU_C = 0.044715


@dataclass(frozen=True, eq=False)
class ModelState:
    """
    Frozen base weights plus trainable adapter matrices.

    Attributes:
        config: Architecture the arrays were built for.
        base: Base weights by name; arrays are read-only.
        adapters: LoRA matrices by name (`...lora_A`, `...lora_B`), in the fixed
            trainable order.
    """

    config: ModelConfig
    base: Dict[str, Tensor]
    adapters: Dict[str, Tensor] = field(default_factory=dict)

    def trainable_names(self) -> List[str]:
        return list(self.adapters.keys())

    def parameter_names(self, subset: Subset) -> List[str]:
        """Parameter names of a subset, in flattening order."""
        if subset == "lora":
            return self.trainable_names()
        if subset == "base":
            return list(self.base.keys())
        if subset == "full":
            return list(self.base.keys()) + self.trainable_names()
        raise DomainError(f"unknown parameter subset {subset!r}")

    def get(self, name: str) -> Tensor:
        if name in self.adapters:
            return self.adapters[name]
        return self.base[name]


def _freeze(arr: Tensor) -> Tensor:
    arr = np.array(arr, dtype=np.float64, copy=True)
    arr.flags.writeable = False
    return arr


def adapter_name(layer: int, target: str, part: str) -> str:
    return f"layers.{layer}.attn.{target}.lora_{part}"


def init_model(cfg: ModelConfig, rng: RngState) -> ModelState:
    """
    Build a model with scaled-gaussian base weights and fresh adapters.

    Base matrices are drawn N(0, 1/d_in); biases and layer-norm shifts start at
    zero, layer-norm gains at one. Every adapter A is N(0, lora_init_std) and
    every B is zero, so the adapted model starts identical to the base model.
    """
    base_rng = rng.derive("base")
    d, f = cfg.d_model, cfg.feat_dim

    def weight(d_out: int, d_in: int) -> Tensor:
        return gaussian(base_rng, (d_out, d_in), 0.0, 1.0 / np.sqrt(d_in))

    base: Dict[str, Tensor] = {
        "input.W": weight(d, f),
        "input.b": np.zeros(d),
    }
    for layer in range(cfg.n_layers):
        p = f"layers.{layer}"
        base[f"{p}.ln1.g"] = np.ones(d)
        base[f"{p}.ln1.b"] = np.zeros(d)
        for target in ("q", "k", "v", "o"):
            base[f"{p}.attn.{target}.W"] = weight(d, d)
        base[f"{p}.ln2.g"] = np.ones(d)
        base[f"{p}.ln2.b"] = np.zeros(d)
        base[f"{p}.ffn.W1"] = weight(cfg.d_ff, d)
        base[f"{p}.ffn.b1"] = np.zeros(cfg.d_ff)
        base[f"{p}.ffn.W2"] = weight(d, cfg.d_ff)
        base[f"{p}.ffn.b2"] = np.zeros(d)
    base["final_ln.g"] = np.ones(d)
    base["final_ln.b"] = np.zeros(d)
    base["output.W"] = weight(cfg.n_outputs, d)
    base["output.b"] = np.zeros(cfg.n_outputs)

    model = ModelState(config=cfg, base={k: _freeze(v) for k, v in base.items()})
    return with_fresh_adapters(model, rng.derive("lora"))


def with_fresh_adapters(model: ModelState, rng: RngState, cfg: Optional[ModelConfig] = None) -> ModelState:
    """
    Return `model` with newly initialized adapters (A gaussian, B zero).

    `cfg` may change the LoRA settings (rank, alpha, targets) as long as the
    architecture matches the base weights.
    """
    cfg = cfg or model.config
    old = model.config
    if (cfg.d_model, cfg.n_layers, cfg.n_heads, cfg.d_ff, cfg.feat_dim, cfg.vocab_size) != (
        old.d_model, old.n_layers, old.n_heads, old.d_ff, old.feat_dim, old.vocab_size
    ):
        raise ShapeError("adapter config does not match the base architecture")
    adapters: Dict[str, Tensor] = {}
    r, d = cfg.lora_rank, cfg.d_model
    for layer in range(cfg.n_layers):
        for target in cfg.lora_targets:
            adapters[adapter_name(layer, target, "A")] = gaussian(rng, (r, d), 0.0, cfg.lora_init_std)
            adapters[adapter_name(layer, target, "B")] = np.zeros((d, r))
    logger.debug("initialized %d adapter pairs (r=%d, alpha=%g)", len(adapters) // 2, r, cfg.lora_alpha)
    return ModelState(config=cfg, base=model.base, adapters=adapters)


def effective_weight(model: ModelState, layer: int, target: str, use_adapters: bool = True) -> Tensor:
    """W_base + (alpha / r) * B @ A for one attention projection."""
    w = model.base[f"layers.{layer}.attn.{target}.W"]
    a_name = adapter_name(layer, target, "A")
    if not use_adapters or a_name not in model.adapters:
        return w
    lora_a = model.adapters[a_name]
    lora_b = model.adapters[adapter_name(layer, target, "B")]
    return w + model.config.scaling * matmul(lora_b, lora_a)


def _layer_norm(x: Tensor, g: Tensor, b: Tensor) -> Tuple[Tensor, Tuple[Tensor, Tensor]]:
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv
    return xhat * g + b, (xhat, inv)


def _layer_norm_backward(dy: Tensor, g: Tensor, cache: Tuple[Tensor, Tensor]) -> Tuple[Tensor, Tensor, Tensor]:
    xhat, inv = cache
    dxhat = dy * g
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, (dy * xhat).sum(axis=0), dy.sum(axis=0)


def _gelu(u: Tensor) -> Tuple[Tensor, Tensor]:
    """tanh-approximated GELU and its derivative."""
    th = np.tanh(_GELU_K * (u + _GELU_C * u**3))
    out = 0.5 * u * (1.0 + th)
    grad = 0.5 * (1.0 + th) + 0.5 * u * (1.0 - th**2) * _GELU_K * (1.0 + 3.0 * _GELU_C * u**2)
    return out, grad


@dataclass
class _LayerCache:
    h_in: Tensor
    ln1: Tuple[Tensor, Tensor]
    a: Tensor
    weights: Dict[str, Tensor]
    q: Tensor
    k: Tensor
    v: Tensor
    probs: Tensor
    ctx: Tensor
    ln2: Tuple[Tensor, Tensor]
    c: Tensor
    gelu_grad: Tensor
    ffn_hidden: Tensor


@dataclass
class ForwardCache:
    """Intermediate activations kept for `backward`."""

    feats: Tensor
    layers: List[_LayerCache]
    final_ln: Tuple[Tensor, Tensor]
    final_hidden: Tensor
    use_adapters: bool


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    t, d = x.shape
    return x.reshape(t, n_heads, d // n_heads).transpose(1, 0, 2)


def _merge_heads(x: Tensor) -> Tensor:
    h, t, dh = x.shape
    return x.transpose(1, 0, 2).reshape(t, h * dh)


def forward_with_cache(model: ModelState, feats: Tensor, use_adapters: bool = True) -> Tuple[Tensor, ForwardCache]:
    """Forward pass returning the logits and the cache needed by `backward`."""
    cfg = model.config
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[1] != cfg.feat_dim:
        raise ShapeError(f"expected features of shape [T, {cfg.feat_dim}], got {feats.shape}")
    if feats.shape[0] < 1:
        raise ShapeError("forward needs at least one frame")

    p = model.base
    n_heads = cfg.n_heads
    scale = 1.0 / np.sqrt(cfg.d_model // n_heads)

    h = feats @ p["input.W"].T + p["input.b"]
    layer_caches: List[_LayerCache] = []
    for layer in range(cfg.n_layers):
        pre = f"layers.{layer}"
        weights = {t: effective_weight(model, layer, t, use_adapters) for t in ("q", "k", "v", "o")}
        a, ln1 = _layer_norm(h, p[f"{pre}.ln1.g"], p[f"{pre}.ln1.b"])
        q = _split_heads(a @ weights["q"].T, n_heads)
        k = _split_heads(a @ weights["k"].T, n_heads)
        v = _split_heads(a @ weights["v"].T, n_heads)
        scores = (q @ k.transpose(0, 2, 1)) * scale
        scores -= scores.max(axis=-1, keepdims=True)
        probs = np.exp(scores)
        probs /= probs.sum(axis=-1, keepdims=True)
        ctx = _merge_heads(probs @ v)
        h_mid = h + ctx @ weights["o"].T

        c, ln2 = _layer_norm(h_mid, p[f"{pre}.ln2.g"], p[f"{pre}.ln2.b"])
        u = c @ p[f"{pre}.ffn.W1"].T + p[f"{pre}.ffn.b1"]
        hidden, gelu_grad = _gelu(u)
        h_out = h_mid + hidden @ p[f"{pre}.ffn.W2"].T + p[f"{pre}.ffn.b2"]

        layer_caches.append(
            _LayerCache(
                h_in=h, ln1=ln1, a=a, weights=weights, q=q, k=k, v=v, probs=probs,
                ctx=ctx, ln2=ln2, c=c, gelu_grad=gelu_grad, ffn_hidden=hidden,
            )
        )
        h = h_out

    final_hidden, final_ln = _layer_norm(h, p["final_ln.g"], p["final_ln.b"])
    logits = final_hidden @ p["output.W"].T + p["output.b"]
    cache = ForwardCache(
        feats=feats, layers=layer_caches, final_ln=final_ln,
        final_hidden=final_hidden, use_adapters=use_adapters,
    )
    return logits, cache


def forward(model: ModelState, feats: Tensor, use_adapters: bool = True) -> Tensor:
    """
    Per-frame logits of shape [T, vocab_size + 1]; the last column is the blank.

    Args:
        model: Model to evaluate.
        feats: Feature frames [T, feat_dim], T >= 1.
        use_adapters: When False the adapters are ignored (base model only).
    """
    logits, _ = forward_with_cache(model, feats, use_adapters)
    return logits


def backward(
    model: ModelState,
    feats: Tensor,
    loss_grad_on_logits: Tensor,
    subset: Subset = "lora",
    cache: Optional[ForwardCache] = None,
) -> GradientSet:
    """
    Exact gradients of a scalar loss with respect to a parameter subset.

    Args:
        model: Model the upstream gradient was computed for.
        feats: Input frames of the forward pass.
        loss_grad_on_logits: d(loss)/d(logits), shape [T, vocab_size + 1].
        subset: "lora" (adapters only), "base" (frozen weights only) or "full".
        cache: Forward cache for the same input; recomputed when omitted.

    Returns:
        Gradients by parameter name, in `model.parameter_names(subset)` order.

    Raises:
        DomainError: If the subset selects no parameters.
    """
    names = model.parameter_names(subset)
    if not names:
        raise DomainError(f"parameter subset {subset!r} is empty for this model")
    if cache is None:
        _, cache = forward_with_cache(model, feats)
    cfg = model.config
    p = model.base
    dlogits = np.asarray(loss_grad_on_logits, dtype=np.float64)
    if dlogits.shape != (cache.feats.shape[0], cfg.n_outputs):
        raise ShapeError(
            f"upstream gradient shape {dlogits.shape} does not match logits "
            f"[{cache.feats.shape[0]}, {cfg.n_outputs}]"
        )

    grads: Dict[str, Tensor] = {}
    grads["output.W"] = dlogits.T @ cache.final_hidden
    grads["output.b"] = dlogits.sum(axis=0)
    dh, grads["final_ln.g"], grads["final_ln.b"] = _layer_norm_backward(
        dlogits @ p["output.W"], p["final_ln.g"], cache.final_ln
    )

    scale = 1.0 / np.sqrt(cfg.d_model // cfg.n_heads)
    weight_grads: Dict[Tuple[int, str], Tensor] = {}
    for layer in reversed(range(cfg.n_layers)):
        pre = f"layers.{layer}"
        lc = cache.layers[layer]

        grads[f"{pre}.ffn.W2"] = dh.T @ lc.ffn_hidden
        grads[f"{pre}.ffn.b2"] = dh.sum(axis=0)
        du = (dh @ p[f"{pre}.ffn.W2"]) * lc.gelu_grad
        grads[f"{pre}.ffn.W1"] = du.T @ lc.c
        grads[f"{pre}.ffn.b1"] = du.sum(axis=0)
        dc, grads[f"{pre}.ln2.g"], grads[f"{pre}.ln2.b"] = _layer_norm_backward(
            du @ p[f"{pre}.ffn.W1"], p[f"{pre}.ln2.g"], lc.ln2
        )
        dh_mid = dh + dc

        weight_grads[(layer, "o")] = dh_mid.T @ lc.ctx
        dctx = _split_heads(dh_mid @ lc.weights["o"], cfg.n_heads)
        dprobs = dctx @ lc.v.transpose(0, 2, 1)
        dv = lc.probs.transpose(0, 2, 1) @ dctx
        dscores = lc.probs * (dprobs - (dprobs * lc.probs).sum(axis=-1, keepdims=True))
        dq = (dscores @ lc.k) * scale
        dk = (dscores.transpose(0, 2, 1) @ lc.q) * scale
        dq, dk, dv = _merge_heads(dq), _merge_heads(dk), _merge_heads(dv)

        weight_grads[(layer, "q")] = dq.T @ lc.a
        weight_grads[(layer, "k")] = dk.T @ lc.a
        weight_grads[(layer, "v")] = dv.T @ lc.a
        da = dq @ lc.weights["q"] + dk @ lc.weights["k"] + dv @ lc.weights["v"]
        dx, grads[f"{pre}.ln1.g"], grads[f"{pre}.ln1.b"] = _layer_norm_backward(
            da, p[f"{pre}.ln1.g"], lc.ln1
        )
        dh = dh_mid + dx

    grads["input.W"] = dh.T @ cache.feats
    grads["input.b"] = dh.sum(axis=0)

    s = cfg.scaling
    for (layer, target), dw in weight_grads.items():
        grads[f"layers.{layer}.attn.{target}.W"] = dw
        a_name = adapter_name(layer, target, "A")
        if a_name in model.adapters:
            b_name = adapter_name(layer, target, "B")
            if cache.use_adapters:
                grads[a_name] = s * (model.adapters[b_name].T @ dw)
                grads[b_name] = s * (dw @ model.adapters[a_name].T)
            else:
                grads[a_name] = np.zeros_like(model.adapters[a_name])
                grads[b_name] = np.zeros_like(model.adapters[b_name])

    return {name: grads[name] for name in names}


def flatten_params(model: ModelState, subset: Subset = "lora") -> Tensor:
    """Concatenate a parameter subset into one vector in fixed order."""
    names = model.parameter_names(subset)
    if not names:
        return np.zeros(0)
    return np.concatenate([model.get(n).reshape(-1) for n in names])


def unflatten_params(model: ModelState, vector: Tensor, subset: Subset = "lora") -> ModelState:
    """
    Inverse of `flatten_params`: a new ModelState holding `vector`'s values.

    Only "base" and "full" replace base weights; the adaptation path uses
    "lora" and therefore never touches them.
    """
    names = model.parameter_names(subset)
    vector = np.asarray(vector, dtype=np.float64)
    expected = sum(model.get(n).size for n in names)
    if vector.ndim != 1 or vector.size != expected:
        raise ShapeError(f"expected a flat vector of length {expected}, got shape {vector.shape}")
    base = dict(model.base)
    adapters = dict(model.adapters)
    offset = 0
    for name in names:
        ref = model.get(name)
        chunk = vector[offset:offset + ref.size].reshape(ref.shape).copy()
        offset += ref.size
        if name in adapters:
            adapters[name] = chunk
        else:
            base[name] = _freeze(chunk)
    return ModelState(config=model.config, base=base, adapters=adapters)


def flatten_trainable(model: ModelState) -> Tensor:
    """Flat view of the LoRA parameters, the vector theta of the EWC penalty."""
    return flatten_params(model, "lora")


def unflatten_trainable(model: ModelState, vector: Tensor) -> ModelState:
    """Return a model whose adapters hold `vector`; base weights are shared."""
    return unflatten_params(model, vector, "lora")


def flatten_gradients(grads: GradientSet, names: List[str]) -> Tensor:
    """Concatenate gradients in the given parameter order."""
    if not names:
        return np.zeros(0)
    return np.concatenate([grads[n].reshape(-1) for n in names])


def trainable_size(cfg: ModelConfig) -> int:
    """Number of LoRA parameters: sum of r * (d_in + d_out) over adapted matrices."""
    return cfg.n_layers * len(cfg.lora_targets) * cfg.lora_rank * (2 * cfg.d_model)


def base_fingerprint(model: ModelState) -> str:
    """SHA-256 over every base weight, in name order."""
    digest = hashlib.sha256()
    for name in sorted(model.base):
        digest.update(name.encode("utf-8"))
        digest.update(np.ascontiguousarray(model.base[name]).tobytes())
    return digest.hexdigest()
