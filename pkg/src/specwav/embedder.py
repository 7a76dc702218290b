"""Small TDNN speaker embedder with hand-written gradients.

The network is a stack of same-padded dilated 1-D convolutions with ReLU,
attentive statistics pooling, a linear projection, and L2 normalization.
Training uses additive-angular-margin softmax over normalized class
weights.  All arithmetic runs in float64; reverse-mode gradients are
implemented directly so results are deterministic and exactly repeatable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

VAR_FLOOR = 1e-8
NORM_FLOOR = 1e-12


class ModelError(ValueError):
    """Raised for invalid embedder configurations or mismatched inputs."""


@dataclass(frozen=True)
class EmbedderConfig:
    input_dim: int
    n_classes: int
    channels: int = 64
    tdnn_layers: tuple[tuple[int, int], ...] = ((5, 1), (3, 2), (3, 3))
    attn_hidden: int = 32
    embedding_dim: int = 128
    aam_scale: float = 20.0
    aam_margin: float = 0.2

    def __post_init__(self):
        if self.input_dim < 1:
            raise ModelError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.n_classes < 1:
            raise ModelError(f"n_classes must be >= 1, got {self.n_classes}")
        if self.channels < 1 or self.attn_hidden < 1 or self.embedding_dim < 2:
            raise ModelError(
                f"invalid sizes: channels={self.channels}, "
                f"attn_hidden={self.attn_hidden}, embedding_dim={self.embedding_dim}"
            )
        if not self.tdnn_layers:
            raise ModelError("tdnn_layers must not be empty")
        for kernel, dilation in self.tdnn_layers:
            if kernel < 1 or kernel % 2 == 0:
                raise ModelError(f"kernel sizes must be odd, got {kernel}")
            if dilation < 1:
                raise ModelError(f"dilations must be >= 1, got {dilation}")
        if not (0.0 <= self.aam_margin < math.pi / 2):
            raise ModelError(f"aam_margin must lie in [0, pi/2), got {self.aam_margin}")
        if self.aam_scale <= 0.0:
            raise ModelError(f"aam_scale must be positive, got {self.aam_scale}")

    @property
    def receptive_field(self) -> int:
        return 1 + sum((k - 1) * d for k, d in self.tdnn_layers)


def init_params(config: EmbedderConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """He-style normal initialization; biases start at zero."""
    params: dict[str, np.ndarray] = {}
    in_ch = config.input_dim
    for i, (kernel, _) in enumerate(config.tdnn_layers):
        fan_in = in_ch * kernel
        params[f"tdnn{i}.weight"] = rng.normal(
            0.0, math.sqrt(2.0 / fan_in), size=(config.channels, in_ch, kernel))
        params[f"tdnn{i}.bias"] = np.zeros(config.channels)
        in_ch = config.channels
    c, a = config.channels, config.attn_hidden
    params["attn.w1"] = rng.normal(0.0, math.sqrt(1.0 / c), size=(a, c))
    params["attn.b1"] = np.zeros(a)
    params["attn.v"] = rng.normal(0.0, math.sqrt(1.0 / a), size=(a,))
    params["proj.weight"] = rng.normal(
        0.0, math.sqrt(1.0 / (2 * c)), size=(config.embedding_dim, 2 * c))
    params["proj.bias"] = np.zeros(config.embedding_dim)
    params["classifier.weight"] = rng.normal(
        0.0, math.sqrt(1.0 / config.embedding_dim),
        size=(config.n_classes, config.embedding_dim))
    return params


def check_param_shapes(params: dict[str, np.ndarray], config: EmbedderConfig) -> None:
    rng = np.random.default_rng(0)
    expected = init_params(config, rng)
    missing = sorted(set(expected) - set(params))
    extra = sorted(set(params) - set(expected))
    if missing or extra:
        raise ModelError(f"parameter names mismatch: missing={missing}, extra={extra}")
    for name, ref in expected.items():
        if params[name].shape != ref.shape:
            raise ModelError(
                f"parameter {name} has shape {params[name].shape}, "
                f"expected {ref.shape}"
            )


def attentive_stats_pool(h: np.ndarray, w1: np.ndarray, b1: np.ndarray,
                         v: np.ndarray) -> tuple[np.ndarray, dict]:
    """Attention-weighted mean and standard deviation over time.

    Returns the pooled (2C,) vector and a cache for the backward pass.
    The variance is floored before the square root so gradients stay finite
    on constant inputs.
    """
    u = np.tanh(h @ w1.T + b1)            # (T, A)
    scores = u @ v                        # (T,)
    scores_shift = scores - scores.max()
    exp = np.exp(scores_shift)
    weights = exp / exp.sum()             # (T,)
    mean = weights @ h                    # (C,)
    sq = weights @ (h * h)                # (C,)
    var = sq - mean * mean
    var_clipped = np.maximum(var, VAR_FLOOR)
    std = np.sqrt(var_clipped)
    stats = np.concatenate([mean, std])
    cache = {"h": h, "u": u, "weights": weights, "mean": mean,
             "var": var, "std": std, "w1": w1, "v": v}
    return stats, cache


def _pool_backward(grad_stats: np.ndarray, cache: dict
                   ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    h, u, weights = cache["h"], cache["u"], cache["weights"]
    mean, var, std = cache["mean"], cache["var"], cache["std"]
    w1, v = cache["w1"], cache["v"]
    c = h.shape[1]
    grad_mean = grad_stats[:c].copy()
    grad_std = grad_stats[c:]
    # d std / d var is zero where the floor is active
    grad_var = np.where(var > VAR_FLOOR, grad_std / (2.0 * std), 0.0)
    grad_sq = grad_var
    grad_mean += -2.0 * mean * grad_var
    grad_h = weights[:, None] * (grad_mean[None, :] + 2.0 * h * grad_sq[None, :])
    grad_weights = h @ grad_mean + (h * h) @ grad_sq       # (T,)
    grad_scores = weights * (grad_weights - weights @ grad_weights)
    grad_v = u.T @ grad_scores
    grad_u = np.outer(grad_scores, v)
    grad_pre = (1.0 - u * u) * grad_u
    grad_w1 = grad_pre.T @ h
    grad_b1 = grad_pre.sum(axis=0)
    grad_h += grad_pre @ w1
    return grad_h, grad_w1, grad_b1, grad_v


def _conv_same(x: np.ndarray, weight: np.ndarray, bias: np.ndarray,
               dilation: int) -> tuple[np.ndarray, np.ndarray]:
    t = x.shape[0]
    kernel = weight.shape[2]
    pad = (kernel - 1) * dilation // 2
    xp = np.pad(x, ((pad, pad), (0, 0)))
    z = np.tile(bias, (t, 1))
    for j in range(kernel):
        z += xp[j * dilation:j * dilation + t] @ weight[:, :, j].T
    return z, xp


def _conv_backward(grad_z: np.ndarray, xp: np.ndarray, weight: np.ndarray,
                   dilation: int, t_in: int
                   ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    t, kernel = grad_z.shape[0], weight.shape[2]
    pad = (kernel - 1) * dilation // 2
    grad_w = np.empty_like(weight)
    grad_xp = np.zeros_like(xp)
    for j in range(kernel):
        sl = slice(j * dilation, j * dilation + t)
        grad_w[:, :, j] = grad_z.T @ xp[sl]
        grad_xp[sl] += grad_z @ weight[:, :, j]
    grad_b = grad_z.sum(axis=0)
    return grad_xp[pad:pad + t_in], grad_w, grad_b


def forward(features: np.ndarray, params: dict[str, np.ndarray],
            config: EmbedderConfig, keep_trace: bool = False
            ) -> tuple[np.ndarray, Optional[dict]]:
    """Embed one utterance.  Returns the unit-norm embedding.

    With ``keep_trace`` the intermediate activations needed by
    :func:`backward` are returned as well.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != config.input_dim:
        raise ModelError(
            f"expected (frames, {config.input_dim}) features, got shape {x.shape}"
        )
    if x.shape[0] < config.receptive_field:
        raise ModelError(
            f"utterance of {x.shape[0]} frames is shorter than the receptive "
            f"field ({config.receptive_field} frames)"
        )
    layer_inputs_padded = []
    pre_activations = []
    for i, (_, dilation) in enumerate(config.tdnn_layers):
        z, xp = _conv_same(x, params[f"tdnn{i}.weight"], params[f"tdnn{i}.bias"],
                           dilation)
        layer_inputs_padded.append(xp)
        pre_activations.append(z)
        x = np.maximum(z, 0.0)
    stats, pool_cache = attentive_stats_pool(
        x, params["attn.w1"], params["attn.b1"], params["attn.v"])
    z_proj = params["proj.weight"] @ stats + params["proj.bias"]
    norm = max(np.linalg.norm(z_proj), NORM_FLOOR)
    embedding = z_proj / norm
    if not keep_trace:
        return embedding, None
    trace = {
        "layer_inputs_padded": layer_inputs_padded,
        "pre_activations": pre_activations,
        "pool_cache": pool_cache,
        "stats": stats,
        "z_proj": z_proj,
        "norm": norm,
        "embedding": embedding,
    }
    return embedding, trace


def backward(grad_embedding: np.ndarray, trace: dict, params: dict[str, np.ndarray],
             config: EmbedderConfig) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. all non-classifier parameters."""
    embedding, norm = trace["embedding"], trace["norm"]
    grad_z = (grad_embedding - (grad_embedding @ embedding) * embedding) / norm
    grads: dict[str, np.ndarray] = {}
    grads["proj.weight"] = np.outer(grad_z, trace["stats"])
    grads["proj.bias"] = grad_z
    grad_stats = params["proj.weight"].T @ grad_z
    grad_h, grad_w1, grad_b1, grad_v = _pool_backward(grad_stats, trace["pool_cache"])
    grads["attn.w1"] = grad_w1
    grads["attn.b1"] = grad_b1
    grads["attn.v"] = grad_v
    grad_x = grad_h
    for i in reversed(range(len(config.tdnn_layers))):
        _, dilation = config.tdnn_layers[i]
        z = trace["pre_activations"][i]
        xp = trace["layer_inputs_padded"][i]
        t_in = xp.shape[0] - (config.tdnn_layers[i][0] - 1) * dilation
        grad_z_conv = grad_x * (z > 0.0)
        grad_x, grad_w, grad_b = _conv_backward(
            grad_z_conv, xp, params[f"tdnn{i}.weight"], dilation, t_in)
        grads[f"tdnn{i}.weight"] = grad_w
        grads[f"tdnn{i}.bias"] = grad_b
    return grads


def aam_loss(embedding: np.ndarray, label: int, class_weights: np.ndarray,
             scale: float = 20.0, margin: float = 0.2
             ) -> tuple[float, np.ndarray, np.ndarray]:
    """Additive-angular-margin softmax loss for one unit-norm embedding.

    Class weight rows are L2-normalized at use; the returned weight
    gradient flows through that normalization.  When the target angle is
    too large for the margin (``cos(theta) <= cos(pi - margin)``) the
    standard ``cos(theta) - margin * sin(margin)`` fallback keeps the
    logit monotone in the angle.

    Returns ``(loss, grad_embedding, grad_class_weights)``.
    """
    n_classes = class_weights.shape[0]
    if not (0 <= label < n_classes):
        raise ModelError(f"label {label} out of range for {n_classes} classes")
    norms = np.maximum(np.linalg.norm(class_weights, axis=1), NORM_FLOOR)
    unit_w = class_weights / norms[:, None]
    cos = unit_w @ embedding
    cos_y = cos[label]
    cos_m, sin_m = math.cos(margin), math.sin(margin)
    sin_y = math.sqrt(max(1.0 - cos_y * cos_y, 0.0))
    if cos_y > -cos_m:                       # cos(pi - m) = -cos(m)
        phi = cos_y * cos_m - sin_y * sin_m
        dphi = cos_m + sin_m * cos_y / max(sin_y, NORM_FLOOR)
    else:
        phi = cos_y - margin * sin_m
        dphi = 1.0
    logits = scale * cos
    logits[label] = scale * phi
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    total = exp.sum()
    loss = math.log(total) - shifted[label]
    grad_logits = exp / total
    grad_logits[label] -= 1.0
    grad_cos = scale * grad_logits
    grad_cos[label] *= dphi
    grad_embedding = grad_cos @ unit_w
    grad_weights = (grad_cos[:, None]
                    * (embedding[None, :] - cos[:, None] * unit_w)
                    / norms[:, None])
    return loss, grad_embedding, grad_weights


def loss_and_grads(features: np.ndarray, label: int,
                   params: dict[str, np.ndarray], config: EmbedderConfig
                   ) -> tuple[float, dict[str, np.ndarray]]:
    """Full training-step loss and gradients for every parameter."""
    embedding, trace = forward(features, params, config, keep_trace=True)
    loss, grad_emb, grad_cls = aam_loss(
        embedding, label, params["classifier.weight"],
        scale=config.aam_scale, margin=config.aam_margin)
    grads = backward(grad_emb, trace, params, config)
    grads["classifier.weight"] = grad_cls
    return loss, grads


def loss_only(features: np.ndarray, label: int, params: dict[str, np.ndarray],
              config: EmbedderConfig) -> float:
    embedding, _ = forward(features, params, config)
    loss, _, _ = aam_loss(embedding, label, params["classifier.weight"],
                          scale=config.aam_scale, margin=config.aam_margin)
    return loss


@dataclass
class AdamState:
    """First and second moment accumulators plus the shared step count."""

    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params: dict[str, np.ndarray]) -> AdamState:
    return AdamState(
        step=0,
        m={k: np.zeros_like(p) for k, p in params.items()},
        v={k: np.zeros_like(p) for k, p in params.items()},
    )


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, hyper: AdamHyper = AdamHyper()
              ) -> dict[str, np.ndarray]:
    """One bias-corrected Adam update.  Mutates the state, returns new params."""
    if set(grads) != set(params):
        raise ModelError(
            f"gradient names {sorted(grads)} do not match parameters {sorted(params)}"
        )
    state.step += 1
    t = state.step
    bc1 = 1.0 - hyper.beta1 ** t
    bc2 = 1.0 - hyper.beta2 ** t
    new_params = {}
    for name in sorted(params):
        g = grads[name]
        if g.shape != params[name].shape:
            raise ModelError(
                f"gradient for {name} has shape {g.shape}, "
                f"expected {params[name].shape}"
            )
        state.m[name] = hyper.beta1 * state.m[name] + (1.0 - hyper.beta1) * g
        state.v[name] = hyper.beta2 * state.v[name] + (1.0 - hyper.beta2) * (g * g)
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        new_params[name] = params[name] - hyper.lr * m_hat / (np.sqrt(v_hat) + hyper.eps)
    return new_params
