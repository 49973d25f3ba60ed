"""Gated fusion of audio tokens into frame embeddings.

Each layer is a pre-norm residual block::

    h    = LN1(x)
    attn = CrossAttn(query=h, key/value=audio)
    g    = sigmoid([h | attn] @ Wg + bg)
    x    = x + g * attn
    x    = x + FFN(LN2(x))

and the fused clip vector is the mean of the refined frame rows.
"""

from __future__ import annotations

import numpy as np

from .numerics import ShapeError, sigmoid, softmax, softmax_backward

LN_EPS = 1e-5
LAYER_PARAM_NAMES = (
    "ln1_g", "ln1_b", "wq", "wk", "wv", "wo", "wg", "bg",
    "ln2_g", "ln2_b", "w1", "b1", "w2", "b2",
)
_GELU_C = np.sqrt(2.0 / np.pi)


def init_params(rng: np.random.Generator, n_layers: int, dim: int, ffn_mult: int = 4,
                std: float = 0.02, gate_bias: float = 0.0) -> dict:
    """Fresh GFT parameters, flattened as ``"{layer}.{name}"``.

    The FFN output projection starts at zero so an untrained stack passes
    frames through almost unchanged; LN output has norm sqrt(D) and a random
    projection of it would swamp the unit-scale embeddings.
    """
    if n_layers < 1:
        raise ValueError("GFT needs at least one layer")
    hidden = ffn_mult * dim
    params = {}
    for i in range(n_layers):
        layer = {
            "ln1_g": np.ones(dim), "ln1_b": np.zeros(dim),
            "wq": rng.normal(0.0, std, (dim, dim)),
            "wk": rng.normal(0.0, std, (dim, dim)),
            "wv": rng.normal(0.0, std, (dim, dim)),
            "wo": rng.normal(0.0, std, (dim, dim)),
            "wg": rng.normal(0.0, std, (2 * dim, dim)),
            "bg": np.full(dim, float(gate_bias)),
            "ln2_g": np.ones(dim), "ln2_b": np.zeros(dim),
            "w1": rng.normal(0.0, std, (dim, hidden)),
            "b1": np.zeros(hidden),
            "w2": np.zeros((hidden, dim)),
            "b2": np.zeros(dim),
        }
        params.update({f"{i}.{k}": v for k, v in layer.items()})
    return params


def n_layers(params) -> int:
    return len({name.split(".", 1)[0] for name in params})


def layer_view(params, i: int) -> dict:
    return {k: params[f"{i}.{k}"] for k in LAYER_PARAM_NAMES}


def layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def layer_norm_backward(dy, g, cache):
    xhat, inv = cache
    dim = xhat.shape[-1]
    dxhat = dy * g
    dx = inv / dim * (dim * dxhat - dxhat.sum(axis=-1, keepdims=True)
                      - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
    return dx, _sum_lead(dy * xhat), _sum_lead(dy)


def gelu(u):
    inner = _GELU_C * (u + 0.044715 * u ** 3)
    t = np.tanh(inner)
    return 0.5 * u * (1.0 + t), t


def gelu_grad(u, t):
    dinner = _GELU_C * (1.0 + 3 * 0.044715 * u ** 2)
    return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * dinner


def _sum_lead(x):
    return x.reshape(-1, x.shape[-1]).sum(axis=0)


def _outer_sum(a, b):
    """Sum over all leading axes of a^T b, for (..., R, P) and (..., R, Q)."""
    return a.reshape(-1, a.shape[-1]).T @ b.reshape(-1, b.shape[-1])


def layer_forward(p, x, audio):
    dim = x.shape[-1]
    scale = 1.0 / np.sqrt(dim)
    h, ln1 = layer_norm(x, p["ln1_g"], p["ln1_b"])
    q = h @ p["wq"]
    k = audio @ p["wk"]
    v = audio @ p["wv"]
    attn_w = softmax((q @ np.swapaxes(k, -1, -2)) * scale, axis=-1)
    ctx = attn_w @ v
    attn = ctx @ p["wo"]
    gate_in = np.concatenate([h, attn], axis=-1)
    gate = sigmoid(gate_in @ p["wg"] + p["bg"])
    x1 = x + gate * attn
    h2, ln2 = layer_norm(x1, p["ln2_g"], p["ln2_b"])
    u = h2 @ p["w1"] + p["b1"]
    r, t = gelu(u)
    x2 = x1 + r @ p["w2"] + p["b2"]
    cache = (audio, h, ln1, q, k, v, attn_w, ctx, attn, gate_in, gate, h2, ln2, u, r, t, scale)
    return x2, cache


def layer_backward(p, cache, dx2):
    audio, h, ln1, q, k, v, attn_w, ctx, attn, gate_in, gate, h2, ln2, u, r, t, scale = cache
    dim = h.shape[-1]
    g = {}

    # feed-forward branch
    g["w2"] = _outer_sum(r, dx2)
    g["b2"] = _sum_lead(dx2)
    du = (dx2 @ p["w2"].T) * gelu_grad(u, t)
    g["w1"] = _outer_sum(h2, du)
    g["b1"] = _sum_lead(du)
    dh2 = du @ p["w1"].T
    dln2, g["ln2_g"], g["ln2_b"] = layer_norm_backward(dh2, p["ln2_g"], ln2)
    dx1 = dx2 + dln2

    # gated attention residual
    dx = dx1.copy()
    dattn = dx1 * gate
    dgate_pre = dx1 * attn * gate * (1.0 - gate)
    g["wg"] = _outer_sum(gate_in, dgate_pre)
    g["bg"] = _sum_lead(dgate_pre)
    dgate_in = dgate_pre @ p["wg"].T
    dh = dgate_in[..., :dim]
    dattn = dattn + dgate_in[..., dim:]

    g["wo"] = _outer_sum(ctx, dattn)
    dctx = dattn @ p["wo"].T
    dattn_w = dctx @ np.swapaxes(v, -1, -2)
    dv = np.swapaxes(attn_w, -1, -2) @ dctx
    dscores = softmax_backward(attn_w, dattn_w) * scale
    dq = dscores @ k
    dk = np.swapaxes(dscores, -1, -2) @ q
    g["wq"] = _outer_sum(h, dq)
    g["wk"] = _outer_sum(audio, dk)
    g["wv"] = _outer_sum(audio, dv)
    dh = dh + dq @ p["wq"].T
    daudio = dk @ p["wk"].T + dv @ p["wv"].T
    dln1, g["ln1_g"], g["ln1_b"] = layer_norm_backward(dh, p["ln1_g"], ln1)
    return dx + dln1, daudio, g


def mean_pool(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-2] == 0:
        raise ValueError("cannot mean-pool an empty set of rows")
    return x.mean(axis=-2)


def forward(params, frames, audio):
    """Fuse frames (..., N, D) with audio tokens (..., M, D) into (..., D)."""
    frames = np.asarray(frames, dtype=np.float64)
    audio = np.asarray(audio, dtype=np.float64)
    dim = params["0.wq"].shape[0]
    if frames.shape[-1] != dim or audio.shape[-1] != dim:
        raise ShapeError(f"GFT width {dim} does not match frames {frames.shape} / audio {audio.shape}")
    x = frames
    caches = []
    for i in range(n_layers(params)):
        x, c = layer_forward(layer_view(params, i), x, audio)
        caches.append(c)
    return mean_pool(x), (caches, x.shape[-2])


def refine(params, frames, audio) -> np.ndarray:
    """Frame embeddings after all layers, before pooling."""
    x = np.asarray(frames, dtype=np.float64)
    for i in range(n_layers(params)):
        x, _ = layer_forward(layer_view(params, i), x, audio)
    return x


def gate_activations(params, frames, audio) -> list[np.ndarray]:
    x = np.asarray(frames, dtype=np.float64)
    gates = []
    for i in range(n_layers(params)):
        x, c = layer_forward(layer_view(params, i), x, audio)
        gates.append(c[10])
    return gates


def backward(params, cache, dfav):
    """Returns ``(grads, daudio)`` for upstream gradient ``dfav`` of shape (..., D)."""
    caches, n_rows = cache
    dx = np.repeat(dfav[..., None, :] / n_rows, n_rows, axis=-2)
    daudio = 0.0
    grads = {}
    for i in reversed(range(len(caches))):
        dx, da, g = layer_backward(layer_view(params, i), caches[i], dx)
        daudio = daudio + da
        grads.update({f"{i}.{k}": v for k, v in g.items()})
    return grads, daudio
