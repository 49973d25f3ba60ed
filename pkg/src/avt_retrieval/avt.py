"""Query-weighted composition of the fused clip vector with four text parts.

The five inputs are always ordered ``(f_av, t_obj, t_act, t_att, t_audm)``.
An MLP over their concatenation predicts one sigmoid weight per input and the
composed query is the L2-normalized weighted sum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import EPS, DegenerateVectorError, ShapeError, l2_normalize_backward, sigmoid

TEXT_COMPONENTS = ("obj", "act", "att", "audm")
N_INPUTS = 1 + len(TEXT_COMPONENTS)
PARAM_NAMES = ("w1", "b1", "w2", "b2")


@dataclass
class ComposedQuery:
    f_avt: np.ndarray
    weights: np.ndarray


def init_params(rng: np.random.Generator, dim: int, hidden: int = 256, std: float = 0.02) -> dict:
    """Random first layer, zero output layer: untrained weights are all 0.5."""
    if hidden < 1:
        raise ValueError("AVT hidden width must be >= 1")
    return {
        "w1": rng.normal(0.0, std, (N_INPUTS * dim, hidden)),
        "b1": np.zeros(hidden),
        "w2": np.zeros((hidden, N_INPUTS)),
        "b2": np.zeros(N_INPUTS),
    }


def stack_inputs(f_av, text) -> np.ndarray:
    """(..., D) and (..., 4, D) -> (..., 5, D) in the fixed component order."""
    f_av = np.asarray(f_av, dtype=np.float64)
    text = np.asarray(text, dtype=np.float64)
    if text.shape[-2:] != (len(TEXT_COMPONENTS), f_av.shape[-1]):
        raise ShapeError(f"text components {text.shape} do not match f_av width {f_av.shape[-1]}")
    return np.concatenate([f_av[..., None, :], text], axis=-2)


def presence_mask(text) -> np.ndarray:
    """1 for f_av and every non-zero text part; missing parts get weight 0."""
    text = np.asarray(text)
    present = np.any(text != 0, axis=-1).astype(np.float64)
    ones = np.ones(present.shape[:-1] + (1,))
    return np.concatenate([ones, present], axis=-1)


def ablate(text, drop) -> np.ndarray:
    """Zero out the named text components, e.g. ``drop=("obj",)``."""
    text = np.array(text, dtype=np.float64, copy=True)
    for name in drop:
        text[..., TEXT_COMPONENTS.index(name), :] = 0.0
    return text


def _mlp(params, inputs):
    dim = inputs.shape[-1]
    if params["w1"].shape[0] != N_INPUTS * dim:
        raise ShapeError(f"AVT expects width {params['w1'].shape[0] // N_INPUTS}, got {dim}")
    x = inputs.reshape(inputs.shape[:-2] + (N_INPUTS * dim,))
    pre = x @ params["w1"] + params["b1"]
    hidden = np.maximum(pre, 0.0)
    logits = hidden @ params["w2"] + params["b2"]
    return x, pre, hidden, logits


def predict_weights(params, f_av, t_obj, t_act, t_att, t_audm) -> np.ndarray:
    text = np.stack([np.asarray(t, dtype=np.float64) for t in (t_obj, t_act, t_att, t_audm)], axis=-2)
    inputs = stack_inputs(f_av, text)
    return sigmoid(_mlp(params, inputs)[3]) * presence_mask(text)


def compose(f_av, t_obj, t_act, t_att, t_audm, weights, eps: float = EPS) -> np.ndarray:
    text = np.stack([np.asarray(t, dtype=np.float64) for t in (t_obj, t_act, t_att, t_audm)], axis=-2)
    inputs = stack_inputs(f_av, text)
    weights = np.asarray(weights, dtype=np.float64)
    summed = np.sum(weights[..., :, None] * inputs, axis=-2)
    norm = np.linalg.norm(summed, axis=-1, keepdims=True)
    if np.any(norm <= eps):
        raise DegenerateVectorError("weighted composition collapsed to the zero vector")
    return summed / norm


def forward(params, f_av, text, mask=None):
    """Batched predict_weights + compose. Returns ``(ComposedQuery, cache)``."""
    inputs = stack_inputs(f_av, text)
    if mask is None:
        mask = presence_mask(text)
    x, pre, hidden, logits = _mlp(params, inputs)
    sig = sigmoid(logits)
    weights = sig * mask
    summed = np.sum(weights[..., :, None] * inputs, axis=-2)
    norm = np.linalg.norm(summed, axis=-1, keepdims=True)
    if np.any(norm <= EPS):
        raise DegenerateVectorError("weighted composition collapsed to the zero vector")
    out = summed / norm
    cache = (inputs, x, pre, hidden, sig, mask, weights, summed)
    return ComposedQuery(out, weights), cache


def backward(params, cache, dout):
    """Returns ``(grads, df_av)`` for upstream gradient on the unit output."""
    inputs, x, pre, hidden, sig, mask, weights, summed = cache
    dsummed = l2_normalize_backward(summed, dout)
    dinputs = weights[..., :, None] * dsummed[..., None, :]
    dweights = np.sum(inputs * dsummed[..., None, :], axis=-1)
    dlogits = dweights * mask * sig * (1.0 - sig)
    x2 = x.reshape(-1, x.shape[-1])
    h2 = hidden.reshape(-1, hidden.shape[-1])
    dl2 = dlogits.reshape(-1, dlogits.shape[-1])
    grads = {"w2": h2.T @ dl2, "b2": dl2.sum(axis=0)}
    dpre = (dl2 @ params["w2"].T) * (pre.reshape(h2.shape) > 0)
    grads["w1"] = x2.T @ dpre
    grads["b1"] = dpre.sum(axis=0)
    dx = (dpre @ params["w1"].T).reshape(inputs.shape)
    df_av = dinputs[..., 0, :] + dx[..., 0, :]
    return grads, df_av
