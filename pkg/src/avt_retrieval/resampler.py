"""Learned-query cross-attention that compresses audio tokens to M vectors."""

from __future__ import annotations

import numpy as np

from .numerics import ShapeError, softmax, softmax_backward

PARAM_NAMES = ("queries", "wk", "wv", "wo", "empty")


class EmptyAudioError(ValueError):
    pass


def init_params(rng: np.random.Generator, n_queries: int, dim: int, audio_dim: int, std: float = 0.02) -> dict:
    if n_queries < 1:
        raise ValueError("resampler needs at least one query token")
    return {
        "queries": rng.normal(0.0, std, (n_queries, dim)),
        "wk": rng.normal(0.0, std, (audio_dim, dim)),
        "wv": rng.normal(0.0, std, (audio_dim, dim)),
        "wo": rng.normal(0.0, std, (dim, dim)),
        # stands in for the token sequence of a silent clip
        "empty": rng.normal(0.0, std, (1, audio_dim)),
    }


def substitute_empty(params, audio: np.ndarray) -> tuple[np.ndarray, bool]:
    """Swap a zero-length token sequence for the learned no-audio token."""
    if audio.shape[-2] > 0:
        return audio, False
    batch = audio.shape[:-2]
    return np.broadcast_to(params["empty"], batch + params["empty"].shape).copy(), True


def forward(params, audio: np.ndarray, allow_empty: bool = True):
    """Resample ``audio`` of shape (..., T, D_a) to (..., M, D).

    Returns ``(out, cache)``; pass the cache to :func:`backward`.
    """
    audio = np.asarray(audio, dtype=np.float64)
    d_a = params["wk"].shape[0]
    if audio.shape[-1] != d_a:
        raise ShapeError(f"audio width {audio.shape[-1]} != resampler input width {d_a}")
    if audio.shape[-2] == 0 and not allow_empty:
        raise EmptyAudioError("audio token sequence is empty")
    audio, used_empty = substitute_empty(params, audio)

    dim = params["queries"].shape[1]
    scale = 1.0 / np.sqrt(dim)
    k = audio @ params["wk"]
    v = audio @ params["wv"]
    scores = (params["queries"] @ np.swapaxes(k, -1, -2)) * scale
    attn = softmax(scores, axis=-1)
    ctx = attn @ v
    out = ctx @ params["wo"]
    cache = (audio, k, v, attn, ctx, scale, used_empty)
    return out, cache


def backward(params, cache, dout: np.ndarray) -> dict:
    audio, k, v, attn, ctx, scale, used_empty = cache
    lead = tuple(range(dout.ndim - 2))

    def tsum(x):
        return x.sum(axis=lead) if lead else x

    grads = {}
    grads["wo"] = tsum(np.swapaxes(ctx, -1, -2) @ dout)
    dctx = dout @ params["wo"].T
    dattn = dctx @ np.swapaxes(v, -1, -2)
    dv = np.swapaxes(attn, -1, -2) @ dctx
    dscores = softmax_backward(attn, dattn) * scale
    grads["queries"] = tsum(dscores @ k)
    dk = np.swapaxes(dscores, -1, -2) @ params["queries"]
    audio_t = np.swapaxes(audio, -1, -2)
    grads["wk"] = tsum(audio_t @ dk)
    grads["wv"] = tsum(audio_t @ dv)
    if used_empty:
        daudio = dk @ params["wk"].T + dv @ params["wv"].T
        grads["empty"] = tsum(daudio).reshape(params["empty"].shape)
    else:
        grads["empty"] = np.zeros_like(params["empty"])
    return grads
