"""Full query/target encoders and the batch loss with analytic gradients.

Query side:  resample(audio) -> GFT(frames, audio) -> AVT(f_av, text) -> f_avt
Target side: resample(audio) -> GFT(frames, audio) -> l2_normalize

The audio-video and text fusion stages can each be swapped for a plain average
(or dropped) to reproduce the baseline fusion strategies.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import avt, gft, objective, resampler
from .numerics import l2_normalize, l2_normalize_backward

AV_FUSIONS = ("gft", "avg", "video", "audio")
TEXT_FUSIONS = ("avt", "avg", "none", "text")


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 512
    audio_dim: int = 768
    n_queries: int = 8
    n_layers: int = 2
    ffn_mult: int = 4
    avt_hidden: int = 256
    init_std: float = 0.02
    gate_bias: float = 0.0
    tau: float = objective.DEFAULT_TAU
    av_fusion: str = "gft"
    text_fusion: str = "avt"
    train_resampler: bool = True

    def __post_init__(self):
        if self.av_fusion not in AV_FUSIONS:
            raise ValueError(f"av_fusion must be one of {AV_FUSIONS}")
        if self.text_fusion not in TEXT_FUSIONS:
            raise ValueError(f"text_fusion must be one of {TEXT_FUSIONS}")
        if self.dim < 1 or self.audio_dim < 1:
            raise ValueError("dims must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class FusionParams:
    """Every trainable tensor of the engine under a flat dotted name."""

    config: ModelConfig
    tensors: dict = field(default_factory=dict)

    def group(self, prefix: str) -> dict:
        p = prefix + "."
        return {k[len(p):]: v for k, v in self.tensors.items() if k.startswith(p)}

    def names(self) -> list[str]:
        return list(self.tensors)

    def copy(self) -> "FusionParams":
        return FusionParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def trainable_names(self) -> list[str]:
        """Names updated by training under the configured fusion strategy.

        Plain averaging has no parameters of its own; in "avg" audio fusion the
        resampler only bridges widths and stays frozen.
        """
        cfg = self.config
        prefixes = []
        if cfg.av_fusion == "gft":
            if cfg.train_resampler:
                prefixes.append("resampler.")
            prefixes.append("gft.")
        if cfg.text_fusion == "avt":
            prefixes.append("avt.")
        names = [n for n in self.tensors if n.startswith(tuple(prefixes))] if prefixes else []
        return names + ["log_tau"]

    @property
    def tau(self) -> float:
        return float(np.exp(self.tensors["log_tau"][0]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, FusionParams) or self.config != other.config:
            return False
        if list(self.tensors) != list(other.tensors):
            return False
        return all(np.array_equal(self.tensors[k], other.tensors[k]) for k in self.tensors)


def init_params(config: ModelConfig, seed: int = 0) -> FusionParams:
    rng = np.random.default_rng(seed)
    tensors = {}
    for k, v in resampler.init_params(rng, config.n_queries, config.dim, config.audio_dim, config.init_std).items():
        tensors[f"resampler.{k}"] = v
    for k, v in gft.init_params(rng, config.n_layers, config.dim, config.ffn_mult,
                                config.init_std, config.gate_bias).items():
        tensors[f"gft.{k}"] = v
    for k, v in avt.init_params(rng, config.dim, config.avt_hidden, config.init_std).items():
        tensors[f"avt.{k}"] = v
    tensors["log_tau"] = objective.init_log_tau(config.tau)
    return FusionParams(config, tensors)


# -- audio-video stage -------------------------------------------------------

def _resample_all(rp, audio):
    """Resample a stacked (B, T, D_a) array or a list of per-clip arrays."""
    if isinstance(audio, np.ndarray):
        return resampler.forward(rp, audio)
    outs, caches = zip(*(resampler.forward(rp, a) for a in audio))
    return np.stack(outs), list(caches)


def _resample_backward(rp, cache, dout):
    if isinstance(cache, list):
        grads = None
        for c, d in zip(cache, dout):
            g = resampler.backward(rp, c, d)
            grads = g if grads is None else {k: grads[k] + g[k] for k in g}
        return grads
    return resampler.backward(rp, cache, dout)


def fuse_av_forward(params: FusionParams, frames, audio):
    mode = params.config.av_fusion
    frames = np.asarray(frames, dtype=np.float64)
    if mode == "video":
        return gft.mean_pool(frames), None
    rp = params.group("resampler")
    tokens, rcache = _resample_all(rp, audio)
    if mode == "audio":
        return tokens.mean(axis=-2), None
    if mode == "avg":
        return 0.5 * (gft.mean_pool(frames) + tokens.mean(axis=-2)), None
    fav, gcache = gft.forward(params.group("gft"), frames, tokens)
    return fav, (rcache, gcache)


def fuse_av_backward(params: FusionParams, cache, dfav) -> dict:
    if cache is None:
        return {}
    rcache, gcache = cache
    ggrads, dtokens = gft.backward(params.group("gft"), gcache, dfav)
    grads = {f"gft.{k}": v for k, v in ggrads.items()}
    if params.config.train_resampler:
        rgrads = _resample_backward(params.group("resampler"), rcache, dtokens)
        grads.update({f"resampler.{k}": v for k, v in rgrads.items()})
    return grads


# -- text stage ----------------------------------------------------------------

def compose_forward(params: FusionParams, fav, text, mask=None):
    """Returns ``(f_avt, weights, cache)`` for a batch."""
    mode = params.config.text_fusion
    text = np.asarray(text, dtype=np.float64)
    if mask is None:
        mask = avt.presence_mask(text)
    if mode == "avt":
        cq, cache = avt.forward(params.group("avt"), fav, text, mask)
        return cq.f_avt, cq.weights, ("avt", cache)
    if mode == "none":
        w = np.zeros(mask.shape)
        w[..., 0] = 1.0
        return l2_normalize(fav), w, ("none", fav)
    if mode == "text":
        w = mask.copy()
        w[..., 0] = 0.0
        return l2_normalize(np.sum(w[..., 1:, None] * text, axis=-2)), w, ("text", None)
    summed = (fav + np.sum(mask[..., 1:, None] * text, axis=-2))
    w = mask / mask.sum(axis=-1, keepdims=True)
    return l2_normalize(summed), w, ("avg", summed)


def compose_backward(params: FusionParams, cache, dout):
    mode, c = cache
    if mode == "avt":
        grads, dfav = avt.backward(params.group("avt"), c, dout)
        return {f"avt.{k}": v for k, v in grads.items()}, dfav
    if mode == "text":
        return {}, 0.0
    return {}, l2_normalize_backward(c, dout)


# -- encoders ------------------------------------------------------------------

def encode_queries(params: FusionParams, frames, audio, text, drop=()):
    """Composed, unit-norm query vectors and their component weights."""
    text = np.asarray(text, dtype=np.float64)
    if drop:
        text = avt.ablate(text, drop)
    fav, _ = fuse_av_forward(params, frames, audio)
    f_avt, weights, _ = compose_forward(params, fav, text)
    return f_avt, weights


def encode_targets(params: FusionParams, frames, audio) -> np.ndarray:
    """Unit-norm target vectors; text never enters the target side."""
    fav, _ = fuse_av_forward(params, frames, audio)
    return l2_normalize(fav)


def _concat_audio(a, b):
    if isinstance(a, np.ndarray) and isinstance(b, np.ndarray) and a.shape[1:] == b.shape[1:]:
        return np.concatenate([a, b])
    return list(a) + list(b)


def batch_loss(params: FusionParams, q_frames, q_audio, text, t_frames, t_audio, *, with_grads: bool = True):
    """InfoNCE for one batch; gradients cover ``params.trainable_names()``."""
    n = len(q_frames)
    frames = np.concatenate([np.asarray(q_frames, dtype=np.float64), np.asarray(t_frames, dtype=np.float64)])
    audio = _concat_audio(q_audio, t_audio)
    fav, av_cache = fuse_av_forward(params, frames, audio)
    fq, ft = fav[:n], fav[n:]
    f_avt, _, text_cache = compose_forward(params, fq, text)
    t_unit = l2_normalize(ft)
    loss, dq, dt, dlog_tau = objective.loss_and_grads(f_avt, t_unit, params.tensors["log_tau"])
    if not with_grads:
        return loss, {}
    grads, dfq = compose_backward(params, text_cache, dq)
    dft = l2_normalize_backward(ft, dt)
    dfav = np.concatenate([np.broadcast_to(dfq, fq.shape), dft])
    grads.update(fuse_av_backward(params, av_cache, dfav))
    grads["log_tau"] = dlog_tau
    trainable = params.trainable_names()
    return loss, {k: grads.get(k, np.zeros_like(params.tensors[k])) for k in trainable}
