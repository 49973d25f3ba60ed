"""Finite-difference checks for every trainable module at small sizes."""

from __future__ import annotations

import numpy as np

from . import avt, gft, objective, resampler
from .model import FusionParams, ModelConfig, batch_loss, init_params
from .numerics import GradReport, grad_check

# small enough that every scalar parameter can be perturbed in a few seconds
B, N, T, D, D_A, M, H = 3, 4, 5, 6, 7, 3, 5


def _jitter(params: dict, rng, std: float) -> dict:
    return {k: v + rng.normal(0.0, std, v.shape) for k, v in params.items()}


def check_resampler(seed: int, tol: float = 1e-3) -> GradReport:
    rng = np.random.default_rng(seed)
    params = _jitter(resampler.init_params(rng, M, D, D_A), rng, 0.4)
    audio = rng.uniform(-4, 4, (B, T, D_A))
    proj = rng.normal(size=(B, M, D))

    def fn(p):
        out, cache = resampler.forward(p, audio)
        return float(np.sum(out * proj)), resampler.backward(p, cache, proj)

    names = [n for n in resampler.PARAM_NAMES if n != "empty"]
    return grad_check(fn, params, tol=tol, names=names, op=f"resampler seed={seed}")


def check_resampler_empty(seed: int, tol: float = 1e-3) -> GradReport:
    rng = np.random.default_rng(seed)
    params = _jitter(resampler.init_params(rng, M, D, D_A), rng, 0.4)
    audio = np.zeros((B, 0, D_A))
    proj = rng.normal(size=(B, M, D))

    def fn(p):
        out, cache = resampler.forward(p, audio)
        return float(np.sum(out * proj)), resampler.backward(p, cache, proj)

    return grad_check(fn, params, tol=tol, op=f"resampler/no-audio seed={seed}")


def check_gft(seed: int, n_layers: int, tol: float = 1e-3) -> GradReport:
    rng = np.random.default_rng(seed)
    params = _jitter(gft.init_params(rng, n_layers, D, std=0.3), rng, 0.3)
    frames = rng.uniform(-4, 4, (B, N, D))
    audio = rng.uniform(-4, 4, (B, M, D))
    proj = rng.normal(size=(B, D))

    def fn(p):
        out, cache = gft.forward(p, frames, audio)
        grads, _ = gft.backward(p, cache, proj)
        return float(np.sum(out * proj)), grads

    return grad_check(fn, params, tol=tol, op=f"gft L={n_layers} seed={seed}")


def check_avt(seed: int, tol: float = 1e-3) -> GradReport:
    rng = np.random.default_rng(seed)
    params = _jitter(avt.init_params(rng, D, hidden=H, std=0.3), rng, 0.1)
    f_av = rng.uniform(-4, 4, (B, D))
    text = rng.uniform(-4, 4, (B, 4, D))
    proj = rng.normal(size=(B, D))

    def fn(p):
        cq, cache = avt.forward(p, f_av, text)
        grads, _ = avt.backward(p, cache, proj)
        return float(np.sum(cq.f_avt * proj)), grads

    return grad_check(fn, params, tol=tol, op=f"avt seed={seed}")


def check_loss_tau(seed: int, tol: float = 1e-3) -> GradReport:
    """InfoNCE through similarity_matrix, w.r.t. queries, targets and log_tau."""
    rng = np.random.default_rng(seed)
    batch = 4
    q = rng.normal(size=(batch, D))
    t = rng.normal(size=(batch, D))
    params = {"q": q / np.linalg.norm(q, axis=1, keepdims=True),
              "t": t / np.linalg.norm(t, axis=1, keepdims=True),
              "log_tau": np.array([np.log(rng.uniform(0.2, 1.0))])}

    def fn(p):
        loss, dq, dt, dlt = objective.loss_and_grads(p["q"], p["t"], p["log_tau"])
        return loss, {"q": dq, "t": dt, "log_tau": dlt}

    return grad_check(fn, params, tol=tol, op=f"infonce+tau seed={seed}")


def check_end_to_end(seed: int, tol: float = 1e-3) -> GradReport:
    rng = np.random.default_rng(seed)
    config = ModelConfig(dim=D, audio_dim=D_A, n_queries=M, n_layers=2, avt_hidden=H, init_std=0.3)
    base = init_params(config, seed)
    tensors = _jitter(base.tensors, rng, 0.2)
    tensors["log_tau"] = np.array([np.log(0.5)])
    batch = (rng.uniform(-4, 4, (B, N, D)), rng.uniform(-4, 4, (B, T, D_A)), rng.uniform(-4, 4, (B, 4, D)),
             rng.uniform(-4, 4, (B, N, D)), rng.uniform(-4, 4, (B, T, D_A)))

    def fn(p):
        return batch_loss(FusionParams(config, dict(p)), *batch)

    return grad_check(fn, tensors, tol=tol, names=base.trainable_names(), op=f"end-to-end seed={seed}")


def run_suite(seeds=range(5), tol: float = 1e-3, end_to_end: bool = True) -> list[GradReport]:
    reports = []
    for s in seeds:
        reports.append(check_resampler(s, tol))
        reports.append(check_gft(s, 1, tol))
        reports.append(check_gft(s, 2, tol))
        reports.append(check_avt(s, tol))
        reports.append(check_loss_tau(s, tol))
    if end_to_end:
        reports.append(check_resampler_empty(0, tol))
        reports.append(check_end_to_end(0, tol))
    return reports
