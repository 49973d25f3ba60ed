"""Symmetric in-batch InfoNCE with a learnable log-temperature."""

from __future__ import annotations

import math

import numpy as np

from .numerics import as_matrix, logsumexp, softmax

DEFAULT_TAU = 0.07


class BatchTooSmallError(ValueError):
    pass


def init_log_tau(tau: float = DEFAULT_TAU) -> np.ndarray:
    return np.array([math.log(tau)])


def similarity_matrix(queries, targets, tau: float) -> np.ndarray:
    """S[i, j] = q_i . t_j / tau over unit-norm rows."""
    q = as_matrix(queries, "Q")
    t = as_matrix(targets, "T")
    if q.shape != t.shape:
        raise ValueError(f"query/target batches differ: {q.shape} vs {t.shape}")
    if q.shape[0] < 2:
        raise BatchTooSmallError("InfoNCE needs at least two pairs per batch")
    if tau <= 0:
        raise ValueError("temperature must be positive")
    return (q @ t.T) / tau


def info_nce(scores) -> float:
    """Mean of query->target and target->query cross-entropy on the diagonal."""
    s = as_matrix(scores, "S")
    diag = np.diag(s)
    rows = logsumexp(s, axis=1) - diag
    cols = logsumexp(s, axis=0) - diag
    return float((rows.sum() + cols.sum()) / (2 * s.shape[0]))


def info_nce_grad(scores) -> np.ndarray:
    s = as_matrix(scores, "S")
    n = s.shape[0]
    eye = np.eye(n)
    return (softmax(s, axis=1) - eye + softmax(s, axis=0) - eye) / (2 * n)


def loss_and_grads(queries, targets, log_tau):
    """InfoNCE over unit rows plus gradients for queries, targets and log_tau."""
    log_tau = float(np.asarray(log_tau).reshape(-1)[0])
    tau = math.exp(log_tau)
    s = similarity_matrix(queries, targets, tau)
    loss = info_nce(s)
    ds = info_nce_grad(s)
    dq = ds @ targets / tau
    dt = ds.T @ queries / tau
    dlog_tau = -float(np.sum(ds * s))
    return loss, dq, dt, np.array([dlog_tau])
