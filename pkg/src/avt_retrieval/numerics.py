"""Dense linear algebra primitives and finite-difference gradient checking.

Everything here works on float64 numpy arrays. Training and gradient checks
run in double precision; tensors only drop to float32 when written to disk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

EPS = 1e-12


class ShapeError(ValueError):
    """Raised when tensor dimensions do not line up."""


class DegenerateVectorError(ValueError):
    """Raised when a vector is too close to zero to normalize."""


class NumericsError(ArithmeticError):
    """Raised when an analytic gradient is not finite."""


def as_matrix(x, name: str = "tensor") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be rank-2, got shape {arr.shape}")
    return arr


def matmul(a, b) -> np.ndarray:
    """Matrix product of two rank-2 tensors.

    Backed by numpy's BLAS gemm, which is bit-reproducible for identical
    inputs at a fixed thread count.
    """
    a = as_matrix(a, "A")
    b = as_matrix(b, "B")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax_rows(m) -> np.ndarray:
    return softmax(as_matrix(m, "M"), axis=1)


def softmax_backward(p: np.ndarray, dp: np.ndarray, axis: int = -1) -> np.ndarray:
    """Gradient through softmax given its output ``p`` and upstream ``dp``."""
    return p * (dp - np.sum(dp * p, axis=axis, keepdims=True))


def logsumexp(x: np.ndarray, axis: int = -1) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    return np.squeeze(m, axis=axis) + np.log(np.sum(np.exp(x - m), axis=axis))


def sigmoid(x):
    """Logistic function, evaluated without overflow for large |x|."""
    if np.isscalar(x):
        if x >= 0:
            return 1.0 / (1.0 + math.exp(-x))
        e = math.exp(x)
        return e / (1.0 + e)
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def l2_normalize(v, eps: float = EPS) -> np.ndarray:
    """Scale ``v`` (or each row of a batch) to unit Euclidean norm."""
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norm <= eps):
        raise DegenerateVectorError("cannot normalize a (near-)zero vector")
    return v / norm


def l2_normalize_backward(v: np.ndarray, dout: np.ndarray) -> np.ndarray:
    """Gradient of ``v / |v|`` (row-wise) with respect to ``v``."""
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    u = v / norm
    return (dout - u * np.sum(dout * u, axis=-1, keepdims=True)) / norm


def cosine_similarity(u, v, eps: float = EPS) -> float:
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu <= eps or nv <= eps:
        raise DegenerateVectorError("cosine similarity of a zero vector")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def cosine_matrix(a: np.ndarray, b: np.ndarray, eps: float = EPS) -> np.ndarray:
    """All-pairs cosine similarity between rows of ``a`` and rows of ``b``."""
    a = l2_normalize(a, eps)
    b = l2_normalize(b, eps)
    return np.clip(a @ b.T, -1.0, 1.0)


@dataclass
class GradReport:
    op: str
    max_rel_error: float
    per_param: list[tuple[str, float]] = field(default_factory=list)
    tol: float = 1e-3

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.op}: max rel err {self.max_rel_error:.2e} (tol {self.tol:g})"


def relative_error(analytic, numeric) -> np.ndarray:
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return np.abs(analytic - numeric) / scale


LossAndGrads = Callable[[Mapping[str, np.ndarray]], "tuple[float, Mapping[str, np.ndarray]]"]


def grad_check(
    fn: LossAndGrads,
    params: Mapping[str, np.ndarray],
    tol: float = 1e-3,
    step: float = 1e-4,
    names=None,
    op: str = "op",
) -> GradReport:
    """Compare analytic gradients of a scalar function to central differences.

    ``fn(params)`` must return ``(loss, grads)`` where ``grads`` maps parameter
    names to arrays shaped like the parameters. Every scalar entry of the
    checked parameters is perturbed by ``±step``.
    """
    work = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
    _, grads = fn(work)
    names = list(work) if names is None else list(names)

    report = GradReport(op=op, max_rel_error=0.0, tol=tol)
    for name in names:
        analytic = np.asarray(grads.get(name, np.zeros_like(work[name])), dtype=np.float64)
        if not np.all(np.isfinite(analytic)):
            raise NumericsError(f"non-finite analytic gradient for {op}:{name}")
        if analytic.shape != work[name].shape:
            raise ShapeError(f"gradient for {name} has shape {analytic.shape}, expected {work[name].shape}")
        numeric = np.zeros_like(analytic)
        flat = work[name].reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            plus, _ = fn(work)
            flat[i] = orig - step
            minus, _ = fn(work)
            flat[i] = orig
            num_flat[i] = (plus - minus) / (2.0 * step)
        err = float(np.max(relative_error(analytic, numeric))) if analytic.size else 0.0
        report.per_param.append((name, err))
        report.max_rel_error = max(report.max_rel_error, err)
    return report
