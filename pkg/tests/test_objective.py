import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from avt_retrieval import gradcheck, objective
from avt_retrieval.numerics import grad_check

matrices = arrays(np.float64, (4, 4), elements=st.floats(-20, 20))


def _unit(rows):
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def test_similarity_examples():
    eye = np.eye(3)
    assert np.array_equal(objective.similarity_matrix(eye, eye, 1.0), eye)
    q = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert np.allclose(objective.similarity_matrix(q, q, 0.5), [[2, 0], [0, 2]])


def test_similarity_halves_when_tau_doubles(rng):
    q, t = _unit(rng.normal(size=(4, 5))), _unit(rng.normal(size=(4, 5)))
    assert np.allclose(objective.similarity_matrix(q, t, 0.2), 2 * objective.similarity_matrix(q, t, 0.4))


def test_batch_too_small():
    with pytest.raises(objective.BatchTooSmallError):
        objective.similarity_matrix(np.ones((1, 3)), np.ones((1, 3)), 1.0)


def test_info_nce_examples():
    assert objective.info_nce(np.full((2, 2), 3.0)) == pytest.approx(math.log(2))
    assert objective.info_nce(np.array([[2.0, 0], [0, 2]])) == pytest.approx(math.log1p(math.exp(-2)), abs=1e-12)
    s = np.full((3, 3), -100.0)
    np.fill_diagonal(s, 100.0)
    assert objective.info_nce(s) < 1e-6


def _brute_info_nce(s):
    b = s.shape[0]
    total = 0.0
    for i in range(b):
        total -= s[i, i] - math.log(sum(math.exp(s[i, j]) for j in range(b)))
        total -= s[i, i] - math.log(sum(math.exp(s[j, i]) for j in range(b)))
    return total / (2 * b)


@given(matrices, st.floats(-50, 50))
def test_info_nce_properties(s, c):
    loss = objective.info_nce(s)
    assert loss >= 0
    assert loss == pytest.approx(_brute_info_nce(s), rel=1e-9, abs=1e-9)
    assert objective.info_nce(s.T) == pytest.approx(loss, abs=1e-9)
    assert objective.info_nce(s + c) == pytest.approx(loss, abs=1e-9)


@given(st.integers(0, 10_000))
def test_info_nce_grad_matches_finite_differences(seed):
    s = np.random.default_rng(seed).uniform(-4, 4, (4, 4))
    report = grad_check(lambda p: (objective.info_nce(p["s"]), {"s": objective.info_nce_grad(p["s"])}),
                        {"s": s}, tol=1e-4)
    assert report.passed


@pytest.mark.parametrize("seed", range(5))
def test_loss_through_tau(seed):
    assert gradcheck.check_loss_tau(seed, tol=1e-4).passed


def test_init_log_tau():
    assert math.exp(objective.init_log_tau()[0]) == pytest.approx(0.07)
