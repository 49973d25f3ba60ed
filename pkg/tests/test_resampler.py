import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from avt_retrieval import gradcheck, resampler
from avt_retrieval.numerics import ShapeError


def _params(seed, m=3, d=6, d_a=5):
    return resampler.init_params(np.random.default_rng(seed), m, d, d_a, std=0.5)


@given(st.integers(0, 1000), st.integers(1, 9))
def test_output_shape(seed, t):
    p = _params(seed)
    audio = np.random.default_rng(seed).normal(size=(t, 5))
    out, _ = resampler.forward(p, audio)
    assert out.shape == (3, 6)


def test_query_permutation_permutes_rows(rng):
    p = _params(1)
    audio = rng.normal(size=(7, 5))
    perm = [2, 0, 1]
    q = dict(p, queries=p["queries"][perm])
    assert np.allclose(resampler.forward(q, audio)[0], resampler.forward(p, audio)[0][perm])


def test_single_token_ignores_queries(rng):
    p = _params(2)
    token = rng.normal(size=(1, 5))
    expected = (token @ p["wv"]) @ p["wo"]
    out, _ = resampler.forward(p, token)
    assert np.allclose(out, np.repeat(expected, 3, axis=0), atol=1e-12)


def test_token_order_invariance(rng):
    p = _params(3)
    audio = rng.normal(size=(6, 5))
    shuffled = audio[rng.permutation(6)]
    assert np.allclose(resampler.forward(p, audio)[0], resampler.forward(p, shuffled)[0], atol=1e-12)


def test_empty_audio():
    p = _params(4)
    with pytest.raises(resampler.EmptyAudioError):
        resampler.forward(p, np.zeros((0, 5)), allow_empty=False)
    out, _ = resampler.forward(p, np.zeros((0, 5)))
    assert np.allclose(out, resampler.forward(p, p["empty"])[0])


def test_width_mismatch():
    with pytest.raises(ShapeError):
        resampler.forward(_params(0), np.zeros((2, 4)))


def test_batched_matches_single(rng):
    p = _params(5)
    audio = rng.normal(size=(4, 6, 5))
    batched, _ = resampler.forward(p, audio)
    for i in range(4):
        assert np.allclose(batched[i], resampler.forward(p, audio[i])[0])


@pytest.mark.parametrize("seed", range(5))
def test_gradients(seed):
    assert gradcheck.check_resampler(seed).passed


def test_empty_token_gradient():
    assert gradcheck.check_resampler_empty(0).passed
