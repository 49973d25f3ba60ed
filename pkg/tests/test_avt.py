import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from avt_retrieval import avt, gradcheck
from avt_retrieval.numerics import DegenerateVectorError, ShapeError


def _random_inputs(rng, d=6, b=None):
    lead = () if b is None else (b,)
    return rng.normal(size=lead + (d,)), rng.normal(size=lead + (4, d))


def _params(seed, d=6, h=8, std=0.3):
    p = avt.init_params(np.random.default_rng(seed), d, h, std)
    p["w2"] = np.random.default_rng(seed + 1).normal(0, std, p["w2"].shape)
    return p


def test_untrained_output_layer_gives_half_weights(rng):
    p = avt.init_params(rng, 6, 8)
    f_av, text = _random_inputs(rng)
    assert np.allclose(avt.predict_weights(p, f_av, *text), 0.5)


def test_zero_mlp_gives_half_weights(rng):
    p = {k: np.zeros_like(v) for k, v in _params(0).items()}
    assert np.array_equal(avt.predict_weights(p, *_flat(rng)), np.full(5, 0.5))


def _flat(rng):
    f_av, text = _random_inputs(rng)
    return (f_av, *text)


def test_saturated_bias_selects_f_av(rng):
    p = {k: np.zeros_like(v) for k, v in _params(0).items()}
    p["b2"] = np.array([10.0, -10, -10, -10, -10])
    assert np.allclose(avt.predict_weights(p, *_flat(rng)), [1, 0, 0, 0, 0], atol=1e-4)


def test_order_sensitivity(rng):
    p = _params(1)
    f_av, t_obj, t_act, t_att, t_audm = _flat(rng)
    a = avt.predict_weights(p, f_av, t_obj, t_act, t_att, t_audm)
    b = avt.predict_weights(p, f_av, t_act, t_obj, t_att, t_audm)
    assert not np.allclose(a, b)


def test_compose_examples():
    z = np.zeros(2)
    out = avt.compose([1.0, 0.0], [0.0, 1.0], z, z, z, [0.5, 0.25, 0.5, 0.5, 0.5])
    assert np.allclose(out, np.array([0.5, 0.25]) / np.hypot(0.5, 0.25), atol=1e-12)
    assert np.allclose(out, [0.8944, 0.4472], atol=1e-4)
    f_av = np.array([0.6, 0.8])
    assert np.allclose(avt.compose(f_av, [3.0, 1], [2.0, 2], [1.0, 5], [4.0, 4], [1, 0, 0, 0, 0]), f_av)


def test_half_weights_equal_normalized_mean(rng):
    parts = _flat(rng)
    mean = np.mean(parts, axis=0)
    assert np.allclose(avt.compose(*parts, np.full(5, 0.5)), mean / np.linalg.norm(mean))


@given(st.integers(0, 10_000), st.floats(0.01, 100))
def test_weight_scale_invariance(seed, c):
    rng = np.random.default_rng(seed)
    parts = _flat(rng)
    w = rng.uniform(0.05, 0.95, 5)
    assert np.allclose(avt.compose(*parts, c * w), avt.compose(*parts, w), atol=1e-9)


def test_compose_degenerate():
    z = np.zeros(3)
    with pytest.raises(DegenerateVectorError):
        avt.compose(z, z, z, z, z, np.full(5, 0.5))


def test_width_mismatch(rng):
    with pytest.raises(ShapeError):
        avt.predict_weights(_params(0), rng.normal(size=6), *rng.normal(size=(4, 5)))


def test_forward_unit_norm_and_weight_range(rng):
    p = _params(2)
    f_av, text = _random_inputs(rng, b=7)
    cq, _ = avt.forward(p, f_av, text)
    assert np.allclose(np.linalg.norm(cq.f_avt, axis=1), 1.0, atol=1e-6)
    assert np.all((cq.weights > 0) & (cq.weights < 1))


def test_missing_component_gets_zero_weight(rng):
    p = _params(3)
    f_av, text = _random_inputs(rng)
    text[2] = 0.0
    w = avt.predict_weights(p, f_av, *text)
    assert w[3] == 0.0 and np.all(w[[0, 1, 2, 4]] > 0)


def test_ablation_equals_composition_over_remaining(rng):
    p = _params(4)
    f_av, text = _random_inputs(rng)
    dropped = avt.ablate(text, ("act",))
    cq, _ = avt.forward(p, f_av, dropped)
    w = avt.predict_weights(p, f_av, *dropped)
    assert w[2] == 0.0
    keep = [0, 1, 3, 4]
    inputs = np.concatenate([f_av[None], text])[keep]
    expected = (w[keep, None] * inputs).sum(axis=0)
    assert np.allclose(cq.f_avt, expected / np.linalg.norm(expected))


@pytest.mark.parametrize("seed", range(5))
def test_gradients(seed):
    assert gradcheck.check_avt(seed).passed
