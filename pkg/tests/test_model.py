import numpy as np
import pytest

from avt_retrieval import gradcheck, model
from avt_retrieval.model import FusionParams, ModelConfig, encode_queries, encode_targets, init_params

CFG = ModelConfig(dim=6, audio_dim=7, n_queries=3, n_layers=2, avt_hidden=5)


def _closed(params):
    p = params.copy()
    for name in p.tensors:
        if name.startswith("gft.") and name.endswith(".bg"):
            p.tensors[name][:] = -30.0
    return p


def _batch(rng, b=3):
    return rng.normal(size=(b, 4, 6)), rng.normal(size=(b, 5, 7)), rng.normal(size=(b, 4, 6))


def test_closed_gate_target_is_normalized_frame_mean(rng):
    p = _closed(init_params(CFG, 0))
    frames, audio, _ = _batch(rng)
    mean = frames.mean(axis=1)
    assert np.allclose(encode_targets(p, frames, audio), mean / np.linalg.norm(mean, axis=1, keepdims=True),
                       atol=1e-6)


def test_zero_text_query_is_normalized_frame_mean(rng):
    p = _closed(init_params(CFG, 0))
    frames, audio, _ = _batch(rng)
    q, w = encode_queries(p, frames, audio, np.zeros((3, 4, 6)))
    mean = frames.mean(axis=1)
    assert np.allclose(q, mean / np.linalg.norm(mean, axis=1, keepdims=True), atol=1e-6)
    assert np.all(w[:, 1:] == 0)


def test_query_deterministic_and_differs_from_target(rng):
    p = init_params(CFG, 1)
    frames, audio, text = _batch(rng)
    a, _ = encode_queries(p, frames, audio, text)
    b, _ = encode_queries(p, frames, audio, text)
    assert a.tobytes() == b.tobytes()
    t = encode_targets(p, frames, audio)
    assert np.allclose(np.linalg.norm(t, axis=1), 1.0)
    assert not np.allclose(a, t)


def test_trainable_names_follow_fusion_choice():
    names = lambda **kw: init_params(ModelConfig(dim=6, audio_dim=7, **kw), 0).trainable_names()
    full = names()
    assert {n.split(".")[0] for n in full} == {"resampler", "gft", "avt", "log_tau"}
    assert names(av_fusion="video", text_fusion="none") == ["log_tau"]
    assert not any(n.startswith("resampler") for n in names(av_fusion="avg"))
    assert not any(n.startswith("resampler") for n in names(train_resampler=False))
    assert not any(n.startswith("avt") for n in names(text_fusion="avg"))


def test_trainable_set_is_exactly_the_module_union():
    p = init_params(CFG, 0)
    assert set(p.trainable_names()) == set(p.names())


@pytest.mark.parametrize("av,text", [("gft", "avt"), ("avg", "avg"), ("gft", "avg"), ("video", "none"),
                                     ("audio", "text"), ("gft", "none")])
def test_fusion_variants_produce_unit_queries(rng, av, text):
    p = init_params(ModelConfig(dim=6, audio_dim=7, n_queries=3, avt_hidden=5, av_fusion=av, text_fusion=text), 0)
    frames, audio, txt = _batch(rng)
    q, _ = encode_queries(p, frames, audio, txt)
    assert np.allclose(np.linalg.norm(q, axis=1), 1.0)


def test_ragged_audio_matches_per_clip(rng):
    p = init_params(CFG, 2)
    frames = rng.normal(size=(2, 4, 6))
    audio = [rng.normal(size=(3, 7)), rng.normal(size=(6, 7))]
    both = encode_targets(p, frames, audio)
    for i in range(2):
        assert np.allclose(both[i], encode_targets(p, frames[i:i + 1], audio[i][None])[0])


def test_params_equality_is_bit_exact():
    a = init_params(CFG, 0)
    b = a.copy()
    assert a == b
    b.tensors["log_tau"] = np.nextafter(b.tensors["log_tau"], 1.0)
    assert a != b


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(av_fusion="concat")
    assert ModelConfig.from_dict(CFG.to_dict()) == CFG


def test_end_to_end_gradients():
    assert gradcheck.check_end_to_end(0).passed


def test_batch_loss_covers_trainable_names(rng):
    p = init_params(CFG, 3)
    frames, audio, text = _batch(rng)
    loss, grads = model.batch_loss(p, frames, audio, text, frames + 0.1, audio)
    assert loss > 0 and set(grads) == set(p.trainable_names())
    assert isinstance(p, FusionParams)
