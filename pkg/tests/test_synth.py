import filecmp

import numpy as np
import pytest

from avt_retrieval import retrieval, synth
from avt_retrieval.embedding_io import load_dataset
from avt_retrieval.numerics import cosine_similarity

from conftest import tiny_config


@pytest.mark.parametrize("seed", [0, 1, 7])
def test_noiseless_ideal_query_recovers_target(seed):
    ds = synth.generate(tiny_config(noise=0.0), seed)
    ideal = synth.ideal_queries(ds)
    for q, t in zip(ideal, ds.triplets):
        assert cosine_similarity(q, t.target_frames.astype(np.float64).mean(axis=0)) == pytest.approx(1.0, abs=1e-5)


def test_ideal_query_retrieval_at_default_noise():
    cfg = synth.learnable_config(n_train=150, n_test=50, gallery_extra=100)
    ds = synth.generate(cfg, seed=5)
    ideal = synth.ideal_queries(ds)
    gallery = np.stack([g.frames.astype(np.float64).mean(axis=0) for g in ds.gallery])
    gallery /= np.linalg.norm(gallery, axis=1, keepdims=True)
    ids = [g.id for g in ds.gallery]
    ranks = retrieval.gt_ranks(ideal / np.linalg.norm(ideal, axis=1, keepdims=True), gallery,
                               [ids.index(t.target_id) for t in ds.triplets])
    assert retrieval.recall_at_k(ranks, 1) == 100.0


def test_same_seed_gives_identical_files(tmp_path):
    cfg = tiny_config()
    synth.synth_generate(cfg, 11, tmp_path / "a")
    synth.synth_generate(cfg, 11, tmp_path / "b")
    cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
    files = [p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file()]
    assert files and all(filecmp.cmp(tmp_path / "a" / f, tmp_path / "b" / f, shallow=False) for f in files)
    assert not cmp.left_only and not cmp.right_only


def test_generator_output_always_loads(tmp_path):
    for seed in range(3):
        synth.synth_generate(tiny_config(n_audio_tokens=seed + 1), seed, tmp_path / str(seed))
        load_dataset(tmp_path / str(seed))


def test_splits_and_active_components(tiny_dataset):
    assert len(tiny_dataset.split("train")) == 24 and len(tiny_dataset.split("test")) == 8
    gallery = tiny_dataset.eval_gallery("test")
    assert len(gallery) == 8 + 6
    mask = synth.active_mask(tiny_dataset)
    assert mask.shape == (32, 4) and np.all(mask.sum(axis=1) >= 1) and np.all(mask.sum(axis=1) <= 3)


def test_blank_captions_share_a_direction():
    ds = synth.generate(tiny_config(dim=64, audio_dim=64, n_train=60), seed=2)
    mask = synth.active_mask(ds)
    blanks = [t.text[0] for t, m in zip(ds.triplets, mask) if not m[0]]
    assert cosine_similarity(blanks[0], blanks[1]) > 0.8


def test_config_validation():
    with pytest.raises(ValueError):
        tiny_config(noise=-1.0).validate()
    with pytest.raises(ValueError):
        tiny_config(dim=4, audio_dim=4).validate()
    with pytest.raises(ValueError):
        tiny_config(share_norm={"obj": 1.0}).validate()
    assert synth.SynthConfig.from_dict(tiny_config().to_dict()) == tiny_config()
