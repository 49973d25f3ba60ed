import json
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from avt_retrieval import synth
from avt_retrieval.embedding_io import (CheckpointError, ConfigMismatchError, LoadError, load_checkpoint, load_clips,
                                        load_dataset, read_manifest, read_tensor, save_checkpoint, save_clips,
                                        save_dataset, write_manifest, write_tensor)
from avt_retrieval.model import ModelConfig, init_params

from conftest import tiny_config


def test_tensor_layout(tmp_path):
    arr = np.arange(6, dtype=np.float32).reshape(2, 3)
    write_tensor(tmp_path / "t.avct", arr)
    blob = (tmp_path / "t.avct").read_bytes()
    assert blob[:5] == b"AVCT1"
    assert struct.unpack_from("<QQQQ", blob, 5) == (1, 2, 2, 3)
    assert blob[37:] == arr.astype("<f4").tobytes()
    assert np.array_equal(read_tensor(tmp_path / "t.avct"), arr)


def test_tensor_rejects_bad_files(tmp_path):
    write_tensor(tmp_path / "t.avct", np.ones((2, 2)))
    blob = (tmp_path / "t.avct").read_bytes()
    (tmp_path / "short.avct").write_bytes(blob[:-1])
    (tmp_path / "magic.avct").write_bytes(b"XXXX" + blob[4:])
    for name in ("short.avct", "magic.avct"):
        with pytest.raises(LoadError):
            read_tensor(tmp_path / name)


def test_dataset_round_trip(tmp_path, tiny_dataset):
    manifest = save_dataset(tiny_dataset, tmp_path / "d")
    loaded = load_dataset(tmp_path / "d")
    assert manifest.name == "manifest.jsonl"
    assert [t.id for t in loaded.triplets] == [t.id for t in tiny_dataset.triplets]
    assert len(loaded.gallery) >= len(loaded.triplets)
    for a, b in zip(loaded.triplets, tiny_dataset.triplets):
        assert np.array_equal(a.text, b.text) and np.array_equal(a.query_audio, b.query_audio)
        assert a.target is not None and a.target.id == b.target_id
    assert loaded.meta["active"] == tiny_dataset.meta["active"]


def test_three_triplet_manifest(tmp_path):
    ds = synth.generate(tiny_config(n_train=2, n_test=1, gallery_extra=2), seed=0)
    save_dataset(ds, tmp_path)
    loaded = load_dataset(tmp_path / "manifest.jsonl", workers=3)
    assert len(loaded.triplets) == 3 and len(loaded.gallery) >= 3


def test_missing_tensor_names_record(tmp_path, tiny_dataset):
    save_dataset(tiny_dataset, tmp_path)
    victim = tiny_dataset.triplets[4].id
    (tmp_path / "triplets" / f"{victim}.text.avct").unlink()
    with pytest.raises(LoadError, match=victim):
        load_dataset(tmp_path)


def test_wrong_text_width_is_dim_mismatch(tmp_path, tiny_dataset):
    save_dataset(tiny_dataset, tmp_path)
    victim = tiny_dataset.triplets[2].id
    write_tensor(tmp_path / "triplets" / f"{victim}.text.avct", np.ones((4, 24)))
    with pytest.raises(LoadError, match=f"{victim}.*dim mismatch"):
        load_dataset(tmp_path)


def test_duplicate_and_dangling_ids(tmp_path, tiny_dataset):
    save_dataset(tiny_dataset, tmp_path)
    rows = read_manifest(tmp_path / "manifest.jsonl")
    write_manifest(tmp_path / "dup.jsonl", rows + [rows[-1]])
    with pytest.raises(LoadError, match="duplicate"):
        load_dataset(tmp_path / "dup.jsonl")
    rows[-1] = dict(rows[-1], target_id="nowhere")
    write_manifest(tmp_path / "dangling.jsonl", rows)
    with pytest.raises(LoadError, match="nowhere"):
        load_dataset(tmp_path / "dangling.jsonl")


def test_non_finite_and_bad_json(tmp_path, tiny_dataset):
    save_dataset(tiny_dataset, tmp_path)
    g = tiny_dataset.gallery[0].id
    write_tensor(tmp_path / "gallery" / f"{g}.audio.avct", np.full((4, 16), np.nan))
    with pytest.raises(LoadError, match=g):
        load_dataset(tmp_path)
    (tmp_path / "bad.jsonl").write_text('{"id": "x"\n')
    with pytest.raises(LoadError):
        load_dataset(tmp_path / "bad.jsonl")
    with pytest.raises(LoadError, match="not found"):
        load_dataset(tmp_path / "absent")


def test_clip_round_trip(tmp_path, rng):
    frames, captions = rng.normal(size=(3, 4, 5)), rng.normal(size=(3, 5))
    save_clips(["a", "b", "c"], frames, captions, tmp_path)
    clips = load_clips(tmp_path)
    assert [c[0] for c in clips] == ["a", "b", "c"]
    assert np.allclose(clips[1][1], frames[1].astype(np.float32)) and clips[1][2].shape == (5,)


SMALL = ModelConfig(dim=4, audio_dim=5, n_queries=2, n_layers=2, avt_hidden=3)


@given(st.integers(0, 2**32 - 1))
def test_checkpoint_round_trip_is_bit_exact(tmp_path_factory, seed):
    path = tmp_path_factory.mktemp("ck") / "p.avck"
    p = init_params(SMALL, seed)
    rng = np.random.default_rng(seed)
    p.tensors = {k: v + rng.normal(size=v.shape) * 10.0 ** rng.integers(-8, 8) for k, v in p.tensors.items()}
    save_checkpoint(p, path, step=seed % 1000)
    q, step = load_checkpoint(path, expected=SMALL)
    assert q == p and step == seed % 1000


def test_checkpoint_round_trip_100_draws(tmp_path):
    for seed in range(100):
        p = init_params(SMALL, seed)
        save_checkpoint(p, tmp_path / "p.avck", step=seed)
        q, _ = load_checkpoint(tmp_path / "p.avck")
        assert all(p.tensors[k].tobytes() == q.tensors[k].tobytes() for k in p.tensors)


def test_checkpoint_truncated_by_one_byte(tmp_path):
    save_checkpoint(init_params(SMALL, 0), tmp_path / "p.avck")
    blob = (tmp_path / "p.avck").read_bytes()
    (tmp_path / "t.avck").write_bytes(blob[:-1])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(tmp_path / "t.avck")


def test_checkpoint_corruption_and_version(tmp_path):
    save_checkpoint(init_params(SMALL, 0), tmp_path / "p.avck")
    blob = bytearray((tmp_path / "p.avck").read_bytes())
    blob[-3] ^= 0xFF
    (tmp_path / "c.avck").write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="checksum"):
        load_checkpoint(tmp_path / "c.avck")
    hlen = struct.unpack_from("<Q", blob, 5)[0]
    header = json.loads(bytes(blob[13:13 + hlen]))
    header["version"] = 99
    hb = json.dumps(header, sort_keys=True).encode()
    (tmp_path / "v.avck").write_bytes(b"AVCK1" + struct.pack("<Q", len(hb)) + hb + bytes(blob[13 + hlen:]))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "v.avck")
    with pytest.raises(CheckpointError, match="not found"):
        load_checkpoint(tmp_path / "missing.avck")


def test_checkpoint_layer_mismatch(tmp_path):
    save_checkpoint(init_params(SMALL, 0), tmp_path / "p.avck")
    four = ModelConfig.from_dict(dict(SMALL.to_dict(), n_layers=4))
    with pytest.raises(ConfigMismatchError, match="n_layers"):
        load_checkpoint(tmp_path / "p.avck", expected=four)
