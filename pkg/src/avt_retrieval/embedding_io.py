"""Records, on-disk tensor/manifest formats, dataset loading and checkpoints.

Tensor file layout (little-endian)::

    b"AVCT1" | u64 dtype code | u64 rank | u64 dim * rank | row-major payload

dtype code 1 is float32 (embeddings), 2 is float64.

A manifest is a JSON-lines file; each line is one triplet, gallery or clip
record with tensor paths relative to the manifest's directory.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import FusionParams, ModelConfig

TENSOR_MAGIC = b"AVCT1"
CKPT_MAGIC = b"AVCK1"
CKPT_VERSION = 1
MANIFEST_NAME = "manifest.jsonl"
DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODE_OF = {np.dtype("<f4"): 1, np.dtype("<f8"): 2}


class LoadError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


class ConfigMismatchError(CheckpointError):
    pass


@dataclass
class GalleryEntry:
    id: str
    frames: np.ndarray
    audio: np.ndarray
    split: str = "extra"


@dataclass
class TripletRecord:
    id: str
    query_frames: np.ndarray
    query_audio: np.ndarray
    text: np.ndarray  # (4, D) rows ordered obj, act, att, audm
    target_id: str
    target: GalleryEntry | None = None
    split: str = "train"

    @property
    def text_obj(self):
        return self.text[0]

    @property
    def text_act(self):
        return self.text[1]

    @property
    def text_att(self):
        return self.text[2]

    @property
    def text_audm(self):
        return self.text[3]

    @property
    def target_frames(self):
        return self.target.frames

    @property
    def target_audio(self):
        return self.target.audio


@dataclass
class Dataset:
    triplets: list[TripletRecord]
    gallery: list[GalleryEntry]
    meta: dict = field(default_factory=dict)

    def split(self, name: str) -> list[TripletRecord]:
        return [t for t in self.triplets if t.split == name]

    def eval_gallery(self, split: str = "test") -> list[GalleryEntry]:
        """Targets of ``split`` triplets followed by the extra distractors."""
        wanted = {t.target_id for t in self.split(split)}
        return [g for g in self.gallery if g.id in wanted or g.split == "extra"]


# -- tensors -------------------------------------------------------------------

def write_tensor(path, array, dtype="<f4") -> None:
    arr = np.ascontiguousarray(np.asarray(array), dtype=np.dtype(dtype))
    header = TENSOR_MAGIC + struct.pack("<QQ", _CODE_OF[arr.dtype], arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.tobytes(order="C"))


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:5] != TENSOR_MAGIC:
        raise LoadError(f"{path}: bad magic")
    code, rank = struct.unpack_from("<QQ", blob, 5)
    if code not in DTYPE_CODES:
        raise LoadError(f"{path}: unknown dtype code {code}")
    offset = 5 + 16
    dims = struct.unpack_from(f"<{rank}Q", blob, offset)
    offset += 8 * rank
    dtype = DTYPE_CODES[code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(blob) - offset != expected:
        raise LoadError(f"{path}: payload is {len(blob) - offset} bytes, expected {expected}")
    return np.frombuffer(blob, dtype=dtype, offset=offset).reshape(dims).copy()


# -- manifests -----------------------------------------------------------------

def write_manifest(path, rows) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_manifest(path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise LoadError(f"{path}:{lineno}: {exc}") from None
    return rows


def resolve_manifest(path) -> Path:
    p = Path(path)
    return p / MANIFEST_NAME if p.is_dir() else p


def save_dataset(dataset: Dataset, out_dir) -> Path:
    out = Path(out_dir)
    rows = []
    for g in dataset.gallery:
        write_tensor(out / "gallery" / f"{g.id}.frames.avct", g.frames)
        write_tensor(out / "gallery" / f"{g.id}.audio.avct", g.audio)
        rows.append({"id": g.id, "role": "gallery", "split": g.split,
                     "frames": f"gallery/{g.id}.frames.avct", "audio": f"gallery/{g.id}.audio.avct"})
    for t in dataset.triplets:
        base = f"triplets/{t.id}"
        write_tensor(out / f"{base}.frames.avct", t.query_frames)
        write_tensor(out / f"{base}.audio.avct", t.query_audio)
        write_tensor(out / f"{base}.text.avct", t.text)
        rows.append({"id": t.id, "role": "triplet", "split": t.split, "target_id": t.target_id,
                     "query_frames": f"{base}.frames.avct", "query_audio": f"{base}.audio.avct",
                     "text": f"{base}.text.avct"})
    if dataset.meta:
        with open(out / "meta.json", "w", encoding="utf-8") as fh:
            json.dump(dataset.meta, fh, sort_keys=True, indent=2)
    manifest = out / MANIFEST_NAME
    write_manifest(manifest, rows)
    return manifest


def save_clips(ids, frames, captions, out_dir) -> Path:
    """Write a clip manifest: per-clip frame embeddings plus a caption embedding."""
    out = Path(out_dir)
    rows = []
    for cid, f, c in zip(ids, frames, captions):
        write_tensor(out / "clips" / f"{cid}.frames.avct", f)
        write_tensor(out / "clips" / f"{cid}.caption.avct", np.asarray(c)[None, :])
        rows.append({"id": cid, "role": "clip", "frames": f"clips/{cid}.frames.avct",
                     "caption": f"clips/{cid}.caption.avct"})
    manifest = out / MANIFEST_NAME
    write_manifest(manifest, rows)
    return manifest


def load_clips(manifest_path) -> list[tuple[str, np.ndarray, np.ndarray]]:
    """``(id, frames (N, D), caption (D,))`` per clip row, in manifest order."""
    manifest = resolve_manifest(manifest_path)
    if not manifest.exists():
        raise LoadError(f"manifest not found: {manifest}")
    out = []
    for row in read_manifest(manifest):
        rid = row.get("id", "<no id>")
        if row.get("role") != "clip":
            raise LoadError(f"record {rid}: expected role 'clip', got {row.get('role')!r}")
        tensors = []
        for key in ("frames", "caption"):
            path = manifest.parent / row.get(key, "")
            if key not in row or not path.is_file():
                raise LoadError(f"record {rid}: tensor file not found: {row.get(key)}")
            try:
                tensors.append(read_tensor(path))
            except LoadError as exc:
                raise LoadError(f"record {rid}: {exc}") from None
        frames, caption = tensors
        if frames.ndim != 2 or caption.reshape(-1).shape[0] != frames.shape[1]:
            raise LoadError(f"record {rid}: frames {frames.shape} and caption {caption.shape} disagree (dim mismatch)")
        out.append((rid, frames, caption.reshape(-1)))
    return out


def load_dataset(manifest_path, workers: int = 1) -> Dataset:
    """Load and validate every record named in a manifest (manifest order)."""
    manifest = resolve_manifest(manifest_path)
    if not manifest.exists():
        raise LoadError(f"manifest not found: {manifest}")
    root = manifest.parent
    rows = read_manifest(manifest)

    def load_row(row):
        rid = row.get("id", "<no id>")
        keys = ("frames", "audio") if row.get("role") == "gallery" else ("query_frames", "query_audio", "text")
        out = {}
        for key in keys:
            if key not in row:
                raise LoadError(f"record {rid}: missing field {key!r}")
            path = root / row[key]
            if not path.exists():
                raise LoadError(f"record {rid}: tensor file not found: {row[key]}")
            try:
                out[key] = read_tensor(path)
            except LoadError as exc:
                raise LoadError(f"record {rid}: {exc}") from None
        return out

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            tensors = list(pool.map(load_row, rows))
    else:
        tensors = [load_row(r) for r in rows]

    gallery, triplets = [], []
    for row, tens in zip(rows, tensors):
        role = row.get("role")
        if role == "gallery":
            gallery.append(GalleryEntry(row["id"], tens["frames"], tens["audio"], row.get("split", "extra")))
        elif role == "triplet":
            triplets.append(TripletRecord(row["id"], tens["query_frames"], tens["query_audio"], tens["text"],
                                          row.get("target_id", ""), split=row.get("split", "train")))
        else:
            raise LoadError(f"record {row.get('id')}: unknown role {role!r}")
    meta = {}
    if (root / "meta.json").exists():
        with open(root / "meta.json", encoding="utf-8") as fh:
            meta = json.load(fh)
    dataset = Dataset(triplets, gallery, meta)
    validate_dataset(dataset)
    return dataset


def validate_dataset(dataset: Dataset) -> None:
    """Check id uniqueness, target resolution and dimension consistency."""
    by_id = {}
    for g in dataset.gallery:
        if g.id in by_id:
            raise LoadError(f"record {g.id}: duplicate gallery id")
        by_id[g.id] = g
    seen = set()
    for t in dataset.triplets:
        if t.id in seen or t.id in by_id:
            raise LoadError(f"record {t.id}: duplicate id")
        seen.add(t.id)
        if t.target_id not in by_id:
            raise LoadError(f"record {t.id}: target_id {t.target_id!r} not in gallery")
        t.target = by_id[t.target_id]

    ref = dataset.gallery[0] if dataset.gallery else None
    if ref is None:
        return
    n, d = ref.frames.shape
    d_a = ref.audio.shape[1]

    def check(rid, what, arr, cols, rows=None):
        if arr.ndim != 2 or arr.shape[1] != cols or (rows is not None and arr.shape[0] != rows):
            want = f"({rows if rows is not None else '*'}, {cols})"
            raise LoadError(f"record {rid}: {what} has shape {arr.shape}, expected {want} (dim mismatch)")
        if not np.all(np.isfinite(arr)):
            raise LoadError(f"record {rid}: {what} contains non-finite values")

    for g in dataset.gallery:
        check(g.id, "frames", g.frames, d, n)
        check(g.id, "audio", g.audio, d_a)
    for t in dataset.triplets:
        check(t.id, "query_frames", t.query_frames, d, n)
        check(t.id, "query_audio", t.query_audio, d_a)
        check(t.id, "text", t.text, d, 4)


# -- checkpoints ---------------------------------------------------------------

def save_checkpoint(params: FusionParams, path, step: int = 0) -> None:
    """Write all tensors at float64 so a reload is bit-exact."""
    names = params.names()
    arrays = [np.ascontiguousarray(params.tensors[n], dtype="<f8") for n in names]
    payload = b"".join(a.tobytes() for a in arrays)
    header = {
        "version": CKPT_VERSION,
        "config": params.config.to_dict(),
        "step": int(step),
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in zip(names, arrays)],
        "payload_bytes": len(payload),
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(CKPT_MAGIC + struct.pack("<Q", len(hbytes)) + hbytes + payload)
    os.replace(tmp, path)


def load_checkpoint(path, expected: ModelConfig | None = None) -> tuple[FusionParams, int]:
    """Returns ``(params, step)``; rejects corrupt files and mismatched configs."""
    if not Path(path).exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:5] != CKPT_MAGIC or len(blob) < 13:
        raise CheckpointError(f"{path}: not a checkpoint")
    (hlen,) = struct.unpack_from("<Q", blob, 5)
    try:
        header = json.loads(blob[13:13 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CheckpointError(f"{path}: corrupt header") from None
    if header.get("version") != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {header.get('version')}")
    payload = blob[13 + hlen:]
    if len(payload) != header["payload_bytes"]:
        raise CheckpointError(f"{path}: truncated payload ({len(payload)} of {header['payload_bytes']} bytes)")
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise CheckpointError(f"{path}: payload checksum mismatch")
    config = ModelConfig.from_dict(header["config"])
    if expected is not None:
        diffs = {k: (v, getattr(config, k)) for k, v in expected.to_dict().items() if getattr(config, k) != v}
        if diffs:
            detail = ", ".join(f"{k}: expected {a}, checkpoint has {b}" for k, (a, b) in diffs.items())
            raise ConfigMismatchError(f"{path}: config mismatch ({detail})")
    tensors = {}
    offset = 0
    for spec in header["tensors"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        tensors[spec["name"]] = np.frombuffer(payload, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        offset += 8 * count
    return FusionParams(config, tensors), int(header["step"])
