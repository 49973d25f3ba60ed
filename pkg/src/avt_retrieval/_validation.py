"""Input checks shared by the estimator and the command line."""

from __future__ import annotations

import numpy as np

from .embedding_io import GalleryEntry, TripletRecord


def _check_finite(rid, what, arr):
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"record {rid}: {what} contains non-finite values")


def check_triplets(X, dim=None, audio_dim=None, min_count: int = 1) -> list:
    """Return ``X`` as a list after checking types, widths and finiteness."""
    records = list(X)
    if len(records) < min_count:
        raise ValueError(f"expected at least {min_count} triplets, got {len(records)}")
    for t in records:
        if not isinstance(t, TripletRecord):
            raise TypeError(f"expected TripletRecord, got {type(t).__name__}")
        d = t.query_frames.shape[-1] if dim is None else dim
        d_a = t.query_audio.shape[-1] if audio_dim is None else audio_dim
        dim, audio_dim = d, d_a
        if t.query_frames.ndim != 2 or t.query_frames.shape[1] != d:
            raise ValueError(f"record {t.id}: query frames must be (N, {d}), got {t.query_frames.shape}")
        if t.query_audio.ndim != 2 or t.query_audio.shape[1] != d_a:
            raise ValueError(f"record {t.id}: query audio must be (T, {d_a}), got {t.query_audio.shape}")
        if t.text.shape != (4, d):
            raise ValueError(f"record {t.id}: text must be (4, {d}), got {t.text.shape}")
        for what in ("query_frames", "query_audio", "text"):
            _check_finite(t.id, what, getattr(t, what))
    return records


def check_gallery(gallery, dim=None, audio_dim=None) -> list:
    entries = list(gallery)
    if not entries:
        raise ValueError("gallery is empty")
    ids = set()
    for g in entries:
        if not isinstance(g, GalleryEntry):
            raise TypeError(f"expected GalleryEntry, got {type(g).__name__}")
        if g.id in ids:
            raise ValueError(f"record {g.id}: duplicate gallery id")
        ids.add(g.id)
        if dim is not None and (g.frames.ndim != 2 or g.frames.shape[1] != dim):
            raise ValueError(f"record {g.id}: frames must be (N, {dim}), got {g.frames.shape}")
        if audio_dim is not None and (g.audio.ndim != 2 or g.audio.shape[1] != audio_dim):
            raise ValueError(f"record {g.id}: audio must be (T, {audio_dim}), got {g.audio.shape}")
        _check_finite(g.id, "frames", g.frames)
        _check_finite(g.id, "audio", g.audio)
    return entries
