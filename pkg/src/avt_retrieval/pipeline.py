"""Clip-level embedding, redundancy reduction and two-band pair mining.

A clip is described by two vectors: the mean of its frame embeddings (E_v)
and the text embedding of its audio caption (E_a). Similarities are cosine.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .numerics import cosine_matrix

VISUAL_SIMILAR = "visual-similar/audio-differ"
VISUAL_DIFFER = "visual-differ/audio-similar"
BANDS = (VISUAL_SIMILAR, VISUAL_DIFFER)


@dataclass
class ClipRecord:
    id: str
    e_v: np.ndarray
    e_a: np.ndarray

    def __post_init__(self):
        self.e_v = np.asarray(self.e_v, dtype=np.float64).ravel()
        self.e_a = np.asarray(self.e_a, dtype=np.float64).ravel()
        if not np.any(self.e_v) or not np.any(self.e_a):
            raise ValueError(f"clip {self.id}: embeddings must be non-zero")


@dataclass
class CandidatePair:
    id_a: str
    id_b: str
    s_v: float
    s_a: float
    band: str

    def to_row(self) -> dict:
        # caption and modification-text slots are filled by external captioning
        return {
            "id_a": self.id_a, "id_b": self.id_b, "s_v": self.s_v, "s_a": self.s_a, "band": self.band,
            "video_caption_a": None, "video_caption_b": None,
            "audio_caption_a": None, "audio_caption_b": None,
            "modification": {"obj": None, "act": None, "att": None, "audm": None},
        }


@dataclass(frozen=True)
class Band:
    name: str
    v_range: tuple  # open interval (lo, hi)
    a_range: tuple


@dataclass(frozen=True)
class BandConfig:
    bands: tuple = field(default_factory=lambda: (
        Band(VISUAL_SIMILAR, (0.92, 0.96), (0.0, 0.85)),
        Band(VISUAL_DIFFER, (0.85, 0.88), (0.95, 1.0)),
    ))
    combine: str = "and"

    def __post_init__(self):
        if self.combine not in ("and", "or"):
            raise ValueError("combine must be 'and' or 'or'")


def clip_embedding(frames) -> np.ndarray:
    """Column mean of per-frame embeddings, deliberately not renormalized."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise ValueError("clip_embedding needs at least one frame row")
    return frames.mean(axis=0)


def _inside(x, lo, hi):
    return (x > lo) & (x < hi)


def classify_pair(s_v: float, s_a: float, bands: BandConfig = BandConfig()):
    """Name of the first band the similarities fall into, else None."""
    b = int(band_labels(s_v, s_a, bands))
    return bands.bands[b].name if b >= 0 else None


def band_labels(s_v, s_a, bands: BandConfig = BandConfig()) -> np.ndarray:
    """Index of the first matching band per pair, -1 where none matches."""
    s_v, s_a = np.asarray(s_v), np.asarray(s_a)
    label = np.full(s_v.shape, -1)
    for b, band in reversed(list(enumerate(bands.bands))):
        v_ok = _inside(s_v, *band.v_range)
        a_ok = _inside(s_a, *band.a_range)
        label[(v_ok & a_ok) if bands.combine == "and" else (v_ok | a_ok)] = b
    return label


def similarity_matrices(records):
    ev = np.stack([r.e_v for r in records])
    ea = np.stack([r.e_a for r in records])
    return cosine_matrix(ev, ev), cosine_matrix(ea, ea)


def dedup(records, theta_v: float = 0.92, theta_a: float = 0.96):
    """Greedy first-wins removal of clips similar in both video and audio.

    A clip is dropped iff an earlier retained clip has video similarity above
    ``theta_v`` and audio-caption similarity above ``theta_a``.
    """
    if not (0.0 < theta_v < 1.0 and 0.0 < theta_a < 1.0):
        raise ValueError("thresholds must lie in (0, 1)")
    records = list(records)
    if not records:
        return []
    sv, sa = similarity_matrices(records)
    return [records[i] for i in retained_indices(sv, sa, theta_v, theta_a)]


def retained_indices(sv, sa, theta_v: float = 0.92, theta_a: float = 0.96) -> list[int]:
    """Greedy first-wins scan over precomputed similarity matrices."""
    dup = (np.asarray(sv) > theta_v) & (np.asarray(sa) > theta_a)
    kept = []
    for i in range(dup.shape[0]):
        if not dup[i, kept].any():
            kept.append(i)
    return kept


def mine_pairs(records, bands: BandConfig = BandConfig()):
    """All unordered pairs that land in a mining band, sorted by (band, ids)."""
    records = list(records)
    if len(records) < 2:
        return []
    sv, sa = similarity_matrices(records)
    iu, ju = np.triu_indices(len(records), k=1)
    pv, pa = sv[iu, ju], sa[iu, ju]
    label = band_labels(pv, pa, bands)
    order = {band.name: b for b, band in enumerate(bands.bands)}
    pairs = []
    for k in np.flatnonzero(label >= 0):
        a, b = records[iu[k]].id, records[ju[k]].id
        if b < a:
            a, b = b, a
        pairs.append(CandidatePair(a, b, float(pv[k]), float(pa[k]), bands.bands[label[k]].name))
    pairs.sort(key=lambda p: (order[p.band], p.id_a, p.id_b))
    return pairs


def random_clips(n: int, dim: int = 64, n_frames: int = 8, dup_rate: float = 0.15,
                 near_rate: float = 0.3, seed: int = 0):
    """Clips with planted near-duplicates and pairs aimed at both mining bands.

    A perturbation of relative size t gives cosine near 1/sqrt(1 + t^2), so
    the ranges below straddle the default band edges. Returns
    ``(ids, frames, caption_embeddings)`` with frames (n, n_frames, dim) and
    captions (n, dim).
    """
    rng = np.random.default_rng(seed)
    base_v = rng.standard_normal((n, dim))
    base_a = rng.standard_normal((n, dim))
    for i in range(1, n):
        r = rng.random()
        j = int(rng.integers(0, i))
        if r < dup_rate:
            t_v, t_a = 0.1, 0.1
        elif r < dup_rate + near_rate / 2:
            t_v, t_a = rng.uniform(0.25, 0.45), rng.uniform(0.6, 1.5)
        elif r < dup_rate + near_rate:
            t_v, t_a = rng.uniform(0.5, 0.65), rng.uniform(0.05, 0.35)
        else:
            continue
        base_v[i] = base_v[j] + t_v * rng.standard_normal(dim)
        base_a[i] = base_a[j] + t_a * rng.standard_normal(dim)
    frames = base_v[:, None, :] + 0.05 * rng.standard_normal((n, n_frames, dim))
    width = len(str(n))
    ids = [f"c{i:0{width}d}" for i in range(n)]
    return ids, frames, base_a


class RedundancyFilter(TransformerMixin, BaseEstimator):
    """Drop clips that duplicate an earlier clip in both modalities."""

    def __init__(self, theta_v=0.92, theta_a=0.96):
        self.theta_v = theta_v
        self.theta_a = theta_a

    def fit(self, X, y=None):
        kept = dedup(X, self.theta_v, self.theta_a)
        self.retained_ids_ = [r.id for r in kept]
        self.n_removed_ = len(list(X)) - len(kept)
        return self

    def transform(self, X):
        return dedup(X, self.theta_v, self.theta_a)


class PairMiner(BaseEstimator):
    """Mine visual-similar/audio-differ and visual-differ/audio-similar pairs."""

    def __init__(self, bands=None, combine="and"):
        self.bands = bands
        self.combine = combine

    def _config(self):
        base = BandConfig() if self.bands is None else BandConfig(tuple(self.bands))
        return BandConfig(base.bands, self.combine)

    def fit(self, X, y=None):
        self.pairs_ = mine_pairs(X, self._config())
        return self

    def transform(self, X):
        return mine_pairs(X, self._config())

    def fit_transform(self, X, y=None):
        return self.fit(X).pairs_
