"""Exhaustive cosine ranking over a gallery and R@K / mean-rank metrics."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .embedding_io import GalleryEntry, TripletRecord
from .model import FusionParams, encode_queries, encode_targets
from .trainer import stack_batch


class EvaluationError(ValueError):
    pass


@dataclass
class RankedResult:
    query_id: str
    ordered_ids: list
    gt_rank: int


@dataclass
class MetricsTable:
    r1: float
    r5: float
    r10: float
    mnr: float
    n_queries: int = 0
    gallery_size: int = 0

    def rounded(self) -> "MetricsTable":
        return MetricsTable(round(self.r1, 1), round(self.r5, 1), round(self.r10, 1), round(self.mnr, 1),
                            self.n_queries, self.gallery_size)

    def to_json(self) -> str:
        return json.dumps(asdict(self.rounded()), sort_keys=True, indent=2) + "\n"

    def format_table(self) -> str:
        m = self.rounded()
        return ("  R@1    R@5   R@10    MnR\n"
                f"{m.r1:5.1f}  {m.r5:5.1f}  {m.r10:5.1f}  {m.mnr:5.1f}")


def ranking_order(scores: np.ndarray) -> np.ndarray:
    """Indices by descending score; equal scores keep ascending index order."""
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")


def rank(query, gallery, gallery_ids=None, target=None, query_id: str = "") -> RankedResult:
    """Rank gallery rows (unit vectors) by dot product with ``query``.

    ``target`` is the ground-truth row index or id; its 1-based rank is
    reported as ``gt_rank`` (0 when no target is given).
    """
    gallery = np.asarray(gallery, dtype=np.float64)
    if gallery.ndim != 2 or gallery.shape[0] == 0:
        raise EvaluationError("gallery is empty")
    ids = list(range(gallery.shape[0])) if gallery_ids is None else list(gallery_ids)
    order = ranking_order(gallery @ np.asarray(query, dtype=np.float64))
    ordered = [ids[i] for i in order]
    gt = 0
    if target is not None:
        gt = ordered.index(target) + 1
    return RankedResult(query_id, ordered, gt)


def gt_ranks(queries: np.ndarray, gallery: np.ndarray, targets) -> np.ndarray:
    """1-based rank of each query's target row under the same tie-break as :func:`rank`."""
    scores = np.asarray(queries) @ np.asarray(gallery).T
    targets = np.asarray(targets)
    gt = scores[np.arange(len(targets)), targets][:, None]
    cols = np.arange(scores.shape[1])[None, :]
    ahead = (scores > gt) | ((scores == gt) & (cols < targets[:, None]))
    return ahead.sum(axis=1) + 1


def _ranks_of(results) -> np.ndarray:
    ranks = np.array([r.gt_rank if isinstance(r, RankedResult) else r for r in results], dtype=np.int64)
    if ranks.size == 0:
        raise EvaluationError("no results to aggregate")
    return ranks


def recall_at_k(results, k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    ranks = _ranks_of(results)
    return 100.0 * np.count_nonzero(ranks <= k) / ranks.size


def mean_rank(results) -> float:
    return float(np.mean(_ranks_of(results)))


def metrics_from_ranks(ranks, gallery_size: int = 0) -> MetricsTable:
    ranks = _ranks_of(ranks)
    return MetricsTable(recall_at_k(ranks, 1), recall_at_k(ranks, 5), recall_at_k(ranks, 10),
                        mean_rank(ranks), int(ranks.size), gallery_size)


def encode_gallery(params: FusionParams, gallery: list[GalleryEntry], batch_size: int = 256) -> np.ndarray:
    out = []
    for i in range(0, len(gallery), batch_size):
        chunk = gallery[i:i + batch_size]
        frames = np.stack([g.frames for g in chunk])
        audio = [g.audio for g in chunk]
        if len({a.shape for a in audio}) == 1:
            audio = np.stack(audio)
        out.append(encode_targets(params, frames, audio))
    return np.concatenate(out) if out else np.zeros((0, params.config.dim))


def encode_triplets(params: FusionParams, triplets: list[TripletRecord], drop=(), batch_size: int = 256):
    queries, weights = [], []
    for i in range(0, len(triplets), batch_size):
        chunk = triplets[i:i + batch_size]
        q_frames = np.stack([t.query_frames for t in chunk])
        q_audio = [t.query_audio for t in chunk]
        if len({a.shape for a in q_audio}) == 1:
            q_audio = np.stack(q_audio)
        text = np.stack([t.text for t in chunk])
        q, w = encode_queries(params, q_frames, q_audio, text, drop=drop)
        queries.append(q)
        weights.append(w)
    return np.concatenate(queries), np.concatenate(weights)


def evaluate(triplets: list[TripletRecord], gallery: list[GalleryEntry], params: FusionParams,
             drop=(), return_ranks: bool = False):
    """Encode every query and gallery clip, rank exhaustively, aggregate."""
    index = {g.id: i for i, g in enumerate(gallery)}
    targets = []
    for t in triplets:
        if t.target_id not in index:
            raise EvaluationError(f"triplet {t.id}: target {t.target_id!r} is not in the gallery")
        targets.append(index[t.target_id])
    if not triplets:
        raise EvaluationError("no triplets to evaluate")
    gallery_emb = encode_gallery(params, gallery)
    queries, _ = encode_triplets(params, triplets, drop=drop)
    ranks = gt_ranks(queries, gallery_emb, targets)
    table = metrics_from_ranks(ranks, len(gallery))
    return (table, ranks) if return_ranks else table
