"""Scikit-learn style wrapper: fit on triplets, transform to composed queries."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import retrieval
from ._validation import check_gallery, check_triplets
from .embedding_io import load_checkpoint, save_checkpoint
from .model import ModelConfig, init_params
from .trainer import TrainConfig, train


class ComposedRetriever(BaseEstimator):
    """Audio-video-text composed retrieval model.

    ``X`` is always a sequence of ``TripletRecord``. Widths are inferred from
    the first record at fit time. After fitting, ``params_`` holds the
    trained ``FusionParams`` and ``train_log_`` the per-step losses.
    """

    def __init__(self, n_queries=8, n_layers=2, avt_hidden=256, av_fusion="gft", text_fusion="avt",
                 train_resampler=True, epochs=10, batch_size=64, lr=1e-4, clip_norm=None, seed=0):
        self.n_queries = n_queries
        self.n_layers = n_layers
        self.avt_hidden = avt_hidden
        self.av_fusion = av_fusion
        self.text_fusion = text_fusion
        self.train_resampler = train_resampler
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.clip_norm = clip_norm
        self.seed = seed

    def _model_config(self, dim, audio_dim) -> ModelConfig:
        return ModelConfig(dim=dim, audio_dim=audio_dim, n_queries=self.n_queries, n_layers=self.n_layers,
                           avt_hidden=self.avt_hidden, av_fusion=self.av_fusion,
                           text_fusion=self.text_fusion, train_resampler=self.train_resampler)

    def _train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
                           seed=self.seed, clip_norm=self.clip_norm)

    def init_untrained(self, X):
        """Attach untrained parameters sized for ``X`` (a random baseline)."""
        X = check_triplets(X)
        self.params_ = init_params(self._model_config(X[0].query_frames.shape[1], X[0].query_audio.shape[1]),
                                   self.seed)
        self.n_steps_ = 0
        return self

    def fit(self, X, y=None, callback=None):
        X = check_triplets(X, min_count=self.batch_size)
        config = self._model_config(X[0].query_frames.shape[1], X[0].query_audio.shape[1])
        params = init_params(config, self.seed)
        self.params_, self.train_log_, self.n_steps_ = train(X, self._train_config(), params, callback=callback)
        return self

    def _dims(self):
        cfg = self.params_.config
        return cfg.dim, cfg.audio_dim

    def transform(self, X, drop=()):
        """Unit composed query embeddings, shape (n, D)."""
        check_is_fitted(self, "params_")
        X = check_triplets(X, *self._dims())
        return retrieval.encode_triplets(self.params_, X, drop=drop)[0]

    def query_weights(self, X, drop=()):
        """Per-query composition weights, columns ordered f_av, obj, act, att, audm."""
        check_is_fitted(self, "params_")
        X = check_triplets(X, *self._dims())
        return retrieval.encode_triplets(self.params_, X, drop=drop)[1]

    def embed_gallery(self, gallery):
        check_is_fitted(self, "params_")
        return retrieval.encode_gallery(self.params_, check_gallery(gallery, *self._dims()))

    def rank(self, X, gallery, drop=()):
        """One ``RankedResult`` per triplet over the whole gallery."""
        gallery = check_gallery(gallery, *self._dims())
        emb = self.embed_gallery(gallery)
        ids = [g.id for g in gallery]
        X = check_triplets(X, *self._dims())
        queries = self.transform(X, drop=drop)
        return [retrieval.rank(q, emb, ids, target=t.target_id, query_id=t.id) for q, t in zip(queries, X)]

    def predict(self, X, gallery, drop=()):
        """Top-1 gallery id per triplet."""
        gallery = check_gallery(gallery, *self._dims())
        emb = self.embed_gallery(gallery)
        scores = self.transform(X, drop=drop) @ emb.T
        return [gallery[i].id for i in np.argmax(scores, axis=1)]  # argmax keeps the lowest index on ties

    def evaluate(self, X, gallery, drop=()):
        check_is_fitted(self, "params_")
        X = check_triplets(X, *self._dims())
        return retrieval.evaluate(X, check_gallery(gallery, *self._dims()), self.params_, drop=drop)

    def score(self, X, gallery, drop=()):
        """Recall@1 in percent."""
        return self.evaluate(X, gallery, drop=drop).r1

    def save(self, path):
        check_is_fitted(self, "params_")
        save_checkpoint(self.params_, path, self.n_steps_)

    @classmethod
    def from_checkpoint(cls, path, **kwargs):
        params, step = load_checkpoint(path)
        cfg = params.config
        est = cls(n_queries=cfg.n_queries, n_layers=cfg.n_layers, avt_hidden=cfg.avt_hidden,
                  av_fusion=cfg.av_fusion, text_fusion=cfg.text_fusion,
                  train_resampler=cfg.train_resampler, **kwargs)
        est.params_, est.n_steps_ = params, step
        return est
