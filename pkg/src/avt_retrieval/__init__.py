"""Composed audio-video-text retrieval on precomputed embeddings."""

from .embedding_io import (CheckpointError, ConfigMismatchError, Dataset, GalleryEntry, LoadError, TripletRecord,
                           load_checkpoint, load_dataset, save_checkpoint, save_dataset)
from .estimator import ComposedRetriever
from .model import FusionParams, ModelConfig, init_params
from .numerics import GradReport, grad_check
from .pipeline import BandConfig, ClipRecord, PairMiner, RedundancyFilter, dedup, mine_pairs
from .retrieval import MetricsTable, RankedResult, evaluate, mean_rank, rank, recall_at_k
from .synth import SynthConfig, generate, synth_generate
from .trainer import TrainConfig, TrainLog, train

__all__ = [
    "BandConfig", "CheckpointError", "ClipRecord", "ComposedRetriever", "ConfigMismatchError", "Dataset",
    "FusionParams", "GalleryEntry", "GradReport", "LoadError", "MetricsTable", "ModelConfig", "PairMiner",
    "RankedResult", "RedundancyFilter", "SynthConfig", "TrainConfig", "TrainLog", "TripletRecord", "dedup",
    "evaluate", "generate", "grad_check", "init_params", "load_checkpoint", "load_dataset", "mean_rank",
    "mine_pairs", "rank", "recall_at_k", "save_checkpoint", "save_dataset", "synth_generate", "train",
]
