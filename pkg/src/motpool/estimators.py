"""Scikit-learn style front door for training the track classifier."""

from __future__ import annotations

import dataclasses

from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .classifier import TrackScorer
from .config import ModelConfig, TrainConfig
from .nn import load_checkpoint, save_checkpoint
from .training import Trainer


def model_config_from_dict(doc: dict) -> ModelConfig:
    known = {f.name for f in dataclasses.fields(ModelConfig)}
    return ModelConfig(**{k: v for k, v in doc.items() if k in known})


class TrackProposalClassifier(BaseEstimator):
    """Trainable wrapper around the track-proposal classifier.

    ``fit`` consumes identity-labeled sequences (see ``motpool.data``)
    and exposes the trained scorer as ``scorer_``; ``get_params`` /
    ``set_params`` follow the scikit-learn contract so the estimator can
    be cloned and configured generically.
    """

    def __init__(self, model_config: ModelConfig | None = None,
                 train_config: TrainConfig | None = None):
        self.model_config = model_config
        self.train_config = train_config

    def fit(self, sequences, on_iteration=None) -> "TrackProposalClassifier":
        model_cfg = self.model_config or ModelConfig()
        train_cfg = self.train_config or TrainConfig()
        self.scorer_ = TrackScorer(model_cfg)
        trainer = Trainer(self.scorer_, train_cfg)
        trainer.fit(sequences, on_iteration=on_iteration)
        self.trainer_ = trainer
        self.history_ = trainer.history_
        return self

    def _fitted_scorer(self) -> TrackScorer:
        scorer = getattr(self, "scorer_", None)
        if scorer is None:
            raise NotFittedError("call fit() or load() first")
        return scorer

    def score_pair(self, target, others, x, motion=None):
        """Match probability for one track-detection proposal."""
        return self._fitted_scorer().score_pair(target, others, x, motion)

    def save(self, path) -> None:
        scorer = self._fitted_scorer()
        save_checkpoint(path, scorer.param_values(), scorer.config.to_dict())

    @classmethod
    def load(cls, path) -> "TrackProposalClassifier":
        tensors, config_doc, _ = load_checkpoint(path)
        model_cfg = model_config_from_dict(config_doc)
        est = cls(model_config=model_cfg)
        est.scorer_ = TrackScorer(model_cfg, params=tensors)
        return est
