"""Online multi-object tracking with a pooled recurrent appearance memory.

Main entry points:

- :class:`motpool.TrackProposalClassifier` -- fit the proposal classifier
  on identity-labeled sequences.
- :class:`motpool.GreedyTracker` -- run online tracking over a detection
  stream with a trained classifier.
- :mod:`motpool.metrics` -- CLEAR-MOT and IDF1 evaluation.
- :mod:`motpool.simulate` -- seeded synthetic scenario generation.
- CLI: ``motpool simulate|train|track|eval|gradcheck|bench-ablation``.
"""

from .config import (ModelConfig, RunConfig, ScenarioSpec, TrackerConfig,
                     TrainConfig, load_config)
from .classifier import AppearanceMemory, MotionState, PairScore, TrackScorer
from .data import Detection, DetectionStream, SequenceData, load_scenario_dir
from .estimators import TrackProposalClassifier
from .metrics import EvalReport, clear_mot, evaluate, hungarian, idf1
from .motio import EmbeddingStore, MotRecord, load_embeddings, parse_mot, write_mot
from .simulate import Scenario, generate
from .tracker import GreedyTracker, greedy_associate
from .training import Trainer

__version__ = "0.1.0"

__all__ = [
    "ModelConfig", "RunConfig", "ScenarioSpec", "TrackerConfig", "TrainConfig",
    "load_config", "AppearanceMemory", "MotionState", "PairScore", "TrackScorer",
    "Detection", "DetectionStream", "SequenceData", "load_scenario_dir",
    "TrackProposalClassifier", "EvalReport", "clear_mot", "evaluate",
    "hungarian", "idf1", "EmbeddingStore", "MotRecord", "load_embeddings",
    "parse_mot", "write_mot", "Scenario", "generate", "GreedyTracker",
    "greedy_associate", "Trainer", "__version__",
]
