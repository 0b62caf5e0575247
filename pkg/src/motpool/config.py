"""Run configuration: model, training, tracker and scenario sections.

``load_config`` reads a JSON document with sections ``model``, ``train``,
``tracker`` and ``sim``; absent keys fall back to the defaults below,
unknown keys are warned about and ignored, and structural invariants are
checked eagerly so a bad config fails before any work starts.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

log = logging.getLogger(__name__)

# Dimension profiles. "desk" is small enough for CPU-only experiments;
# "paper" is the full-scale published configuration (2048-d embeddings).
PROFILES = {
    "desk": dict(embed_dim=32, key_dim=16, rows=8, motion_hidden=16,
                 motion_feat=8, joint_hidden=24),
    "paper": dict(embed_dim=2048, key_dim=256, rows=8, motion_hidden=64,
                  motion_feat=8, joint_hidden=24),
}

HEAD_MODES = ("appearance_only", "joint")


@dataclass
class ModelConfig:
    """Classifier dimensions and structural switches."""

    embed_dim: int = 32          # D_in: raw embedding size
    key_dim: int = 16            # d: matching feature size
    rows: int = 8                # r: memory template rows; hidden = rows*key_dim
    motion_hidden: int = 16
    motion_feat: int = 8
    joint_hidden: int = 24
    head: str = "appearance_only"
    pooling: bool = True         # False = retrained baseline without negative pool
    lstm_gate_variant: str = "standard"  # or "paper" (literal printed gates)
    lstm_bias: bool = True
    forget_bias: float = 1.0
    init_seed: int = 0

    @property
    def hidden(self) -> int:
        return self.rows * self.key_dim

    @property
    def pooled_width(self) -> int:
        """Width of the concatenated match representation fed to the head."""
        return 2 * self.rows if self.pooling else self.rows

    def validate(self) -> None:
        for key in ("embed_dim", "key_dim", "rows", "motion_hidden",
                    "motion_feat", "joint_hidden"):
            if getattr(self, key) < 1:
                raise ConfigError(f"model.{key} must be >= 1")
        if self.head not in HEAD_MODES:
            raise ConfigError(f"model.head must be one of {HEAD_MODES}")
        if self.lstm_gate_variant not in ("standard", "paper"):
            raise ConfigError("model.lstm_gate_variant must be 'standard' or 'paper'")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden"] = self.hidden
        return d


@dataclass
class TrainConfig:
    """Episode generation and optimization settings."""

    window: int = 10             # truncated-BPTT window (frames)
    max_gap: int = 40            # random episode: max end-start frame gap
    n_max: int = 8               # random episode: track cap
    k_hard: int = 30             # hard-example mining top-k
    beta_pos: float = 4.0        # focal weight for positive pairs
    beta_neg: float = 1.0        # focal weight for negative pairs
    lr: float = 0.005
    lr_decay: float = 0.1
    lr_phase_fractions: tuple[float, ...] = (1.0 / 3.0, 2.0 / 3.0)
    epochs: int = 12
    seed: int = 0
    hard_mining_start_epoch: int = 2
    optimizer: str = "sgd"       # or "adam"
    adam_lr: float = 0.001
    dropout_rates: tuple[float, ...] = (0.9, 0.6, 0.3, 0.0)
    dropout_fractions: tuple[float, ...] = (0.158, 0.242, 0.317)
    augment_missing: bool = True
    augment_rate_min: float = 0.1
    augment_rate_max: float = 0.9
    checkpoint_name: str = "checkpoint.bin"
    log_name: str = "train_log.csv"

    def validate(self) -> None:
        for key in ("window", "max_gap", "n_max", "k_hard", "epochs"):
            if getattr(self, key) < 1:
                raise ConfigError(f"train.{key} must be >= 1")
        for key in ("beta_pos", "beta_neg", "lr"):
            if getattr(self, key) <= 0:
                raise ConfigError(f"train.{key} must be > 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError("train.optimizer must be 'sgd' or 'adam'")
        if len(self.dropout_rates) != len(self.dropout_fractions) + 1:
            raise ConfigError("train.dropout_rates must have one more entry "
                              "than train.dropout_fractions")
        if list(self.dropout_fractions) != sorted(self.dropout_fractions):
            raise ConfigError("train.dropout_fractions must be nondecreasing")
        if not 0.0 <= self.augment_rate_min <= self.augment_rate_max <= 1.0:
            raise ConfigError("train.augment_rate_min/max must satisfy 0<=min<=max<=1")


@dataclass
class TrackerConfig:
    """Online association and lifecycle settings."""

    assoc_threshold: float = 0.5
    n_miss: int = 60             # consecutive-miss termination bound
    gate: str = "off"            # "off" | "iou"
    gate_iou: float = 0.1
    extension: bool = False
    smoothing: str = "online"    # "online" | "near_online"
    min_birth_conf: float = 0.0
    img_width: float = 640.0     # motion input normalization
    img_height: float = 480.0

    def validate(self) -> None:
        if not 0.0 < self.assoc_threshold < 1.0:
            raise ConfigError("tracker.assoc_threshold must be in (0, 1)")
        if self.n_miss < 1:
            raise ConfigError("tracker.n_miss must be >= 1")
        if self.gate not in ("off", "iou"):
            raise ConfigError("tracker.gate must be 'off' or 'iou'")
        if self.smoothing not in ("online", "near_online"):
            raise ConfigError("tracker.smoothing must be 'online' or 'near_online'")
        if self.img_width <= 0 or self.img_height <= 0:
            raise ConfigError("tracker.img_width/img_height must be positive")


@dataclass
class ScenarioSpec:
    """Synthetic multi-target scene with confusable appearance clusters."""

    width: float = 640.0
    height: float = 480.0
    num_targets: int = 8
    num_clusters: int = 2
    cluster_spread: float = 0.1   # norm of each target's personal offset
    embed_noise: float = 0.03     # per-frame gaussian noise sigma
    miss_prob: float = 0.0
    fp_rate: float = 0.0          # Poisson mean false positives per frame
    box_jitter: float = 0.0       # detection box noise sigma (pixels)
    num_frames: int = 100
    speed_min: float = 1.0
    speed_max: float = 4.0
    accel_sigma: float = 0.2
    box_w_min: float = 24.0
    box_w_max: float = 40.0
    box_h_min: float = 48.0
    box_h_max: float = 80.0
    embed_dim: int = 32
    seed: int = 0

    def validate(self) -> None:
        if self.num_targets < 1:
            raise ConfigError("sim.num_targets must be >= 1")
        if not 1 <= self.num_clusters <= self.num_targets:
            raise ConfigError("sim.num_clusters must be in [1, num_targets]")
        for key in ("cluster_spread", "embed_noise", "box_jitter", "fp_rate",
                    "accel_sigma"):
            if getattr(self, key) < 0:
                raise ConfigError(f"sim.{key} must be >= 0")
        if not 0.0 <= self.miss_prob <= 1.0:
            raise ConfigError("sim.miss_prob must be in [0, 1]")
        if self.num_frames < 2:
            raise ConfigError("sim.num_frames must be >= 2")
        if self.width <= 0 or self.height <= 0:
            raise ConfigError("sim.width/height must be positive")
        if not 0 < self.speed_min <= self.speed_max:
            raise ConfigError("sim.speed_min/speed_max must satisfy 0<min<=max")
        if self.embed_dim < 1:
            raise ConfigError("sim.embed_dim must be >= 1")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    sim: ScenarioSpec = field(default_factory=ScenarioSpec)

    def validate(self) -> None:
        self.model.validate()
        self.train.validate()
        self.tracker.validate()
        self.sim.validate()


def _fill_section(cls, section: str, values: dict, extra_allowed: tuple[str, ...] = ()):
    known = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, val in values.items():
        if key in known:
            kwargs[key] = tuple(val) if isinstance(val, list) else val
        elif key not in extra_allowed:
            log.warning("config: ignoring unknown key %s.%s", section, key)
    return cls(**kwargs)


def config_from_dict(doc: dict, profile: str | None = None) -> RunConfig:
    """Build a validated RunConfig from a parsed JSON document."""
    known_sections = ("model", "train", "tracker", "sim")
    for key in doc:
        if key not in known_sections:
            log.warning("config: ignoring unknown section %r", key)

    model_doc = dict(doc.get("model", {}))
    profile = model_doc.pop("profile", profile) or "desk"
    if profile not in PROFILES:
        raise ConfigError(f"model.profile must be one of {sorted(PROFILES)}")
    merged = dict(PROFILES[profile])
    explicit_hidden = model_doc.pop("hidden", None)
    merged.update(model_doc)
    model = _fill_section(ModelConfig, "model", merged)
    if explicit_hidden is not None and explicit_hidden != model.rows * model.key_dim:
        raise ConfigError(
            f"model.hidden={explicit_hidden} must equal rows*key_dim="
            f"{model.rows * model.key_dim}")

    cfg = RunConfig(
        model=model,
        train=_fill_section(TrainConfig, "train", doc.get("train", {})),
        tracker=_fill_section(TrackerConfig, "tracker", doc.get("tracker", {})),
        sim=_fill_section(ScenarioSpec, "sim", doc.get("sim", {})),
    )
    cfg.validate()
    return cfg


def load_config(path, profile: str | None = None) -> RunConfig:
    """Parse a JSON config file into a validated RunConfig."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path}: top level must be an object")
    return config_from_dict(doc, profile=profile)
