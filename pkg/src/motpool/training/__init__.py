"""Episode generation, focal loss, hard mining, truncated-BPTT training."""

from .episodes import (FramePlan, RandomEpisodePlan, assign_ids_by_iou,
                       augment_missing, build_actual_episodes,
                       build_random_episode)
from .loss import batch_loss, batch_loss_nodes, mine_hard
from .trainer import LOG_HEADER, IterationInfo, Trainer

__all__ = [
    "FramePlan", "RandomEpisodePlan", "assign_ids_by_iou", "augment_missing",
    "build_actual_episodes", "build_random_episode",
    "batch_loss", "batch_loss_nodes", "mine_hard",
    "LOG_HEADER", "IterationInfo", "Trainer",
]
