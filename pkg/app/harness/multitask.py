"""
MULTI-TASK TRAINING - ONE TRUNK, SEVERAL HEADS
==============================================
- SA-MT: per action, one trunk feeds the relationship head and both
  sentence decoders ("{action}-multitask.npz")
- MA-MT: one trunk for all actions, told apart by a learned action
  embedding, with per-action heads ("all-multitask.npz")

The loss of a batch is the weighted sum of the task losses
(``task_weights``, all 1 by default). A decoder weighted 0 contributes
nothing, so the trunk then trains exactly as the independent relationship
model would.
"""

from __future__ import annotations

from typing import List, Optional

from app.dataset.scenes import Dataset
from app.errors import ConfigurationError
from app.harness.trainer import ALL_TASKS, TrainingUnit, TrainResult, run_units
from app.models import RunConfig


def multitask_units(config: RunConfig) -> List[TrainingUnit]:
    if config.regime == "SA-MT":
        return [TrainingUnit(name=f"{a}-multitask", actions=[a], tasks=list(ALL_TASKS)) for a in config.actions]
    if config.regime == "MA-MT":
        return [TrainingUnit(name="all-multitask", actions=list(config.actions), tasks=list(ALL_TASKS))]
    raise ConfigurationError(f"regime {config.regime!r} is not a multi-task regime")


def train_multitask(config: RunConfig, dataset: Optional[Dataset] = None) -> TrainResult:
    unknown = sorted(set(config.task_weights) - set(ALL_TASKS))
    if unknown:
        raise ConfigurationError(f"task_weights names unknown tasks {unknown}")
    return run_units(config, multitask_units(config), dataset)
