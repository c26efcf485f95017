"""Four-stage pretraining curriculum with cumulative task sets."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from itertools import accumulate

import numpy as np

PAPER_STEPS = (50_000, 350_000, 55_000, 150_000)
PAPER_BATCH = (1024, 1024, 256, 256)
STAGE_TASKS = (
    ("MAE", "MDTG"),
    ("MAE", "MDTG", "RQA"),
    ("MAE", "MDTG", "RQA"),
    ("MAE", "MDTG", "RQA", "BB", "TABLEQA"),
)
STAGE_RESOLUTION = (224, 224, 896, 896)


@dataclass(frozen=True)
class StageSpec:
    index: int
    steps: int
    resolution: int
    active_tasks: tuple[str, ...]
    batch_size: int
    start: int  # first global step of this stage

    @property
    def end(self) -> int:
        return self.start + self.steps


@dataclass(frozen=True)
class CurriculumSchedule:
    stages: tuple[StageSpec, ...]
    scale: float

    @property
    def total_steps(self) -> int:
        return self.stages[-1].end

    @property
    def boundaries(self) -> tuple[int, ...]:
        return tuple(s.end for s in self.stages)

    def to_json(self) -> str:
        return json.dumps(
            {
                "scale": self.scale,
                "total_steps": self.total_steps,
                "boundaries": list(self.boundaries),
                "stages": [asdict(s) for s in self.stages],
            },
            indent=2,
        )


def _scaled(value: int, scale: float) -> int:
    return max(1, int(np.floor(scale * value + 0.5)))


def paper_schedule(scale: float = 1.0) -> CurriculumSchedule:
    if not 0 < scale <= 1:
        raise ValueError(f"scale must be in (0, 1], got {scale}")
    steps = [_scaled(s, scale) for s in PAPER_STEPS]
    starts = [0, *accumulate(steps)][:-1]
    stages = tuple(
        StageSpec(k + 1, steps[k], STAGE_RESOLUTION[k], STAGE_TASKS[k], _scaled(PAPER_BATCH[k], scale), starts[k])
        for k in range(4)
    )
    return CurriculumSchedule(stages, scale)


def stage_at(schedule: CurriculumSchedule, step: int) -> StageSpec:
    if not 0 <= step < schedule.total_steps:
        raise IndexError(f"step {step} outside [0, {schedule.total_steps})")
    for stage in schedule.stages:
        if step < stage.end:
            return stage
    raise AssertionError("unreachable")


def sample_task(schedule: CurriculumSchedule, step: int, seed: int = 0) -> str:
    """Task for ``step``: uniform over the stage's active set.

    Steps are grouped into consecutive blocks of ``len(active_tasks)`` within a
    stage and each block is a seeded random permutation of the active tasks,
    so each step is marginally uniform and stage-level frequencies stay
    balanced.
    """
    stage = stage_at(schedule, step)
    tasks = stage.active_tasks
    local = step - stage.start
    block, slot = divmod(local, len(tasks))
    rng = np.random.default_rng([seed, stage.index, block])
    return tasks[int(rng.permutation(len(tasks))[slot])]
