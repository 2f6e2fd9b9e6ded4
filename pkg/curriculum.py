"""
Explicit-to-implicit training schedule.

Each batch draws explicit samples with a probability that falls linearly
from 1 to 0 across the stage, so the last batches are implicit only.
"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from pydantic import BaseModel

from cotgen import CotMode, CotSample

log = logging.getLogger(__name__)

_SEED_MASK = (1 << 64) - 1


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class Schedule:
    total_steps: int
    seed: int

    def __post_init__(self) -> None:
        if self.total_steps < 1:
            raise ScheduleError(f"total_steps must be >= 1, got {self.total_steps}")


class RngState(NamedTuple):
    """Seed plus the number of draws taken so far."""

    seed: int
    draws: int = 0


class BatchDescriptor(BaseModel):
    step: int
    mode: CotMode
    utterance_ids: list[str]


def p_explicit(t: int, total_steps: int) -> float:
    """Probability of an explicit batch at step t of total_steps: 1 - t/T."""
    if total_steps < 1:
        raise ScheduleError(f"total_steps must be >= 1, got {total_steps}")
    if not 0 <= t <= total_steps:
        raise ScheduleError(f"step {t} outside [0, {total_steps}]")
    return 1.0 - t / total_steps


def _uniform(seed: int, t: int) -> float:
    # keyed by (seed, t): any step can be redrawn without replaying the others
    return float(np.random.default_rng([seed & _SEED_MASK, t]).random())


def sample_mode(t: int, total_steps: int, state: RngState) -> tuple[CotMode, RngState]:
    p = p_explicit(t, total_steps)
    mode = CotMode.EXPLICIT if _uniform(state.seed, t) < p else CotMode.IMPLICIT
    return mode, state._replace(draws=state.draws + 1)


def emit_schedule(
    explicit: Sequence[CotSample],
    implicit: Sequence[CotSample],
    schedule: Schedule,
    batch_size: int = 8,
) -> list[BatchDescriptor]:
    """
    Plan steps 1..T, each drawing batch_size utterances round-robin from the
    pool of its sampled mode.
    """
    if not explicit or not implicit:
        empty = "explicit" if not explicit else "implicit"
        raise ScheduleError(f"{empty} sample pool is empty")
    if batch_size < 1:
        raise ScheduleError(f"batch_size must be >= 1, got {batch_size}")

    pools = {CotMode.EXPLICIT: [s.utterance_id for s in explicit], CotMode.IMPLICIT: [s.utterance_id for s in implicit]}
    cursors = {CotMode.EXPLICIT: 0, CotMode.IMPLICIT: 0}
    state = RngState(schedule.seed)
    stream: list[BatchDescriptor] = []

    for step in range(1, schedule.total_steps + 1):
        mode, state = sample_mode(step, schedule.total_steps, state)
        pool = pools[mode]
        start = cursors[mode]
        ids = [pool[(start + k) % len(pool)] for k in range(batch_size)]
        cursors[mode] = (start + batch_size) % len(pool)
        stream.append(BatchDescriptor(step=step, mode=mode, utterance_ids=ids))

    explicit_count = sum(1 for b in stream if b.mode is CotMode.EXPLICIT)
    log.info(f"📅 {len(stream)} batches planned, {explicit_count} explicit / {len(stream) - explicit_count} implicit")
    return stream

