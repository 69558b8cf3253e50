"""Balanced per-epoch minibatch schedules over binned training data.

Both schemes emit every training sample exactly once per epoch (each
bin's pool is drawn without replacement) and differ only in how the next
bin is chosen: round-robin cycles through the bins in edge order, while
random selection draws a uniformly random non-exhausted bin at every
step.  The batch size merely segments the emitted stream; it never
alters the draw order.

Randomness comes from numpy's PCG64 generator seeded with
``SeedSequence([seed, epoch])``, so schedules are reproducible across
platforms for a fixed numpy version and every epoch gets an independent
stream.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .data import BinSpec, CountRecord, assign_bin

__all__ = ["SCHEMES", "Schedule", "schedule_rr", "schedule_rs"]

SCHEMES = ("rr", "rs")


@dataclass(frozen=True)
class Schedule:
    """A seeded per-epoch ordering of (image_id, bin_index) steps."""

    epoch: int
    steps: tuple[tuple[str, int], ...]
    batch_size: int
    scheme: str
    seed: int

    def batches(self) -> Iterator[tuple[tuple[str, int], ...]]:
        for start in range(0, len(self.steps), self.batch_size):
            yield self.steps[start : start + self.batch_size]


def _stream_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, epoch])))


def _build_pools(records: Sequence[CountRecord], bins: BinSpec) -> list[list[str]]:
    pools: list[list[str]] = [[] for _ in range(bins.num_bins)]
    for record in records:
        pools[assign_bin(record.count, bins)].append(record.image_id)
    return pools


def _draw(pool: list[str], remaining: int, rng: np.random.Generator) -> str:
    # Uniform draw without replacement via swap-and-shrink.
    i = int(rng.integers(remaining))
    pool[i], pool[remaining - 1] = pool[remaining - 1], pool[i]
    return pool[remaining - 1]


def _validate(records: Sequence[CountRecord], batch_size: int, epoch: int, seed: int) -> None:
    if not records:
        raise ValueError("cannot schedule an empty record list")
    if batch_size < 1:
        raise ValueError(f"batch_size must be positive, got {batch_size}")
    if epoch < 0:
        raise ValueError(f"epoch must be non-negative, got {epoch}")
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")


def schedule_rr(
    records: Sequence[CountRecord],
    bins: BinSpec,
    batch_size: int,
    epoch: int,
    seed: int,
) -> Schedule:
    """Round-robin schedule: cycle bins in edge order, one draw per visit.

    Starts at bin 0, skips exhausted bins, and keeps cycling across
    minibatch boundaries until the whole dataset has been emitted.
    """
    _validate(records, batch_size, epoch, seed)
    rng = _stream_rng(seed, epoch)
    pools = _build_pools(records, bins)
    remaining = [len(p) for p in pools]
    # Exhausted bins drop out of the cycle; skipping them consumes no
    # randomness, so this is the plain "visit, skip if empty" loop made
    # O(1) per draw.
    active = [k for k in range(len(pools)) if remaining[k]]
    steps: list[tuple[str, int]] = []
    cursor = 0
    while active:
        if cursor >= len(active):
            cursor = 0
        k = active[cursor]
        steps.append((_draw(pools[k], remaining[k], rng), k))
        remaining[k] -= 1
        if remaining[k]:
            cursor += 1
        else:
            del active[cursor]
    return Schedule(epoch=epoch, steps=tuple(steps), batch_size=batch_size, scheme="rr", seed=seed)


def schedule_rs(
    records: Sequence[CountRecord],
    bins: BinSpec,
    batch_size: int,
    epoch: int,
    seed: int,
) -> Schedule:
    """Random-bin schedule: draw a uniformly random non-exhausted bin, then a sample."""
    _validate(records, batch_size, epoch, seed)
    rng = _stream_rng(seed, epoch)
    pools = _build_pools(records, bins)
    remaining = [len(p) for p in pools]
    active = [k for k in range(len(pools)) if remaining[k]]
    steps: list[tuple[str, int]] = []
    while active:
        idx = int(rng.integers(len(active)))
        k = active[idx]
        steps.append((_draw(pools[k], remaining[k], rng), k))
        remaining[k] -= 1
        if not remaining[k]:
            del active[idx]
    return Schedule(epoch=epoch, steps=tuple(steps), batch_size=batch_size, scheme="rs", seed=seed)
