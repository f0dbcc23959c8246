"""Client scoring: loss/duration utility, battery power term and the blended reward."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .energy import BatteryState


@dataclass
class ClientStats:
    """Feedback collected from a client's most recent completed round."""

    sample_count: int = 0
    sum_sq_loss: float = 0.0
    last_duration_s: float = 0.0
    rounds_participated: int = 0

    @property
    def has_feedback(self) -> bool:
        return self.rounds_participated > 0

    def record(self, sample_count: int, sum_sq_loss: float, duration_s: float) -> None:
        self.sample_count = sample_count
        self.sum_sq_loss = sum_sq_loss if sample_count > 0 else 0.0
        self.last_duration_s = duration_s
        self.rounds_participated += 1


@dataclass(frozen=True)
class UtilityParams:
    round_deadline_s: float = 600.0
    straggler_alpha: float = 2.0
    blend_f: float = 0.25

    def __post_init__(self):
        if not self.round_deadline_s > 0:
            raise ValueError("round_deadline_s must be > 0")
        if self.straggler_alpha < 0:
            raise ValueError("straggler_alpha must be >= 0")
        if not 0.0 <= self.blend_f <= 1.0:
            raise ValueError(f"blend_f must lie in [0, 1], got {self.blend_f}")


@dataclass(frozen=True)
class RewardBreakdown:
    util_raw: float
    util_norm: float
    power_raw: float
    power_norm: float
    reward: float


def straggler_penalty(duration_s: float, params: UtilityParams) -> float:
    deadline = params.round_deadline_s
    if duration_s <= deadline:
        return 1.0
    return (deadline / duration_s) ** params.straggler_alpha


def statistical_system_utility(stats: ClientStats, params: UtilityParams) -> float:
    """|B| * sqrt(mean squared loss), shrunk by (T/t)^a when the client overran the deadline."""
    n = stats.sample_count
    if n == 0:
        return 0.0
    statistical = n * math.sqrt(stats.sum_sq_loss / n)
    return statistical * straggler_penalty(stats.last_duration_s, params)


def power_term(battery: BatteryState, projected_cost_joules: float) -> float:
    """Remaining battery percent after paying the projected round cost, floored at 0."""
    if projected_cost_joules < 0:
        raise ValueError(f"projected cost must be non-negative, got {projected_cost_joules}")
    left = battery.remaining_joules - projected_cost_joules
    return max(0.0, 100.0 * left / battery.capacity_joules)


def minmax_normalize(values: Sequence[float]) -> list[float]:
    if len(values) == 0:
        raise ValueError("cannot normalize an empty list")
    lo, hi = min(values), max(values)
    if hi == lo:
        return [1.0] * len(values)
    span = hi - lo
    return [(v - lo) / span for v in values]


def eafl_reward(util_norm: float, power_norm: float, f: float) -> float:
    for name, value in (("util_norm", util_norm), ("power_norm", power_norm), ("f", f)):
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {value}")
    return f * util_norm + (1.0 - f) * power_norm


def pool_utilities(stats: Sequence[ClientStats], params: UtilityParams) -> list[float]:
    """Raw utilities for a candidate pool; clients without feedback get the pool maximum."""
    raw = [statistical_system_utility(s, params) if s.has_feedback else None for s in stats]
    known = [u for u in raw if u is not None]
    optimistic = max(known) if known else 0.0
    return [optimistic if u is None else u for u in raw]


def score_pool(
    stats: Sequence[ClientStats],
    powers: Sequence[float],
    params: UtilityParams,
) -> list[RewardBreakdown]:
    util_raw = pool_utilities(stats, params)
    util_norm = minmax_normalize(util_raw)
    power_norm = minmax_normalize(powers)
    return [
        RewardBreakdown(u, un, p, pn, eafl_reward(un, pn, params.blend_f))
        for u, un, p, pn in zip(util_raw, util_norm, powers, power_norm)
    ]
