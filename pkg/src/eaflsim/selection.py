"""Per-round participant selection: Random, Oort-style utility, and energy-aware blended reward."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .energy import (
    BatteryState,
    DeviceProfile,
    Direction,
    communication_energy_pct,
    computation_energy,
    pct_to_joules,
    throughput_samples_per_sec,
    transfer_seconds,
)
from .utility import ClientStats, UtilityParams, minmax_normalize, pool_utilities, power_term, score_pool

DEFAULT_K = 10
DEFAULT_EPSILON = 0.1


class StrategyKind(enum.Enum):
    RANDOM = "random"
    OORT = "oort"
    EAFL = "eafl"

    @classmethod
    def parse(cls, name: str) -> "StrategyKind":
        try:
            return cls(name.strip().lower())
        except ValueError:
            choices = ", ".join(s.value for s in cls)
            raise ValueError(f"unknown strategy {name!r} (choose from {choices})") from None


@dataclass
class Candidate:
    client_id: int
    stats: ClientStats
    battery: BatteryState
    projected_cost_joules: float = 0.0


@dataclass
class CandidatePool:
    entries: list[Candidate]
    round_index: int = 0
    # populated by select_top_k for inspection
    scores: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if any(c.battery.dropped for c in self.entries):
            raise ValueError("candidate pool may only hold clients that have not dropped")
        self.entries = sorted(self.entries, key=lambda c: c.client_id)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def ids(self) -> list[int]:
        return [c.client_id for c in self.entries]


def select_random(pool: CandidatePool, k: int, rng: np.random.Generator) -> list[int]:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not pool.entries:
        return []
    ids = pool.ids
    picked = rng.choice(len(ids), size=min(k, len(ids)), replace=False)
    return [ids[i] for i in picked]


def pool_scores(pool: CandidatePool, strategy: StrategyKind, params: UtilityParams) -> list[float]:
    stats = [c.stats for c in pool.entries]
    if strategy is StrategyKind.OORT:
        return minmax_normalize(pool_utilities(stats, params))
    if strategy is StrategyKind.EAFL:
        powers = [power_term(c.battery, c.projected_cost_joules) for c in pool.entries]
        return [b.reward for b in score_pool(stats, powers, params)]
    raise ValueError(f"{strategy} has no score")


def n_exploit(k: int, epsilon: float) -> int:
    # round() guards against 0.9*10 landing a hair above 9
    return math.ceil(round((1.0 - epsilon) * k, 9))


def select_top_k(
    pool: CandidatePool,
    k: int,
    strategy: StrategyKind,
    params: UtilityParams,
    epsilon: float,
    rng: np.random.Generator,
) -> list[int]:
    """Exploit the best-scored ceil((1-eps)k) candidates, explore the rest uniformly.

    Ties in score go to the lower client id.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    if strategy is StrategyKind.RANDOM:
        return select_random(pool, k, rng)
    if not pool.entries:
        return []

    scores = pool_scores(pool, strategy, params)
    pool.scores = dict(zip(pool.ids, scores))
    order = sorted(range(len(pool)), key=lambda i: (-scores[i], pool.entries[i].client_id))
    target = min(k, len(pool))
    exploit = min(n_exploit(k, epsilon), target)
    chosen = [pool.entries[i].client_id for i in order[:exploit]]

    n_explore = target - exploit
    if n_explore > 0:
        rest = sorted(pool.entries[i].client_id for i in order[exploit:])
        picked = rng.choice(len(rest), size=n_explore, replace=False)
        chosen.extend(rest[i] for i in picked)
    return chosen


@dataclass(frozen=True)
class RoundCost:
    download_s: float
    train_s: float
    upload_s: float
    download_j: float
    train_j: float
    upload_j: float

    @property
    def duration_s(self) -> float:
        return self.download_s + self.train_s + self.upload_s

    @property
    def total_j(self) -> float:
        return self.download_j + self.train_j + self.upload_j


def round_cost(profile: DeviceProfile, model_bytes: int, samples: int, epochs_local: int) -> RoundCost:
    """Phase durations and energies of one download / train / upload cycle."""
    if model_bytes < 0 or samples < 0 or epochs_local < 0:
        raise ValueError("model_bytes, samples and epochs_local must be non-negative")
    capacity = profile.capacity_joules
    down_s = transfer_seconds(model_bytes, profile.downlink_mbps)
    up_s = transfer_seconds(model_bytes, profile.uplink_mbps)
    train_s = samples * epochs_local / throughput_samples_per_sec(profile)
    down_pct = communication_energy_pct(profile.medium, Direction.DOWNLOAD, down_s / 3600.0)
    up_pct = communication_energy_pct(profile.medium, Direction.UPLOAD, up_s / 3600.0)
    return RoundCost(
        download_s=down_s,
        train_s=train_s,
        upload_s=up_s,
        download_j=pct_to_joules(down_pct, capacity),
        train_j=computation_energy(profile.avg_power_watts, train_s),
        upload_j=pct_to_joules(up_pct, capacity),
    )


def projected_round_cost(profile: DeviceProfile, model_bytes: int, samples: int, epochs_local: int) -> float:
    return round_cost(profile, model_bytes, samples, epochs_local).total_j

