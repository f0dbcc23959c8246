"""Event-driven round orchestration over a battery-powered fleet."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import energy
from .energy import BatteryState, DeviceProfile, DeviceTier, Medium
from .engine import (
    ModelState,
    TaskConfig,
    YogiParams,
    aggregate_fedavg,
    evaluate,
    generate_fleet_data,
    local_train,
    yogi_server_update,
)
from .selection import (
    DEFAULT_EPSILON,
    DEFAULT_K,
    Candidate,
    CandidatePool,
    RoundCost,
    StrategyKind,
    round_cost,
    select_top_k,
)
from .utility import ClientStats, UtilityParams

log = logging.getLogger(__name__)

TIERS = (DeviceTier.HIGH_END, DeviceTier.MID_RANGE, DeviceTier.LOW_END)

# purpose tags for splitting the root seed
_FLEET, _SELECT, _BUSY, _TRAIN = 1, 2, 3, 4


@dataclass(frozen=True)
class SimConfig:
    n_clients: int = 100
    rounds: int = 500
    k_per_round: int = DEFAULT_K
    round_deadline_s: float = 600.0
    strategy: StrategyKind = StrategyKind.EAFL
    blend_f: float = 0.25
    epsilon: float = DEFAULT_EPSILON
    seed: int = 0
    tier_mix: tuple[float, float, float] = (0.3, 0.4, 0.3)
    model_bytes: int = 2_000_000
    task: TaskConfig = field(default_factory=TaskConfig)
    report_quorum: float = 0.5
    # local training
    lr: float = 0.05
    batch_size: int = 20
    local_epochs: int = 1
    straggler_alpha: float = 2.0
    # server optimizer
    server_eta: float = 0.01
    server_beta1: float = 0.9
    server_beta2: float = 0.99
    server_tau: float = 1e-3
    # fleet energy
    battery_voltage: float = energy.DEFAULT_VOLTAGE
    idle_drain_pct_per_hour: float = energy.DEFAULT_IDLE_DRAIN_PCT_PER_HOUR
    busy_other_prob: float = energy.DEFAULT_BUSY_OTHER_PROB
    initial_battery_min: float = 0.2
    initial_battery_max: float = 1.0
    wifi_fraction: float = 0.7
    battery_enabled: bool = True
    min_round_s: float = 60.0
    fleet_csv: str | None = None

    def __post_init__(self):
        if self.n_clients < 1:
            raise ValueError("n_clients must be >= 1")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.k_per_round < 1:
            raise ValueError("k_per_round must be >= 1")
        if not self.round_deadline_s > 0:
            raise ValueError("round_deadline_s must be > 0")
        if not 0.0 <= self.blend_f <= 1.0:
            raise ValueError(f"blend_f must lie in [0, 1], got {self.blend_f}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if len(self.tier_mix) != 3 or min(self.tier_mix) < 0 or abs(sum(self.tier_mix) - 1.0) > 1e-9:
            raise ValueError(f"tier_mix must be three non-negative fractions summing to 1, got {self.tier_mix}")
        if self.model_bytes < 0:
            raise ValueError("model_bytes must be >= 0")
        if not 0.0 < self.report_quorum <= 1.0:
            raise ValueError(f"report_quorum must lie in (0, 1], got {self.report_quorum}")
        if not 0.0 <= self.initial_battery_min <= self.initial_battery_max <= 1.0:
            raise ValueError("initial battery range must satisfy 0 <= min <= max <= 1")
        if not 0.0 <= self.wifi_fraction <= 1.0:
            raise ValueError("wifi_fraction must lie in [0, 1]")
        if not 0.0 <= self.busy_other_prob <= 1.0:
            raise ValueError("busy_other_prob must lie in [0, 1]")
        if self.idle_drain_pct_per_hour < 0:
            raise ValueError("idle_drain_pct_per_hour must be >= 0")
        if not self.min_round_s > 0:
            raise ValueError("min_round_s must be > 0")
        if self.lr <= 0 or self.batch_size < 1 or self.local_epochs < 1:
            raise ValueError("lr must be > 0, batch_size and local_epochs >= 1")
        # raises on bad values
        self.utility_params
        self.yogi_params

    @property
    def utility_params(self) -> UtilityParams:
        return UtilityParams(self.round_deadline_s, self.straggler_alpha, self.blend_f)

    @property
    def yogi_params(self) -> YogiParams:
        return YogiParams(self.server_eta, self.server_beta1, self.server_beta2, self.server_tau)


@dataclass
class ClientRuntime:
    profile: DeviceProfile
    battery: BatteryState
    stats: ClientStats = field(default_factory=ClientStats)
    times_selected: int = 0


@dataclass
class RoundRecord:
    round: int
    sim_time_h: float
    round_duration_s: float
    accuracy: float
    train_loss: float
    dropouts_cumulative: int
    jains_index: float
    mean_battery_pct: float
    participants_completed: int
    round_failed: bool
    selected: tuple[int, ...] = ()


@dataclass(frozen=True)
class EnergyBalance:
    """Fleet battery decrease over a round next to the energy the round charged."""

    round: int
    fleet_decrease_j: float
    charged_j: float


def jains_index(times_selected) -> float:
    xs = [float(x) for x in times_selected]
    if not xs:
        raise ValueError("jains_index needs at least one count")
    if any(x < 0 for x in xs):
        raise ValueError("selection counts must be non-negative")
    sq = sum(x * x for x in xs)
    if sq == 0:
        return 1.0
    total = sum(xs)
    return total * total / (len(xs) * sq)


def _tier_counts(n: int, mix: tuple[float, float, float]) -> list[int]:
    # largest-remainder apportionment so the mix is hit as closely as n allows
    raw = [n * f for f in mix]
    counts = [math.floor(r) for r in raw]
    order = sorted(range(3), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def build_fleet(config: SimConfig) -> list[ClientRuntime]:
    rng = np.random.default_rng([config.seed, _FLEET])
    common = dict(
        battery_voltage=config.battery_voltage,
        idle_drain_pct_per_hour=config.idle_drain_pct_per_hour,
        busy_other_prob=config.busy_other_prob,
    )
    if config.fleet_csv:
        rows = energy.load_fleet_csv(config.fleet_csv)
        specs = [(r.client_id, r.tier, r.medium, r.battery_pct / 100.0) for r in rows]
    else:
        tiers = [t for t, c in zip(TIERS, _tier_counts(config.n_clients, config.tier_mix)) for _ in range(c)]
        rng.shuffle(tiers)
        wifi = rng.random(config.n_clients) < config.wifi_fraction
        charge = rng.uniform(config.initial_battery_min, config.initial_battery_max, config.n_clients)
        specs = [
            (i, tiers[i], Medium.WIFI if wifi[i] else Medium.THREE_G, float(charge[i]))
            for i in range(config.n_clients)
        ]

    fleet = []
    for cid, tier, medium, frac in specs:
        down, up = energy.sample_bandwidth(medium, rng)
        profile = DeviceProfile.from_tier(
            cid, tier, medium=medium, downlink_mbps=down, uplink_mbps=up, **common
        )
        battery = BatteryState.at_fraction(profile.capacity_joules, frac)
        fleet.append(ClientRuntime(profile, battery))
    return fleet


class Simulation:
    """Holds fleet, data and server state; ``run_round`` advances one select/train/aggregate cycle."""

    def __init__(self, config: SimConfig):
        self.config = config
        self.clients = build_fleet(config)
        n = len(self.clients)
        if n < config.k_per_round:
            log.warning("fleet has %d clients but k_per_round=%d; selections will be truncated",
                        n, config.k_per_round)
        self.data = generate_fleet_data(config.task, n, config.seed)
        self.shard_of = {c.profile.client_id: self.data.shards[i] for i, c in enumerate(self.clients)}
        self.by_id = {c.profile.client_id: c for c in self.clients}
        self.costs: dict[int, RoundCost] = {
            cid: round_cost(c.profile, config.model_bytes, len(self.shard_of[cid]), config.local_epochs)
            for cid, c in self.by_id.items()
        }
        self.model = ModelState.zeros(config.task.n_params, config.server_tau)
        self.sim_time_s = 0.0
        self.records: list[RoundRecord] = []
        self.energy_log: list[EnergyBalance] = []
        self.last_pool: CandidatePool | None = None
        self._charged = 0.0
        self._last_train_loss = math.log(config.task.num_labels)

    # -- helpers ---------------------------------------------------------

    def _rng(self, round_index: int, purpose: int) -> np.random.Generator:
        return np.random.default_rng([self.config.seed, round_index, purpose])

    def _charge(self, client: ClientRuntime, joules: float) -> None:
        if not self.config.battery_enabled or joules <= 0:
            return
        before = client.battery.remaining_joules
        client.battery = energy.drain(client.battery, joules)
        self._charged += before - client.battery.remaining_joules

    def fleet_energy(self) -> float:
        return sum(c.battery.remaining_joules for c in self.clients)

    def available(self) -> list[ClientRuntime]:
        return [c for c in self.clients if not c.battery.dropped]

    def dropouts(self) -> int:
        return sum(c.battery.dropped for c in self.clients)

    def candidate_pool(self, round_index: int) -> CandidatePool:
        return CandidatePool(
            [
                Candidate(c.profile.client_id, c.stats, c.battery, self.costs[c.profile.client_id].total_j)
                for c in self.available()
            ],
            round_index,
        )

    def select(self, round_index: int) -> list[int]:
        cfg = self.config
        pool = self.candidate_pool(round_index)
        self.last_pool = pool
        return select_top_k(pool, cfg.k_per_round, cfg.strategy, cfg.utility_params,
                            cfg.epsilon, self._rng(round_index, _SELECT))

    # -- round -----------------------------------------------------------

    def run_round(self, round_index: int) -> RoundRecord:
        cfg = self.config
        self._charged = 0.0
        before = self.fleet_energy()

        selected = sorted(self.select(round_index))
        completed: list[tuple[int, float]] = []
        for cid in selected:
            client = self.by_id[cid]
            client.times_selected += 1
            cost = self.costs[cid]
            for phase_j in (cost.download_j, cost.train_j, cost.upload_j):
                self._charge(client, phase_j)
                if client.battery.dropped:
                    break
            else:
                completed.append((cid, cost.duration_s))

        if completed:
            slowest = max(t for _, t in completed)
            duration = max(cfg.min_round_s, min(cfg.round_deadline_s, slowest))
        else:
            duration = cfg.min_round_s

        busy = self._rng(round_index, _BUSY).random(len(self.clients)) < np.array(
            [c.profile.busy_other_prob for c in self.clients]
        )
        chosen = set(selected)
        hours = duration / 3600.0
        for i, client in enumerate(self.clients):
            if client.profile.client_id in chosen or client.battery.dropped:
                continue
            self._charge(client, energy.idle_energy(client.battery, client.profile, hours, bool(busy[i])))

        updates = []
        losses = []
        for cid, t_i in completed:
            result = local_train(
                self.model.weights, self.shard_of[cid], cfg.lr, cfg.local_epochs, cfg.batch_size,
                seed=[cfg.seed, round_index, cid, _TRAIN], num_labels=cfg.task.num_labels,
            )
            self.by_id[cid].stats.record(len(self.shard_of[cid]), result.sum_sq_loss, t_i)
            updates.append((cid, result.delta, result.samples_used))
            losses.append(result.avg_loss)

        quorum = math.ceil(round(cfg.report_quorum * len(selected), 9))
        failed = not completed or len(completed) < quorum
        if not failed:
            y = cfg.yogi_params
            self.model = yogi_server_update(self.model, aggregate_fedavg(updates), y.eta, y.beta1, y.beta2, y.tau)
        if losses:
            self._last_train_loss = float(np.mean(losses))

        self.sim_time_s += duration
        self.energy_log.append(EnergyBalance(round_index, before - self.fleet_energy(), self._charged))
        accuracy, _ = evaluate(self.model.weights, self.data.test_set, cfg.task.num_labels)
        record = RoundRecord(
            round=round_index,
            sim_time_h=self.sim_time_s / 3600.0,
            round_duration_s=duration,
            accuracy=accuracy,
            train_loss=self._last_train_loss,
            dropouts_cumulative=self.dropouts(),
            jains_index=jains_index(c.times_selected for c in self.clients),
            mean_battery_pct=float(np.mean([c.battery.pct for c in self.clients])),
            participants_completed=len(completed),
            round_failed=failed,
            selected=tuple(selected),
        )
        self.records.append(record)
        return record

    def run(self) -> list[RoundRecord]:
        for r in range(len(self.records), self.config.rounds):
            self.run_round(r)
            if not self.available():
                log.info("fleet exhausted after round %d", r)
                break
        return self.records


def run_simulation(config: SimConfig) -> list[RoundRecord]:
    return Simulation(config).run()

