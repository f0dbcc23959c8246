"""Device profiles, battery ledgers and the computation/communication energy models."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

DEFAULT_VOLTAGE = 3.85
DEFAULT_IDLE_DRAIN_PCT_PER_HOUR = 0.5
DEFAULT_BUSY_OTHER_PROB = 0.1


class DeviceTier(enum.Enum):
    HIGH_END = "high"
    MID_RANGE = "mid"
    LOW_END = "low"

    @classmethod
    def parse(cls, name: str) -> "DeviceTier":
        key = name.strip().lower().replace("_", "").replace("-", "")
        aliases = {
            "high": cls.HIGH_END, "highend": cls.HIGH_END,
            "mid": cls.MID_RANGE, "midrange": cls.MID_RANGE, "midend": cls.MID_RANGE,
            "low": cls.LOW_END, "lowend": cls.LOW_END,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown device tier {name!r}") from None


@dataclass(frozen=True)
class TierSpec:
    avg_power_watts: float
    perf_per_watt: float
    battery_capacity_mah: float


# Mobile device measurements per category (average power, perf/W, battery capacity).
TIER_SPECS: dict[DeviceTier, TierSpec] = {
    DeviceTier.HIGH_END: TierSpec(6.33, 5.94, 4000.0),
    DeviceTier.MID_RANGE: TierSpec(5.44, 4.03, 3450.0),
    DeviceTier.LOW_END: TierSpec(2.98, 3.55, 3000.0),
}


class Medium(enum.Enum):
    WIFI = "wifi"
    THREE_G = "3g"

    @classmethod
    def parse(cls, name: str) -> "Medium":
        key = name.strip().lower().replace("-", "")
        if key in ("wifi", "wlan"):
            return cls.WIFI
        if key in ("3g", "threeg", "cellular"):
            return cls.THREE_G
        raise ValueError(f"unknown medium {name!r}")


class Direction(enum.Enum):
    DOWNLOAD = "download"
    UPLOAD = "upload"


@dataclass(frozen=True)
class CommEnergyLine:
    """Battery percentage consumed as a linear function of transfer hours."""

    slope: float
    intercept: float

    def __call__(self, hours: float) -> float:
        return self.slope * hours + self.intercept


COMM_ENERGY_LINES: dict[tuple[Medium, Direction], CommEnergyLine] = {
    (Medium.WIFI, Direction.DOWNLOAD): CommEnergyLine(18.09, 0.17),
    (Medium.WIFI, Direction.UPLOAD): CommEnergyLine(21.24, -2.68),
    (Medium.THREE_G, Direction.DOWNLOAD): CommEnergyLine(20.59, -1.09),
    (Medium.THREE_G, Direction.UPLOAD): CommEnergyLine(15.31, 2.67),
}


@dataclass(frozen=True)
class DeviceProfile:
    client_id: int
    tier: DeviceTier
    avg_power_watts: float
    perf_per_watt: float
    battery_capacity_mah: float
    battery_voltage: float = DEFAULT_VOLTAGE
    medium: Medium = Medium.WIFI
    downlink_mbps: float = 20.0
    uplink_mbps: float = 5.0
    idle_drain_pct_per_hour: float = DEFAULT_IDLE_DRAIN_PCT_PER_HOUR
    busy_other_prob: float = DEFAULT_BUSY_OTHER_PROB

    def __post_init__(self):
        if self.client_id < 0:
            raise ValueError(f"client_id must be >= 0, got {self.client_id}")
        for name in ("avg_power_watts", "perf_per_watt", "battery_capacity_mah",
                     "battery_voltage", "downlink_mbps", "uplink_mbps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.idle_drain_pct_per_hour < 0:
            raise ValueError("idle_drain_pct_per_hour must be >= 0")
        if not 0.0 <= self.busy_other_prob <= 1.0:
            raise ValueError("busy_other_prob must lie in [0, 1]")

    @classmethod
    def from_tier(cls, client_id: int, tier: DeviceTier, **overrides) -> "DeviceProfile":
        spec = TIER_SPECS[tier]
        return cls(
            client_id=client_id,
            tier=tier,
            avg_power_watts=spec.avg_power_watts,
            perf_per_watt=spec.perf_per_watt,
            battery_capacity_mah=spec.battery_capacity_mah,
            **overrides,
        )

    @property
    def capacity_joules(self) -> float:
        return battery_capacity_joules(self.battery_capacity_mah, self.battery_voltage)


@dataclass(frozen=True)
class BatteryState:
    capacity_joules: float
    remaining_joules: float
    dropped: bool = False

    def __post_init__(self):
        if not self.capacity_joules > 0:
            raise ValueError("capacity_joules must be > 0")
        if not 0.0 <= self.remaining_joules <= self.capacity_joules:
            raise ValueError(
                f"remaining_joules {self.remaining_joules} outside [0, {self.capacity_joules}]"
            )

    @classmethod
    def at_fraction(cls, capacity_joules: float, fraction: float) -> "BatteryState":
        remaining = capacity_joules * min(max(fraction, 0.0), 1.0)
        return cls(capacity_joules, remaining, dropped=remaining <= 0.0)

    @property
    def pct(self) -> float:
        return 100.0 * self.remaining_joules / self.capacity_joules


def battery_capacity_joules(capacity_mah: float, voltage: float) -> float:
    if capacity_mah <= 0 or voltage <= 0:
        raise ValueError(f"capacity and voltage must be positive, got {capacity_mah} mAh, {voltage} V")
    return capacity_mah / 1000.0 * voltage * 3600.0


def computation_energy(power_watts: float, duration_s: float) -> float:
    """Energy in joules of running at ``power_watts`` for ``duration_s`` seconds."""
    if power_watts <= 0:
        raise ValueError(f"power must be positive, got {power_watts}")
    if duration_s < 0:
        raise ValueError(f"duration must be non-negative, got {duration_s}")
    return power_watts * duration_s


def communication_energy_pct(medium: Medium, direction: Direction, hours: float) -> float:
    """Battery percentage spent transferring for ``hours``; clamped at 0 for short transfers."""
    if hours < 0:
        raise ValueError(f"hours must be non-negative, got {hours}")
    return max(0.0, COMM_ENERGY_LINES[medium, direction](hours))


def pct_to_joules(pct: float, capacity_joules: float) -> float:
    return pct / 100.0 * capacity_joules


def drain(battery: BatteryState, joules: float) -> BatteryState:
    if joules < 0:
        raise ValueError(f"cannot drain a negative amount ({joules} J)")
    if battery.dropped or joules == 0:
        return battery
    remaining = battery.remaining_joules - joules
    if remaining <= 0.0:
        return replace(battery, remaining_joules=0.0, dropped=True)
    return replace(battery, remaining_joules=remaining)


def idle_energy(battery: BatteryState, profile: DeviceProfile, hours: float, busy: bool) -> float:
    """Joules an unselected device spends over ``hours`` in the idle or busy state."""
    if hours < 0:
        raise ValueError(f"hours must be non-negative, got {hours}")
    if busy:
        return computation_energy(profile.avg_power_watts, hours * 3600.0)
    return pct_to_joules(profile.idle_drain_pct_per_hour * hours, battery.capacity_joules)


def idle_tick(battery: BatteryState, profile: DeviceProfile, hours: float, busy: bool) -> BatteryState:
    return drain(battery, idle_energy(battery, profile, hours, busy))


def throughput_samples_per_sec(profile: DeviceProfile) -> float:
    return profile.perf_per_watt * profile.avg_power_watts


def transfer_seconds(n_bytes: int, mbps: float) -> float:
    return n_bytes * 8.0 / (mbps * 1e6)


# Bandwidth ranges (Mbps) sampled per medium when building a synthetic fleet.
BANDWIDTH_RANGES = {
    Medium.WIFI: {"down": (10.0, 40.0), "up": (4.0, 16.0)},
    Medium.THREE_G: {"down": (1.0, 6.0), "up": (0.5, 2.0)},
}


def sample_bandwidth(medium: Medium, rng: np.random.Generator) -> tuple[float, float]:
    lo, hi = BANDWIDTH_RANGES[medium]["down"]
    down = float(rng.uniform(lo, hi))
    lo, hi = BANDWIDTH_RANGES[medium]["up"]
    up = float(rng.uniform(lo, hi))
    return down, up


@dataclass(frozen=True)
class FleetRow:
    client_id: int
    tier: DeviceTier
    battery_pct: float
    medium: Medium


FLEET_CSV_HEADER = ["client_id", "tier", "battery_pct", "medium"]


def load_fleet_csv(path: str | Path) -> list[FleetRow]:
    """Read a fleet profile file with columns client_id,tier,battery_pct,medium."""
    path = Path(path)
    rows: list[FleetRow] = []
    seen: set[int] = set()
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != FLEET_CSV_HEADER:
            raise ValueError(f"{path}: header must be {','.join(FLEET_CSV_HEADER)}, got {header}")
        for lineno, raw in enumerate(reader, start=2):
            if not raw or all(not cell.strip() for cell in raw):
                continue
            if len(raw) != len(FLEET_CSV_HEADER):
                raise ValueError(f"{path}:{lineno}: expected 4 columns, got {len(raw)}")
            try:
                cid = int(raw[0])
                tier = DeviceTier.parse(raw[1])
                pct = float(raw[2])
                medium = Medium.parse(raw[3])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            if cid < 0 or cid in seen:
                raise ValueError(f"{path}:{lineno}: client_id {cid} negative or duplicated")
            if not 0.0 <= pct <= 100.0:
                raise ValueError(f"{path}:{lineno}: battery_pct {pct} outside [0, 100]")
            seen.add(cid)
            rows.append(FleetRow(cid, tier, pct, medium))
    return rows
