"""Per-run CSV export and the multi-seed JSON summary."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import statistics
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

from .config import ExperimentSpec
from .selection import StrategyKind
from .simulator import RoundRecord, SimConfig, run_simulation

log = logging.getLogger(__name__)

CSV_COLUMNS = [
    "round",
    "sim_time_h",
    "round_duration_s",
    "accuracy",
    "train_loss",
    "dropouts_cum",
    "jains_index",
    "mean_battery_pct",
    "participants_completed",
    "round_failed",
]


def _real(x: float) -> str:
    return f"{x:.6f}"


def csv_row(r: RoundRecord) -> list[str]:
    return [
        str(r.round),
        _real(r.sim_time_h),
        _real(r.round_duration_s),
        _real(r.accuracy),
        _real(r.train_loss),
        str(r.dropouts_cumulative),
        _real(r.jains_index),
        _real(r.mean_battery_pct),
        str(r.participants_completed),
        "true" if r.round_failed else "false",
    ]


def render_csv(records: Sequence[RoundRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    writer.writerows(csv_row(r) for r in records)
    return buf.getvalue()


def emit_csv(records: Sequence[RoundRecord], path: str | Path) -> None:
    if not records:
        raise ValueError("no records to write")
    path = Path(path)
    try:
        path.write_text(render_csv(records))
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def read_csv(path: str | Path) -> list[dict[str, Any]]:
    """Parse a run CSV back into typed rows."""
    rows = []
    with Path(path).open(newline="") as fh:
        for raw in csv.DictReader(fh):
            row: dict[str, Any] = {}
            for key, value in raw.items():
                if key == "round_failed":
                    row[key] = value == "true"
                elif key in ("round", "dropouts_cum", "participants_completed"):
                    row[key] = int(value)
                else:
                    row[key] = float(value)
            rows.append(row)
    return rows


@dataclass
class RunOutcome:
    strategy: StrategyKind
    seed: int
    final_accuracy: float
    final_dropouts: int
    final_jains: float
    time_to_target_h: float | None
    rounds: int
    failed_rounds: int


def outcome_from_rows(strategy: StrategyKind, seed: int, rows: Sequence[dict[str, Any]],
                      target_accuracy: float) -> RunOutcome:
    last = rows[-1]
    reached = next((r["sim_time_h"] for r in rows if r["accuracy"] >= target_accuracy), None)
    return RunOutcome(
        strategy=strategy,
        seed=seed,
        final_accuracy=last["accuracy"],
        final_dropouts=last["dropouts_cum"],
        final_jains=last["jains_index"],
        time_to_target_h=reached,
        rounds=len(rows),
        failed_rounds=sum(r["round_failed"] for r in rows),
    )


def _mean_std(values: Iterable[float]) -> dict[str, Any]:
    xs = [float(v) for v in values]
    if not xs:
        return {"mean": None, "std": None, "n": 0}
    return {
        "mean": statistics.fmean(xs),
        "std": statistics.stdev(xs) if len(xs) > 1 else None,
        "n": len(xs),
    }


def _ratio(num: float | None, den: float | None) -> float | None:
    if num is None or den is None or num <= 0 or den <= 0:
        return None
    return num / den


@dataclass
class SummaryReport:
    target_accuracy: float
    outcomes: list[RunOutcome] = field(default_factory=list)

    def by_strategy(self) -> dict[StrategyKind, list[RunOutcome]]:
        groups: dict[StrategyKind, list[RunOutcome]] = {}
        for o in self.outcomes:
            groups.setdefault(o.strategy, []).append(o)
        return groups

    def strategy_summary(self) -> dict[str, dict[str, Any]]:
        out = {}
        for strategy, runs in self.by_strategy().items():
            reached = [o.time_to_target_h for o in runs if o.time_to_target_h is not None]
            out[strategy.value] = {
                "seeds": [o.seed for o in runs],
                "final_accuracy": _mean_std(o.final_accuracy for o in runs),
                "final_dropouts": _mean_std(o.final_dropouts for o in runs),
                "final_jains_index": _mean_std(o.final_jains for o in runs),
                "time_to_target_h": _mean_std(reached),
                "target_reached_runs": len(reached),
                "rounds": _mean_std(o.rounds for o in runs),
                "failed_rounds": _mean_std(o.failed_rounds for o in runs),
            }
        return out

    def comparisons(self) -> dict[str, dict[str, float | None]]:
        """Baseline-vs-EAFL dropout ratio and relative accuracy gain, when both sides are positive."""
        summary = self.strategy_summary()
        eafl = summary.get(StrategyKind.EAFL.value)
        if eafl is None:
            return {}
        out = {}
        for name, stats in summary.items():
            if name == StrategyKind.EAFL.value:
                continue
            base_acc = stats["final_accuracy"]["mean"]
            eafl_acc = eafl["final_accuracy"]["mean"]
            gain = _ratio(eafl_acc, base_acc)
            out[f"{name}_vs_eafl"] = {
                "dropout_ratio": _ratio(stats["final_dropouts"]["mean"], eafl["final_dropouts"]["mean"]),
                "accuracy_improvement": None if gain is None else gain - 1.0,
            }
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "target_accuracy": self.target_accuracy,
            "strategies": self.strategy_summary(),
            "comparisons": self.comparisons(),
        }


def run_filename(strategy: StrategyKind, seed: int) -> str:
    return f"{strategy.value}_seed{seed}.csv"


def check_writable(directory: Path) -> None:
    try:
        directory.mkdir(parents=True, exist_ok=True)
        fd, probe = tempfile.mkstemp(dir=directory, prefix=".probe-")
        os.close(fd)
        os.unlink(probe)
    except OSError as exc:
        raise OSError(f"output directory {directory} is not writable: {exc.strerror or exc}") from exc


def _run(config: SimConfig) -> list[RoundRecord]:
    return run_simulation(config)


def run_experiments(spec: ExperimentSpec) -> SummaryReport:
    """Run every (strategy, seed) pair, write one CSV each plus ``summary.json``."""
    out_dir = Path(spec.output_dir)
    check_writable(out_dir)
    configs = spec.run_configs()
    if spec.jobs > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
            results = list(pool.map(_run, configs))
    else:
        results = []
        for cfg in configs:
            log.info("running %s seed=%d", cfg.strategy.value, cfg.seed)
            results.append(_run(cfg))

    report = SummaryReport(spec.target_accuracy)
    for cfg, records in zip(configs, results):
        path = out_dir / run_filename(cfg.strategy, cfg.seed)
        emit_csv(records, path)
        # summarise the rendered values so the JSON agrees with what the CSVs hold
        rows = read_csv(path)
        report.outcomes.append(outcome_from_rows(cfg.strategy, cfg.seed, rows, spec.target_accuracy))

    summary_path = out_dir / "summary.json"
    try:
        summary_path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {summary_path}: {exc.strerror or exc}") from exc
    return report
