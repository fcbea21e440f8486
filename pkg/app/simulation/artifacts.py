"""
Run artifacts: trace.csv, manifest.json and the time-to-accuracy report.
"""

import csv
from pathlib import Path
from typing import Iterable, Sequence

from app.schemas.simulation import ConvergenceRecord, RunManifest

TRACE_HEADER = ("epoch", "step", "wall_clock_s", "test_accuracy", "train_loss")


def write_trace(records: Iterable[ConvergenceRecord], path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\r\n")
        writer.writerow(TRACE_HEADER)
        for r in records:
            writer.writerow(
                [r.epoch, r.step, repr(r.wall_clock_s), repr(r.test_accuracy), repr(r.train_loss)]
            )


def read_trace(path: Path) -> list[ConvergenceRecord]:
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if tuple(reader.fieldnames or ()) != TRACE_HEADER:
            raise ValueError(f"unexpected trace header {reader.fieldnames}")
        return [ConvergenceRecord.model_validate(row) for row in reader]


def write_manifest(manifest: RunManifest, path: Path) -> None:
    Path(path).write_text(manifest.model_dump_json(indent=2, by_alias=True), encoding="utf-8")


def time_to_accuracy(records: Sequence[ConvergenceRecord], gamma: float) -> float | None:
    """First simulated time at which test accuracy reaches gamma."""
    for record in records:
        if record.test_accuracy >= gamma:
            return record.wall_clock_s
    return None


def speedup_row(
    dataset: str,
    gamma: float,
    uncoded: Sequence[ConvergenceRecord],
    coded: Sequence[ConvergenceRecord],
) -> str:
    """'dataset  gamma  t_U (h)  t_C (h)  gain' line for the summary table."""
    t_u = time_to_accuracy(uncoded, gamma)
    t_c = time_to_accuracy(coded, gamma)

    def hours(t: float | None) -> str:
        return "n/a" if t is None else f"{t / 3600.0:.0f}"

    gain = "n/a" if t_u is None or t_c is None or t_c == 0 else f"×{t_u / t_c:.2f}"
    return f"{dataset:<14} {100 * gamma:>5.1f} {hours(t_u):>8} {hours(t_c):>8} {gain:>7}"


SPEEDUP_HEADER = f"{'dataset':<14} {'gamma':>5} {'t_U (h)':>8} {'t_C (h)':>8} {'gain':>7}"


def speedup_table(rows: Sequence[tuple[str, float, Sequence[ConvergenceRecord], Sequence[ConvergenceRecord]]]) -> str:
    """Header plus one speedup_row per (dataset, gamma, uncoded, coded)."""
    return "\n".join([SPEEDUP_HEADER, *(speedup_row(*row) for row in rows)])
