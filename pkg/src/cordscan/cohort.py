"""Per-(subject, level) metric table: the interchange format between the
image half and the statistics half of the pipeline."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from cordscan.errors import DuplicateRow

METRICS = ("fww", "stick_ad", "ad", "fa", "md", "rd")
GROUPS = ("healthy", "patient")
CSV_COLUMNS = ("subject", "group", "level") + METRICS + ("lesion_fraction",)


@dataclass
class CohortRow:
    subject: str
    group: str
    level: int
    values: dict[str, float]       # metric id -> weighted mean
    lesion_fraction: float = 0.0

    def __post_init__(self):
        if self.group not in GROUPS:
            raise ValueError(f"group must be one of {GROUPS}, got {self.group!r}")
        missing = [m for m in METRICS if m not in self.values]
        if missing:
            raise ValueError(f"row for {self.subject}/level {self.level} "
                             f"missing metrics {missing}")
        bad = [m for m in METRICS if not np.isfinite(self.values[m])]
        if bad:
            raise ValueError(f"non-finite metrics {bad} for {self.subject}")


class CohortTable:
    """Rows keyed by (subject, level); at most one row per key."""

    def __init__(self, rows=()):
        self.rows: list[CohortRow] = []
        for row in rows:
            self.append(row)

    def append(self, row: CohortRow) -> None:
        key = (row.subject, row.level)
        if any((r.subject, r.level) == key for r in self.rows):
            raise DuplicateRow(f"duplicate row for subject {row.subject!r} "
                               f"level {row.level}")
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def v_rows(self) -> list[CohortRow]:
        """Healthy-volunteer rows."""
        return [r for r in self.rows if r.group == "healthy"]

    def nawm_rows(self) -> list[CohortRow]:
        """Patient rows with no detected lesion."""
        return [r for r in self.rows if r.group == "patient"
                and r.lesion_fraction == 0.0]

    def metric_values(self, rows, metric: str) -> np.ndarray:
        return np.array([r.values[metric] for r in rows], dtype=np.float64)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            for r in self.rows:
                writer.writerow([r.subject, r.group, r.level]
                                + [repr(float(r.values[m])) for m in METRICS]
                                + [repr(float(r.lesion_fraction))])

    @classmethod
    def from_csv(cls, path) -> "CohortTable":
        table = cls()
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = set(CSV_COLUMNS) - set(reader.fieldnames or ())
            if missing:
                raise ValueError(f"{path}: missing columns {sorted(missing)}")
            for rec in reader:
                table.append(CohortRow(
                    subject=rec["subject"],
                    group=rec["group"],
                    level=int(rec["level"]),
                    values={m: float(rec[m]) for m in METRICS},
                    lesion_fraction=float(rec["lesion_fraction"])))
        return table


def select_ms_rows(table: CohortTable, thr: float) -> list[CohortRow]:
    """Patient rows whose lesion fraction exceeds thr (strict)."""
    if not 0.0 <= thr <= 1.0:
        raise ValueError(f"thr = {thr} outside [0, 1]")
    return [r for r in table.rows if r.group == "patient"
            and r.lesion_fraction > thr]
