"""Report records, aggregation, and the CSV / JSON files written per run."""

from __future__ import annotations

import csv
import io
import json
import math
from collections import defaultdict
from collections.abc import Iterable
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from . import __version__

RESULTS_HEADER = ("estimator", "setting", "seed", "metric", "value")
SUMMARY_HEADER = ("estimator", "setting", "metric", "n", "mean", "stderr")
RESULTS_FILE = "results.csv"
SUMMARY_FILE = "summary.csv"
MANIFEST_FILE = "manifest.json"


def fmt(value: float) -> str:
    """Decimal text with 9 significant digits."""
    return f"{value:.9g}"


def quantize(value: float) -> float:
    """Round ``value`` to what :func:`fmt` writes, so records survive a CSV round trip."""
    return float(fmt(float(value)))


@dataclass(frozen=True, order=True)
class Record:
    estimator: str
    setting: float
    seed: int
    metric: str
    value: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "setting", quantize(self.setting))
        object.__setattr__(self, "value", quantize(self.value))
        object.__setattr__(self, "seed", int(self.seed))

    def csv_row(self) -> tuple[str, ...]:
        return (self.estimator, fmt(self.setting), str(self.seed), self.metric, fmt(self.value))


@dataclass(frozen=True)
class SummaryCell:
    estimator: str
    setting: float
    metric: str
    n: int
    mean: float
    stderr: float

    def csv_row(self) -> tuple[str, ...]:
        return (self.estimator, fmt(self.setting), self.metric, str(self.n), fmt(self.mean), fmt(self.stderr))


def summarize(rows: Iterable[Record]) -> list[SummaryCell]:
    """Mean and standard error of the mean per ``(estimator, setting, metric)`` cell."""
    cells: dict[tuple[str, float, str], list[float]] = defaultdict(list)
    for r in rows:
        cells[(r.estimator, r.setting, r.metric)].append(r.value)
    out = []
    for (est, setting, metric), values in cells.items():
        n = len(values)
        mean = math.fsum(values) / n
        if n > 1:
            var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
            stderr = math.sqrt(var / n)
        else:
            stderr = 0.0
        out.append(SummaryCell(est, setting, metric, n, mean, stderr))
    return out


@dataclass
class ExperimentReport:
    """Raw per-seed rows plus provenance; the summary is derived on demand."""

    rows: list[Record] = field(default_factory=list)
    provenance: dict[str, Any] = field(default_factory=dict)

    @property
    def summary(self) -> list[SummaryCell]:
        return summarize(self.rows)

    def cell(self, estimator: str, setting: float, metric: str) -> SummaryCell:
        setting = quantize(setting)
        for c in self.summary:
            if (c.estimator, c.setting, c.metric) == (estimator, setting, metric):
                return c
        raise KeyError((estimator, setting, metric))

    def values(self, estimator: str, setting: float, metric: str) -> list[float]:
        """Per-seed values of one cell, ordered by seed."""
        setting = quantize(setting)
        picked = [r for r in self.rows if (r.estimator, r.setting, r.metric) == (estimator, setting, metric)]
        return [r.value for r in sorted(picked, key=lambda r: r.seed)]

    def estimators(self) -> list[str]:
        return list(dict.fromkeys(r.estimator for r in self.rows))

    def settings(self) -> list[float]:
        return sorted({r.setting for r in self.rows})


def _csv_text(header: tuple[str, ...], rows: Iterable[tuple[str, ...]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def results_csv(rows: Iterable[Record]) -> str:
    return _csv_text(RESULTS_HEADER, (r.csv_row() for r in rows))


def summary_csv(cells: Iterable[SummaryCell]) -> str:
    return _csv_text(SUMMARY_HEADER, (c.csv_row() for c in cells))


def write_report(report: ExperimentReport, out_dir: str | Path, figures: bool = True) -> list[Path]:
    """Write ``results.csv``, ``summary.csv``, ``manifest.json`` and (optionally) figures.

    Raises:
        OSError: If ``out_dir`` cannot be created or written.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, text in ((RESULTS_FILE, results_csv(report.rows)), (SUMMARY_FILE, summary_csv(report.summary))):
        path = out / name
        path.write_text(text, encoding="utf-8", newline="")
        written.append(path)
    manifest = {"tool": "ivdg", "tool_version": __version__, **report.provenance}
    path = out / MANIFEST_FILE
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    written.append(path)
    if figures and report.rows:
        from .plotting import render_report

        written.extend(render_report(report, out))
    return written


def read_results(path: str | Path) -> list[Record]:
    """Parse a ``results.csv`` back into records."""
    path = Path(path)
    if path.is_dir():
        path = path / RESULTS_FILE
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != RESULTS_HEADER:
            raise ValueError(f"unexpected results header {header}")
        return [Record(est, float(setting), int(seed), metric, float(value)) for est, setting, seed, metric, value in reader]


def read_report(in_dir: str | Path) -> ExperimentReport:
    in_dir = Path(in_dir)
    rows = read_results(in_dir / RESULTS_FILE)
    manifest_path = in_dir / MANIFEST_FILE
    provenance = json.loads(manifest_path.read_text()) if manifest_path.exists() else {}
    return ExperimentReport(rows=rows, provenance=provenance)


def format_summary(cells: Iterable[SummaryCell]) -> str:
    """Fixed-width text table of summary cells."""
    cells = list(cells)
    header = ("estimator", "setting", "metric", "n", "mean", "stderr")
    body = [(c.estimator, fmt(c.setting), c.metric, str(c.n), f"{c.mean:.6g}", f"{c.stderr:.3g}") for c in cells]
    widths = [max(len(h), *(len(r[i]) for r in body)) if body else len(h) for i, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines.extend("  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in body)
    return "\n".join(lines)
