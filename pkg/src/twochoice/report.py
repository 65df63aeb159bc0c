"""Experiment results and the on-disk report format.

A run directory holds ``raw.jsonl`` (one snapshot summary per line),
``summary.csv`` (aggregate rows, each carrying the full parameter tuple and
seed), ``report.txt`` (human-readable summary), ``result.json`` (the result in
machine-readable form, used by the ``report`` subcommand) and one
``series_<name>.tsv`` two-column file per plot-ready series.
"""
from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import asdict, dataclass, field

__all__ = ["ExperimentResult", "emit_report", "write_raw", "load_result"]


def _plain(x):
    """Convert numpy scalars/arrays and tuples into JSON-friendly values."""
    if hasattr(x, "tolist"):
        return x.tolist()
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


@dataclass
class ExperimentResult:
    experiment: str
    params: dict
    settings: dict = field(default_factory=dict)
    table: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    series: dict = field(default_factory=dict)
    lines: list = field(default_factory=list)

    def add_check(self, name: str, value, threshold: str, passed: bool):
        self.checks.append({"check": name, "value": _plain(value),
                            "threshold": threshold, "passed": bool(passed)})

    def add_row(self, **fields):
        self.table.append({**self.params, **{k: _plain(v) for k, v in fields.items()}})

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def to_json(self) -> str:
        return json.dumps(_plain(asdict(self)), sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentResult":
        return cls(**json.loads(text))


def load_result(directory: str) -> ExperimentResult:
    with open(os.path.join(directory, "result.json")) as fh:
        return ExperimentResult.from_json(fh.read())


def write_raw(path: str, rows) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(_plain(row), sort_keys=True) + "\n")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, list):
        return "(" + ", ".join(_fmt(x) for x in v) + ")"
    return str(v)


def _csv_text(rows: list[dict]) -> str:
    columns: list[str] = []
    for row in rows:
        for k in row:
            if k not in columns:
                columns.append(k)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: json.dumps(v) if isinstance(v, (list, dict)) else v
                         for k, v in row.items()})
    return buf.getvalue()


def _report_text(results: list[ExperimentResult]) -> str:
    out = []
    for res in results:
        out.append(f"== {res.experiment} ==")
        out.append("parameters: " + ", ".join(f"{k}={_fmt(v)}" for k, v in res.params.items()))
        if res.settings:
            out.append("settings:   " + ", ".join(f"{k}={_fmt(v)}"
                                                  for k, v in res.settings.items()))
        out.extend(res.lines)
        if res.table:
            out.append("")
            keys = [k for k in res.table[0] if k not in res.params]
            out.append("  " + " | ".join(keys))
            for row in res.table:
                out.append("  " + " | ".join(_fmt(row.get(k, "")) for k in keys))
        if res.checks:
            out.append("")
            for c in res.checks:
                mark = "PASS" if c["passed"] else "FAIL"
                out.append(f"  [{mark}] {c['check']}: {_fmt(c['value'])} ({c['threshold']})")
        out.append("")
    return "\n".join(out)


def emit_report(results: list[ExperimentResult], out_dir: str) -> str:
    """Write report.txt, summary.csv and series files; returns the report text."""
    if not results:
        raise ValueError("need at least one result")
    os.makedirs(out_dir, exist_ok=True)
    text = _report_text(results)
    with open(os.path.join(out_dir, "report.txt"), "w") as fh:
        fh.write(text)
    rows = [dict(experiment=r.experiment, **row) for r in results for row in r.table]
    if rows:
        with open(os.path.join(out_dir, "summary.csv"), "w") as fh:
            fh.write(_csv_text(rows))
    for res in results:
        for name, points in res.series.items():
            fname = f"series_{res.experiment}_{name}.tsv"
            with open(os.path.join(out_dir, fname), "w") as fh:
                for x, y in points:
                    fh.write(f"{float(x)!r}\t{float(y)!r}\n")
    return text
