# SPDX-FileCopyrightText: 2024-present Marc Love <copyright@marclove.com>
#
# SPDX-License-Identifier: MIT

"""Experiment sweeps and result emission."""

from __future__ import annotations

import csv
import io
import logging
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from pydsnc.configuration import ExperimentConfig
from pydsnc.metrics import CSV_HEADER, MetricsReport
from pydsnc.overlay import dump_topology
from pydsnc.simulator import RunConfig, simulate

log = logging.getLogger(__name__)

RESULTS_CSV = "results.csv"
SUMMARY_JSONL = "summary.jsonl"


class EmitError(OSError):
    def __init__(self, message: str, path: str):
        super().__init__(message)
        self.path = path


@dataclass
class RunOutput:
    report: MetricsReport
    trace: Optional[str] = None
    topology: Optional[str] = None

    @property
    def stem(self) -> str:
        return f"{self.report.protocol}-{self.report.peers}-{self.report.seed}"


@dataclass
class ExperimentResult:
    reports: List[MetricsReport]
    files: List[str] = field(default_factory=list)


def _execute(job: Tuple[RunConfig, bool, bool]) -> RunOutput:
    config, want_trace, want_topology = job
    result = simulate(config)
    output = RunOutput(result.report)
    if want_trace:
        output.trace = "".join(line + "\n" for line in result.trace.lines())
    if want_topology:
        stream = io.StringIO()
        dump_topology(result.topology, stream)
        output.topology = stream.getvalue()
    if result.report.status != "ok":
        log.warning(
            "%s peers=%d seed=%d ended with status %s",
            result.report.protocol,
            result.report.peers,
            result.report.seed,
            result.report.status,
        )
    return output


def execute_runs(config: ExperimentConfig) -> List[RunOutput]:
    """Runs every (peer count, protocol, seed) combination, in that order.

    With ``jobs > 1`` runs are spread over a process pool; results keep the
    sweep order either way.
    """
    jobs = [(run, config.trace, config.topology_dump) for run in config.run_configs()]
    log.info("running %d simulations with %d worker(s)", len(jobs), config.jobs)
    if config.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            return list(pool.map(_execute, jobs))
    return [_execute(job) for job in jobs]


def csv_text(reports: Iterable[MetricsReport]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for report in reports:
        writer.writerow(report.csv_row())
    return buffer.getvalue()


def summary_text(reports: Iterable[MetricsReport]) -> str:
    return "".join(report.to_json() + "\n" for report in reports)


def _write_atomic(path: str, text: str) -> None:
    directory = os.path.dirname(path) or "."
    try:
        os.makedirs(directory, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".pydsnc-", suffix=".tmp")
    except OSError as e:
        raise EmitError(f"cannot write {path}: {e.strerror}", path) from e
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except OSError as e:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise EmitError(f"cannot write {path}: {e.strerror}", path) from e


def emit_results(
    reports: Sequence[MetricsReport],
    output_dir: str,
    extras: Optional[Dict[str, str]] = None,
) -> List[str]:
    """Writes ``results.csv`` and ``summary.jsonl`` (one JSON document per run).

    Every file is written to a temporary name and moved into place, so a
    reader never sees a half-written file. ``extras`` maps further file
    names (trace logs, topology dumps) to their content.

    Raises:
        ValueError: If ``reports`` is empty
        EmitError: If a file cannot be written
    """
    if not reports:
        raise ValueError("at least one report is required")

    files = {RESULTS_CSV: csv_text(reports), SUMMARY_JSONL: summary_text(reports)}
    files.update(extras or {})

    paths = []
    for name in sorted(files):
        path = os.path.join(output_dir, name)
        _write_atomic(path, files[name])
        paths.append(path)
    log.info("wrote %d result file(s) to %s", len(paths), output_dir)
    return paths


def summary_table(reports: Iterable[MetricsReport]) -> str:
    """Per peer count and protocol: mean finish times, stress, overhead and access traffic."""
    rows: Dict[Tuple[int, str], List[MetricsReport]] = {}
    for report in reports:
        rows.setdefault((report.peers, report.protocol), []).append(report)

    header = f"{'peers':>6} {'protocol':<8} {'runs':>4} {'avg_finish':>12} {'max_finish':>12} " \
             f"{'stress':>8} {'overhead':>12} {'access':>12} {'flagged':>7}"
    lines = [header, "-" * len(header)]
    for (peers, protocol), group in sorted(rows.items()):
        lines.append(
            f"{peers:>6} {protocol:<8} {len(group):>4} "
            f"{np.mean([r.avg_finish_time for r in group]):>12.3f} "
            f"{np.mean([r.max_finish_time for r in group]):>12.3f} "
            f"{np.mean([r.mean_link_stress for r in group]):>8.3f} "
            f"{np.mean([r.message_overhead for r in group]):>12.0f} "
            f"{np.mean([r.access_link_traffic for r in group]):>12.0f} "
            f"{sum(1 for r in group if r.status != 'ok'):>7}"
        )
    return "\n".join(lines)


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Runs the sweep described by ``config`` and emits its result files.

    A stalled or over-horizon run is kept as a flagged row; the sweep
    continues.
    """
    outputs = execute_runs(config)
    extras: Dict[str, str] = {}
    for output in outputs:
        if output.trace is not None:
            extras[f"trace-{output.stem}.log"] = output.trace
        if output.topology is not None:
            extras[f"topology-{output.stem}.txt"] = output.topology

    reports = [output.report for output in outputs]
    files = emit_results(reports, config.output_dir, extras)
    return ExperimentResult(reports, files)
