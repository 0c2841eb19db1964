"""
Console rendering for the command-line interface.

Machine-readable output (JSON documents, CSV status lines) goes to stdout;
human-readable summaries go to stderr so that stdout can be piped.
"""
import sys
from typing import IO, Any, Dict, Optional

import pandas as pd

from core.breakpoint import BreakEstimate
from core.detectors import TestReport
from core.monitor_engine import MonitorReport, MonitorStatus
from services.critical_values import CriticalValueTable
from services.replication import ExperimentReport
from services.report_service import ReportService

STATUS_COLUMNS = ("t", "value", "boundary", "crossed", "stopping_time")

# Row/column layout of the pivoted experiment tables
PIVOTS = {
    "3": (["k", "T"], "detector", "estimate"),
    "4": (["model", "tau_star"], "detector", "estimate"),
    "5": (["k", "T", "m"], "detector", "estimate"),
    "6": (["model", "tau_star"], "detector", "estimate"),
    "7": (["T", "tau_star"], "method", ["bias", "mse"]),
}


def _fmt(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


class ConsoleUI:
    """Renders reports for the terminal"""

    def __init__(self, out: Optional[IO[str]] = None, err: Optional[IO[str]] = None, quiet: bool = False):
        self.out = out or sys.stdout
        self.err = err or sys.stderr
        self.quiet = quiet

    def emit_json(self, doc: Dict[str, Any]):
        self.out.write(ReportService.dumps(doc) + "\n")
        self.out.flush()

    def note(self, message: str):
        """One line of human-readable context on stderr"""
        if not self.quiet:
            self.err.write(message + "\n")
            self.err.flush()

    # Monitoring

    def render_status_header(self):
        self.out.write(",".join(STATUS_COLUMNS) + "\n")

    def render_status(self, status: MonitorStatus):
        row = status.to_dict()
        self.out.write(",".join(_fmt(row[c]) for c in STATUS_COLUMNS) + "\n")
        self.out.flush()

    def render_monitor_summary(self, report: MonitorReport):
        last = report.statuses[-1].t if report.statuses else report.T
        if report.detected:
            self.note(f"Break detected at t={report.stopping_time} (history T={report.T})")
        elif report.horizon_reached:
            self.note(f"No detection up to the monitoring horizon (t={last})")
        else:
            self.note(f"No detection; stream ended at t={last}")

    # Retrospective and estimation

    def render_test_summary(self, report: TestReport):
        verdict = "REJECT" if report.reject else "no rejection"
        line = (f"{report.detector.upper()} ({report.boundary}, nu={report.nu}): "
                f"statistic={report.statistic:.4f} lambda={report.lam:.4f} -> {verdict}")
        if report.first_crossing is not None:
            line += f", first crossing t={report.first_crossing}"
        self.note(line)

    def render_break_summary(self, estimate: BreakEstimate):
        line = f"{estimate.method.upper()} break estimate t_hat={estimate.t_hat} (tau_hat={estimate.tau_hat:.4f}"
        if estimate.tau_hat_mon is not None:
            line += f", tau_hat_mon={estimate.tau_hat_mon:.4f}"
        self.note(line + ")")

    # Tables

    def render_critical_values(self, table: CriticalValueTable):
        frame = table.to_frame()
        if frame.empty:
            self.note("(empty critical value table)")
            return
        pivot = frame.pivot_table(index=["kind", "boundary", "horizon", "nu"], columns="alpha",
                                  values="value", aggfunc="first")
        self.note(pivot.round(3).to_string())

    def pivot_experiment(self, report: ExperimentReport) -> pd.DataFrame:
        index, columns, values = PIVOTS[report.table]
        return report.cells.pivot_table(index=index, columns=columns, values=values, aggfunc="first")

    def render_experiment(self, report: ExperimentReport):
        self.note(f"Table {report.table}: {report.reps} replications, seed {report.seed}, "
                  f"{report.runtime:.1f}s")
        self.note(self.pivot_experiment(report).round(3).to_string())

    def render_curve(self, frame: pd.DataFrame, title: str):
        self.note(title)
        self.note(frame.to_string(index=False))
