"""
Structural break monitor: command-line entry point

Subcommands:
    test            retrospective CUSUM test on a CSV sample
    monitor         online monitoring of an observation stream
    critval         simulate critical values or local-limit curves
    replicate       run a finite-sample experiment table
    estimate-break  estimate the break date in a CSV sample

Exit codes: 0 = no rejection/detection, 2 = rejection/detection, 1 = error.
"""
import argparse
import logging
import os
import sys
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import pandas as pd

from config.settings import (
    BOUNDARY_KINDS,
    DETECTOR_KINDS,
    LOG_FILE,
    LOG_FORMAT,
    LOG_LEVEL,
    LOGS_DIR,
    SIMULATION_SETTINGS,
)
from core.breakpoint import estimate_break
from core.detectors import DetectorConfig, retrospective_test
from core.exceptions import ConfigurationError, CusumError
from core.monitor_engine import MonitorState, monitor_init, monitor_run
from services.critical_values import CriticalValueTable, horizon_tag, parse_horizon
from services.dataset_service import DatasetService
from services.limit_sim import build_table, critical_value, delay_curve, power_curve, size_distribution
from services.mc_runner import new_seed
from services.replication import ReplicationHarness
from services.report_service import ReportService
from ui.console import ConsoleUI

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_DETECTED = 2


class CliParser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit with the error code, not the detection code"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


# Options a saved monitor state already fixes
RESUME_FIXED_OPTIONS = {
    "history": "--history",
    "detector": "--detector",
    "boundary": "--boundary",
    "alpha": "--alpha",
    "horizon": "--horizon",
    "lam": "--lam",
    "H": "--H",
    "table": "--table",
    "max_retained": "--max-retained",
}


def _opt(args: argparse.Namespace, name: str, default):
    value = getattr(args, name, None)
    return default if value is None else value


@dataclass
class RunConfig:
    """Validated command-line options of one invocation"""

    subcommand: str
    inputs: List[str] = field(default_factory=list)
    detector: str = "q"
    boundary: str = "linear"
    alpha: float = 0.05
    horizon: Optional[float] = None
    nu: Optional[int] = None
    H_path: Optional[str] = None
    lam: Optional[float] = None
    table_path: Optional[str] = None
    seed: Optional[int] = None
    reps: Optional[int] = None
    grid: Optional[int] = None
    workers: Optional[int] = None
    output: Optional[str] = None
    fmt: str = "json"

    def __post_init__(self):
        if self.detector not in DETECTOR_KINDS + ("csw",):
            raise ConfigurationError(f"unknown detector '{self.detector}'")
        if self.detector == "csw":
            self.detector, self.boundary = "q", "radical_chu"
        if self.boundary not in BOUNDARY_KINDS:
            raise ConfigurationError(f"unknown boundary '{self.boundary}'")
        if self.boundary == "radical_chu":
            if self.detector != "q":
                raise ConfigurationError("the radical boundary needs the forward detector")
            if self.nu not in (None, 1):
                raise ConfigurationError("the radical boundary needs nu = 1")
            if self.subcommand in ("test", "estimate-break"):
                raise ConfigurationError("the radical boundary is only available for monitoring")
        if self.fmt not in ("json", "csv"):
            raise ConfigurationError(f"unknown output format '{self.fmt}'")
        if self.seed is not None and self.seed < 0:
            raise ConfigurationError("seed must be non-negative")

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "RunConfig":
        horizon = getattr(args, "horizon", None)
        if horizon is None and args.command == "monitor":
            horizon = "inf"
        return cls(
            subcommand=args.command,
            inputs=[p for p in (getattr(args, "input", None), getattr(args, "history", None)) if p],
            detector=_opt(args, "detector", "q"),
            boundary=_opt(args, "boundary", "linear"),
            alpha=_opt(args, "alpha", 0.05),
            horizon=parse_horizon(horizon) if isinstance(horizon, str) else horizon,
            nu=getattr(args, "nu", None),
            H_path=getattr(args, "H", None),
            lam=getattr(args, "lam", None),
            table_path=getattr(args, "table", None),
            seed=getattr(args, "seed", None),
            reps=getattr(args, "reps", None),
            grid=getattr(args, "grid", None),
            workers=getattr(args, "workers", None),
            output=getattr(args, "output", None),
            fmt=getattr(args, "format", "json"),
        )

    def ensure_seed(self, ui: ConsoleUI) -> int:
        """Use --seed, or generate one and print it so the run can be repeated"""
        if self.seed is None:
            self.seed = new_seed()
            ui.err.write(f"seed: {self.seed}\n")
        return self.seed

    def detector_config(self, datasets: DatasetService) -> DetectorConfig:
        H = datasets.load_projection(self.H_path) if self.H_path else None
        table = CriticalValueTable.load(self.table_path) if self.table_path else None
        return DetectorConfig(kind=self.detector, boundary=self.boundary, alpha=self.alpha,
                              horizon=self.horizon, lam=self.lam, H=H, table=table)


class BreakMonitorApp:
    """Dispatches the subcommands"""

    def __init__(self, ui: Optional[ConsoleUI] = None):
        self.ui = ui or ConsoleUI()
        self.datasets = DatasetService()
        self.reports = ReportService()

    def _write(self, cfg: RunConfig, doc, frame: Optional[pd.DataFrame] = None):
        doc = self.reports.with_metadata(doc, command=cfg.subcommand, seed=cfg.seed)
        if cfg.output:
            self.reports.save(doc, frame, cfg.output, fmt=cfg.fmt)
        elif cfg.fmt == "csv" and frame is not None:
            frame.to_csv(self.ui.out, index=False)
        else:
            self.ui.emit_json(doc)

    def run_test(self, args, cfg: RunConfig) -> int:
        data = self.datasets.load_dataset(args.input)
        report = retrospective_test(data, cfg.detector_config(self.datasets))
        doc = report.to_dict(include_trace=not args.no_trace)
        frame = pd.DataFrame(doc.get("trace", []), columns=["t", "value", "boundary"])
        self._write(cfg, doc, frame)
        self.ui.render_test_summary(report)
        return EXIT_DETECTED if report.reject else EXIT_OK

    def run_monitor(self, args, cfg: RunConfig) -> int:
        if args.resume:
            given = [flag for name, flag in RESUME_FIXED_OPTIONS.items() if getattr(args, name, None) is not None]
            if given:
                raise ConfigurationError(
                    f"--resume restores the saved detector settings; drop {', '.join(given)}"
                )
            state = MonitorState.load(args.resume)
            logger.info("Resumed monitor at t=%d from %s", state.t_now, args.resume)
        else:
            if not args.history:
                raise ConfigurationError("monitor needs --history or --resume")
            if cfg.horizon is None:
                raise ConfigurationError("monitor needs --horizon (a number above 1, or 'inf')")
            historical = self.datasets.load_dataset(args.history)
            state = monitor_init(historical, cfg.detector_config(self.datasets), max_retained=args.max_retained)

        stream = self.datasets.open_stream(args.stream)
        try:
            if not args.no_header:
                self.ui.render_status_header()
            report = monitor_run(state, self.datasets.iter_stream(stream, state.k),
                                 true_break=args.true_break, stop_on_detect=args.stop_on_detect,
                                 on_status=self.ui.render_status)
        finally:
            if stream is not sys.stdin:
                stream.close()

        if args.save_state:
            state.save(args.save_state)
            logger.info("Saved monitor state to %s", args.save_state)
        if cfg.output:
            doc = self.reports.with_metadata(report.to_dict(), command=cfg.subcommand)
            self.reports.save(doc, report.to_frame(), cfg.output, fmt=cfg.fmt)
        self.ui.render_monitor_summary(report)
        return EXIT_DETECTED if report.detected else EXIT_OK

    def run_critval(self, args, cfg: RunConfig) -> int:
        seed = cfg.ensure_seed(self.ui)
        n_grid = cfg.grid or (SIMULATION_SETTINGS["full_n_grid"] if args.full_scale else None)
        n_reps = cfg.reps or (SIMULATION_SETTINGS["full_n_reps"] if args.full_scale else None)
        common = dict(n_grid=n_grid, n_reps=n_reps, seed=seed, workers=cfg.workers)

        if args.figure:
            frame = self._figure(args, cfg, common)
            doc = {"figure": args.figure, "kind": cfg.detector, "horizon": horizon_tag(cfg.horizon),
                   "points": frame.to_dict(orient="records")}
            self._write(cfg, doc, frame)
            self.ui.render_curve(frame, f"{args.figure} curve for {cfg.detector}")
            return EXIT_OK

        kinds = args.kind or [cfg.detector]
        if cfg.boundary == "radical_chu" or len(kinds) == 1 and len(args.nu_list) == 1 and len(args.alpha_list) == 1:
            value = critical_value(kinds[0], args.nu_list[0], cfg.horizon, cfg.boundary, args.alpha_list[0], **common)
            table = CriticalValueTable(metadata={"n_grid": n_grid or SIMULATION_SETTINGS["n_grid"],
                                                 "n_reps": n_reps or SIMULATION_SETTINGS["n_reps"], "seed": seed})
            table.add(kinds[0], args.nu_list[0], args.alpha_list[0], value,
                      boundary=cfg.boundary, horizon=cfg.horizon)
        else:
            table = build_table(kinds, args.nu_list, args.alpha_list, [cfg.horizon], **common)
        self._write(cfg, table.to_dict(), table.to_frame())
        self.ui.render_critical_values(table)
        return EXIT_OK

    def _figure(self, args, cfg: RunConfig, common) -> pd.DataFrame:
        if args.figure == "power":
            return power_curve(cfg.detector, args.tau_star, args.c_values, alpha=cfg.alpha,
                               horizon=cfg.horizon, **common)
        if args.figure == "delay":
            m = 4.0 if cfg.horizon is None else cfg.horizon
            return delay_curve(cfg.detector, args.c, args.tau_values, alpha=cfg.alpha, m=m,
                               boundary=cfg.boundary, **common)
        return size_distribution(cfg.detector, cfg.horizon, alpha=cfg.alpha, boundary=cfg.boundary,
                                 bins=args.bins, **common)

    def run_replicate(self, args, cfg: RunConfig) -> int:
        seed = cfg.ensure_seed(self.ui)
        harness = ReplicationHarness(n_reps=cfg.reps, seed=seed, workers=cfg.workers,
                                     full_scale=args.full_scale)
        report = harness.run_table(args.table)
        self._write(cfg, report.to_dict(), report.cells)
        self.ui.render_experiment(report)
        return EXIT_OK

    def run_estimate_break(self, args, cfg: RunConfig) -> int:
        data = self.datasets.load_dataset(args.input)
        estimate = estimate_break(data, method=args.method, T_hist=args.history_length)
        doc = estimate.to_dict()
        self._write(cfg, doc, pd.DataFrame([doc]))
        self.ui.render_break_summary(estimate)
        return EXIT_OK

    def run(self, args: argparse.Namespace) -> int:
        cfg = RunConfig.from_args(args)
        handlers = {
            "test": self.run_test,
            "monitor": self.run_monitor,
            "critval": self.run_critval,
            "replicate": self.run_replicate,
            "estimate-break": self.run_estimate_break,
        }
        return handlers[args.command](args, cfg)


def _add_output(p: argparse.ArgumentParser):
    p.add_argument("--output", "-o", help="write the report to this path instead of stdout")
    p.add_argument("--format", choices=("json", "csv"), default="json")


def _add_detector(p: argparse.ArgumentParser, kinds: Sequence[str]):
    p.add_argument("--detector", choices=kinds, default="q")
    p.add_argument("--boundary", choices=BOUNDARY_KINDS, default="linear")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--lam", type=float, help="critical value; overrides the tables")
    p.add_argument("--H", help="CSV file with a k x nu projection matrix")
    p.add_argument("--table", help="JSON critical value table consulted before the published values")


def _add_simulation(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, help="master seed; generated and printed when omitted")
    p.add_argument("--reps", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--paper-scale", "--full-scale", dest="full_scale", action="store_true",
                   help="use the large grid and replication counts (10000-point grid, 100000 replications)")


def build_parser() -> argparse.ArgumentParser:
    parser = CliParser(prog="cusum", description="CUSUM structural break tests and monitoring")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=CliParser)

    p = sub.add_parser("test", help="retrospective test on a CSV sample")
    p.add_argument("input")
    _add_detector(p, DETECTOR_KINDS)
    p.add_argument("--no-trace", action="store_true", help="omit the per-t detector trace")
    _add_output(p)

    p = sub.add_parser("monitor", help="monitor an observation stream")
    p.add_argument("--history", help="CSV file with the historical sample")
    p.add_argument("--stream", default="-", help="CSV observation stream (default: standard input)")
    _add_detector(p, ("q", "sbq", "csw"))
    p.set_defaults(detector=None, boundary=None, alpha=None)
    p.add_argument("--horizon", help="monitoring horizon m (>1) or 'inf' (default: inf)")
    p.add_argument("--stop-on-detect", action="store_true")
    p.add_argument("--true-break", type=int, help="known break index, for delay reporting")
    p.add_argument("--max-retained", type=int)
    p.add_argument("--save-state", help="write the monitor state here when the stream ends")
    p.add_argument("--resume", help="continue from a saved monitor state")
    p.add_argument("--no-header", action="store_true", help="do not print the status header line")
    _add_output(p)

    p = sub.add_parser("critval", help="simulate critical values or local-limit curves")
    p.add_argument("--kind", action="append", choices=DETECTOR_KINDS, help="repeatable")
    p.add_argument("--detector", choices=DETECTOR_KINDS, default="q", help=argparse.SUPPRESS)
    p.add_argument("--nu", dest="nu_list", type=int, nargs="+", default=[1])
    p.add_argument("--alpha", dest="alpha_list", type=float, nargs="+", default=[0.05])
    p.add_argument("--boundary", choices=BOUNDARY_KINDS, default="linear")
    p.add_argument("--horizon", default="ret", help="'ret', 'inf' or a number above 1")
    p.add_argument("--grid", type=int)
    p.add_argument("--figure", choices=("power", "delay", "size"))
    p.add_argument("--tau-star", type=float, default=0.5)
    p.add_argument("--c-values", type=float, nargs="+", default=[0.0, 2.0, 4.0, 6.0, 8.0, 10.0])
    p.add_argument("--c", type=float, default=5.0)
    p.add_argument("--tau-values", type=float, nargs="+", default=[1.5, 2.0, 2.5, 3.0])
    p.add_argument("--bins", type=int, default=20)
    _add_simulation(p)
    _add_output(p)

    p = sub.add_parser("replicate", help="run a finite-sample experiment table")
    p.add_argument("--table", required=True, choices=("3", "4", "5", "6", "7"))
    _add_simulation(p)
    _add_output(p)

    p = sub.add_parser("estimate-break", help="estimate the break date")
    p.add_argument("input")
    p.add_argument("--method", choices=("bq", "ml"), default="bq")
    p.add_argument("--history-length", type=int, help="historical sample size T for a monitoring-context estimate")
    _add_output(p)
    return parser


def configure_logging():
    logging.basicConfig(level=LOG_LEVEL, format=LOG_FORMAT, stream=sys.stderr)
    if LOG_FILE:
        path = LOG_FILE if os.path.dirname(LOG_FILE) else os.path.join(LOGS_DIR, LOG_FILE)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        handler = logging.FileHandler(path, encoding="utf-8")
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logging.getLogger().addHandler(handler)


def main(argv: Optional[List[str]] = None) -> int:
    configure_logging()
    args = build_parser().parse_args(argv)
    if getattr(args, "kind", None) and args.command == "critval":
        args.detector = args.kind[0]
    if args.command == "critval":
        args.alpha = args.alpha_list[0]
        args.nu = args.nu_list[0] if len(args.nu_list) == 1 else None
    try:
        return BreakMonitorApp().run(args)
    except (CusumError, OSError) as e:
        message = str(e) if str(e) else e.__class__.__name__
        sys.stderr.write(f"error: {message}\n")
        logger.debug("Command failed", exc_info=True)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
