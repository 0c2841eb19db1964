"""
Finite-sample experiments: empirical size, size-adjusted power, detection delay and break-date accuracy
"""
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config.settings import (
    REPLICATION_SETTINGS,
    SCHEMA_VERSION,
    SUP_WALD_CRITICAL_VALUES,
    SUP_WALD_R0,
)
from core.breakpoint import bq_from_path, ml_candidates, ml_objective, split_rss
from core.detectors import (
    Boundary,
    backward_trace,
    first_crossings,
    forward_trace,
    stacked_trace,
)
from core.exceptions import ConfigurationError, DegenerateDataError
from core.regression import Dataset, batch_history_quantities, batch_recursive_residuals
from services.critical_values import published_lambda
from services.mc_runner import MonteCarloRunner, empirical_quantile, replication_rng
from services.report_service import build_version

logger = logging.getLogger(__name__)

MODELS = ("mean", "slope", "null")
RETROSPECTIVE_DETECTORS = ("q", "bq", "sbq", "supw")
MONITORING_DETECTORS = ("sbq", "q", "csw")


@dataclass(frozen=True)
class DgpSpec:
    """
    Simulation design.

    mean:  y_t = 2 + shift 1{t >= T*} + u_t
    slope: y_t = 2 + (1 + shift 1{t >= T*}) x_t + u_t
    null:  y_t = 2 + x_t2 + ... + x_tk + u_t
    with T* = ceil(tau* T) and x, u i.i.d. standard normal. Without tau* the
    mean and slope models carry no break.
    """

    model: str = "mean"
    T: int = 100
    k: int = 1
    tau_star: Optional[float] = None
    shift: float = REPLICATION_SETTINGS["shift"]
    m: Optional[float] = None

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigurationError(f"unknown model '{self.model}'")
        if self.model == "mean" and self.k != 1:
            object.__setattr__(self, "k", 1)
        if self.model == "slope" and self.k != 2:
            object.__setattr__(self, "k", 2)
        if self.model == "null" and self.tau_star is not None:
            raise ConfigurationError("the null model has no break")
        if self.T <= self.k + 1:
            raise ConfigurationError(f"T={self.T} is too small for k={self.k}")
        if self.m is not None and not self.m > 1.0:
            raise ConfigurationError("the simulation horizon m must exceed 1")
        if self.tau_star is not None and not 0.0 < self.tau_star < (self.m or 1.0):
            raise ConfigurationError("break location outside the simulated span")

    @property
    def N(self) -> int:
        return self.T if self.m is None else int(math.floor(self.m * self.T))

    @property
    def break_index(self) -> Optional[int]:
        if self.tau_star is None:
            return None
        return int(math.ceil(self.tau_star * self.T - 1e-9))

    def null(self) -> "DgpSpec":
        return replace(self, tau_star=None)

    def simulate(self, seed: int, start: int, stop: int) -> Tuple[np.ndarray, np.ndarray]:
        """Designs X (R, N, k) and responses y (R, N) for replications start..stop-1"""
        R, N, k = stop - start, self.N, self.k
        X = np.ones((R, N, k))
        u = np.empty((R, N))
        for i, rep in enumerate(range(start, stop)):
            rng = replication_rng(seed, rep)
            u[i] = rng.standard_normal(N)
            if k > 1:
                X[i, :, 1:] = rng.standard_normal((N, k - 1))

        after = np.zeros(N)
        if self.break_index is not None:
            after[self.break_index - 1:] = 1.0
        intercept = REPLICATION_SETTINGS["intercept"]
        if self.model == "mean":
            y = intercept + self.shift * after + u
        elif self.model == "slope":
            beta = REPLICATION_SETTINGS["slope"] + self.shift * after
            y = intercept + beta * X[:, :, 1] + u
        else:
            y = intercept + X[:, :, 1:].sum(axis=2) + u
        return X, y

    def dataset(self, seed: int, rep: int = 0) -> Dataset:
        X, y = self.simulate(seed, rep, rep + 1)
        return Dataset(y[0], X[0])


@dataclass
class ExperimentReport:
    """Long-format cell table with Monte Carlo standard errors"""

    table: str
    cells: pd.DataFrame
    reps: int
    seed: int
    runtime: float
    metadata: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "table": self.table,
            "reps": self.reps,
            "seed": self.seed,
            "runtime": self.runtime,
            "metadata": self.metadata,
            "cells": self.cells.to_dict(orient="records"),
        }


def rate_se(p: float, reps: int) -> float:
    return math.sqrt(p * (1.0 - p) / reps)


# Batched statistics

def standardized_paths(X: np.ndarray, w: np.ndarray, T: int, origin: int = 0) -> np.ndarray:
    """
    (sigma_hat sqrt(T))^{-1} C_T^{-1/2} (S_t - S_origin) for t = origin..N with
    sigma_hat and C_T from the first T rows; shape (R, N - origin + 1, k).
    """
    sigma, C_inv_sqrt = batch_history_quantities(X, w, T)
    S = np.cumsum(X * w[:, :, None], axis=1)
    S = np.concatenate([np.zeros((X.shape[0], 1, X.shape[2])), S], axis=1)
    S = S[:, origin:] - S[:, origin:origin + 1]
    return np.einsum("rij,rtj->rti", C_inv_sqrt, S) / (sigma * math.sqrt(T))[:, None, None]


def sup_wald_batch(X: np.ndarray, y: np.ndarray, r0: float = SUP_WALD_R0) -> np.ndarray:
    """(T - 2k)(S0 - S1 - S2)/(S1 + S2) maximized over splits t = floor(rT), r in [r0, 1 - r0]"""
    if not 0.0 < r0 < 0.5:
        raise ConfigurationError(f"trimming r0 must lie in (0, 0.5), got {r0}")
    _, T, k = X.shape
    lo, hi = int(math.floor(r0 * T)), int(math.floor((1.0 - r0) * T))
    if lo < k + 1 or T - hi < k + 1:
        raise DegenerateDataError(f"trimming r0={r0} leaves fewer than k+1 observations in a segment (T={T}, k={k})")
    S1, S2 = split_rss(X, y)
    S0 = S1[:, T:T + 1]
    unrestricted = S1[:, lo:hi + 1] + S2[:, lo:hi + 1]
    floor = np.maximum(1e-12 * S0, np.finfo(float).tiny)
    stats = (T - 2 * k) * (S0 - unrestricted) / np.maximum(unrestricted, floor)
    # S0 >= S1 + S2 exactly; rounding in the recursive sums can leave a tiny negative
    return np.maximum(stats.max(axis=1), 0.0)


def sup_wald(data: Dataset, r0: float = SUP_WALD_R0) -> float:
    """sup-Wald statistic for a break in all k coefficients"""
    return float(sup_wald_batch(data.X[None], data.y[None], r0)[0])


def sup_wald_critical_value(k: int, alpha: float = 0.05) -> float:
    try:
        return SUP_WALD_CRITICAL_VALUES[k][round(alpha, 6)]
    except KeyError as exc:
        raise ConfigurationError(f"no sup-Wald critical value for k={k}, alpha={alpha}") from exc


def _retrospective_block(seed: int, start: int, stop: int, spec: DgpSpec,
                         detectors: Sequence[str]) -> np.ndarray:
    """Maximum statistics, one column per detector"""
    X, y = spec.simulate(seed, start, stop)
    T = spec.T
    out = np.empty((stop - start, len(detectors)))
    P = None
    den = 1.0 + 2.0 * np.arange(1, T + 1) / T
    for j, detector in enumerate(detectors):
        if detector == "supw":
            out[:, j] = sup_wald_batch(X, y)
            continue
        if P is None:
            P = standardized_paths(X, batch_recursive_residuals(X, y), T)
        if detector == "q":
            out[:, j] = forward_trace(P, den).max(axis=1)
        elif detector == "bq":
            out[:, j] = backward_trace(P, den).max(axis=1)
        elif detector == "sbq":
            out[:, j] = stacked_trace(P, den).max(axis=1)
        else:
            raise ConfigurationError(f"unknown retrospective detector '{detector}'")
    return out


def monitoring_traces(X: np.ndarray, y: np.ndarray, T: int, detector: str,
                      alpha: float = 0.05) -> np.ndarray:
    """Monitoring detector values at t = T+1..N, shape (R, N - T)"""
    P = standardized_paths(X, batch_recursive_residuals(X, y), T, origin=T)
    r = np.arange(1, P.shape[1]) / T
    if detector == "q":
        return forward_trace(P, Boundary(kind="linear").shape(r))
    if detector == "sbq":
        return stacked_trace(P, Boundary(kind="linear").shape(r))
    if detector == "csw":
        if X.shape[2] != 1:
            raise ConfigurationError("the radical boundary requires k = 1")
        return forward_trace(P, Boundary(kind="radical_chu", alpha=alpha).shape(r))
    raise ConfigurationError(f"unknown monitoring detector '{detector}'")


def _monitoring_block(seed: int, start: int, stop: int, spec: DgpSpec, detectors: Sequence[str],
                      thresholds: Optional[Sequence[float]] = None) -> np.ndarray:
    """Per detector: maximum over the horizon and the first crossing index t (0 if none)"""
    X, y = spec.simulate(seed, start, stop)
    out = np.zeros((stop - start, 2 * len(detectors)))
    for j, detector in enumerate(detectors):
        trace = monitoring_traces(X, y, spec.T, detector)
        out[:, 2 * j] = trace.max(axis=1)
        if thresholds is not None:
            crossing = first_crossings(trace, thresholds[j])
            out[:, 2 * j + 1] = np.where(crossing > 0, crossing + spec.T, 0)
    return out


def _break_block(seed: int, start: int, stop: int, spec: DgpSpec) -> np.ndarray:
    """Columns: ML and BQ break index estimates"""
    X, y = spec.simulate(seed, start, stop)
    T, k = spec.T, spec.k
    lo, hi = ml_candidates(T, k)
    t_ml = lo + np.argmin(ml_objective(X, y)[:, lo - 1:hi], axis=1)

    w = batch_recursive_residuals(X, y)
    _, C_inv_sqrt = batch_history_quantities(X, w, T)
    tails = np.cumsum((X * w[:, :, None])[:, ::-1], axis=1)[:, ::-1]
    BS = np.einsum("rij,rtj->rti", C_inv_sqrt, tails) / np.sqrt(np.arange(T, 0, -1.0))[None, :, None]
    t_bq = bq_from_path(np.abs(BS).max(axis=2), 1, T)
    return np.column_stack([t_ml, t_bq]).astype(float)


class ReplicationHarness:
    """Runs the finite-sample experiments at desk or full scale"""

    def __init__(self, n_reps: Optional[int] = None, seed: int = 0, workers: Optional[int] = None,
                 full_scale: bool = False, null_reps: Optional[int] = None):
        if full_scale:
            n_reps = REPLICATION_SETTINGS["full_n_reps"]
        self.n_reps = int(n_reps or REPLICATION_SETTINGS["n_reps"])
        self.null_reps = int(null_reps or (self.n_reps if full_scale else REPLICATION_SETTINGS["null_reps"]))
        self.seed = int(seed)
        self.full_scale = full_scale
        self.runner = MonteCarloRunner(workers=workers)
        self.alpha = REPLICATION_SETTINGS["significance"]

    def _metadata(self) -> Dict[str, Any]:
        return {
            "alpha": self.alpha,
            "null_reps": self.null_reps,
            "workers": self.runner.workers,
            "full_scale": self.full_scale,
            "version": build_version(),
        }

    def _report(self, table: str, rows, started: float) -> ExperimentReport:
        runtime = time.perf_counter() - started
        logger.info("Table %s finished in %.1fs", table, runtime)
        return ExperimentReport(table=table, cells=pd.DataFrame(rows), reps=self.n_reps,
                                seed=self.seed, runtime=runtime, metadata=self._metadata())

    def retrospective_stats(self, spec: DgpSpec, detectors: Sequence[str], n_reps: int) -> np.ndarray:
        return self.runner.run(_retrospective_block, n_reps, self.seed, spec=spec, detectors=tuple(detectors))

    def monitoring_stats(self, spec: DgpSpec, detectors: Sequence[str], n_reps: int,
                         thresholds: Optional[Sequence[float]] = None) -> np.ndarray:
        return self.runner.run(_monitoring_block, n_reps, self.seed, spec=spec, detectors=tuple(detectors),
                               thresholds=None if thresholds is None else tuple(thresholds))

    def size_adjusted(self, stats: np.ndarray) -> np.ndarray:
        """Nearest-rank (1 - alpha) quantile of every column"""
        return np.array([empirical_quantile(stats[:, j], 1.0 - self.alpha) for j in range(stats.shape[1])])

    def run_size_table(self, ks: Sequence[int] = (1, 2, 3, 4), Ts: Sequence[int] = (100, 200, 500),
                       detectors: Sequence[str] = ("q", "bq", "sbq")) -> ExperimentReport:
        """Empirical sizes of the retrospective tests at the asymptotic critical values"""
        started = time.perf_counter()
        rows = []
        for k in ks:
            lams = [published_lambda(d, k, self.alpha) for d in detectors]
            for T in Ts:
                stats = self.retrospective_stats(DgpSpec(model="null", T=T, k=k), detectors, self.n_reps)
                for j, detector in enumerate(detectors):
                    p = float(np.mean(stats[:, j] >= lams[j]))
                    rows.append({"k": k, "T": T, "detector": detector, "lambda": lams[j],
                                 "estimate": 100 * p, "se": 100 * rate_se(p, self.n_reps)})
        return self._report("3", rows, started)

    def run_monitor_size_table(self, ks: Sequence[int] = (1, 2), Ts: Sequence[int] = (100, 200, 500),
                               ms: Sequence[float] = (1.5, 2.0, 4.0, 6.0, 8.0, 10.0),
                               detectors: Optional[Sequence[str]] = None) -> ExperimentReport:
        """Empirical sizes of the monitoring detectors with infinite-horizon critical values, truncated at m"""
        started = time.perf_counter()
        rows = []
        m_max = max(ms)
        for k in ks:
            kinds = detectors or (MONITORING_DETECTORS if k == 1 else ("sbq", "q"))
            if k > 1 and "csw" in kinds:
                raise ConfigurationError("the CSW detector needs k = 1")
            thresholds = [published_lambda("q" if d == "csw" else d, k, self.alpha,
                                           boundary="radical_chu" if d == "csw" else "linear",
                                           horizon=math.inf) for d in kinds]
            for T in Ts:
                spec = DgpSpec(model="null", T=T, k=k, m=m_max)
                stats = self.monitoring_stats(spec, kinds, self.n_reps, thresholds)
                for j, detector in enumerate(kinds):
                    crossing = stats[:, 2 * j + 1]
                    for m in ms:
                        last = int(math.floor(m * T))
                        p = float(np.mean((crossing > 0) & (crossing <= last)))
                        rows.append({"k": k, "T": T, "m": m, "detector": detector, "lambda": thresholds[j],
                                     "estimate": 100 * p, "se": 100 * rate_se(p, self.n_reps)})
        return self._report("5", rows, started)

    def run_power_table(self, taus: Sequence[float] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9),
                        models: Sequence[str] = ("mean", "slope"), T: int = 100,
                        detectors: Sequence[str] = RETROSPECTIVE_DETECTORS) -> ExperimentReport:
        """Size-adjusted powers of the retrospective tests"""
        started = time.perf_counter()
        rows = []
        for model in models:
            null_spec = DgpSpec(model=model, T=T)
            lams = self.size_adjusted(self.retrospective_stats(null_spec, detectors, self.null_reps))
            logger.info("Size-adjusted critical values for model %s: %s", model, np.round(lams, 4).tolist())
            for tau in taus:
                stats = self.retrospective_stats(replace(null_spec, tau_star=tau), detectors, self.n_reps)
                for j, detector in enumerate(detectors):
                    p = float(np.mean(stats[:, j] >= lams[j]))
                    rows.append({"model": model, "tau_star": tau, "detector": detector, "lambda": lams[j],
                                 "estimate": 100 * p, "se": 100 * rate_se(p, self.n_reps)})
        return self._report("4", rows, started)

    def run_delay_table(self, taus: Sequence[float] = (1.5, 2.0, 2.5, 3.0, 5.0, 10.0),
                        models: Sequence[str] = ("mean", "slope"), T: int = 100,
                        m: float = 20.0) -> ExperimentReport:
        """Mean detection delays T_d - T* with size-adjusted critical values over the horizon m"""
        started = time.perf_counter()
        rows = []
        for model in models:
            detectors = MONITORING_DETECTORS if model == "mean" else ("sbq", "q")
            null_spec = DgpSpec(model=model, T=T, m=m)
            null_stats = self.monitoring_stats(null_spec, detectors, self.null_reps)
            thresholds = self.size_adjusted(null_stats[:, 0::2])
            logger.info("Size-adjusted thresholds for model %s: %s", model, np.round(thresholds, 4).tolist())
            for tau in taus:
                spec = replace(null_spec, tau_star=tau)
                stats = self.monitoring_stats(spec, detectors, self.n_reps, thresholds)
                for j, detector in enumerate(detectors):
                    crossing = stats[:, 2 * j + 1]
                    valid = (crossing >= spec.break_index) & (crossing <= spec.N)
                    delays = crossing[valid] - spec.break_index
                    n_valid = int(valid.sum())
                    rows.append({
                        "model": model, "tau_star": tau, "detector": detector, "lambda": thresholds[j],
                        "estimate": float(delays.mean()) if n_valid else float("nan"),
                        "se": float(delays.std(ddof=1) / math.sqrt(n_valid)) if n_valid > 1 else float("nan"),
                        "n_detected": n_valid,
                    })
        return self._report("6", rows, started)

    def run_break_table(self, taus: Sequence[float] = (0.5, 0.65, 0.8, 0.85, 0.9, 0.95, 0.97, 0.99),
                        Ts: Sequence[int] = (100, 200),
                        shift: float = REPLICATION_SETTINGS["break_table_shift"]) -> ExperimentReport:
        """Bias and MSE of the ML and BQ break-date estimators"""
        started = time.perf_counter()
        rows = []
        for T in Ts:
            for tau in taus:
                spec = DgpSpec(model="mean", T=T, tau_star=tau, shift=shift)
                t_hat = self.runner.run(_break_block, self.n_reps, self.seed, spec=spec)
                for j, method in enumerate(("ml", "bq")):
                    err = t_hat[:, j] / T - tau
                    sq = err ** 2
                    rows.append({
                        "T": T, "tau_star": tau, "method": method,
                        "bias": float(err.mean()), "bias_se": float(err.std(ddof=1) / math.sqrt(self.n_reps)),
                        "mse": float(sq.mean()), "mse_se": float(sq.std(ddof=1) / math.sqrt(self.n_reps)),
                    })
        return self._report("7", rows, started)

    def run_table(self, table: str, **kwargs) -> ExperimentReport:
        drivers = {
            "3": self.run_size_table,
            "4": self.run_power_table,
            "5": self.run_monitor_size_table,
            "6": self.run_delay_table,
            "7": self.run_break_table,
        }
        if str(table) not in drivers:
            raise ConfigurationError(f"unknown table '{table}' (choose from {sorted(drivers)})")
        return drivers[str(table)](**kwargs)
