"""
Online monitoring of a regression relationship after a break-free historical sample.

The recursive estimator keeps updating past T; sigma_hat and C_T^{-1/2} stay
frozen at their historical values. Monitoring continues after the first
crossing so that the full trace is available for delay studies.
"""
import json
import logging
import math
from dataclasses import dataclass
from typing import Any, Callable, Dict, Iterable, List, Optional, Tuple

import numpy as np
import pandas as pd

from config.settings import MONITOR_SETTINGS, SCHEMA_VERSION
from core.detectors import Boundary, DetectorConfig, check_orthonormal
from core.exceptions import (
    ConfigurationError,
    DatasetFormatError,
    DimensionError,
    HorizonExceededError,
    MonitorCapacityError,
)
from core.regression import Dataset, RlsState, fit_history
from services.critical_values import horizon_tag, parse_horizon, resolve_lambda

logger = logging.getLogger(__name__)


@dataclass
class MonitorStatus:
    """Detector value and boundary level after consuming observation t"""

    t: int
    value: float
    boundary: float
    crossed: bool
    stopping_time: Optional[int]

    @property
    def after_crossing(self) -> bool:
        return self.stopping_time is not None and self.t > self.stopping_time

    def to_dict(self) -> Dict[str, Any]:
        return {
            "t": self.t,
            "value": self.value,
            "boundary": self.boundary,
            "crossed": self.crossed,
            "stopping_time": self.stopping_time,
        }


@dataclass
class MonitorReport:
    statuses: List[MonitorStatus]
    stopping_time: Optional[int]
    T: int
    true_break: Optional[int] = None
    horizon_reached: bool = False

    @property
    def detected(self) -> bool:
        return self.stopping_time is not None

    @property
    def delay(self) -> Optional[int]:
        if self.stopping_time is None or self.true_break is None or self.stopping_time < self.true_break:
            return None
        return self.stopping_time - self.true_break

    @property
    def false_alarm(self) -> bool:
        return self.true_break is not None and self.detected and self.stopping_time < self.true_break

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame([s.to_dict() for s in self.statuses],
                             columns=["t", "value", "boundary", "crossed", "stopping_time"])
        frame["after_crossing"] = [s.after_crossing for s in self.statuses]
        return frame

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "T": self.T,
            "stopping_time": self.stopping_time,
            "true_break": self.true_break,
            "delay": self.delay,
            "false_alarm": self.false_alarm,
            "horizon_reached": self.horizon_reached,
            "trace": [s.to_dict() for s in self.statuses],
        }


class MonitorState:
    """Frozen historical normalization plus the streaming cumulative sums"""

    def __init__(self, kind: str, boundary: Boundary, horizon: float, T: int, sigma_hat: float,
                 C_inv_sqrt: np.ndarray, rls: RlsState, S_T: np.ndarray,
                 H: Optional[np.ndarray] = None, max_retained: Optional[int] = None):
        if kind not in ("q", "sbq"):
            raise ConfigurationError(f"detector '{kind}' cannot monitor")
        self.kind = kind
        self.boundary = boundary
        self.horizon = horizon
        self.T = T
        self.sigma_hat = float(sigma_hat)
        self.C_inv_sqrt = np.ascontiguousarray(C_inv_sqrt, dtype=float)
        self.rls = rls
        self.H = None if H is None else np.ascontiguousarray(H, dtype=float)
        self.max_retained = max_retained
        self.t_now = T
        self.stopped_at: Optional[int] = None
        self.running_max = 0.0

        proj = self.C_inv_sqrt.T / (self.sigma_hat * math.sqrt(T))
        self._proj = np.ascontiguousarray(proj if self.H is None else proj @ self.H)
        # cum[i] = S_{T+i}; only the latest row is kept for the forward detector
        self._cum = np.zeros((64, rls.k))
        self._cum[0] = S_T
        self._n = 1

    @property
    def k(self) -> int:
        return self.rls.k

    @property
    def nu(self) -> int:
        return self._proj.shape[1]

    @property
    def threshold(self) -> float:
        return self.boundary.threshold

    @property
    def last_t(self) -> Optional[int]:
        """Last admissible index, None for the infinite horizon"""
        if math.isinf(self.horizon):
            return None
        return int(math.floor(self.horizon * self.T))

    @property
    def cum(self) -> np.ndarray:
        return self._cum[:self._n].copy()

    @property
    def S_T(self) -> np.ndarray:
        return self._cum[0].copy()

    def _append(self, S: np.ndarray):
        if self.kind == "q":
            self._cum[1] = S
            self._n = 2
            return
        if self.max_retained is not None and self._n >= self.max_retained:
            raise MonitorCapacityError(
                f"monitor retains {self._n} cumulative sums, cap is {self.max_retained}"
            )
        if self._n == self._cum.shape[0]:
            grown = np.zeros((2 * self._n, self.k))
            grown[:self._n] = self._cum[:self._n]
            self._cum = grown
        self._cum[self._n] = S
        self._n += 1

    def value_at_current(self) -> float:
        """Detector value for the latest consumed observation"""
        i = self.t_now - self.T
        if i == 0:
            return 0.0
        S_t = self._cum[self._n - 1]
        if self.kind == "q":
            Z = (S_t - self._cum[0]) @ self._proj
            return float(np.abs(Z).max() / self.boundary.shape(i / self.T))
        Z = (S_t[None, :] - self._cum[:self._n - 1]) @ self._proj
        spans = np.arange(i, 0, -1) / self.T
        return float((np.abs(Z).max(axis=1) / self.boundary.shape(spans)).max())

    def to_dict(self) -> Dict[str, Any]:
        """Versioned JSON-ready document; floats keep their full repr precision"""
        rls = self.rls
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": self.kind,
            "boundary": {"kind": self.boundary.kind, "lam": self.boundary.lam, "alpha": self.boundary.alpha},
            "horizon": horizon_tag(self.horizon),
            "T": self.T,
            "sigma_hat": self.sigma_hat,
            "C_inv_sqrt": self.C_inv_sqrt.tolist(),
            "H": None if self.H is None else self.H.tolist(),
            "max_retained": self.max_retained,
            "rls": {
                "k": rls.k,
                "t": rls.t,
                "M": rls.M.tolist(),
                "v": rls.v.tolist(),
                "M_inv": None if rls.M_inv is None else rls.M_inv.tolist(),
                "rank_ok": rls.rank_ok,
                "steps_since_refactor": rls.steps_since_refactor,
            },
            "cum": self.cum.tolist(),
            "t_now": self.t_now,
            "stopped_at": self.stopped_at,
            "running_max": self.running_max,
        }

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "MonitorState":
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise DatasetFormatError(f"unsupported monitor state schema {doc.get('schema_version')}")
        try:
            r = doc["rls"]
            rls = RlsState(
                k=r["k"],
                t=r["t"],
                M=np.array(r["M"], dtype=float),
                v=np.array(r["v"], dtype=float),
                M_inv=None if r["M_inv"] is None else np.array(r["M_inv"], dtype=float),
                rank_ok=r["rank_ok"],
                steps_since_refactor=r["steps_since_refactor"],
            )
            b = doc["boundary"]
            cum = np.array(doc["cum"], dtype=float).reshape(-1, rls.k)
            state = cls(
                kind=doc["kind"],
                boundary=Boundary(kind=b["kind"], lam=b["lam"], alpha=b["alpha"]),
                horizon=parse_horizon(doc["horizon"]),
                T=doc["T"],
                sigma_hat=doc["sigma_hat"],
                C_inv_sqrt=np.array(doc["C_inv_sqrt"], dtype=float),
                rls=rls,
                S_T=cum[0],
                H=None if doc["H"] is None else np.array(doc["H"], dtype=float),
                max_retained=doc["max_retained"],
            )
        except (KeyError, TypeError, IndexError, ValueError) as exc:
            raise DatasetFormatError(f"malformed monitor state: {exc}") from exc
        state._cum = np.zeros((max(64, 2 * cum.shape[0]), rls.k))
        state._cum[:cum.shape[0]] = cum
        state._n = cum.shape[0]
        state.t_now = doc["t_now"]
        state.stopped_at = doc["stopped_at"]
        state.running_max = doc["running_max"]
        return state

    def save(self, path: str):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f)

    @classmethod
    def load(cls, path: str) -> "MonitorState":
        with open(path, "r", encoding="utf-8") as f:
            try:
                doc = json.load(f)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"{path}: not a JSON document") from exc
        return cls.from_dict(doc)


def monitor_init(historical: Dataset, cfg: DetectorConfig, max_retained: Optional[int] = None) -> MonitorState:
    """Freeze the historical normalization and resolve the critical value"""
    if not cfg.is_monitoring:
        raise ConfigurationError("monitoring needs a horizon m (finite or infinite)")
    fit = fit_history(historical)
    nu = cfg.effective_nu(historical.k)
    if cfg.H is not None:
        if cfg.H.shape[0] != historical.k:
            raise DimensionError(f"H has {cfg.H.shape[0]} rows, data has k={historical.k}")
        check_orthonormal(cfg.H)
    lam = resolve_lambda(cfg.kind, nu, cfg.alpha, boundary=cfg.boundary, horizon=cfg.horizon,
                         lam=cfg.lam, table=cfg.table)
    if max_retained is None:
        max_retained = MONITOR_SETTINGS["max_retained"]

    state = MonitorState(
        kind=cfg.kind,
        boundary=cfg.make_boundary(lam),
        horizon=cfg.horizon,
        T=historical.T,
        sigma_hat=fit.sigma_hat,
        C_inv_sqrt=fit.C_inv_sqrt,
        rls=RlsState.from_data(historical.X, historical.y),
        S_T=fit.weighted_residuals().sum(axis=0),
        H=cfg.H,
        max_retained=max_retained,
    )
    logger.info(
        "Monitor initialized: kind=%s boundary=%s T=%d nu=%d threshold=%.4f horizon=%s",
        cfg.kind, cfg.boundary, historical.T, nu, state.threshold, horizon_tag(cfg.horizon),
    )
    return state


def monitor_step(state: MonitorState, x, y: float) -> MonitorStatus:
    """Consume observation t_now + 1 and update the detector"""
    x = np.asarray(x, dtype=float).ravel()
    if x.shape[0] != state.k:
        raise DimensionError(f"regressor vector has length {x.shape[0]}, expected {state.k}")
    last = state.last_t
    if last is not None and state.t_now + 1 > last:
        raise HorizonExceededError(f"monitoring horizon ends at t={last}")

    w = state.rls.update(x, y)
    state.t_now += 1
    state._append(state._cum[state._n - 1] + x * w)

    value = state.value_at_current()
    state.running_max = max(state.running_max, value)
    if state.stopped_at is None and value >= state.threshold:
        state.stopped_at = state.t_now
        logger.info("Boundary crossed at t=%d (value %.4f)", state.t_now, value)
    return MonitorStatus(
        t=state.t_now,
        value=value,
        boundary=state.threshold,
        crossed=state.stopped_at is not None,
        stopping_time=state.stopped_at,
    )


def monitor_run(state: MonitorState, stream: Iterable[Tuple[Any, float]],
                true_break: Optional[int] = None, stop_on_detect: bool = False,
                on_status: Optional[Callable[[MonitorStatus], None]] = None) -> MonitorReport:
    """Drive monitor_step over a stream until it ends, the horizon is reached or (optionally) detection"""
    statuses: List[MonitorStatus] = []
    horizon_reached = False
    warned = False
    for x, y in stream:
        last = state.last_t
        if last is not None and state.t_now >= last:
            horizon_reached = True
            break
        status = monitor_step(state, x, y)
        statuses.append(status)
        if on_status is not None:
            on_status(status)
        if status.crossed:
            if stop_on_detect:
                break
            if status.after_crossing and not warned:
                logger.warning("Monitoring continues after detection at t=%d", status.stopping_time)
                warned = True
    if state.last_t is not None and state.t_now >= state.last_t:
        horizon_reached = True
    return MonitorReport(
        statuses=statuses,
        stopping_time=state.stopped_at,
        T=state.T,
        true_break=true_break,
        horizon_reached=horizon_reached,
    )
