"""
Forward, backward and stacked-backward CUSUM detectors on recursive residuals.

All statistics use the max-norm over the nu coordinates and are reported in
boundary-shape units: the detector value at t is ||.|| / d(.), and the test
rejects when it reaches the threshold (lambda for the linear boundary, 1 for
the self-normalizing radical boundary).
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import numpy as np

from config.settings import (
    BOUNDARY_KINDS,
    BOUNDARY_SETTINGS,
    DETECTOR_KINDS,
    REGRESSION_SETTINGS,
    SCHEMA_VERSION,
)
from core.exceptions import ConfigurationError, DimensionError
from core.regression import Dataset, HistoryFit, fit_history
from services.critical_values import resolve_lambda

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class CusumPath:
    """Standardized path q[t] = Q_{t,T} for t = 0..T, shape (T+1, nu)"""

    q: np.ndarray
    T: int
    k: int

    @property
    def nu(self) -> int:
        return self.q.shape[1]


def cusum_path(fit: HistoryFit) -> CusumPath:
    """q[t] = (sigma_hat sqrt(T))^{-1} C_T^{-1/2} sum_{j<=t} x_j w_j"""
    S = np.vstack([np.zeros((1, fit.k)), np.cumsum(fit.weighted_residuals(), axis=0)])
    q = S @ fit.C_inv_sqrt.T / (fit.sigma_hat * math.sqrt(fit.T))
    return CusumPath(q=q, T=fit.T, k=fit.k)


def partial_project(path: CusumPath, H) -> CusumPath:
    """Project the path on the orthonormal columns of H (k x l)"""
    H = np.asarray(H, dtype=float)
    if H.ndim == 1:
        H = H.reshape(-1, 1)
    if H.shape[0] != path.k:
        raise DimensionError(f"H has {H.shape[0]} rows, path has k={path.k}")
    if H.shape[1] > path.k:
        raise ConfigurationError("H cannot have more columns than rows")
    check_orthonormal(H)
    return CusumPath(q=path.q @ H, T=path.T, k=path.k)


def check_orthonormal(H: np.ndarray):
    gram = H.T @ H
    if np.abs(gram - np.eye(H.shape[1])).max() > REGRESSION_SETTINGS["orthonormal_tol"]:
        raise ConfigurationError("projection matrix H must have orthonormal columns")


def _linear_shape(r):
    return 1.0 + 2.0 * np.asarray(r, dtype=float)


def _radical_shape(r, alpha: float):
    r = np.asarray(r, dtype=float)
    return np.sqrt((r + 1.0) * np.log((r + 1.0) / alpha ** 2))


@dataclass(frozen=True)
class Boundary:
    """b(r) = lambda * d(r) (linear) or the radical form with lambda absorbed"""

    kind: str = "linear"
    lam: Optional[float] = None
    alpha: Optional[float] = None

    def __post_init__(self):
        if self.kind not in BOUNDARY_KINDS:
            raise ConfigurationError(f"unknown boundary kind '{self.kind}'")
        if self.kind == "radical_chu":
            if self.alpha is None or not 0.0 < self.alpha < 1.0:
                raise ConfigurationError("radical boundary needs a significance level in (0, 1)")
        if self.lam is not None and self.lam <= 0:
            raise ConfigurationError("critical value must be positive")
        self._check_growth()

    def _check_growth(self):
        grid = np.linspace(0.0, BOUNDARY_SETTINGS["check_grid_max"], BOUNDARY_SETTINGS["check_grid_points"])
        d = self.shape(grid)
        ratio = np.sqrt(grid + 1.0) / d
        mid = ratio.shape[0] // 2
        ok = (
            d[0] > 0
            and np.all(np.diff(d) > 0)
            and np.all(np.isfinite(ratio))
            and ratio[-1] <= ratio[mid] * (1.0 + 1e-9)
        )
        if not ok:
            raise ConfigurationError(f"boundary '{self.kind}' violates the growth condition")

    def shape(self, r):
        """Lambda-free shape d(r)"""
        if self.kind == "linear":
            return _linear_shape(r)
        return _radical_shape(r, self.alpha)

    @property
    def threshold(self) -> float:
        """Level the normalized statistic is compared with"""
        if self.kind == "radical_chu":
            return 1.0
        if self.lam is None:
            raise ConfigurationError("linear boundary needs a critical value")
        return float(self.lam)


def boundary_value(b: Boundary, r: float) -> float:
    if r < 0:
        raise ConfigurationError(f"boundary evaluated at negative r={r}")
    return float(b.threshold * b.shape(r))


class TestReport:
    """Result of a retrospective test"""

    __test__ = False

    def __init__(self, detector: str, statistic: float, lam: float, first_crossing: Optional[int],
                 nu: int, boundary: str = "linear", per_t: Optional[np.ndarray] = None):
        self.detector = detector
        self.statistic = float(statistic)
        self.lam = float(lam)
        self.reject = self.statistic >= self.lam
        self.first_crossing = first_crossing if self.reject else None
        self.nu = nu
        self.boundary = boundary
        self.per_t = per_t

    def to_dict(self, include_trace: bool = True) -> Dict[str, Any]:
        doc = {
            "schema_version": SCHEMA_VERSION,
            "detector": self.detector,
            "boundary": self.boundary,
            "nu": self.nu,
            "statistic": self.statistic,
            "lambda": self.lam,
            "reject": self.reject,
            "first_crossing": self.first_crossing,
        }
        if include_trace and self.per_t is not None:
            doc["trace"] = [
                {"t": t, "value": float(v), "boundary": self.lam}
                for t, v in enumerate(self.per_t, start=1)
            ]
        return doc


# Batched kernels. Paths P have shape (R, n+1, nu) with P[:, 0] = 0; every
# trace has shape (R, n) and holds the detector value at t = 1..n.

def _norm(a: np.ndarray) -> np.ndarray:
    return np.abs(a).max(axis=-1)


def forward_trace(P: np.ndarray, den: np.ndarray) -> np.ndarray:
    """||P_t|| / den[t-1]"""
    return _norm(P[:, 1:]) / den


def backward_trace(P: np.ndarray, den_by_span: np.ndarray) -> np.ndarray:
    """||P_n - P_{t-1}|| / den_by_span[n-t], den_by_span[L-1] = d(L/T)"""
    return _norm(P[:, -1:] - P[:, :-1]) / den_by_span[::-1]


def stacked_trace(P: np.ndarray, den_by_span: np.ndarray) -> np.ndarray:
    """max over 1 <= s <= t of ||P_t - P_{s-1}|| / den_by_span[t-s]"""
    R, n1, _ = P.shape
    n = n1 - 1
    M = np.zeros((R, n))
    for span in range(1, n + 1):
        vals = _norm(P[:, span:] - P[:, :-span]) / den_by_span[span - 1]
        np.maximum(M[:, span - 1:], vals, out=M[:, span - 1:])
    return M


def first_crossings(trace: np.ndarray, threshold: float) -> np.ndarray:
    """1-based first index with trace >= threshold per row, 0 where none"""
    hit = trace >= threshold
    idx = np.argmax(hit, axis=1) + 1
    return np.where(hit.any(axis=1), idx, 0)


def _retrospective_boundary(b: Boundary, detector: str):
    if b.kind != "linear":
        raise ConfigurationError(
            f"the radical boundary is only available for forward monitoring, not for retrospective '{detector}'"
        )


def _report(detector: str, trace: np.ndarray, b: Boundary, nu: int) -> TestReport:
    threshold = b.threshold
    crossing = int(first_crossings(trace[None, :], threshold)[0])
    statistic = float(trace.max()) if trace.size else 0.0
    return TestReport(
        detector=detector,
        statistic=statistic,
        lam=threshold,
        first_crossing=crossing or None,
        nu=nu,
        boundary=b.kind,
        per_t=trace,
    )


def forward_max_stat(path: CusumPath, b: Boundary) -> TestReport:
    _retrospective_boundary(b, "q")
    r = np.arange(1, path.T + 1) / path.T
    trace = forward_trace(path.q[None], b.shape(r))[0]
    return _report("q", trace, b, path.nu)


def backward_max_stat(path: CusumPath, b: Boundary) -> TestReport:
    _retrospective_boundary(b, "bq")
    spans = np.arange(1, path.T + 1) / path.T
    trace = backward_trace(path.q[None], b.shape(spans))[0]
    return _report("bq", trace, b, path.nu)


def stacked_max_stat(path: CusumPath, b: Boundary) -> TestReport:
    _retrospective_boundary(b, "sbq")
    spans = np.arange(1, path.T + 1) / path.T
    trace = stacked_trace(path.q[None], b.shape(spans))[0]
    return _report("sbq", trace, b, path.nu)


MAX_STATS = {
    "q": forward_max_stat,
    "bq": backward_max_stat,
    "sbq": stacked_max_stat,
}


@dataclass(frozen=True, eq=False)
class DetectorConfig:
    """Detector kind, boundary, significance, horizon and optional critical value"""

    kind: str = "q"
    boundary: str = "linear"
    alpha: float = 0.05
    horizon: Optional[float] = None
    lam: Optional[float] = None
    H: Optional[np.ndarray] = None
    table: Any = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in DETECTOR_KINDS:
            raise ConfigurationError(f"unknown detector kind '{self.kind}'")
        if self.boundary not in BOUNDARY_KINDS:
            raise ConfigurationError(f"unknown boundary kind '{self.boundary}'")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigurationError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.horizon is not None and not self.horizon > 1.0:
            raise ConfigurationError(f"monitoring horizon m must exceed 1, got {self.horizon}")
        if self.kind == "bq" and self.horizon is not None:
            raise ConfigurationError("the backward detector is retrospective only")
        if self.boundary == "radical_chu":
            if self.kind != "q" or self.horizon is None:
                raise ConfigurationError("the radical boundary is only available for forward monitoring")
            if self.H is not None and np.asarray(self.H).reshape(len(self.H), -1).shape[1] != 1:
                raise ConfigurationError("the radical boundary requires nu = 1")
        if self.lam is not None and self.lam <= 0:
            raise ConfigurationError("critical value must be positive")
        if self.H is not None:
            H = np.asarray(self.H, dtype=float)
            object.__setattr__(self, "H", H.reshape(-1, 1) if H.ndim == 1 else H)

    @property
    def is_monitoring(self) -> bool:
        return self.horizon is not None

    def effective_nu(self, k: int) -> int:
        nu = k if self.H is None else self.H.shape[1]
        if self.boundary == "radical_chu" and nu != 1:
            raise ConfigurationError("the radical boundary requires nu = 1")
        return nu

    def make_boundary(self, lam: Optional[float]) -> Boundary:
        if self.boundary == "radical_chu":
            return Boundary(kind="radical_chu", alpha=self.alpha)
        return Boundary(kind="linear", lam=lam)


def retrospective_test(data: Dataset, cfg: DetectorConfig) -> TestReport:
    """fit_history -> cusum_path -> optional projection -> configured max statistic"""
    if cfg.is_monitoring:
        raise ConfigurationError("retrospective_test needs a retrospective configuration")
    fit = fit_history(data)
    path = cusum_path(fit)
    if cfg.H is not None:
        path = partial_project(path, cfg.H)
    nu = cfg.effective_nu(data.k)
    lam = resolve_lambda(cfg.kind, nu, cfg.alpha, boundary=cfg.boundary, horizon=None,
                         lam=cfg.lam, table=cfg.table)
    report = MAX_STATS[cfg.kind](path, cfg.make_boundary(lam))
    logger.info(
        "Retrospective %s test: T=%d nu=%d statistic=%.4f lambda=%.3f reject=%s",
        cfg.kind, data.T, nu, report.statistic, report.lam, report.reject,
    )
    return report
