"""
Break date estimation: scaled backward CUSUM argmax and the two-segment least squares benchmark
"""
import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np

from config.settings import SCHEMA_VERSION
from core.exceptions import ConfigurationError, DegenerateDataError
from core.regression import Dataset, HistoryFit, batch_recursive_residuals, fit_history

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BreakEstimate:
    """
    Estimated break index.

    t_hat is the first observation of the second regime for both methods. Least
    squares break dates are often quoted as the last observation of the first
    segment; that is last_pre_break = t_hat - 1.
    """

    method: str
    t_hat: int
    T: int
    T_d: Optional[int] = None

    @property
    def context(self) -> str:
        return "retrospective" if self.T_d is None else "monitoring"

    @property
    def last_pre_break(self) -> int:
        return self.t_hat - 1

    @property
    def tau_hat(self) -> float:
        return self.t_hat / self.T

    @property
    def tau_hat_mon(self) -> Optional[float]:
        return None if self.T_d is None else self.t_hat / self.T_d

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "method": self.method,
            "context": self.context,
            "t_hat": self.t_hat,
            "last_pre_break": self.last_pre_break,
            "T": self.T,
            "T_d": self.T_d,
            "tau_hat": self.tau_hat,
            "tau_hat_mon": self.tau_hat_mon,
        }


def scaled_backward_path(fit: HistoryFit) -> np.ndarray:
    """BS_t = (T-t+1)^{-1/2} C_T^{-1/2} sum_{j>=t} x_j w_j for t = 1..T, shape (T, k)"""
    tails = np.cumsum(fit.weighted_residuals()[::-1], axis=0)[::-1]
    counts = np.arange(fit.T, 0, -1, dtype=float)
    return tails @ fit.C_inv_sqrt.T / np.sqrt(counts)[:, None]


def _search_range(lo: int, hi: int) -> Tuple[int, int]:
    if lo > hi:
        raise DegenerateDataError(f"empty admissible range for the break date ({lo}..{hi})")
    return lo, hi


def estimate_break_bq(fit: HistoryFit, T_hist: Optional[int] = None) -> BreakEstimate:
    """
    Argmax of ||BS_t|| over 1..T, or over T_hist < t <= T_d in monitoring context.

    Args:
        fit: history fit over the full span (1..T_d when monitoring)
        T_hist: end of the historical sample; None for a retrospective estimate
    """
    lo, hi = _search_range(1 if T_hist is None else T_hist + 1, fit.T)
    norms = np.abs(scaled_backward_path(fit)).max(axis=1)
    t_hat = lo + int(np.argmax(norms[lo - 1:hi]))
    if T_hist is None:
        return BreakEstimate(method="bq", t_hat=t_hat, T=fit.T)
    return BreakEstimate(method="bq", t_hat=t_hat, T=T_hist, T_d=fit.T)


def split_rss(X: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Residual sums of squares of every prefix and suffix fit, for stacked datasets.

    Uses RSS_n = RSS_{n-1} + w_n^2 on the forward and on the reversed data.

    Args:
        X: array (R, N, k)
        y: array (R, N)

    Returns:
        (S1, S2) of shape (R, N+1): S1[:, n] fits rows 1..n and S2[:, n] fits rows n+1..N
    """
    zeros = np.zeros((X.shape[0], 1))
    w_fwd = batch_recursive_residuals(X, y)
    w_bwd = batch_recursive_residuals(X[:, ::-1], y[:, ::-1])
    S1 = np.hstack([zeros, np.cumsum(w_fwd ** 2, axis=1)])
    S2 = np.hstack([zeros, np.cumsum(w_bwd ** 2, axis=1)])[:, ::-1]
    return S1, S2


def ml_candidates(N: int, k: int, T_hist: Optional[int] = None) -> Tuple[int, int]:
    """Admissible first indices of the second segment: both segments keep k+1 rows"""
    lo, hi = k + 2, N - k
    if T_hist is not None:
        lo = max(lo, T_hist + 1)
    return _search_range(lo, hi)


def ml_objective(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """S1 + S2 for a second segment starting at t, indexed by t - 1 (shape (R, N+1))"""
    S1, S2 = split_rss(X, y)
    return S1 + S2


def estimate_break_ml(data: Dataset, T_hist: Optional[int] = None) -> BreakEstimate:
    """
    Argmin over t of S1(1..t-1) + S2(t..T); smallest index on ties.

    The returned t_hat starts the second segment, one above the usual
    two-segment split point (the last row of the first segment), which is
    reported as last_pre_break.
    """
    lo, hi = ml_candidates(data.T, data.k, T_hist)
    objective = ml_objective(data.X[None], data.y[None])[0]
    t_hat = lo + int(np.argmin(objective[lo - 1:hi]))
    logger.debug("ML break estimate t_hat=%d over %d..%d", t_hat, lo, hi)
    if T_hist is None:
        return BreakEstimate(method="ml", t_hat=t_hat, T=data.T)
    return BreakEstimate(method="ml", t_hat=t_hat, T=T_hist, T_d=data.T)


def estimate_break(data: Dataset, method: str = "bq", T_hist: Optional[int] = None) -> BreakEstimate:
    if method == "bq":
        return estimate_break_bq(fit_history(data), T_hist)
    if method == "ml":
        return estimate_break_ml(data, T_hist)
    raise ConfigurationError(f"unknown estimation method '{method}'")


def bq_from_path(BS_norms: np.ndarray, lo: int, hi: int) -> np.ndarray:
    """Batched argmax of precomputed ||BS_t|| rows (shape (R, T)), 1-based"""
    return lo + np.argmax(BS_norms[:, lo - 1:hi], axis=1)
