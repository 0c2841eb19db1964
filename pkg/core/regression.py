"""
Recursive least squares and the historical-sample quantities behind the CUSUM process.

Recursive residuals are standardized one-step-ahead forecast errors

    w_t = (y_t - x_t' b_{t-1}) / sqrt(1 + x_t' (X_{t-1}' X_{t-1})^{-1} x_t)

with w_t = 0 while the design of the first t-1 rows is singular (in the
regular case: t <= k). The inverse of the running cross-product matrix is
carried by Sherman-Morrison rank-one updates and refactorized periodically.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import linalg

from config.settings import REGRESSION_SETTINGS
from core.exceptions import DegenerateDataError, DimensionError, IllConditionedError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Responses y (length T) and a T x k design X whose first column is the intercept"""

    y: np.ndarray
    X: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise DimensionError(f"X has shape {X.shape} but y has length {y.shape[0]}")
        if y.shape[0] == 0:
            raise DegenerateDataError("empty dataset")
        if X.shape[1] < 1:
            raise DimensionError("X needs at least the intercept column")
        if not np.all(X[:, 0] == 1.0):
            raise DimensionError("first column of X must be the intercept (all ones)")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X))):
            raise DegenerateDataError("dataset contains non-finite values")
        if X.shape[0] <= X.shape[1]:
            raise DegenerateDataError(
                f"need more observations ({X.shape[0]}) than regressors ({X.shape[1]})"
            )
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)

    @classmethod
    def from_regressors(cls, y, regressors=None) -> "Dataset":
        """Build a dataset, prepending the intercept column to the given regressors"""
        y = np.asarray(y, dtype=float).ravel()
        ones = np.ones((y.shape[0], 1))
        if regressors is None:
            return cls(y, ones)
        regressors = np.asarray(regressors, dtype=float)
        if regressors.ndim == 1:
            regressors = regressors.reshape(-1, 1)
        if regressors.shape[0] != y.shape[0]:
            raise DimensionError(
                f"regressors have {regressors.shape[0]} rows but y has length {y.shape[0]}"
            )
        return cls(y, np.hstack([ones, regressors]))

    @property
    def T(self) -> int:
        return self.y.shape[0]

    @property
    def k(self) -> int:
        return self.X.shape[1]

    def head(self, n: int) -> "Dataset":
        return Dataset(self.y[:n], self.X[:n])

    def with_response(self, y) -> "Dataset":
        return Dataset(y, self.X)


def _is_full_rank(M: np.ndarray, tol: float) -> bool:
    vals = linalg.eigvalsh(M)
    top = vals.max()
    return bool(top > 0 and vals.min() > tol * top)


@dataclass
class RlsState:
    """Running sums of x x' and x y with the inverse of the former once it is full rank"""

    k: int
    t: int
    M: np.ndarray
    v: np.ndarray
    M_inv: Optional[np.ndarray] = None
    rank_ok: bool = False
    steps_since_refactor: int = 0

    def __post_init__(self):
        # Row-major storage everywhere, so a state rebuilt from JSON runs the
        # same BLAS kernels as the one it was saved from
        self.M = np.ascontiguousarray(self.M, dtype=float)
        self.v = np.ascontiguousarray(self.v, dtype=float)
        if self.M_inv is not None:
            self.M_inv = np.ascontiguousarray(self.M_inv, dtype=float)

    @classmethod
    def empty(cls, k: int) -> "RlsState":
        return cls(k=k, t=0, M=np.zeros((k, k)), v=np.zeros(k))

    @classmethod
    def from_data(cls, X: np.ndarray, y: np.ndarray) -> "RlsState":
        """Exact state after consuming all rows of (X, y), refactorized from scratch"""
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float).ravel()
        state = cls(k=X.shape[1], t=X.shape[0], M=X.T @ X, v=X.T @ y)
        state.refactorize()
        return state

    @property
    def beta(self) -> Optional[np.ndarray]:
        if not self.rank_ok:
            return None
        return self.M_inv @ self.v

    def copy(self) -> "RlsState":
        return RlsState(
            k=self.k,
            t=self.t,
            M=self.M.copy(),
            v=self.v.copy(),
            M_inv=None if self.M_inv is None else self.M_inv.copy(),
            rank_ok=self.rank_ok,
            steps_since_refactor=self.steps_since_refactor,
        )

    def refactorize(self):
        """Recompute M_inv from the exact running sum M"""
        if self.t >= self.k and _is_full_rank(self.M, REGRESSION_SETTINGS["eigen_tol"]):
            self.M_inv = np.ascontiguousarray(linalg.inv(self.M))
            self.rank_ok = True
        else:
            self.M_inv = None
            self.rank_ok = False
        self.steps_since_refactor = 0

    def update(self, x, y: float) -> float:
        """Consume one observation and return its recursive residual"""
        x = np.asarray(x, dtype=float).ravel()
        if x.shape[0] != self.k:
            raise DimensionError(f"regressor vector has length {x.shape[0]}, expected {self.k}")
        y = float(y)

        w = 0.0
        Mx = None
        f = None
        if self.rank_ok:
            Mx = self.M_inv @ x
            f = 1.0 + float(x @ Mx)
            w = (y - float(x @ (self.M_inv @ self.v))) / np.sqrt(f)

        self.M += np.outer(x, x)
        self.v += x * y
        self.t += 1

        if self.rank_ok:
            self.M_inv -= np.outer(Mx, Mx) / f
            self.steps_since_refactor += 1
            if self.steps_since_refactor >= REGRESSION_SETTINGS["refactor_every"]:
                logger.debug("Refactorizing RLS inverse at t=%d", self.t)
                self.refactorize()
        elif self.t >= self.k:
            self.refactorize()
        return w


def recursive_residual_step(state: RlsState, x, y: float) -> Tuple[RlsState, float]:
    """Advance a copy of state by one observation; returns the new state and w_t"""
    new_state = state.copy()
    w = new_state.update(x, y)
    return new_state, w


def inverse_sqrt_symmetric(A, tol: Optional[float] = None) -> np.ndarray:
    """
    Symmetric inverse square root via eigendecomposition A = V diag(l) V'.

    Args:
        A: symmetric positive-definite matrix
        tol: relative eigenvalue floor; eigenvalues <= tol * max are rejected

    Returns:
        V diag(l^{-1/2}) V', symmetric
    """
    if tol is None:
        tol = REGRESSION_SETTINGS["eigen_tol"]
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {A.shape}")
    scale = max(1.0, float(np.abs(A).max()))
    if not np.allclose(A, A.T, rtol=0.0, atol=REGRESSION_SETTINGS["symmetry_tol"] * scale):
        raise DimensionError("matrix is not symmetric")
    vals, vecs = linalg.eigh((A + A.T) / 2.0)
    top = vals.max()
    if top <= 0 or vals.min() <= tol * top:
        raise IllConditionedError("ill-conditioned second-moment matrix")
    B = (vecs * vals ** -0.5) @ vecs.T
    return (B + B.T) / 2.0


def residual_variance(w: np.ndarray, k: int) -> float:
    """(T-k-1)^{-1} sum_j (w_j - w_bar)^2 with w_bar over all T entries"""
    T = w.shape[0]
    return float(np.sum((w - w.mean()) ** 2) / (T - k - 1))


@dataclass(frozen=True, eq=False)
class HistoryFit:
    """Everything the standardized CUSUM process needs from the historical sample"""

    data: Dataset
    w: np.ndarray
    sigma_hat: float
    C_T: np.ndarray
    C_inv_sqrt: np.ndarray
    first_valid: int
    state: RlsState

    @property
    def T(self) -> int:
        return self.data.T

    @property
    def k(self) -> int:
        return self.data.k

    @property
    def X(self) -> np.ndarray:
        return self.data.X

    def weighted_residuals(self) -> np.ndarray:
        """Rows x_t w_t, shape (T, k)"""
        return self.data.X * self.w[:, None]


def fit_history(data: Dataset) -> HistoryFit:
    """Recursive residuals, sigma_hat, C_T and C_T^{-1/2} for a dataset"""
    T, k = data.T, data.k
    if T <= k + 1:
        raise DegenerateDataError(f"need T > k + 1 (T={T}, k={k})")

    state = RlsState.empty(k)
    w = np.zeros(T)
    first_valid = None
    for i in range(T):
        if first_valid is None and state.rank_ok:
            first_valid = i + 1
        w[i] = state.update(data.X[i], data.y[i])

    if not state.rank_ok or first_valid is None:
        raise DegenerateDataError("design matrix never reaches full rank")

    sigma2 = residual_variance(w, k)
    scale = float(np.mean(data.y ** 2))
    if sigma2 <= REGRESSION_SETTINGS["degenerate_variance_tol"] * scale:
        raise DegenerateDataError("residual variance is zero (exact fit)")

    C_T = data.X.T @ data.X / T
    C_inv_sqrt = inverse_sqrt_symmetric(C_T)
    logger.debug("Fitted history: T=%d k=%d sigma_hat=%.6g first_valid=%d", T, k, np.sqrt(sigma2), first_valid)
    return HistoryFit(
        data=data,
        w=w,
        sigma_hat=float(np.sqrt(sigma2)),
        C_T=C_T,
        C_inv_sqrt=C_inv_sqrt,
        first_valid=first_valid,
        state=state,
    )


# Batched variants used by the Monte Carlo harness: R independent datasets at once.

def batch_recursive_residuals(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """
    Recursive residuals for R stacked datasets.

    Args:
        X: array (R, N, k); the first k rows of every dataset must be full rank
        y: array (R, N)

    Returns:
        w of shape (R, N), zero for the first k positions
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    R, N, k = X.shape
    if y.shape != (R, N):
        raise DimensionError(f"y has shape {y.shape}, expected {(R, N)}")

    M = np.einsum("rti,rtj->rij", X[:, :k], X[:, :k])
    v = np.einsum("rti,rt->ri", X[:, :k], y[:, :k])
    try:
        M_inv = np.linalg.inv(M)
    except np.linalg.LinAlgError as exc:
        raise DegenerateDataError("initial design block is singular") from exc

    refactor_every = REGRESSION_SETTINGS["refactor_every"]
    w = np.zeros((R, N))
    since = 0
    for t in range(k, N):
        x = X[:, t]
        yt = y[:, t]
        beta = np.einsum("rij,rj->ri", M_inv, v)
        Mx = np.einsum("rij,rj->ri", M_inv, x)
        f = 1.0 + np.einsum("ri,ri->r", x, Mx)
        w[:, t] = (yt - np.einsum("ri,ri->r", x, beta)) / np.sqrt(f)

        M += x[:, :, None] * x[:, None, :]
        v += x * yt[:, None]
        M_inv -= Mx[:, :, None] * Mx[:, None, :] / f[:, None, None]
        since += 1
        if since >= refactor_every:
            M_inv = np.linalg.inv(M)
            since = 0
    return w


def batch_inverse_sqrt(A: np.ndarray) -> np.ndarray:
    """Inverse square roots of a stack of symmetric matrices, shape (R, k, k)"""
    vals, vecs = np.linalg.eigh(A)
    top = vals[:, -1]
    if np.any(vals[:, 0] <= REGRESSION_SETTINGS["eigen_tol"] * top):
        raise IllConditionedError("ill-conditioned second-moment matrix")
    return np.einsum("rij,rj,rkj->rik", vecs, vals ** -0.5, vecs)


def batch_history_quantities(X: np.ndarray, w: np.ndarray, T: int) -> Tuple[np.ndarray, np.ndarray]:
    """sigma_hat (R,) and C_T^{-1/2} (R, k, k) from the first T rows of each dataset"""
    k = X.shape[2]
    wT = w[:, :T]
    sigma2 = np.sum((wT - wT.mean(axis=1, keepdims=True)) ** 2, axis=1) / (T - k - 1)
    C = np.einsum("rti,rtj->rij", X[:, :T], X[:, :T]) / T
    return np.sqrt(sigma2), batch_inverse_sqrt(C)
