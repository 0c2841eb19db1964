"""
Monte Carlo simulation of the limiting detector functionals.

Brownian paths are simulated on an equidistant grid: [0, 1] for
retrospective tests, [0, m-1] in monitoring time r = t/T - 1 for a fixed
endpoint m, and the unit interval with the bridge representation
W(r) = B(u)/(1-u), r = u/(1-u), for the infinite horizon.
"""
import logging
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd

from config.settings import DETECTOR_KINDS, SIMULATION_SETTINGS
from core.detectors import Boundary, backward_trace, forward_trace, stacked_trace
from core.exceptions import (
    ConfigurationError,
    CriticalValueNotFoundError,
    NoCrossingError,
)
from services.critical_values import CriticalValueTable, horizon_tag, resolve_lambda
from services.mc_runner import MonteCarloRunner, empirical_quantile, replication_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GaussianGrid:
    """Equidistant grid carrying a dim-dimensional standard Brownian motion"""

    n_grid: int
    dim: int = 1
    horizon: Optional[float] = None

    def __post_init__(self):
        if self.n_grid < 1:
            raise ConfigurationError("grid needs at least one step")
        if self.dim < 1:
            raise ConfigurationError("dimension must be positive")
        if self.horizon is not None and not self.horizon > 1.0:
            raise ConfigurationError(f"monitoring horizon must exceed 1, got {self.horizon}")

    @property
    def span(self) -> float:
        if self.horizon is None or math.isinf(self.horizon):
            return 1.0
        return self.horizon - 1.0

    @property
    def step(self) -> float:
        return self.span / self.n_grid

    def times(self) -> np.ndarray:
        return np.arange(self.n_grid + 1) * self.step

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        """Path values at the grid points, shape (n_grid + 1, dim), starting at 0"""
        increments = rng.standard_normal((self.n_grid, self.dim)) * math.sqrt(self.step)
        return np.vstack([np.zeros((1, self.dim)), np.cumsum(increments, axis=0)])


def _norm(a: np.ndarray) -> np.ndarray:
    return np.abs(a).max(axis=-1)


def _stacked_nonuniform(Wt: np.ndarray, r: np.ndarray, boundary: Boundary) -> np.ndarray:
    """max over j < i of ||Wt_i - Wt_j|| / d(r_i - r_j), for i = 1..n"""
    R, n1, _ = Wt.shape
    M = np.zeros((R, n1 - 1))
    for span in range(1, n1):
        vals = _norm(Wt[:, span:] - Wt[:, :-span]) / boundary.shape(r[span:] - r[:-span])
        np.maximum(M[:, span - 1:], vals, out=M[:, span - 1:])
    return M


def _check_combination(kind: str, horizon: Optional[float], boundary: Boundary):
    if kind not in DETECTOR_KINDS:
        raise ConfigurationError(f"unknown detector kind '{kind}'")
    if kind == "bq" and horizon is not None:
        raise ConfigurationError("the backward detector is retrospective only")
    if boundary.kind == "radical_chu" and (kind != "q" or horizon is None):
        raise ConfigurationError("the radical boundary is only available for forward monitoring")


def limit_traces(kind: str, horizon: Optional[float], boundary: Boundary,
                 W: np.ndarray, drift: Optional[np.ndarray] = None):
    """
    Detector traces of the limiting functional for a stack of grid paths.

    Args:
        kind: q, bq or sbq
        horizon: None, finite m or math.inf
        boundary: boundary providing the shape d
        W: Brownian paths, shape (R, n+1, nu), on the grid matching the horizon
        drift: optional drift values at the grid points, shape (n+1,)

    Returns:
        (trace, locations): trace of shape (R, n_eff) and the relative time t/T
        of every trace column
    """
    _check_combination(kind, horizon, boundary)
    R, n1, _ = W.shape
    n = n1 - 1

    if horizon is not None and math.isinf(horizon):
        if drift is not None:
            raise ConfigurationError("drifted functionals need a finite horizon")
        u = np.arange(n1) / n
        B = W - u[None, :, None] * W[:, -1:, :]
        Wt = B[:, :n] / (1.0 - u[:n])[None, :, None]
        r = u[:n] / (1.0 - u[:n])
        if kind == "q":
            trace = _norm(Wt[:, 1:]) / boundary.shape(r[1:])
        else:
            trace = _stacked_nonuniform(Wt, r, boundary)
        return trace, 1.0 + r[1:]

    P = W if drift is None else W + np.asarray(drift, dtype=float)[None, :, None]
    if horizon is None:
        r = np.arange(1, n1) / n
        loc = r
    else:
        r = np.arange(1, n1) * (horizon - 1.0) / n
        loc = 1.0 + r
    den = boundary.shape(r)
    if kind == "q":
        trace = forward_trace(P, den)
    elif kind == "bq":
        trace = backward_trace(P, den)
    else:
        trace = stacked_trace(P, den)
    return trace, loc


def simulate_limit_draw(kind: str, nu: int, horizon: Optional[float], boundary: Boundary,
                        grid, rng: np.random.Generator) -> float:
    """One draw of the limiting maximum statistic"""
    if not isinstance(grid, GaussianGrid):
        grid = GaussianGrid(int(grid), nu, horizon)
    if grid.dim != nu or grid.horizon != horizon:
        raise ConfigurationError("grid does not match the requested dimension and horizon")
    trace, _ = limit_traces(kind, horizon, boundary, grid.sample(rng)[None])
    return float(trace.max())


def _limit_block(seed: int, start: int, stop: int, kind: str, nu: int, horizon: Optional[float],
                 boundary: Boundary, n_grid: int, threshold: Optional[float] = None,
                 drift: Optional[np.ndarray] = None) -> np.ndarray:
    """Columns: maximum, earliest crossing location, latest crossing location"""
    grid = GaussianGrid(n_grid, nu, horizon)
    W = np.stack([grid.sample(replication_rng(seed, rep)) for rep in range(start, stop)])
    trace, loc = limit_traces(kind, horizon, boundary, W, drift)

    out = np.full((stop - start, 3), np.nan)
    out[:, 0] = trace.max(axis=1)
    if threshold is not None:
        hit = trace >= threshold
        crossed = hit.any(axis=1)
        first = np.argmax(hit, axis=1)
        last = hit.shape[1] - 1 - np.argmax(hit[:, ::-1], axis=1)
        out[crossed, 1] = loc[first[crossed]]
        out[crossed, 2] = loc[last[crossed]]
    return out


def simulate_functionals(kind: str, nu: int, horizon: Optional[float], boundary: Boundary,
                         n_grid: Optional[int] = None, n_reps: Optional[int] = None, seed: int = 0,
                         threshold: Optional[float] = None, drift: Optional[np.ndarray] = None,
                         workers: Optional[int] = None, block_size: Optional[int] = None) -> np.ndarray:
    """Replicated draws; see _limit_block for the columns"""
    n_grid = n_grid or SIMULATION_SETTINGS["n_grid"]
    n_reps = n_reps or SIMULATION_SETTINGS["n_reps"]
    _check_combination(kind, horizon, boundary)
    runner = MonteCarloRunner(workers=workers, block_size=block_size)
    return runner.run(
        _limit_block, n_reps, seed,
        kind=kind, nu=nu, horizon=horizon, boundary=boundary, n_grid=n_grid,
        threshold=threshold, drift=drift,
    )


def _shape_boundary(boundary: str, alpha: float) -> Boundary:
    if boundary == "radical_chu":
        return Boundary(kind="radical_chu", alpha=alpha)
    return Boundary(kind="linear")


def critical_value(kind: str, nu: int, horizon: Optional[float] = None, boundary: str = "linear",
                   alpha: float = 0.05, n_grid: Optional[int] = None, n_reps: Optional[int] = None,
                   seed: int = 0, workers: Optional[int] = None) -> float:
    """Nearest-rank (1 - alpha) quantile of the simulated maximum statistic"""
    n_reps = n_reps or SIMULATION_SETTINGS["n_reps"]
    if n_reps < SIMULATION_SETTINGS["min_reps"]:
        raise ConfigurationError(f"at least {SIMULATION_SETTINGS['min_reps']} replications are required")
    draws = simulate_functionals(kind, nu, horizon, _shape_boundary(boundary, alpha),
                                 n_grid=n_grid, n_reps=n_reps, seed=seed, workers=workers)
    return empirical_quantile(draws[:, 0], 1.0 - alpha)


def build_table(kinds: Sequence[str], nus: Sequence[int], alphas: Sequence[float],
                horizons: Sequence[Optional[float]], n_grid: Optional[int] = None,
                n_reps: Optional[int] = None, seed: int = 0,
                workers: Optional[int] = None) -> CriticalValueTable:
    """Simulate linear-boundary critical values for every valid (kind, nu, horizon) and alpha"""
    n_grid = n_grid or SIMULATION_SETTINGS["n_grid"]
    n_reps = n_reps or SIMULATION_SETTINGS["n_reps"]
    if n_reps < SIMULATION_SETTINGS["min_reps"]:
        raise ConfigurationError(f"at least {SIMULATION_SETTINGS['min_reps']} replications are required")
    table = CriticalValueTable(metadata={"n_grid": n_grid, "n_reps": n_reps, "seed": seed})
    boundary = Boundary(kind="linear")
    for kind in kinds:
        for horizon in horizons:
            if kind == "bq" and horizon is not None:
                logger.debug("Skipping backward detector at horizon %s", horizon_tag(horizon))
                continue
            for nu in nus:
                draws = simulate_functionals(kind, nu, horizon, boundary, n_grid=n_grid,
                                             n_reps=n_reps, seed=seed, workers=workers)
                for alpha in alphas:
                    table.add(kind, nu, alpha, empirical_quantile(draws[:, 0], 1.0 - alpha),
                              horizon=horizon)
    logger.info("Built critical value table with %d entries", len(table))
    return table


@dataclass(frozen=True)
class BreakSpec:
    """Single break of standardized size c/sigma at relative location tau*"""

    c_over_sigma: float
    tau_star: float

    def __post_init__(self):
        if self.c_over_sigma < 0:
            raise ConfigurationError("break magnitude must be non-negative")
        if self.tau_star <= 0:
            raise ConfigurationError("break location must be positive")

    def h(self, r):
        return h_single_break(r, self)


def h_single_break(r, spec: BreakSpec):
    """c tau* (ln r - ln tau*) for r >= tau*, zero before"""
    r = np.asarray(r, dtype=float)
    tau = spec.tau_star
    value = spec.c_over_sigma * tau * np.log(np.maximum(r, tau) / tau)
    return float(value) if value.ndim == 0 else value


@dataclass(frozen=True)
class PiecewiseConstant:
    """g(z) = values[i] on [breaks[i-1], breaks[i]) with breaks[-1] = 0 implied"""

    breaks: tuple
    values: tuple

    def __post_init__(self):
        object.__setattr__(self, "breaks", tuple(float(b) for b in self.breaks))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if len(self.values) != len(self.breaks) + 1:
            raise ConfigurationError("need one more value than break points")
        edges = (0.0,) + self.breaks
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise ConfigurationError("break points must be positive and strictly increasing")

    def __call__(self, z):
        return np.asarray(self.values)[np.searchsorted(self.breaks, np.asarray(z, dtype=float), side="right")]


def h_general(r, g: PiecewiseConstant, sigma: float = 1.0):
    """
    Drift h(r) = G(r) - int_0^r G(z)/z dz with G(r) = int_0^r g, divided by sigma.

    G is piecewise linear, so on a piece [p, q] inside [a_i, a_{i+1}) with
    slope g_i the inner integral is (G(a_i) - g_i a_i) ln(q/p) + g_i (q - p).
    """
    r_arr = np.atleast_1d(np.asarray(r, dtype=float))
    edges = np.array((0.0,) + g.breaks + (np.inf,))
    G_edges = np.concatenate([[0.0], np.cumsum(np.asarray(g.values[:-1]) * np.diff(edges[:-1]))])

    G_r = np.zeros_like(r_arr)
    inner = np.zeros_like(r_arr)
    for i, gi in enumerate(g.values):
        a, b = edges[i], edges[i + 1]
        active = r_arr > a
        if not np.any(active):
            break
        q = np.minimum(r_arr[active], b)
        intercept = G_edges[i] - gi * a
        piece = gi * (q - a)
        if a > 0:
            piece = piece + intercept * np.log(q / a)
        inner[active] += piece
        inside = active & (r_arr <= b)
        G_r[inside] = G_edges[i] + gi * (r_arr[inside] - a)

    h = (G_r - inner) / sigma
    return float(h[0]) if np.ndim(r) == 0 else h


def _drift_on_grid(spec: BreakSpec, horizon: Optional[float], n_grid: int) -> np.ndarray:
    grid = GaussianGrid(n_grid, 1, horizon)
    r = grid.times()
    if horizon is None:
        return spec.h(r)
    return spec.h(1.0 + r) - spec.h(1.0)


def _threshold(kind: str, alpha: float, lam: Optional[float], horizon: Optional[float],
               boundary: str, n_grid: int, seed: int, workers: Optional[int]) -> float:
    try:
        return resolve_lambda(kind, 1, alpha, boundary=boundary, horizon=horizon, lam=lam)
    except CriticalValueNotFoundError:
        logger.warning("No tabulated critical value for %s at horizon %s; simulating one",
                       kind, horizon_tag(horizon))
        return critical_value(kind, 1, horizon, boundary, alpha, n_grid=n_grid, seed=seed, workers=workers)


def local_power(kind: str, spec: BreakSpec, alpha: float = 0.05, lam: Optional[float] = None,
                n_grid: Optional[int] = None, n_reps: Optional[int] = None, seed: int = 0,
                horizon: Optional[float] = None, workers: Optional[int] = None) -> float:
    """Rejection rate of the drifted limiting functional (nu = 1, linear boundary)"""
    n_grid = n_grid or SIMULATION_SETTINGS["n_grid"]
    threshold = _threshold(kind, alpha, lam, horizon, "linear", n_grid, seed, workers)
    draws = simulate_functionals(kind, 1, horizon, Boundary(kind="linear"), n_grid=n_grid, n_reps=n_reps,
                                 seed=seed, drift=_drift_on_grid(spec, horizon, n_grid), workers=workers)
    return float(np.mean(draws[:, 0] >= threshold))


def local_delay(kind: str, spec: BreakSpec, alpha: float = 0.05, lam: Optional[float] = None,
                m: float = 4.0, n_grid: Optional[int] = None, n_reps: Optional[int] = None,
                seed: int = 0, boundary: str = "linear", workers: Optional[int] = None) -> float:
    """Mean of (first crossing location - tau*) over draws crossing inside [tau*, m]"""
    if kind not in ("q", "sbq"):
        raise ConfigurationError("local delay is defined for the monitoring detectors q and sbq")
    if math.isinf(m):
        raise ConfigurationError("local delay needs a finite horizon")
    if not 1.0 < spec.tau_star < m:
        raise ConfigurationError(f"break location must lie in (1, {m})")
    n_grid = n_grid or SIMULATION_SETTINGS["n_grid"]
    shape = _shape_boundary(boundary, alpha)
    threshold = _threshold(kind, alpha, lam, m, boundary, n_grid, seed, workers)
    draws = simulate_functionals(kind, 1, m, shape, n_grid=n_grid, n_reps=n_reps, seed=seed,
                                 threshold=threshold, drift=_drift_on_grid(spec, m, n_grid), workers=workers)
    loc = draws[:, 1]
    crossed = ~np.isnan(loc)
    inside = crossed & (loc >= spec.tau_star) & (loc <= m)
    if not np.any(inside):
        raise NoCrossingError(int(inside.sum()), draws.shape[0])
    return float(np.mean(loc[inside] - spec.tau_star))


def size_distribution(kind: str, horizon: Optional[float] = None, alpha: float = 0.05,
                      lam: Optional[float] = None, n_grid: Optional[int] = None,
                      n_reps: Optional[int] = None, seed: int = 0, bins: int = 20,
                      boundary: str = "linear", workers: Optional[int] = None) -> pd.DataFrame:
    """
    Histogram of the first boundary exceedance under the null, conditional on rejection.

    The first exceedance is taken in the detector's own running direction, so
    the backward detector reports its latest crossing in natural time.
    Bins cover [0, 1] in retrospective time, in (t/T - 1)/(m - 1) for a fixed
    endpoint and in u = r/(1 + r) for the infinite horizon; the abscissa is the
    bin centre mapped back to relative time t/T.
    """
    n_grid = n_grid or SIMULATION_SETTINGS["n_grid"]
    threshold = _threshold(kind, alpha, lam, horizon, boundary, n_grid, seed, workers)
    draws = simulate_functionals(kind, 1, horizon, _shape_boundary(boundary, alpha), n_grid=n_grid,
                                 n_reps=n_reps, seed=seed, threshold=threshold, workers=workers)
    loc = draws[:, 2] if kind == "bq" else draws[:, 1]
    loc = loc[~np.isnan(loc)]
    if loc.size == 0:
        raise NoCrossingError(0, draws.shape[0])

    if horizon is None:
        unit = loc
    elif math.isinf(horizon):
        unit = (loc - 1.0) / loc
    else:
        unit = (loc - 1.0) / (horizon - 1.0)
    counts, edges = np.histogram(unit, bins=bins, range=(0.0, 1.0))
    centres = (edges[:-1] + edges[1:]) / 2.0
    if horizon is None:
        abscissa = centres
    elif math.isinf(horizon):
        abscissa = 1.0 + centres / (1.0 - centres)
    else:
        abscissa = 1.0 + centres * (horizon - 1.0)
    return pd.DataFrame({"abscissa": abscissa, "value": counts / counts.sum()})


def power_curve(kind: str, tau_star: float, c_values: Iterable[float], **kwargs) -> pd.DataFrame:
    """Local power against the standardized break size"""
    c_values = list(c_values)
    power = [local_power(kind, BreakSpec(c, tau_star), **kwargs) for c in c_values]
    return pd.DataFrame({"abscissa": c_values, "value": power})


def delay_curve(kind: str, c_over_sigma: float, tau_values: Iterable[float], **kwargs) -> pd.DataFrame:
    """Mean local relative delay against the break location"""
    tau_values = list(tau_values)
    delay = [local_delay(kind, BreakSpec(c_over_sigma, tau), **kwargs) for tau in tau_values]
    return pd.DataFrame({"abscissa": tau_values, "value": delay})
