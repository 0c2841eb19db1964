"""
Critical value tables: published asymptotic values, simulated tables and lambda resolution
"""
import json
import logging
import math
import os
from typing import Dict, Optional, Tuple

import pandas as pd

from config.settings import (
    MONITORING_ALPHAS,
    Q_INFINITE_CRITICAL_VALUES,
    RETROSPECTIVE_ALPHAS,
    RETROSPECTIVE_CRITICAL_VALUES,
    SBQ_MONITORING_CRITICAL_VALUES,
    SCHEMA_VERSION,
)
from core.exceptions import ConfigurationError, CriticalValueNotFoundError, DatasetFormatError

logger = logging.getLogger(__name__)

Key = Tuple[str, int, float, str, str]


def horizon_tag(horizon: Optional[float]) -> str:
    """'ret', 'inf' or the horizon m as text"""
    if horizon is None:
        return "ret"
    if math.isinf(horizon):
        return "inf"
    return repr(float(horizon))


def parse_horizon(tag) -> Optional[float]:
    """Inverse of horizon_tag; also accepts plain numbers"""
    if tag is None:
        return None
    if isinstance(tag, (int, float)):
        return float(tag)
    text = str(tag).strip().lower()
    if text in ("ret", "retrospective"):
        return None
    if text in ("inf", "infinite", "infinity"):
        return math.inf
    try:
        return float(text)
    except ValueError as exc:
        raise ConfigurationError(f"invalid horizon '{tag}'") from exc


def _alpha_key(alpha: float) -> float:
    return round(float(alpha), 6)


def _make_key(kind: str, nu: int, alpha: float, boundary: str, horizon: Optional[float]) -> Key:
    return (kind, int(nu), _alpha_key(alpha), boundary, horizon_tag(horizon))


class CriticalValueTable:
    """Simulated critical values keyed by (kind, nu, alpha, boundary, horizon)"""

    def __init__(self, metadata: Optional[Dict] = None):
        self.entries: Dict[Key, float] = {}
        self.metadata = dict(metadata or {})

    def __len__(self):
        return len(self.entries)

    def __contains__(self, key) -> bool:
        return _make_key(*key) in self.entries

    def add(self, kind: str, nu: int, alpha: float, value: float,
            boundary: str = "linear", horizon: Optional[float] = None):
        self.entries[_make_key(kind, nu, alpha, boundary, horizon)] = float(value)

    def get(self, kind: str, nu: int, alpha: float,
            boundary: str = "linear", horizon: Optional[float] = None) -> float:
        key = _make_key(kind, nu, alpha, boundary, horizon)
        if key not in self.entries:
            raise CriticalValueNotFoundError(f"no critical value for {key}")
        return self.entries[key]

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {"kind": k, "nu": nu, "alpha": a, "boundary": b, "horizon": h, "value": v}
            for (k, nu, a, b, h), v in sorted(self.entries.items())
        ]
        return pd.DataFrame(rows, columns=["kind", "nu", "alpha", "boundary", "horizon", "value"])

    def to_dict(self) -> Dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "metadata": self.metadata,
            "entries": self.to_frame().to_dict(orient="records"),
        }

    @classmethod
    def from_dict(cls, doc: Dict) -> "CriticalValueTable":
        try:
            table = cls(metadata=doc.get("metadata"))
            for entry in doc["entries"]:
                table.add(
                    entry["kind"], entry["nu"], entry["alpha"], entry["value"],
                    boundary=entry.get("boundary", "linear"),
                    horizon=parse_horizon(entry.get("horizon", "ret")),
                )
        except (KeyError, TypeError) as exc:
            raise DatasetFormatError(f"malformed critical value table: {exc}") from exc
        return table

    def save(self, path: str):
        folder = os.path.dirname(path)
        if folder:
            os.makedirs(folder, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)
        logger.info("Saved %d critical values to %s", len(self), path)

    @classmethod
    def load(cls, path: str) -> "CriticalValueTable":
        with open(path, "r", encoding="utf-8") as f:
            try:
                doc = json.load(f)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"{path}: not a JSON document") from exc
        return cls.from_dict(doc)


def _alpha_index(alpha: float, alphas) -> int:
    for i, a in enumerate(alphas):
        if abs(a - alpha) < 1e-9:
            return i
    raise CriticalValueNotFoundError(f"alpha={alpha} is not tabulated (available: {alphas})")


def published_lambda(kind: str, nu: int, alpha: float,
                     boundary: str = "linear", horizon: Optional[float] = None) -> float:
    """Look up the asymptotic critical value in the published tables"""
    if boundary == "radical_chu":
        return 1.0
    key = (kind, nu, alpha, horizon_tag(horizon))
    try:
        if horizon is None:
            column = "sbq" if kind == "sbq" else "q"
            return RETROSPECTIVE_CRITICAL_VALUES[column][nu][_alpha_index(alpha, RETROSPECTIVE_ALPHAS)]
        if kind == "sbq":
            m = math.inf if math.isinf(horizon) else float(horizon)
            return SBQ_MONITORING_CRITICAL_VALUES[m][nu - 1][_alpha_index(alpha, MONITORING_ALPHAS)]
        if kind == "q":
            if math.isinf(horizon):
                return Q_INFINITE_CRITICAL_VALUES[nu][_alpha_key(alpha)]
            if float(horizon) == 2.0:
                # the fixed-endpoint forward limit at m = 2 is the retrospective one
                return RETROSPECTIVE_CRITICAL_VALUES["q"][nu][_alpha_index(alpha, RETROSPECTIVE_ALPHAS)]
    except (KeyError, IndexError):
        pass
    raise CriticalValueNotFoundError(f"no published critical value for (kind, nu, alpha, horizon)={key}")


def resolve_lambda(kind: str, nu: int, alpha: float, boundary: str = "linear",
                   horizon: Optional[float] = None, lam: Optional[float] = None,
                   table: Optional[CriticalValueTable] = None) -> float:
    """
    Resolve the critical value for a detector.

    Args:
        kind: detector kind
        nu: effective dimension
        alpha: significance level
        boundary: boundary kind; the radical boundary absorbs lambda
        horizon: None (retrospective), finite m or math.inf
        lam: explicit value, used as is when given
        table: user-supplied simulated table consulted before the published values

    Returns:
        The threshold the normalized statistic is compared with
    """
    if boundary == "radical_chu":
        return 1.0
    if lam is not None:
        return float(lam)
    if table is not None:
        try:
            value = table.get(kind, nu, alpha, boundary, horizon)
            logger.info("Critical value %.4f taken from the user table", value)
            return value
        except CriticalValueNotFoundError:
            logger.warning(
                "User table has no entry for %s nu=%d alpha=%s horizon=%s; using the published tables",
                kind, nu, alpha, horizon_tag(horizon),
            )
    return published_lambda(kind, nu, alpha, boundary, horizon)
