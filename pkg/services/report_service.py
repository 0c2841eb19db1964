"""
Report persistence: versioned JSON documents and plot-ready CSV tables
"""
import json
import logging
import os
import subprocess
from datetime import datetime, timezone
from functools import lru_cache
from typing import Any, Dict, Optional

import numpy as np
import pandas as pd

from config.settings import CSV_SETTINGS, SCHEMA_VERSION

logger = logging.getLogger(__name__)


@lru_cache(maxsize=1)
def build_version() -> str:
    """git describe of the working tree, or 'unknown' outside a checkout"""
    try:
        result = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            capture_output=True, text=True, timeout=5,
            cwd=os.path.dirname(os.path.abspath(__file__)),
        )
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return result.stdout.strip() or "unknown"


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        value = float(value)
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


class ReportService:
    """Writes reports to files or streams"""

    def __init__(self, output_dir: Optional[str] = None):
        self.output_dir = output_dir
        if output_dir:
            os.makedirs(output_dir, exist_ok=True)

    def _resolve(self, path: str) -> str:
        if self.output_dir and not os.path.isabs(path):
            path = os.path.join(self.output_dir, path)
        folder = os.path.dirname(path)
        if folder:
            os.makedirs(folder, exist_ok=True)
        return path

    @staticmethod
    def with_metadata(doc: Dict[str, Any], **metadata) -> Dict[str, Any]:
        """Attach the run metadata block (seed, reps, build version, timestamp)"""
        doc = dict(doc)
        doc.setdefault("schema_version", SCHEMA_VERSION)
        block = dict(doc.get("metadata") or {})
        block.update(metadata)
        block.setdefault("version", build_version())
        block.setdefault("created", datetime.now(timezone.utc).isoformat())
        doc["metadata"] = block
        return doc

    @staticmethod
    def dumps(doc: Dict[str, Any]) -> str:
        return json.dumps(_jsonable(doc), indent=2, ensure_ascii=False)

    def save_json(self, doc: Dict[str, Any], path: str) -> str:
        path = self._resolve(path)
        with open(path, "w", encoding=CSV_SETTINGS["encoding"]) as f:
            f.write(self.dumps(doc))
        logger.info("Wrote %s", path)
        return path

    def save_csv(self, frame: pd.DataFrame, path: str) -> str:
        path = self._resolve(path)
        frame.to_csv(path, index=False, encoding=CSV_SETTINGS["encoding"])
        logger.info("Wrote %s (%d rows)", path, len(frame))
        return path

    def save(self, doc: Dict[str, Any], frame: Optional[pd.DataFrame], path: str, fmt: str = "json") -> str:
        """Save as JSON (the document) or CSV (the tabular part)"""
        if fmt == "csv":
            if frame is None:
                raise ValueError("this report has no tabular form")
            return self.save_csv(frame, path)
        return self.save_json(doc, path)

    @staticmethod
    def load_json(path: str) -> Dict[str, Any]:
        with open(path, "r", encoding=CSV_SETTINGS["encoding"]) as f:
            return json.load(f)

    @staticmethod
    def load_csv(path: str) -> pd.DataFrame:
        return pd.read_csv(path, encoding=CSV_SETTINGS["encoding"])
