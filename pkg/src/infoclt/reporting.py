from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel

from .errors import OutputError


log = logging.getLogger(__name__)

SIGNIFICANT_DIGITS = 12
FLOAT_FORMAT = f"%.{SIGNIFICANT_DIGITS}g"


def normalize_float(v: float) -> Any:
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return float(f"{v:.{SIGNIFICANT_DIGITS}g}")


def to_jsonable(obj: Any) -> Any:
    """Plain JSON types with fixed float precision; fields declared with repr=False are left out."""
    if isinstance(obj, BaseModel):
        return to_jsonable(obj.model_dump())
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        out = {f.name: to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj) if f.repr}
        return out
    if isinstance(obj, pd.DataFrame):
        return to_jsonable(obj.to_dict(orient="list"))
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return normalize_float(obj)
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def _atomic_write(path: Path, text: str) -> Path:
    """Write text into a temporary sibling of path and return the temp path."""
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
        f.write(text)
    return Path(tmp)


def frame_to_csv(frame: pd.DataFrame) -> str:
    return frame.to_csv(index=False, float_format=FLOAT_FORMAT, na_rep="nan", lineterminator="\n")


class ReportWriter:
    """Collects tables and documents and moves them into place together on commit."""

    def __init__(self, out_dir: str | Path, formats: Sequence[str]):
        self.out_dir = Path(out_dir)
        self.formats = set(formats)
        self._staged: Dict[str, str] = {}

    def ensure_writable(self):
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise OutputError(f"Cannot create output directory {self.out_dir}: {e}") from e
        if not os.access(self.out_dir, os.W_OK):
            raise OutputError(f"Output directory {self.out_dir} is not writable")

    def table(self, name: str, frame: pd.DataFrame):
        if "csv" in self.formats:
            self._staged[f"{name}.csv"] = frame_to_csv(frame)

    def document(self, name: str, payload: Any):
        if "json" in self.formats:
            self._staged[f"{name}.json"] = json.dumps(to_jsonable(payload), indent=2, sort_keys=False) + "\n"

    @property
    def staged(self) -> List[str]:
        return sorted(self._staged)

    def commit(self) -> List[Path]:
        self.ensure_writable()
        pending: List[Tuple[Path, Path]] = []
        try:
            for name in sorted(self._staged):
                target = self.out_dir / name
                pending.append((_atomic_write(target, self._staged[name]), target))
        except OSError as e:
            for tmp, _ in pending:
                tmp.unlink(missing_ok=True)
            raise OutputError(f"Cannot write reports into {self.out_dir}: {e}") from e
        written = []
        for tmp, target in pending:
            os.replace(tmp, target)
            written.append(target)
        log.info("wrote %s", ", ".join(p.name for p in written))
        self._staged.clear()
        return written

