"""CSV/JSON emission and run manifests."""

from __future__ import annotations

import csv
import enum
import json
import platform
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SIM_COLUMNS = ("dvth_mv", "alpha", "beta", "padding", "deadline", "med", "msb_flip_prob", "error_rate", "norm_energy")
SELECTION_COLUMNS = ("level", "alpha", "beta", "padding", "method", "accuracy", "accuracy_loss", "norm_delay",
                     "norm_energy", "timing_errors", "verify_vectors")


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, enum.Enum):
        return str(v.value)
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.10g}"
    return str(v)


def write_table(path: Path, columns: Sequence[str], rows: Iterable[Sequence], fmt_: str = "csv") -> Path:
    """Write ``rows`` as CSV (header first) or as a JSON list of records."""
    rows = [list(r) for r in rows]
    path = Path(path)
    if fmt_ == "json":
        path = path.with_suffix(".json")
        records = [{c: _jsonable(v) for c, v in zip(columns, r)} for r in rows]
        path.write_text(json.dumps(records, indent=1) + "\n")
        return path
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([fmt(v) for v in r])
    return path


def read_csv(path: Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _jsonable(v):
    if isinstance(v, enum.Enum):
        return v.value
    if isinstance(v, np.generic):
        return v.item()
    return v


def versions() -> dict[str, str]:
    import scipy

    from . import __version__

    return {"agingquant": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__}


def write_manifest(out_dir: Path, command: str, argv: list[str], config: dict, outputs: list[Path]) -> Path:
    path = Path(out_dir) / "manifest.json"
    doc = {
        "command": command,
        "argv": argv,
        "config": {k: _jsonable(v) for k, v in config.items()},
        "versions": versions(),
        "outputs": sorted(p.name for p in outputs),
    }
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return path
