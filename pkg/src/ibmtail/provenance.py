"""Atomic output files, config hashing and run manifests."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import platform
import sys
import tempfile


def _clean(obj):
    """JSON-safe copy: numpy scalars and arrays to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "tolist"):
        return _clean(obj.tolist())
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, allow_nan=False) + "\n"


def config_hash(config: dict) -> str:
    """sha256 of the canonical JSON form, first 16 hex digits."""
    text = json.dumps(_clean(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def csv_text(rows, comment: str | None = None) -> str:
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    for row in rows:
        w.writerow(["" if v is None else _cell(v) for v in row])
    return buf.getvalue()


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    if hasattr(v, "item"):
        return _cell(v.item())
    return v


def write_atomic(path: str, text: str) -> None:
    """Write through a temporary file in the target directory, then rename."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def versions() -> dict:
    import numba
    import numpy
    import scipy

    from . import __version__

    return {"ibmtail": __version__, "python": sys.version.split()[0],
            "platform": platform.platform(), "numpy": numpy.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


def manifest_path(output: str) -> str:
    return output + ".manifest.json"


def manifest(config: dict, chash: str, seed, wall_time: float, extra: dict | None = None) -> dict:
    out = {"config": config, "config_hash": chash, "seed": seed, "versions": versions(),
           "wall_time_seconds": wall_time}
    if extra:
        out.update(extra)
    return out
