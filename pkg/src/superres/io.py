"""Deterministic CSV/JSON writers with a provenance header."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from pathlib import Path

import numpy as np

from . import __version__


def _plain(obj):
    """Convert numpy scalars/arrays and non-finite floats into JSON-safe values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if hasattr(obj, "to_dict"):
        return _plain(obj.to_dict())
    return obj


def canonical_json(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()


def header(config_sha: str, seed) -> dict:
    return {"tool": "superres", "version": __version__, "config_sha256": config_sha,
            "seed": seed}


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    return str(v)


def write_csv(path, columns, rows, hdr: dict) -> Path:
    """Write rows under a ``# key=value`` comment line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    buf.write("# " + " ".join(f"{k}={v}" for k, v in hdr.items()) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    path.write_text(buf.getvalue())
    return path


def write_json(path, payload: dict, hdr: dict) -> Path:
    """JSON has no comments, so the header is the leading ``_header`` member."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"_header": hdr}
    doc.update(_plain(payload))
    path.write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n")
    return path


def read_csv(path):
    """Return (header dict, column names, rows as lists of strings)."""
    lines = Path(path).read_text().splitlines()
    hdr = {}
    if lines and lines[0].startswith("#"):
        for tok in lines[0][1:].split():
            k, _, v = tok.partition("=")
            hdr[k] = v
        lines = lines[1:]
    rows = list(csv.reader(lines))
    return hdr, rows[0], rows[1:]
