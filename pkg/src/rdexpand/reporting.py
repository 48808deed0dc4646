"""Deterministic JSON/CSV emission with provenance.

Reports hold only values that are a function of ``(config, seed)``; wall-clock
times go to a separate ``<name>.meta.json`` so that reruns give byte-identical
reports.
"""

from dataclasses import asdict, is_dataclass
import csv
import datetime as _dt
import io
import json
import math
import os
import platform

import numpy as np

SCHEMA = 1


def jsonable(obj):
    """Convert numpy scalars/arrays and dataclasses; non-finite floats become strings."""
    if is_dataclass(obj) and not isinstance(obj, type):
        return jsonable(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isfinite(v):
            return v
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    if isinstance(obj, complex):
        return {"re": jsonable(obj.real), "im": jsonable(obj.imag)}
    return obj


def dumps(obj):
    return json.dumps(jsonable(obj), sort_keys=True, indent=2) + "\n"


def versions():
    import scipy
    import sklearn

    from . import __version__
    return {"rdexpand": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "scikit-learn": sklearn.__version__}


def envelope(name, result, config_hash, seed, flags=None):
    return {
        "report": name,
        "schema": SCHEMA,
        "config_hash": config_hash,
        "seed": int(seed),
        "versions": versions(),
        "flags": flags or {},
        "result": result,
    }


def write_text(path, text):
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(text)


def write_report(out_dir, name, result, config_hash, seed, flags=None, started=None):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{name}.json")
    write_text(path, dumps(envelope(name, result, config_hash, seed, flags)))
    now = _dt.datetime.now(_dt.timezone.utc)
    meta = {"finished": now.isoformat(), "python": platform.python_version()}
    if started is not None:
        meta["started"] = started.isoformat()
        meta["elapsed_s"] = (now - started).total_seconds()
    write_text(os.path.join(out_dir, f"{name}.meta.json"), dumps(meta))
    marker = os.path.join(out_dir, f"{name}.FAILED")
    if os.path.exists(marker):
        os.remove(marker)
    return path


def write_failure(out_dir, name, exc, config_hash=None, seed=None):
    os.makedirs(out_dir, exist_ok=True)
    body = {"report": name, "error": type(exc).__name__, "message": str(exc),
            "config_hash": config_hash, "seed": seed}
    path = os.path.join(out_dir, f"{name}.FAILED")
    write_text(path, dumps(body))
    return path


def csv_text(header, rows):
    """CSV with '.' decimals, '\\n' line endings and a header row; floats use repr."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()
