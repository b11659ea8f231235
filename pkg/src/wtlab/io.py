"""CSV / plot-data / manifest output.  Floats are written with 17 significant digits."""

from __future__ import annotations

import csv
import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np

FLOAT_FMT = "%.17g"


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, str):
        return v
    return FLOAT_FMT % float(v)


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def csv_text(header, rows) -> str:
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(_fmt(v) for v in r))
    return "\n".join(lines) + "\n"


def write_csv(path, header, rows) -> Path:
    """Header row then one line per row; integers verbatim, floats as %.17g."""
    atomic_write_text(path, csv_text(header, rows))
    return Path(path)


def read_csv(path) -> dict:
    """Columns by name as float arrays."""
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        data = [[float(x) for x in row] for row in rd if row]
    arr = np.array(data, dtype=float).reshape(-1, len(header))
    return {h: arr[:, i] for i, h in enumerate(header)}


def write_dat(path, header, rows) -> Path:
    """gnuplot-friendly whitespace columns with a ``#`` header line."""
    lines = ["# " + " ".join(header)]
    for r in rows:
        lines.append(" ".join(_fmt(v) for v in r))
    atomic_write_text(path, "\n".join(lines) + "\n")
    return Path(path)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, manifest: dict) -> Path:
    atomic_write_text(path, json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n")
    return Path(path)


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def verify_manifest(path) -> list[str]:
    """Names of files whose checksum no longer matches the manifest."""
    path = Path(path)
    man = json.loads(path.read_text())
    bad = []
    for name, digest in man.get("files", {}).items():
        f = path.parent / name
        if not f.exists() or sha256_file(f) != digest:
            bad.append(name)
    return bad
