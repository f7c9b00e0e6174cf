"""Columnar text files with a `# key = value` header, written atomically at 17 significant digits."""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


def parse_value(text: str):
    t = text.strip()
    if t in ("true", "false"):
        return t == "true"
    try:
        return int(t)
    except ValueError:
        pass
    try:
        return float(t)
    except ValueError:
        return t


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_table(path, columns: dict[str, np.ndarray], header: dict | None = None) -> None:
    names = list(columns)
    data = [np.asarray(columns[k], dtype=float) for k in names]
    n = len(data[0]) if data else 0
    if any(len(d) != n for d in data):
        raise ValueError("columns differ in length")
    lines = [f"# {k} = {fmt(v)}" for k, v in (header or {}).items()]
    lines.append("# columns: " + " ".join(names))
    for i in range(n):
        lines.append(" ".join(f"{d[i]:.17g}" for d in data))
    atomic_write(path, "\n".join(lines) + "\n")


def read_table(path) -> tuple[dict, dict[str, np.ndarray]]:
    header: dict = {}
    names: list[str] = []
    rows: list[list[float]] = []
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("# columns:"):
                names = line[len("# columns:"):].split()
            elif line.startswith("#"):
                key, _, val = line[1:].partition("=")
                header[key.strip()] = parse_value(val)
            elif line.strip():
                rows.append([float(t) for t in line.split()])
    arr = np.array(rows, dtype=float).reshape(len(rows), len(names))
    return header, {k: arr[:, i].copy() for i, k in enumerate(names)}
