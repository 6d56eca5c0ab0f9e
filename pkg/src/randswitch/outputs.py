"""Deterministic CSV and text writers with a provenance header."""
from __future__ import annotations

import csv
import math
from importlib import metadata
from pathlib import Path
from typing import Iterable, Sequence

from .rng import generator_identity


def package_version() -> str:
    try:
        return metadata.version("randswitch")
    except metadata.PackageNotFoundError:
        return "unknown"


def header(scenarios: Sequence, seed: int) -> list[str]:
    lines = [f"randswitch {package_version()}", f"seed: {seed}", f"generator: {generator_identity()}"]
    for s in scenarios:
        lines.append(f"scenario: {s.name} sha256={s.sha256}")
    return lines


def _cell(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float) or hasattr(v, "dtype"):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if v is None:
        return ""
    return str(v)


def write_csv(path: Path, head: Sequence[str], columns: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """Comment header lines (``# ...``), one column-name row, then data; LF line endings."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in head:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def write_text(path: Path, head: Sequence[str], body: str) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in head:
            fh.write(f"# {line}\n")
        fh.write(body.rstrip("\n") + "\n")
    return path
