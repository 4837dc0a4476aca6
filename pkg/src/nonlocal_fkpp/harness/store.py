"""On-disk formats of a run directory.

Snapshot binary (``snapshots.bin``), little-endian::

    magic    8 bytes   b"NFKPSNP1"
    records  repeated until end of file:
        n     int64    number of stored values
        dx    float64  grid spacing
        x_lo  float64  left edge of the grid (cell i is centred at x_lo + (i + 1/2) dx)
        t     float64  time of the snapshot
        u     n float64

Values right of the stored prefix are zero.  CSV files start with ``#`` comment
lines carrying the config hash and seed.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..solver import Domain, ScalarField

MAGIC = b"NFKPSNP1"
_HEADER = struct.Struct("<qddd")


class MissingArtifacts(FileNotFoundError):
    def __init__(self, missing: Sequence[str]):
        self.missing = list(missing)
        super().__init__("missing run artifacts: " + ", ".join(self.missing))


def write_snapshots(path, fields: Iterable[ScalarField]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for f in fields:
            nz = np.flatnonzero(f.values)
            n = int(nz[-1]) + 1 if nz.size else 0
            fh.write(_HEADER.pack(n, f.domain.dx, f.domain.x_lo, f.time))
            fh.write(np.ascontiguousarray(f.values[:n], dtype="<f8").tobytes())


def read_snapshots(path, domain: Domain | None = None):
    """Records as ``(t, x_lo, dx, values)``; with ``domain``, as ScalarFields."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path} is not a snapshot file")
    pos, out = 8, []
    while pos < len(raw):
        n, dx, x_lo, t = _HEADER.unpack_from(raw, pos)
        pos += _HEADER.size
        u = np.frombuffer(raw, dtype="<f8", count=n, offset=pos).copy()
        pos += 8 * n
        if domain is None:
            out.append((t, x_lo, dx, u))
        else:
            v = np.zeros(domain.n)
            v[:n] = u
            out.append(ScalarField(domain, v, t))
    return out


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, columns: Sequence[str], rows: Iterable[Sequence], comments=()) -> None:
    with open(path, "w", newline="") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(v) for v in r])


def read_csv(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Comment key=value pairs and numeric columns of a harness CSV."""
    meta, lines = {}, []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                for tok in line[1:].split():
                    if "=" in tok:
                        k, v = tok.split("=", 1)
                        meta[k] = v
            else:
                lines.append(line)
    reader = csv.reader(lines)
    header = next(reader)
    cols = list(zip(*reader)) or [()] * len(header)
    data = {}
    for name, col in zip(header, cols):
        try:
            data[name] = np.array([float(v) for v in col])
        except ValueError:
            data[name] = np.array(col)
    return meta, data
