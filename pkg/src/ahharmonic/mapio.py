"""MapField binary files (magic ``AHHM``) and versioned CSV reports."""
from __future__ import annotations

import csv
import hashlib
import struct
from pathlib import Path

import numpy as np

from .approx import MapField
from .errors import ConfigError
from .grid import SlabGrid

MAGIC = b"AHHM"
VERSION = 1

# little-endian throughout
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_F64 = struct.Struct("<d")


def write_map(path, u: MapField, flow_state=None):
    """Write a map; ``flow_state`` (step, dt, tension_sup, rejected) is stored when given."""
    g = u.grid
    m, n = g.m, u.n
    parts = [MAGIC, _U32.pack(VERSION), _U32.pack(m), _U32.pack(n)]
    parts += [_U32.pack(N) for N in g.n]
    parts.append(np.asarray(g.lattice, dtype="<f8").tobytes())
    parts.append(np.asarray(u.target_lattice, dtype="<f8").tobytes())
    parts += [_F64.pack(g.r_max), _F64.pack(g.q), _U32.pack(g.K)]
    parts.append(np.asarray(u.homotopy_tag, dtype="<i8").tobytes())
    if flow_state is None:
        parts.append(_U32.pack(0))
    else:
        parts += [_U32.pack(1), _U64.pack(int(flow_state.step)), _F64.pack(float(flow_state.dt)),
                  _F64.pack(float(flow_state.tension_sup)), _U64.pack(int(flow_state.rejected))]
    parts.append(np.ascontiguousarray(u.components, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise ConfigError("truncated map file")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, st):
        return st.unpack(self.take(st.size))[0]

    def array(self, dtype, count):
        size = np.dtype(dtype).itemsize * count
        return np.frombuffer(self.take(size), dtype=dtype, count=count)


def read_map(path):
    """Return (MapField, flow_state dict or None)."""
    rd = _Reader(Path(path).read_bytes())
    if rd.take(4) != MAGIC:
        raise ConfigError(f"{path}: not an AHHM map file")
    version = rd.unpack(_U32)
    if version != VERSION:
        raise ConfigError(f"{path}: unsupported map file version {version}")
    m, n = rd.unpack(_U32), rd.unpack(_U32)
    N = tuple(rd.unpack(_U32) for _ in range(m))
    lattice = tuple(rd.array("<f8", m))
    tlat = tuple(rd.array("<f8", n))
    r_max, q, K = rd.unpack(_F64), rd.unpack(_F64), rd.unpack(_U32)
    A = rd.array("<i8", n * m).reshape(n, m)
    state = None
    if rd.unpack(_U32):
        state = {"step": rd.unpack(_U64), "dt": rd.unpack(_F64),
                 "tension_sup": rd.unpack(_F64), "rejected": rd.unpack(_U64)}
    grid = SlabGrid(N, lattice, r_max, q, K)
    comps = rd.array("<f8", (n + 1) * int(np.prod(grid.shape))).reshape((n + 1,) + grid.shape)
    if rd.pos != len(rd.data):
        raise ConfigError(f"{path}: trailing bytes in map file")
    return MapField(grid, comps.astype(float), A.astype(np.int64), tlat), state


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def write_csv(path, schema: str, columns, rows, cfg_hash: str = ""):
    """Comma-separated, '.' decimals; a ``# schema=... config_hash=...`` line precedes the header row."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema={schema} config_hash={cfg_hash}\n")
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def read_csv(path):
    """Return (meta dict, header, rows as lists of strings)."""
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        meta = dict(kv.split("=", 1) for kv in first.lstrip("# ").split())
        rd = csv.reader(fh)
        header = next(rd)
        return meta, header, [row for row in rd]
