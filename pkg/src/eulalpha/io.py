"""Snapshots, experiment configuration and plain-text reports.

Snapshot layout (little-endian throughout)::

    b"EAFS"  u32 version  u32 dim  u32 rank  u32 resolution[dim]  f64 time
    f64 payload, row-major, component index outermost

A rank-r field on a dim-dimensional grid carries dim**r components; rank-2
fields are stored as the full dim x dim tensor.
"""

from __future__ import annotations

import csv
import os
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .spectral import Grid, SpectralField, StressField

MAGIC = b"EAFS"
VERSION = 1
SUPPORTED_VERSIONS = (1,)


class SnapshotError(ValueError):
    """Malformed or unsupported snapshot file."""


@dataclass
class Snapshot:
    data: np.ndarray
    dim: int
    rank: int
    time: float = 0.0

    @property
    def resolution(self) -> tuple:
        return self.data.shape[self.data.ndim - self.dim:]

    @property
    def grid(self) -> Grid:
        return Grid(self.dim, self.resolution[0])


def _infer_layout(a: np.ndarray) -> tuple:
    n = a.shape[-1]
    dim = 0
    for s in reversed(a.shape):
        if s != n or dim == 3:
            break
        dim += 1
    # leading axes of size dim are components, not grid axes; n >= 8 keeps this unambiguous
    if dim not in (2, 3):
        raise SnapshotError(f"cannot infer grid dimension from shape {a.shape}")
    rank = a.ndim - dim
    if rank not in (0, 1, 2) or any(s != dim for s in a.shape[:rank]):
        raise SnapshotError(f"shape {a.shape} is not a rank-0/1/2 field on a {dim}-D grid")
    return dim, rank


def _as_payload(f) -> tuple:
    if isinstance(f, StressField):
        return f.full(), f.grid.dim, 2
    if isinstance(f, SpectralField):
        a = f.physical
        return a, f.grid.dim, a.ndim - f.grid.dim
    a = np.asarray(f, dtype=float)
    dim, rank = _infer_layout(a)
    return a, dim, rank


def encode_snapshot(f, time: float = 0.0) -> bytes:
    a, dim, rank = _as_payload(f)
    res = a.shape[a.ndim - dim:]
    head = MAGIC + struct.pack("<III", VERSION, dim, rank) + struct.pack(f"<{dim}I", *res) + struct.pack("<d", time)
    return head + np.ascontiguousarray(a, dtype="<f8").tobytes()


def decode_snapshot(buf: bytes) -> Snapshot:
    if len(buf) < 16:
        raise SnapshotError("truncated header")
    if buf[:4] != MAGIC:
        raise SnapshotError(f"bad magic {buf[:4]!r}")
    version, dim, rank = struct.unpack_from("<III", buf, 4)
    if version not in SUPPORTED_VERSIONS:
        raise SnapshotError(f"unsupported snapshot version {version}")
    if dim not in (2, 3):
        raise SnapshotError(f"dim must be 2 or 3, got {dim}")
    if rank not in (0, 1, 2):
        raise SnapshotError(f"rank must be 0, 1 or 2, got {rank}")
    off = 16
    if len(buf) < off + 4 * dim + 8:
        raise SnapshotError("truncated header")
    res = struct.unpack_from(f"<{dim}I", buf, off)
    off += 4 * dim
    (t,) = struct.unpack_from("<d", buf, off)
    off += 8
    shape = (dim,) * rank + tuple(res)
    need = 8 * int(np.prod(shape))
    got = len(buf) - off
    if got < need:
        raise SnapshotError(f"truncated payload: {got} of {need} bytes")
    if got > need:
        raise SnapshotError(f"{got - need} trailing bytes after payload")
    data = np.frombuffer(buf, dtype="<f8", count=need // 8, offset=off).astype(float).reshape(shape)
    return Snapshot(data, dim, rank, t)


def save_snapshot(f, path, time: float = 0.0) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_snapshot(f, time))
    return path


def load_snapshot(path) -> Snapshot:
    return decode_snapshot(Path(path).read_bytes())


# experiment configuration

class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    resolution: int = 128
    alpha: float = 0.1
    dt: float = 1e-3
    t_final: float = 1.0
    lam: int = 32
    r: Fraction = Fraction(1, 8)
    d: int = 2
    direction_set: int = 0
    parameter_file: str | None = None
    output_dir: str = "eulalpha_out"
    seed: int = 0
    explicit: set = field(default_factory=set, repr=False, compare=False)

    # config-file key -> attribute
    KEYS = {
        "resolution": "resolution", "alpha": "alpha", "dt": "dt", "t_final": "t_final",
        "lambda": "lam", "r": "r", "d": "d", "direction_set": "direction_set",
        "parameter_file": "parameter_file", "output_dir": "output_dir", "seed": "seed",
    }
    POSITIVE = ("resolution", "alpha", "dt", "t_final", "lam", "r", "d")

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in self.POSITIVE:
            v = getattr(self, name)
            if not v > 0:
                raise ConfigError(f"{name} must be positive, got {v}")
        if self.direction_set < 0:
            raise ConfigError("direction_set must be non-negative")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    def set(self, key: str, raw) -> None:
        attr = self.KEYS.get(key.replace("-", "_"))
        if attr is None:
            raise ConfigError(f"unknown key {key!r}")
        raw = str(raw).strip()
        try:
            if attr in ("resolution", "lam", "d", "direction_set", "seed"):
                val = int(raw)
            elif attr == "r":
                val = Fraction(raw)
            elif attr in ("parameter_file", "output_dir"):
                val = raw
            else:
                val = float(raw)
        except ValueError as e:
            raise ConfigError(f"bad value for {key}: {raw!r}") from e
        setattr(self, attr, val)
        self.explicit.add(attr)

    @classmethod
    def parse(cls, text: str) -> "ExperimentConfig":
        cfg = cls()
        for n, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {n}: expected key = value")
            k, v = (s.strip() for s in line.split("=", 1))
            try:
                cfg.set(k, v)
            except ConfigError as e:
                raise ConfigError(f"line {n}: {e}") from None
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.parse(Path(path).read_text())

    def text(self) -> str:
        out = []
        for key, attr in self.KEYS.items():
            v = getattr(self, attr)
            if v is not None:
                out.append(f"{key} = {v}")
        return "\n".join(out) + "\n"


def resolve_output_dir(configured) -> Path:
    """EAF_OUTPUT_DIR, when set, overrides the configured directory."""
    env = os.environ.get("EAF_OUTPUT_DIR")
    path = Path(env) if env else Path(configured)
    path.mkdir(parents=True, exist_ok=True)
    return path


# reports

def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer, Fraction, str)):
        return str(v)
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    if v is None:
        return ""
    return str(v)


def write_table(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_table(path) -> tuple:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def write_summary(path, lines) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path


def emit_report(out_dir, name: str, tables: dict, summary) -> list:
    """One CSV per table (name -> (header, rows)) plus ``<name>.txt``."""
    out_dir = Path(out_dir)
    paths = [write_table(out_dir / f"{name}_{k}.csv", h, r) for k, (h, r) in tables.items()]
    paths.append(write_summary(out_dir / f"{name}.txt", summary))
    return paths


__all__ = [
    "MAGIC", "VERSION", "Snapshot", "SnapshotError", "encode_snapshot", "decode_snapshot", "save_snapshot",
    "load_snapshot", "ExperimentConfig", "ConfigError", "resolve_output_dir", "fmt", "write_table", "read_table",
    "write_summary", "emit_report",
]
