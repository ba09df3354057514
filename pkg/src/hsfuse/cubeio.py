"""Reader and writer for the HSCUBE1 raster container.

Layout::

    HSCUBE1
    bands=<int>
    rows=<int>
    cols=<int>
    dtype=f32le
    byteorder=little
    <key>=<value>        optional, any number, order preserved
    END
    <payload>

The payload is ``bands * rows * cols`` little-endian float32 values, band
sequential and row-major inside each band.  Header lines are ``\\n``
terminated ASCII with no surrounding whitespace, so parsing then writing a
valid file reproduces it byte for byte.

Well-known optional keys: ``wavelengths`` (comma-separated, one per band),
``keep`` (comma-separated band indices), ``scales`` (comma-separated floats),
``kind`` (what the cube holds), ``domain`` (``raw`` or ``normalized``).
"""

from __future__ import annotations

import os
import re
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FusionError

__all__ = [
    "MAGIC",
    "ContainerError",
    "Cube",
    "encode",
    "decode",
    "read_cube",
    "write_cube",
    "atomic_write_bytes",
    "new_file_mode",
    "format_floats",
    "parse_floats",
    "format_ints",
    "parse_ints",
]

MAGIC = "HSCUBE1"
_REQUIRED = ("bands", "rows", "cols", "dtype", "byteorder")
_KEY = re.compile(r"[a-z_][a-z0-9_]*\Z")
_DTYPE = np.dtype("<f4")


class ContainerError(FusionError, OSError):
    """Malformed or unreadable container."""


@dataclass
class Cube:
    """A ``(bands, rows, cols)`` float32 array plus optional header entries."""

    data: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ContainerError(f"cube data must be a nonempty 3-D array, got shape {data.shape}")
        self.data = np.ascontiguousarray(data, dtype=_DTYPE)
        meta = {}
        for k, v in self.meta.items():
            k, v = str(k), str(v)
            if k in _REQUIRED or k == "END" or not _KEY.match(k):
                raise ContainerError(f"invalid header key {k!r}")
            if "\n" in v or "\r" in v:
                raise ContainerError(f"header value for {k!r} contains a line break")
            meta[k] = v
        self.meta = meta

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


def encode(cube: Cube) -> bytes:
    b, r, c = cube.shape
    lines = [MAGIC, f"bands={b}", f"rows={r}", f"cols={c}", "dtype=f32le", "byteorder=little"]
    lines += [f"{k}={v}" for k, v in cube.meta.items()]
    lines.append("END")
    return ("\n".join(lines) + "\n").encode("ascii") + cube.data.tobytes(order="C")


def _positive_int(text: str, key: str) -> int:
    if not re.fullmatch(r"[1-9][0-9]*", text):
        raise ContainerError(f"header field {key}={text!r} is not a positive integer")
    return int(text)


def decode(raw: bytes, source: str = "<bytes>") -> Cube:
    """Parse a container; anything non-canonical is rejected."""
    pos = 0
    lines = []
    while True:
        end = raw.find(b"\n", pos)
        if end < 0:
            raise ContainerError(f"{source}: header is not terminated by an END line")
        try:
            line = raw[pos:end].decode("ascii")
        except UnicodeDecodeError as exc:
            raise ContainerError(f"{source}: header is not ASCII") from exc
        pos = end + 1
        if line == "END":
            break
        lines.append(line)
    if not lines or lines[0] != MAGIC:
        raise ContainerError(f"{source}: bad magic, expected {MAGIC!r}")
    fields = []
    for line in lines[1:]:
        key, sep, value = line.partition("=")
        if not sep or not _KEY.match(key):
            raise ContainerError(f"{source}: malformed header line {line!r}")
        fields.append((key, value))
    if [k for k, _ in fields[: len(_REQUIRED)]] != list(_REQUIRED):
        raise ContainerError(f"{source}: header must start with {', '.join(_REQUIRED)} in that order")
    head = dict(fields[: len(_REQUIRED)])
    if head["dtype"] != "f32le" or head["byteorder"] != "little":
        raise ContainerError(f"{source}: unsupported dtype/byteorder {head['dtype']}/{head['byteorder']}")
    b, r, c = (_positive_int(head[k], k) for k in ("bands", "rows", "cols"))
    meta = {}
    for k, v in fields[len(_REQUIRED):]:
        if k in meta or k in _REQUIRED:
            raise ContainerError(f"{source}: duplicate header key {k!r}")
        meta[k] = v
    payload = raw[pos:]
    if len(payload) != b * r * c * 4:
        raise ContainerError(f"{source}: payload has {len(payload)} bytes, header implies {b * r * c * 4}")
    data = np.frombuffer(payload, dtype=_DTYPE).reshape(b, r, c)
    return Cube(data, meta)


def read_cube(path) -> Cube:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ContainerError(f"cannot read {path}: {exc.strerror or exc}") from exc
    return decode(raw, str(path))


def new_file_mode() -> int:
    """Permission bits a plain ``open(..., "w")`` would give under the current umask."""
    mask = os.umask(0)
    os.umask(mask)
    return 0o666 & ~mask


def atomic_write_bytes(path, payload: bytes) -> None:
    """Write to a temporary sibling and rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        os.chmod(tmp, new_file_mode())
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_cube(path, cube: Cube) -> None:
    atomic_write_bytes(path, encode(cube))


def format_floats(values) -> str:
    return ",".join(repr(float(v)) for v in np.asarray(values, dtype=np.float64).ravel())


def parse_floats(text: str) -> np.ndarray:
    try:
        return np.array([float(t) for t in text.split(",")], dtype=np.float64)
    except ValueError as exc:
        raise ContainerError(f"bad float list {text[:40]!r}") from exc


def format_ints(values) -> str:
    return ",".join(str(int(v)) for v in values)


def parse_ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",")]
    except ValueError as exc:
        raise ContainerError(f"bad integer list {text[:40]!r}") from exc
