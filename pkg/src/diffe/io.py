"""Binary containers: epoch datasets, continuous recordings and model checkpoints.

Every file starts with the 4-byte magic ``DIFE``, a little-endian uint16
format version and a 4-byte kind tag (``DSET``, ``RECD`` or ``CKPT``). All
multi-byte fields are little-endian; float payloads are float32. A JSON
sidecar (same path plus ``.json``) carries human-readable metadata.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import BadMagicError, FormatError, TruncatedFileError, VersionMismatchError
from .sigproc import EpochSet, EventList, Recording

MAGIC = b"DIFE"
VERSION = 1
_PREFIX = struct.Struct("<4sH4s")


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_sidecar(path, meta: dict) -> None:
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True, default=_json_default))


def read_sidecar(path) -> dict:
    p = sidecar_path(path)
    return json.loads(p.read_text()) if p.exists() else {}


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf, self.pos, self.path = memoryview(buf), 0, path

    def take(self, n: int) -> memoryview:
        if self.pos + n > len(self.buf):
            raise TruncatedFileError(f"{self.path}: file ends at byte {len(self.buf)}, needed {self.pos + n}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct("<" + fmt)
        return s.unpack(self.take(s.size))

    def array(self, dtype: str, count: int) -> np.ndarray:
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(dt.itemsize * count), dtype=dt).copy()


def _open(path, kind: bytes) -> _Reader:
    buf = Path(path).read_bytes()
    if len(buf) < 4:
        raise TruncatedFileError(f"{path}: only {len(buf)} bytes")
    if buf[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {buf[:4]!r}, expected {MAGIC!r}")
    r = _Reader(buf, path)
    _, version, got = r.unpack("4sH4s")
    if version != VERSION:
        raise VersionMismatchError(f"{path}: format version {version}, this reader handles {VERSION}")
    if got != kind:
        raise FormatError(f"{path}: holds a {got.decode(errors='replace')!r} container, expected {kind.decode()!r}")
    return r


def _finish(r: _Reader) -> None:
    if r.pos != len(r.buf):
        raise FormatError(f"{r.path}: {len(r.buf) - r.pos} trailing bytes")


def save_dataset(data: EpochSet, path, meta: dict | None = None) -> None:
    t, c, n = data.epochs.shape
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, b"DSET"))
        fh.write(struct.pack("<IIId", t, c, n, float(data.fs)))
        fh.write(np.asarray(data.labels, dtype="<i4").tobytes())
        np.ascontiguousarray(data.epochs, dtype="<f4").tofile(fh)
    write_sidecar(path, {**data.meta, **(meta or {})})


def load_dataset(path) -> EpochSet:
    r = _open(path, b"DSET")
    t, c, n, fs = r.unpack("IIId")
    labels = r.array("<i4", t).astype(np.int64)
    epochs = r.array("<f4", t * c * n).astype(np.float32, copy=False).reshape(t, c, n)
    _finish(r)
    return EpochSet(epochs, labels, fs, read_sidecar(path))


def save_recording(rec: Recording, events: EventList, path, meta: dict | None = None) -> None:
    c, n = rec.data.shape
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, b"RECD"))
        fh.write(struct.pack("<IQdI", c, n, float(rec.fs), len(events)))
        fh.write(np.asarray(events.samples, dtype="<i8").tobytes())
        fh.write(np.asarray(events.labels, dtype="<i4").tobytes())
        np.ascontiguousarray(rec.data, dtype="<f4").tofile(fh)
    write_sidecar(path, {"channel_names": rec.channel_names, **(meta or {})})


def load_recording(path) -> tuple[Recording, EventList]:
    r = _open(path, b"RECD")
    c, n, fs, n_events = r.unpack("IQdI")
    samples = r.array("<i8", n_events)
    labels = r.array("<i4", n_events)
    data = r.array("<f4", c * n).astype(np.float32, copy=False).reshape(c, n)
    _finish(r)
    meta = read_sidecar(path)
    return Recording(data, fs, meta.get("channel_names")), EventList(samples, labels)


def save_checkpoint(state: dict[str, dict[str, np.ndarray]], path, meta: dict | None = None) -> None:
    """``state`` maps network name -> parameter name -> array."""
    flat = [(f"{net}/{name}", np.ascontiguousarray(arr, dtype="<f4"))
            for net, params in state.items() for name, arr in params.items()]
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, b"CKPT"))
        fh.write(struct.pack("<I", len(flat)))
        for name, arr in flat:
            raw = name.encode()
            fh.write(struct.pack("<HB", len(raw), arr.ndim))
            fh.write(raw)
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        for _, arr in flat:
            fh.write(arr.tobytes())
    write_sidecar(path, meta or {})


def load_checkpoint(path) -> tuple[dict[str, dict[str, np.ndarray]], dict]:
    r = _open(path, b"CKPT")
    (count,) = r.unpack("I")
    table = []
    for _ in range(count):
        name_len, ndim = r.unpack("HB")
        name = bytes(r.take(name_len)).decode()
        shape = r.unpack(f"{ndim}I") if ndim else ()
        table.append((name, shape))
    state: dict[str, dict[str, np.ndarray]] = {}
    for name, shape in table:
        arr = r.array("<f4", int(np.prod(shape))).astype(np.float32, copy=False).reshape(shape)
        net, _, pname = name.partition("/")
        state.setdefault(net, {})[pname] = arr
    _finish(r)
    return state, read_sidecar(path)
