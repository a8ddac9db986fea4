"""Single-file tensor container.

Layout (all integers little-endian)::

    magic        8 bytes   b"SLIDMDL\\0"
    version      u32
    header_len   u64
    payload_len  u64
    digest       32 bytes  sha256(header || payload)
    header       header_len bytes, UTF-8 JSON: tensor table + metadata
    payload      payload_len bytes, raw little-endian float32 tensors

Each tensor-table entry carries name, element type, rank, dims, byte offset
and byte length within the payload. Serialization is deterministic, so
``save(load(save(m)))`` reproduces the file byte for byte.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import os
import struct
import tempfile
from dataclasses import fields
from pathlib import Path

import numpy as np

from .errors import (BadMagicError, ChecksumError, ConfigurationError, ModelFormatError,
                     TensorNotFoundError, VersionMismatchError)

MAGIC = b"SLIDMDL\x00"
FORMAT_VERSION = 1
ELEMENT_TYPE = "f32le"
_PREAMBLE = struct.Struct("<8sIQQ32s")


class ModelContainer:
    """Ordered named float32 tensors plus JSON-able metadata."""

    def __init__(self, tensors=None, metadata=None):
        self.tensors = {}
        self.metadata = dict(metadata or {})
        for name, arr in (tensors or {}).items():
            self.add(name, arr)

    def add(self, name: str, array) -> None:
        if name in self.tensors:
            raise ModelFormatError(f"duplicate tensor name {name!r}")
        self.tensors[name] = np.array(array, dtype="<f4", order="C")

    def get(self, name: str) -> np.ndarray:
        try:
            return self.tensors[name]
        except KeyError:
            raise TensorNotFoundError(f"tensor {name!r} not in container") from None

    def __contains__(self, name):
        return name in self.tensors

    def names(self) -> list:
        return list(self.tensors)

    def to_bytes(self) -> bytes:
        table = []
        chunks = []
        offset = 0
        for name, arr in self.tensors.items():
            raw = arr.astype("<f4", copy=False).tobytes()
            table.append({"name": name, "type": ELEMENT_TYPE, "rank": arr.ndim,
                          "dims": list(arr.shape), "offset": offset, "nbytes": len(raw)})
            chunks.append(raw)
            offset += len(raw)
        header = json.dumps({"tensors": table, "metadata": self.metadata},
                            sort_keys=True, separators=(",", ":")).encode("utf-8")
        payload = b"".join(chunks)
        digest = hashlib.sha256(header + payload).digest()
        return _PREAMBLE.pack(MAGIC, FORMAT_VERSION, len(header), len(payload), digest) + header + payload

    @classmethod
    def from_bytes(cls, data: bytes) -> "ModelContainer":
        if len(data) < len(MAGIC) or data[:len(MAGIC)] != MAGIC:
            raise BadMagicError("not a model container (bad magic)")
        if len(data) < _PREAMBLE.size:
            raise ChecksumError("container truncated inside the preamble")
        _, version, header_len, payload_len, digest = _PREAMBLE.unpack_from(data)
        if version != FORMAT_VERSION:
            raise VersionMismatchError(f"container version {version}, this build reads {FORMAT_VERSION}")
        body = data[_PREAMBLE.size:]
        if len(body) != header_len + payload_len:
            raise ChecksumError(
                f"container body is {len(body)} bytes, expected {header_len + payload_len} (truncated or padded)")
        if hashlib.sha256(body).digest() != digest:
            raise ChecksumError("container checksum mismatch")
        header = json.loads(body[:header_len].decode("utf-8"))
        payload = body[header_len:]
        out = cls(metadata=header.get("metadata", {}))
        spans = []
        for entry in header["tensors"]:
            if entry["type"] != ELEMENT_TYPE:
                raise ModelFormatError(f"unsupported element type {entry['type']!r}")
            dims = tuple(entry["dims"])
            if len(dims) != entry["rank"]:
                raise ModelFormatError(f"tensor {entry['name']!r}: rank does not match dims")
            start, nbytes = entry["offset"], entry["nbytes"]
            if nbytes != 4 * int(np.prod(dims, dtype=np.int64)) or start < 0 or start + nbytes > len(payload):
                raise ModelFormatError(f"tensor {entry['name']!r} lies outside the payload")
            spans.append((start, start + nbytes, entry["name"]))
            arr = np.frombuffer(payload, dtype="<f4", count=nbytes // 4, offset=start).reshape(dims)
            out.add(entry["name"], arr.copy())
        spans.sort()
        for (s0, e0, n0), (s1, _, n1) in zip(spans, spans[1:]):
            if s1 < e0:
                raise ModelFormatError(f"tensors {n0!r} and {n1!r} overlap")
        return out

    def save(self, path) -> None:
        """Write atomically (temp file + rename)."""
        path = Path(path)
        data = self.to_bytes()
        fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name + ".")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    @classmethod
    def load(cls, path) -> "ModelContainer":
        return cls.from_bytes(Path(path).read_bytes())


def save_model(container: ModelContainer, path) -> None:
    container.save(path)


def load_model(path) -> ModelContainer:
    return ModelContainer.load(path)


# ---------------------------------------------------------------------------
# key-value config files

def read_config_text(text: str) -> dict:
    """Parse ``key = value`` lines (``#`` comments allowed) into a dict of strings."""
    parser = configparser.ConfigParser(delimiters=("=", ":"), comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string("[config]\n" + text)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config: {exc}") from exc
    return dict(parser["config"])


def read_config_file(path) -> dict:
    return read_config_text(Path(path).read_text())


def _coerce(value: str, kind):
    if kind in (int, "int"):
        return int(value)
    if kind in (float, "float"):
        return float(value)
    if kind in (bool, "bool"):
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(value)
    return value


def build_dataclass(cls, values: dict, strict: bool = True):
    """Instantiate ``cls`` from string values, coercing by field annotation."""
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, raw in values.items():
        if key not in known:
            if strict:
                raise ConfigurationError(f"unknown {cls.__name__} key {key!r}")
            continue
        kind = known[key].type
        kind = kind if not isinstance(kind, str) else kind.split("|")[0].strip()
        try:
            kwargs[key] = _coerce(raw, kind)
        except ValueError:
            raise ConfigurationError(f"bad value for {key!r}: {raw!r}") from None
    return cls(**kwargs)


def config_to_text(obj) -> str:
    return "".join(f"{f.name} = {getattr(obj, f.name)}\n" for f in fields(obj))
