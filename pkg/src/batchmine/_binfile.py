"""Shared binary-file plumbing.

Every binary artifact uses the same envelope: a little-endian u32 header
length, a UTF-8 JSON header, typed little-endian payload blocks, and a
trailing u64 FNV-1a checksum over all preceding bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ._hashing import fnv1a64
from .errors import ChecksumError, FormatError


class BinWriter:
    """Accumulates header + blocks and writes the checksummed file."""

    def __init__(self, header: dict):
        htext = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        self._chunks: list[bytes] = [
            np.uint32(len(htext)).tobytes(),
            htext,
        ]

    def add_array(self, arr: np.ndarray, dtype: str) -> None:
        self._chunks.append(np.ascontiguousarray(arr, dtype=dtype).tobytes())

    def add_bytes(self, raw: bytes) -> None:
        self._chunks.append(raw)

    def write(self, path: str | Path) -> int:
        body = b"".join(self._chunks)
        checksum = fnv1a64(body)
        with open(path, "wb") as fh:
            fh.write(body)
            fh.write(np.uint64(checksum).tobytes())
        return checksum


class BinReader:
    """Parses the envelope and yields typed payload blocks.

    Size checks happen as blocks are read, so truncation surfaces as a
    descriptive FormatError; the checksum is verified in done(), once the
    declared layout has been consumed.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        raw = self.path.read_bytes()
        if len(raw) < 12:
            raise FormatError(f"{self.path}: file too short for header and checksum")
        self._body = raw[:-8]
        self._stored_checksum = int(np.frombuffer(raw[-8:], dtype="<u8")[0])
        hlen = int(np.frombuffer(self._body[:4], dtype="<u4")[0])
        if 4 + hlen > len(self._body):
            raise FormatError(f"{self.path}: header length {hlen} exceeds file size")
        try:
            self.header = json.loads(self._body[4 : 4 + hlen].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"{self.path}: malformed header: {exc}") from exc
        if not isinstance(self.header, dict):
            raise FormatError(f"{self.path}: malformed header: not a JSON object")
        self._payload = self._body[4 + hlen :]
        self._offset = 0

    def field(self, key: str):
        if key not in self.header:
            raise FormatError(f"{self.path}: malformed header: missing field {key!r}")
        return self.header[key]

    def remaining(self) -> int:
        return len(self._payload) - self._offset

    def read_array(self, count: int, dtype: str, what: str) -> np.ndarray:
        dt = np.dtype(dtype)
        nbytes = count * dt.itemsize
        if self.remaining() < nbytes:
            raise FormatError(
                f"{self.path}: {what} payload shorter than {nbytes} bytes "
                f"({self.remaining()} available)"
            )
        out = np.frombuffer(self._payload, dtype=dt, count=count, offset=self._offset)
        self._offset += nbytes
        return out

    def done(self) -> int:
        if self.remaining() != 0:
            raise FormatError(f"{self.path}: {self.remaining()} trailing payload bytes")
        if fnv1a64(self._body) != self._stored_checksum:
            raise ChecksumError(f"{self.path}: checksum mismatch")
        return self._stored_checksum
