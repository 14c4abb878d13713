"""Pre-shared key material: bit files and single-use vaults.

A key file is a 16-byte header followed by the bits packed MSB first::

    magic  b"MDQK"   4 bytes
    version          uint16, big-endian (1)
    reserved         2 bytes, zero
    bit length       uint64, big-endian
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import KeyExhaustedError, KeyReuseError

MAGIC = b"MDQK"
VERSION = 1
_HEADER = struct.Struct(">4sH2xQ")


def encode_key(bits) -> bytes:
    bits = np.asarray(bits, np.uint8)
    return _HEADER.pack(MAGIC, VERSION, len(bits)) + np.packbits(bits).tobytes()


def decode_key(data: bytes) -> np.ndarray:
    if len(data) < _HEADER.size:
        raise ValueError("key file shorter than its header")
    magic, version, n = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError("not a key file (bad magic)")
    if version != VERSION:
        raise ValueError(f"unsupported key file version {version}")
    body = np.frombuffer(data, np.uint8, offset=_HEADER.size)
    if len(body) != (n + 7) // 8:
        raise ValueError("key file length does not match its header")
    return np.unpackbits(body)[:n]


def write_key_file(path, bits) -> None:
    Path(path).write_bytes(encode_key(bits))


def read_key_file(path) -> np.ndarray:
    return decode_key(Path(path).read_bytes())


def random_key(n_bits: int, seed: int) -> np.ndarray:
    """Stand-in for key material distilled in an earlier QKD session."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0x4B45,)))
    return rng.integers(0, 2, n_bits, dtype=np.uint8)


def key_dir(default="keys") -> Path:
    return Path(os.environ.get("MDIQDS_KEY_DIR", default))


@dataclass
class KeyVault:
    """Single-use bit store with a consumed-range ledger.

    :meth:`take` hands out the next unused bits in order; :meth:`consume`
    claims an explicit range.  Any overlap with an earlier claim raises
    :class:`KeyReuseError`.
    """

    bits: np.ndarray
    name: str = "vault"
    ledger: list = field(default_factory=list)
    cursor: int = 0

    def __post_init__(self):
        self.bits = np.asarray(self.bits, np.uint8)

    @property
    def consumed(self) -> int:
        return sum(end - start for start, end, _ in self.ledger)

    @property
    def remaining(self) -> int:
        return len(self.bits) - self.cursor

    def consume(self, start: int, end: int, purpose: str = "") -> np.ndarray:
        if not 0 <= start <= end:
            raise ValueError("invalid key range")
        if end > len(self.bits):
            raise KeyExhaustedError(
                f"{self.name}: need bits up to {end}, only {len(self.bits)} available"
            )
        for s, e, p in self.ledger:
            if start < e and s < end:
                raise KeyReuseError(f"{self.name}: bits [{start}, {end}) overlap [{s}, {e}) used for {p!r}")
        if end > start:
            self.ledger.append((start, end, purpose))
        self.cursor = max(self.cursor, end)
        return self.bits[start:end].copy()

    def take(self, n: int, purpose: str = "") -> np.ndarray:
        return self.consume(self.cursor, self.cursor + n, purpose)

    def take_bytes(self, n: int, purpose: str = "") -> bytes:
        return np.packbits(self.take(8 * n, purpose)).tobytes()

    def take_int(self, n_bits: int = 64, purpose: str = "") -> int:
        return int("".join(map(str, self.take(n_bits, purpose).tolist())) or "0", 2)
