"""Wegman-Carter one-time MAC.

Each tag consumes 256 fresh key bits: a 127-bit-range hash point ``r``
and a 128-bit mask ``s``.  The message is split into 15-byte coefficients
(plus its length) and evaluated as a polynomial at ``r`` modulo
``2^127 - 1``; the tag is that value plus ``s`` modulo ``2^128``.  Two
distinct messages of at most ``d`` coefficients collide with
probability at most ``d / (2^127 - 1)``.
"""

from __future__ import annotations

import hmac

from ..keys import KeyVault
from .frame import MAC_LEN, Frame

P127 = (1 << 127) - 1
KEY_BITS = 256
_CHUNK = 15


def poly_mac(message: bytes, key: bytes) -> bytes:
    if len(key) != KEY_BITS // 8:
        raise ValueError("MAC key must be 32 bytes")
    r = int.from_bytes(key[:16], "big") % P127
    s = int.from_bytes(key[16:], "big")
    acc = len(message) % P127
    for i in range(0, len(message), _CHUNK):
        acc = (acc * r + int.from_bytes(message[i : i + _CHUNK], "big")) % P127
    return ((acc + s) % (1 << 128)).to_bytes(MAC_LEN, "big")


def authenticate(data: bytes, vault: KeyVault) -> bytes:
    """Tag ``data`` with the next unused key bits of the sender-side vault."""
    return poly_mac(data, vault.take_bytes(KEY_BITS // 8, "mac"))


def check_mac(frame: Frame, vault: KeyVault) -> bool:
    """Verify with the receiver-side copy; the key is consumed either way."""
    expected = poly_mac(frame.signed_part(), vault.take_bytes(KEY_BITS // 8, "mac"))
    return hmac.compare_digest(expected, frame.mac)
