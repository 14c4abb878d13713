"""Message types, phase rules and the payload codec.

A payload is ``uint32 meta_len | meta JSON | array bytes``.  The JSON
(sorted keys, compact) lists each array as ``[name, kind, length]``;
``kind`` is ``bits`` (packed MSB first), ``u8`` or ``i64`` (big-endian).
"""

from __future__ import annotations

import enum
import json
import struct

import numpy as np

from ..errors import ProtocolError


class MsgType(enum.IntEnum):
    ANNOUNCE = 1
    SIFT_LABELS = 2
    PE_TALLY = 3
    PE_XDATA = 4
    PE_XRESULT = 5
    EC_QUERY = 6
    EC_REPLY = 7
    EC_VERIFY = 8
    EC_CONFIRM = 9
    KGP_PARAMS = 10
    KGP_ANNOUNCE = 11
    PE_SUMMARY = 12
    SYM_DATA = 13
    SIGNED = 14
    FORWARD = 15
    ABORT = 255


class Party(enum.IntEnum):
    ALICE = 0
    BOB = 1
    CHARLIE = 2
    RELAY = 3


PHASES = ("distribution", "symmetrization", "messaging", "done")

_DIST = {
    MsgType.ANNOUNCE, MsgType.SIFT_LABELS, MsgType.PE_TALLY, MsgType.PE_XDATA, MsgType.PE_XRESULT,
    MsgType.EC_QUERY, MsgType.EC_REPLY, MsgType.EC_VERIFY, MsgType.EC_CONFIRM,
    MsgType.KGP_PARAMS, MsgType.KGP_ANNOUNCE, MsgType.PE_SUMMARY,
}
LEGAL = {
    "distribution": _DIST | {MsgType.ABORT},
    "symmetrization": {MsgType.SYM_DATA, MsgType.ABORT},
    "messaging": {MsgType.SIGNED, MsgType.FORWARD, MsgType.ABORT},
    "done": {MsgType.ABORT},
}

_LEN = struct.Struct(">I")


def encode_payload(meta: dict | None = None, arrays: dict | None = None) -> bytes:
    meta = dict(meta or {})
    blobs, index = [], []
    for name, (kind, arr) in (arrays or {}).items():
        arr = np.asarray(arr)
        if kind == "bits":
            blob = np.packbits(arr.astype(np.uint8)).tobytes()
        elif kind == "u8":
            blob = arr.astype(np.uint8).tobytes()
        elif kind == "i64":
            blob = arr.astype(">i8").tobytes()
        else:
            raise ValueError(f"unknown array kind {kind!r}")
        index.append([name, kind, int(arr.size)])
        blobs.append(blob)
    meta["_arrays"] = index
    head = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    return _LEN.pack(len(head)) + head + b"".join(blobs)


def decode_payload(data: bytes) -> tuple[dict, dict]:
    try:
        (n,) = _LEN.unpack_from(data)
        meta = json.loads(data[4 : 4 + n])
    except (struct.error, ValueError) as exc:
        raise ProtocolError(f"malformed payload: {exc}") from exc
    pos = 4 + n
    arrays = {}
    for name, kind, length in meta.pop("_arrays", []):
        size = {"bits": (length + 7) // 8, "u8": length, "i64": 8 * length}.get(kind)
        if size is None:
            raise ProtocolError(f"unknown array kind {kind!r}")
        if pos + size > len(data):
            raise ProtocolError("payload truncated")
        if kind == "bits":
            arr = np.unpackbits(np.frombuffer(data, np.uint8, size, pos))[:length]
        elif kind == "u8":
            arr = np.frombuffer(data, np.uint8, size, pos).copy()
        else:
            arr = np.frombuffer(data, ">i8", length, pos).astype(np.int64)
        arrays[name] = arr
        pos += size
    if pos != len(data):
        raise ProtocolError("trailing bytes in payload")
    return meta, arrays
