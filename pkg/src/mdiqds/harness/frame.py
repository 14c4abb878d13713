"""Wire frames.

Layout (big-endian)::

    magic      4 bytes  b"MDQS"
    version    1 byte   1
    session   16 bytes
    sender     1 byte
    receiver   1 byte
    msg_type   1 byte
    length     4 bytes  payload length
    payload    length bytes
    mac       16 bytes  over every preceding byte
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from ..errors import ProtocolError

MAGIC = b"MDQS"
VERSION = 1
HEADER = struct.Struct(">4sB16sBBBI")
MAC_LEN = 16


@dataclass(frozen=True)
class Frame:
    session_id: bytes
    sender: int
    receiver: int
    msg_type: int
    payload: bytes
    mac: bytes = b"\x00" * MAC_LEN

    def header(self) -> bytes:
        return HEADER.pack(MAGIC, VERSION, self.session_id, self.sender, self.receiver, self.msg_type, len(self.payload))

    def signed_part(self) -> bytes:
        return self.header() + self.payload

    def encode(self) -> bytes:
        if len(self.mac) != MAC_LEN:
            raise ProtocolError("MAC must be 16 bytes")
        return self.signed_part() + self.mac


def decode_frame(data: bytes) -> Frame:
    if len(data) < HEADER.size + MAC_LEN:
        raise ProtocolError("frame shorter than header and MAC")
    magic, version, session, sender, receiver, msg_type, length = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ProtocolError("bad frame magic")
    if version != VERSION:
        raise ProtocolError(f"unsupported frame version {version}")
    if len(data) != HEADER.size + length + MAC_LEN:
        raise ProtocolError("payload length does not match frame size")
    payload = data[HEADER.size : HEADER.size + length]
    return Frame(session, sender, receiver, msg_type, payload, data[HEADER.size + length :])


def frame_size(header: bytes) -> int:
    """Total frame size given its header bytes (for stream readers)."""
    return HEADER.size + HEADER.unpack(header)[-1] + MAC_LEN
