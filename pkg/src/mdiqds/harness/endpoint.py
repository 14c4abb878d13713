"""Party endpoints: framing, MAC handling and phase checks around a party program.

A party program is a generator yielding :class:`Send` and :class:`Recv`
operations; ``Recv`` resumes with a :class:`Message`.  The endpoint turns
sends into authenticated frame bytes and checks received frames, so the
transports only move bytes.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from ..errors import AuthenticationError, MdiqdsError, ProtocolError, RemoteAbort
from ..keys import KeyVault
from .auth import authenticate, check_mac
from .frame import HEADER, Frame, decode_frame
from .messages import LEGAL, PHASES, MsgType, Party, decode_payload, encode_payload


@dataclass
class Send:
    to: int
    msg_type: MsgType
    meta: dict = field(default_factory=dict)
    arrays: dict = field(default_factory=dict)


@dataclass
class Recv:
    frm: int
    types: tuple


@dataclass
class Message:
    sender: int
    msg_type: MsgType
    meta: dict
    arrays: dict


@dataclass
class PartyState:
    role: Party
    phase: str = "distribution"
    audit: list = field(default_factory=list)

    def enter(self, phase: str) -> None:
        if PHASES.index(phase) < PHASES.index(self.phase):
            raise ProtocolError(f"{self.role.name}: cannot go back from {self.phase} to {phase}")
        self.phase = phase


class Endpoint:
    def __init__(self, role: Party, program, session_id: bytes, auth_out: dict, auth_in: dict, state: PartyState):
        self.role = role
        self.session_id = session_id
        self.auth_out: dict[int, KeyVault] = auth_out
        self.auth_in: dict[int, KeyVault] = auth_in
        self.state = state
        self._gen = self._guard(program)
        self.buffers: dict[int, deque] = {p: deque() for p in Party if p != role}
        self.pending = None
        self.done = False
        self.result = None
        self.error: BaseException | None = None

    def _guard(self, program):
        try:
            return (yield from program)
        except MdiqdsError as exc:
            if not isinstance(exc, RemoteAbort):
                for peer in sorted(self.auth_out):
                    yield Send(peer, MsgType.ABORT, {"stage": exc.stage, "message": str(exc)})
            raise

    def _step(self, value=None):
        try:
            self.pending = self._gen.send(value)
        except StopIteration as stop:
            self.done, self.result, self.pending = True, stop.value, None
        except BaseException as exc:  # recorded and re-raised by the driver
            self.done, self.error, self.pending = True, exc, None

    def start(self) -> None:
        self._step(None)

    def emit(self) -> tuple[int, bytes]:
        """Frame the pending :class:`Send`, advance, and return ``(receiver, bytes)``."""
        op = self.pending
        payload = encode_payload(op.meta, op.arrays)
        frame = Frame(self.session_id, int(self.role), int(op.to), int(op.msg_type), payload)
        mac = authenticate(frame.signed_part(), self.auth_out[op.to])
        data = Frame(frame.session_id, frame.sender, frame.receiver, frame.msg_type, payload, mac).encode()
        self._step(None)
        return int(op.to), data

    def push(self, sender: int, data: bytes) -> None:
        self.buffers[sender].append(data)

    def _open(self, sender: int, data: bytes) -> Message:
        frame = decode_frame(data)
        if frame.session_id != self.session_id or frame.receiver != self.role or frame.sender != sender:
            raise ProtocolError("frame addressed to another session or party")
        if not check_mac(frame, self.auth_in[sender]):
            self.state.audit.append(("bad-mac", sender, frame.msg_type))
            raise AuthenticationError(f"{self.role.name}: invalid MAC on frame from {Party(sender).name}")
        try:
            mtype = MsgType(frame.msg_type)
        except ValueError as exc:
            raise ProtocolError(f"unknown message type {frame.msg_type}") from exc
        meta, arrays = decode_payload(frame.payload)
        return Message(sender, mtype, meta, arrays)

    def _abort_pending(self):
        for sender, buf in self.buffers.items():
            for i, data in enumerate(buf):
                if data[HEADER.size - 5] == MsgType.ABORT:
                    for _ in range(i):
                        self._open(sender, buf.popleft())
                    return sender
        return None

    def try_deliver(self) -> bool:
        """Resume a pending :class:`Recv` if its frame (or a peer's abort) is buffered."""
        op = self.pending
        if not isinstance(op, Recv):
            return False
        try:
            buf = self.buffers[op.frm]
            if buf:
                msg = self._open(op.frm, buf.popleft())
            else:
                sender = self._abort_pending()
                if sender is None:
                    return False
                msg = self._open(sender, self.buffers[sender].popleft())
            self._check(msg, op)
        except MdiqdsError as exc:
            self._throw(exc)
            return True
        self._step(msg)
        return True

    def _check(self, msg: Message, op: Recv) -> None:
        if msg.msg_type == MsgType.ABORT:
            raise RemoteAbort(msg.meta.get("stage", "protocol"), msg.meta.get("message", "peer aborted"))
        if msg.msg_type not in LEGAL[self.state.phase]:
            self.state.audit.append(("out-of-phase", msg.sender, int(msg.msg_type)))
            raise ProtocolError(f"{self.role.name}: {msg.msg_type.name} not allowed in phase {self.state.phase}")
        if msg.msg_type not in op.types:
            raise ProtocolError(f"{self.role.name}: expected {[t.name for t in op.types]}, got {msg.msg_type.name}")
        self.state.audit.append(("accept", msg.sender, int(msg.msg_type), self.state.phase))

    def _throw(self, exc: BaseException) -> None:
        try:
            self.pending = self._gen.throw(exc)
        except StopIteration as stop:
            self.done, self.result, self.pending = True, stop.value, None
        except BaseException as err:
            self.done, self.error, self.pending = True, err, None
