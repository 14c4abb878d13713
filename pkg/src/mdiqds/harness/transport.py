"""Transports: a deterministic in-process scheduler and a TCP transport.

Both carry only frame bytes with per-pair FIFO order.  The in-process
transport runs the parties round-robin in a fixed order and records one
global transcript; the socket transport runs each party in its own
thread and records what each party sent.
"""

from __future__ import annotations

import queue
import socket
import struct
import threading

from ..errors import ProtocolError
from .endpoint import Endpoint, Send
from .frame import HEADER, frame_size


def run_inproc(endpoints: dict) -> list[bytes]:
    transcript: list[bytes] = []
    order = sorted(endpoints)
    for p in order:
        endpoints[p].start()
    while True:
        progressed = False
        for p in order:
            ep = endpoints[p]
            while not ep.done:
                if isinstance(ep.pending, Send):
                    to, data = ep.emit()
                    transcript.append(data)
                    endpoints[to].push(p, data)
                    progressed = True
                elif ep.try_deliver():
                    progressed = True
                else:
                    break
        if all(ep.done for ep in endpoints.values()):
            return transcript
        if not progressed:
            if any(ep.error is not None for ep in endpoints.values()):
                return transcript
            raise ProtocolError("deadlock: every party is waiting for a message")


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks, got = [], 0
    while got < n:
        chunk = sock.recv(min(n - got, 1 << 20))
        if not chunk:
            raise ConnectionError("peer closed the connection")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def run_socket(endpoints: dict, host: str = "127.0.0.1", timeout: float = 600.0) -> dict:
    """One TCP listener per party; returns each party's sent frames.

    Every party connects once to every other party and announces itself
    with one byte, so each directed pair has its own FIFO connection.
    """
    parties = sorted(endpoints)
    listeners, ports = {}, {}
    for p in parties:
        srv = socket.create_server((host, 0))
        listeners[p] = srv
        ports[p] = srv.getsockname()[1]
    inbox = {p: queue.Queue() for p in parties}
    sent = {p: [] for p in parties}
    errors = []

    def accept_loop(p):
        srv = listeners[p]
        for _ in range(len(parties) - 1):
            conn, _ = srv.accept()
            threading.Thread(target=reader, args=(p, conn), daemon=True).start()

    def reader(p, conn):
        try:
            sender = _recv_exact(conn, 1)[0]
            while True:
                try:
                    head = _recv_exact(conn, HEADER.size)
                except ConnectionError:
                    return
                rest = _recv_exact(conn, frame_size(head) - HEADER.size)
                inbox[p].put((sender, head + rest))
        finally:
            conn.close()

    acceptors = [threading.Thread(target=accept_loop, args=(p,), daemon=True) for p in parties]
    for t in acceptors:
        t.start()
    outgoing = {}
    for p in parties:
        for q in parties:
            if p != q:
                s = socket.create_connection((host, ports[q]))
                s.sendall(bytes([int(p)]))
                outgoing[p, q] = s

    def run_party(p):
        ep: Endpoint = endpoints[p]
        try:
            ep.start()
            while not ep.done:
                if isinstance(ep.pending, Send):
                    to, data = ep.emit()
                    sent[p].append(data)
                    outgoing[p, to].sendall(data)
                elif not ep.try_deliver():
                    sender, data = inbox[p].get(timeout=timeout)
                    ep.push(sender, data)
        except BaseException as exc:  # surfaced by the caller
            errors.append(exc)
            ep.done, ep.error = True, ep.error or exc
        finally:
            for q in parties:
                if q != p:
                    try:
                        outgoing[p, q].shutdown(socket.SHUT_WR)
                    except OSError:
                        pass

    workers = [threading.Thread(target=run_party, args=(p,)) for p in parties]
    for t in workers:
        t.start()
    for t in workers:
        t.join()
    for s in outgoing.values():
        s.close()
    for srv in listeners.values():
        srv.close()
    return sent


def dump_transcript(frames: list[bytes]) -> bytes:
    """Length-prefixed concatenation of frames."""
    return b"".join(struct.pack(">I", len(f)) + f for f in frames)


def load_transcript(data: bytes) -> list[bytes]:
    frames, pos = [], 0
    while pos < len(data):
        (n,) = struct.unpack_from(">I", data, pos)
        frames.append(data[pos + 4 : pos + 4 + n])
        pos += 4 + n
    return frames
