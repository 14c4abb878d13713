"""End-to-end protocol runs.

The three quantum sessions are simulated one after another (A-E-B, A-E-C,
B-E-C), each party receives only its own view of them, and the party
programs then run over the chosen transport.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..config import ExperimentConfig
from ..errors import RemoteAbort
from ..keys import KeyVault, random_key, read_key_file
from ..quantum_sim import run_link
from .endpoint import Endpoint, PartyState
from .messages import Party
from .parties import LinkView, PartyContext, alice_program, recipient_program, relay_program
from .transport import dump_transcript, run_inproc, run_socket

LINK_PARTIES = {"ab": (Party.ALICE, Party.BOB), "ac": (Party.ALICE, Party.CHARLIE), "bc": (Party.BOB, Party.CHARLIE)}


def derive_seed(seed: int, *tags: int) -> int:
    ss = np.random.SeedSequence(seed, spawn_key=tags)
    return int(ss.generate_state(1, np.uint64)[0])


def session_id(seed: int) -> bytes:
    return np.random.SeedSequence(seed, spawn_key=(0x51D,)).generate_state(4, np.uint32).astype(">u4").tobytes()


def simulate_links(cfg: ExperimentConfig) -> dict:
    runs = {}
    for i, link in enumerate(("ab", "ac", "bc")):
        src_a, src_b = cfg.link_sources(link)
        runs[link] = run_link(src_a, cfg.links[link], cfg.pulses[link], derive_seed(cfg.seed, 0x11, i), src_b=src_b)
    return runs


def _views(runs: dict) -> dict:
    views = {p: {} for p in Party}
    for link, run in runs.items():
        a, b = LINK_PARTIES[link]
        ev, tm = run.events, run.tallies
        common = dict(sent=tm.sent, mismatch_sent=tm.mismatch_sent, n_pulses=tm.n_pulses)
        views[a][link] = LinkView(link, True, b, ev.int_a, ev.basis_a, ev.bit_a, **common)
        views[b][link] = LinkView(link, False, a, ev.int_b, ev.basis_b, ev.bit_b, **common)
        views[Party.RELAY][link] = (len(ev), tm.n_pulses)
    return views


@dataclass
class KeyMaterial:
    """Pre-shared bits: one MAC key stream per directed pair, plus B-C randomness."""

    auth: dict
    preshared_bc: np.ndarray

    @classmethod
    def generate(cls, cfg: ExperimentConfig) -> "KeyMaterial":
        if cfg.key_dir is not None:
            return cls.load(cfg.key_dir)
        auth = {}
        for s in Party:
            for r in Party:
                if s != r:
                    auth[s, r] = random_key(cfg.auth_bits, derive_seed(cfg.seed, 0xA7, int(s), int(r)))
        return cls(auth, random_key(cfg.preshared_bits, derive_seed(cfg.seed, 0xB0)))

    @classmethod
    def load(cls, directory) -> "KeyMaterial":
        d = Path(directory)
        auth = {}
        for s in Party:
            for r in Party:
                if s != r:
                    auth[s, r] = read_key_file(d / f"auth_{s.name.lower()}_{r.name.lower()}.key")
        return cls(auth, read_key_file(d / "preshared_bob_charlie.key"))


@dataclass
class ProtocolResult:
    transcript: list
    outcomes: dict
    states: dict
    runs: dict = field(repr=False, default_factory=dict)

    @property
    def report(self):
        return self.outcomes[Party.BOB]["report"]

    @property
    def accepted(self) -> tuple[bool, bool]:
        return self.outcomes[Party.BOB]["verify"].accept, self.outcomes[Party.CHARLIE]["verify"].accept

    def transcript_bytes(self) -> bytes:
        return dump_transcript(self.transcript)

    def digest(self) -> str:
        return hashlib.sha256(self.transcript_bytes()).hexdigest()

    def index(self) -> str:
        """Human-readable transcript index: one line per frame."""
        from .frame import decode_frame
        from .messages import MsgType

        lines = ["# seq sender receiver type bytes"]
        for i, data in enumerate(self.transcript):
            f = decode_frame(data)
            lines.append(f"{i} {Party(f.sender).name} {Party(f.receiver).name} {MsgType(f.msg_type).name} {len(data)}")
        return "\n".join(lines) + "\n"


def build_endpoints(cfg: ExperimentConfig, runs: dict, keys: KeyMaterial, hooks=None) -> tuple[dict, dict]:
    views = _views(runs)
    sid = session_id(cfg.seed)
    endpoints, contexts = {}, {}
    programs = {
        Party.ALICE: alice_program,
        Party.BOB: recipient_program,
        Party.CHARLIE: recipient_program,
        Party.RELAY: relay_program,
    }
    for p in Party:
        state = PartyState(p)
        pre = None
        if p in (Party.BOB, Party.CHARLIE):
            pre = KeyVault(keys.preshared_bc, f"preshared {p.name}")
        ctx = PartyContext(cfg, state, views[p], derive_seed(cfg.seed, 0xC0, int(p)), pre, hooks)
        auth_out = {q: KeyVault(keys.auth[p, q], f"auth {p.name}->{q.name}") for q in Party if q != p}
        auth_in = {q: KeyVault(keys.auth[q, p], f"auth {q.name}->{p.name}") for q in Party if q != p}
        endpoints[p] = Endpoint(p, programs[p](ctx), sid, auth_out, auth_in, state)
        contexts[p] = ctx
    return endpoints, contexts


def run_protocol(cfg: ExperimentConfig, transport: str | None = None, hooks=None, runs: dict | None = None) -> ProtocolResult:
    """Simulate the quantum sessions and run all four parties to completion.

    Raises the originating typed error (with its ``stage``) if any party
    aborts.  ``runs`` can carry pre-simulated links to skip the quantum layer.
    """
    transport = transport or cfg.transport
    runs = runs if runs is not None else simulate_links(cfg)
    endpoints, _ = build_endpoints(cfg, runs, KeyMaterial.generate(cfg), hooks)
    if transport == "inproc":
        transcript = run_inproc(endpoints)
    elif transport == "socket":
        sent = run_socket(endpoints)
        transcript = [f for p in sorted(sent) for f in sent[p]]
    else:
        raise ValueError(f"unknown transport {transport!r}")
    errors = [ep.error for ep in endpoints.values() if ep.error is not None]
    if errors:
        origin = [e for e in errors if not isinstance(e, RemoteAbort)]
        raise (origin or errors)[0]
    outcomes = {p: ep.result for p, ep in endpoints.items()}
    states = {p: ep.state for p, ep in endpoints.items()}
    return ProtocolResult(transcript, outcomes, states, runs)

