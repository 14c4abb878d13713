"""Three-party classical network: frames, authentication, party programs, transports."""

from .adversary import adversary_hooks, simulate_forging, simulate_repudiation
from .protocol import ProtocolResult, run_protocol

__all__ = ["adversary_hooks", "run_protocol", "ProtocolResult", "simulate_forging", "simulate_repudiation"]
