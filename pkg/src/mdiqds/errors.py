"""Exception hierarchy.

Every failure that can abort a protocol run carries a ``stage`` tag so the
harness and the CLI can map it to a typed failure and an exit code.
"""


class MdiqdsError(Exception):
    stage = "internal"


class ConfigError(MdiqdsError, ValueError):
    stage = "config"


class EstimationInfeasibleError(MdiqdsError):
    stage = "estimation"


class NoKeyError(MdiqdsError):
    stage = "key_length"


class InsufficientDataError(MdiqdsError):
    stage = "kgp"


class NoSecurityError(MdiqdsError):
    stage = "p_e"


class ThresholdChainError(MdiqdsError, ValueError):
    stage = "thresholds"


class KeyExhaustedError(MdiqdsError):
    stage = "key_material"


class KeyReuseError(MdiqdsError):
    stage = "key_material"


class ReconciliationError(MdiqdsError):
    stage = "reconciliation"


class ProtocolError(MdiqdsError):
    stage = "protocol"


class AuthenticationError(ProtocolError):
    stage = "authentication"


class RemoteAbort(ProtocolError):
    """A peer aborted; ``stage`` is copied from the abort frame."""

    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage
