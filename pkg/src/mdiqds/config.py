"""Experiment configuration read from an INI file.

Sections map onto dataclasses: ``[source]`` (shared by all senders, with
optional ``[source.alice]`` / ``[source.bob]`` / ``[source.charlie]``
overrides), ``[link.ab]``, ``[link.ac]``, ``[link.bc]`` (LinkConfig
fields), ``[pulses]``, ``[budget]``, ``[estimation]``, ``[reconcile]``,
``[kgp]``, ``[thresholds]``, ``[forging]``, ``[overrides]``, ``[keys]`` and
``[run]``.  Unknown keys are rejected.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .decoy_fk import EpsilonBudget
from .errors import ConfigError
from .qds import ForgingParams
from .quantum_sim import LinkConfig, SourceConfig

PARTIES = ("alice", "bob", "charlie")
LINKS = ("ab", "ac", "bc")


@dataclass
class Overrides:
    """Replay inputs that bypass simulation (used to replay a published run)."""

    ell: int | None = None
    E_bar: float | None = None
    p_E: float | None = None
    bob_direct: int | None = None
    bob_forwarded: int | None = None
    charlie_direct: int | None = None
    charlie_forwarded: int | None = None

    @property
    def replay(self) -> bool:
        return self.ell is not None


@dataclass
class ExperimentConfig:
    sources: dict = field(default_factory=lambda: {p: SourceConfig() for p in PARTIES})
    links: dict = field(default_factory=lambda: {k: LinkConfig() for k in LINKS})
    pulses: dict = field(default_factory=lambda: {k: 10**8 for k in LINKS})
    eps_qkd: float = 8e-8
    method: str = "hoeffding"
    ec_passes: int = 6
    ec_qber: float = 0.01
    eps_pe: float = 1e-8
    min_test: int = 1000
    threshold_policy: str = "offset"
    delta: float = 0.0002
    rob_scope: str = "part"
    forging: ForgingParams = field(default_factory=ForgingParams)
    overrides: Overrides = field(default_factory=Overrides)
    message: int = 1
    seed: int = 1
    transport: str = "inproc"
    key_dir: str | None = None
    auth_bits: int = 1 << 20
    preshared_bits: int = 1 << 25

    @property
    def budget(self) -> EpsilonBudget:
        return EpsilonBudget.uniform(self.eps_qkd)

    def link_sources(self, link: str) -> tuple[SourceConfig, SourceConfig]:
        a, b = {"ab": ("alice", "bob"), "ac": ("alice", "charlie"), "bc": ("bob", "charlie")}[link]
        return self.sources[a], self.sources[b]

    def validate(self) -> None:
        for k, n in self.pulses.items():
            if n < 0:
                raise ConfigError(f"pulse budget for link {k} must be >= 0")
        if self.message not in (0, 1):
            raise ConfigError("message must be 0 or 1")
        if self.transport not in ("inproc", "socket"):
            raise ConfigError("transport must be inproc or socket")
        if self.method not in ("hoeffding", "chernoff"):
            raise ConfigError("method must be hoeffding or chernoff")
        if self.threshold_policy not in ("offset", "thirds"):
            raise ConfigError("threshold policy must be offset or thirds")
        if not 0.0 < self.eps_pe < 1.0:
            raise ConfigError("eps_pe must lie in (0, 1)")
        if self.key_dir is not None and not Path(self.key_dir).is_dir():
            raise ConfigError(f"key directory {self.key_dir} does not exist")


def _coerce(value: str, template):
    if isinstance(template, bool):
        return value.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(template, int):
        return int(float(value)) if "e" in value.lower() else int(value)
    if isinstance(template, float):
        return float(value)
    return value.strip()


def _apply(obj, section: configparser.SectionProxy, allowed=None):
    names = {f.name: f for f in fields(obj)}
    updates = {}
    for key, raw in section.items():
        if key not in names or (allowed is not None and key not in allowed):
            raise ConfigError(f"[{section.name}] unknown key {key!r}")
        current = getattr(obj, key)
        template = current if current is not None else 0.0
        updates[key] = _coerce(raw, template)
    try:
        return replace(obj, **updates)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section.name}] {exc}") from exc


_SCALARS = {
    "budget": {"eps_qkd": "eps_qkd"},
    "estimation": {"method": "method"},
    "reconcile": {"passes": "ec_passes", "qber": "ec_qber"},
    "kgp": {"eps_pe": "eps_pe", "min_test": "min_test"},
    "thresholds": {"policy": "threshold_policy", "delta": "delta", "robustness": "rob_scope"},
    "run": {"message": "message", "seed": "seed", "transport": "transport"},
    "keys": {"dir": "key_dir", "auth_bits": "auth_bits", "preshared_bits": "preshared_bits"},
}

_OVERRIDE_TYPES = {"ell": int, "E_bar": float, "p_E": float, "bob_direct": int, "bob_forwarded": int,
                   "charlie_direct": int, "charlie_forwarded": int}


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    cfg = base or ExperimentConfig()
    sources = dict(cfg.sources)
    if cp.has_section("source"):
        shared = _apply(SourceConfig(), cp["source"])
        sources = {p: shared for p in PARTIES}
    links = dict(cfg.links)
    pulses = dict(cfg.pulses)
    updates = {}
    for name in cp.sections():
        sec = cp[name]
        if name == "source":
            continue
        if name.startswith("source."):
            party = name.split(".", 1)[1]
            if party not in PARTIES:
                raise ConfigError(f"unknown party in [{name}]")
            sources[party] = _apply(sources[party], sec)
        elif name.startswith("link."):
            link = name.split(".", 1)[1]
            if link not in LINKS:
                raise ConfigError(f"unknown link in [{name}]")
            links[link] = _apply(links[link], sec)
        elif name == "pulses":
            for key, raw in sec.items():
                if key not in LINKS:
                    raise ConfigError(f"[pulses] unknown link {key!r}")
                pulses[key] = int(float(raw))
        elif name == "forging":
            updates["forging"] = _apply(cfg.forging, sec)
        elif name == "overrides":
            ov = {}
            for key, raw in sec.items():
                if key not in _OVERRIDE_TYPES:
                    raise ConfigError(f"[overrides] unknown key {key!r}")
                ov[key] = _OVERRIDE_TYPES[key](float(raw)) if _OVERRIDE_TYPES[key] is int else float(raw)
            updates["overrides"] = Overrides(**ov)
        elif name in _SCALARS:
            for key, raw in sec.items():
                if key not in _SCALARS[name]:
                    raise ConfigError(f"[{name}] unknown key {key!r}")
                attr = _SCALARS[name][key]
                template = getattr(cfg, attr)
                updates[attr] = _coerce(raw, template if template is not None else "")
        else:
            raise ConfigError(f"unknown section [{name}]")
    try:
        cfg = replace(cfg, sources=sources, links=links, pulses=pulses, **updates)
        cfg.budget  # validates eps_qkd
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)
