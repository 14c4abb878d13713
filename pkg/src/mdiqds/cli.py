"""Command-line runner.

Subcommands: ``simulate``, ``analyze``, ``sign-demo``, ``bounds``, ``keygen``.

Exit codes::

    0  success
    1  unexpected error
    2  configuration error
    3  no secret key (key length stage)
    4  not enough KGP data for the requested L
    5  threshold chain violated / no forging security
    6  key material exhausted or reused
    7  a recipient rejected the signature
    8  protocol, authentication or reconciliation failure
    9  decoy estimation infeasible
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import os
import sys
from pathlib import Path

from . import errors
from .config import LINKS, ExperimentConfig, load_config, parse_config
from .decoy_fk import KEY_SETTINGS, FiniteKeyBounds, estimate_bounds, key_length, key_length_report
from .keys import key_dir, random_key, write_key_file
from .qds import (
    choose_thresholds,
    decide,
    forging_bound,
    repudiation_bound,
    security_report,
    select_L,
)
from .quantum_sim import TallyMatrix, sample_session

EXIT_CODES = [
    (errors.ConfigError, 2),
    (errors.NoKeyError, 3),
    (errors.InsufficientDataError, 4),
    (errors.ThresholdChainError, 5),
    (errors.NoSecurityError, 5),
    (errors.KeyExhaustedError, 6),
    (errors.KeyReuseError, 6),
    (errors.EstimationInfeasibleError, 9),
    (errors.ProtocolError, 8),
    (errors.ReconciliationError, 8),
]
EXIT_REJECT = 7


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, errors.RemoteAbort):
        by_stage = {"key_length": 3, "kgp": 4, "thresholds": 5, "p_e": 5, "key_material": 6, "estimation": 9}
        return by_stage.get(exc.stage, 8)
    for cls, code in EXIT_CODES:
        if isinstance(exc, cls):
            return code
    return 1


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else parse_config("")
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "transport", None):
        cfg.transport = args.transport
    if cfg.key_dir is None and os.environ.get("MDIQDS_KEY_DIR"):
        cfg.key_dir = os.environ["MDIQDS_KEY_DIR"]
        cfg.validate()
    return cfg


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args) -> int:
    from .harness.protocol import derive_seed

    cfg = _config(args)
    out = _out(args)
    for i, link in enumerate(LINKS):
        src_a, src_b = cfg.link_sources(link)
        tm = sample_session(src_a, cfg.links[link], cfg.pulses[link], derive_seed(cfg.seed, 0x11, i),
                            oracle_mode=args.oracle, src_b=src_b)
        (out / f"tallies_{link}.txt").write_text(tm.to_text())
        if args.oracle:
            lines = ["# b c basis vacuum_a single single_errors"]
            for b, c in itertools.product(("w", "nu", "mu"), repeat=2):
                for basis in ("Z", "X"):
                    t = tm.tag_counts(b, c, basis)
                    lines.append(f"{b} {c} {basis} {t['vacuum_a']} {t['single']} {t['single_errors']}")
            (out / f"oracle_{link}.txt").write_text("\n".join(lines) + "\n")
        print(f"{link}: {tm.n_pulses} pulses, {int(tm.success.sum())} matched-basis successes")
    return 0


def cmd_analyze(args) -> int:
    cfg = _config(args)
    budget = cfg.budget
    if args.bounds:
        bounds = FiniteKeyBounds.from_text(Path(args.bounds).read_text())
    else:
        tm = TallyMatrix.from_text(Path(args.tallies).read_text())
        bounds = estimate_bounds(tm, budget, cfg.sources["alice"], method=cfg.method)
    result = key_length(bounds, budget, settings=[k for k in KEY_SETTINGS if k in bounds.settings])
    text = key_length_report(bounds, result)
    sys.stdout.write(text)
    if args.out:
        (_out(args) / "key_length.txt").write_text(text)
    if not result.has_key:
        return 3
    return 0


def _replay_report(cfg: ExperimentConfig):
    ov = cfg.overrides
    if ov.E_bar is None or ov.p_E is None:
        raise errors.ConfigError("replay needs [overrides] E_bar and p_E")
    L = select_L(ov.ell)
    th = choose_thresholds(ov.E_bar, ov.p_E, L, cfg.threshold_policy, cfg.delta)
    report = security_report(th, ov.ell, cfg.eps_qkd, cfg.forging, cfg.eps_pe, cfg.rob_scope)
    lines = []
    accepted = []
    for who, direct, fwd, budget in (
        ("Bob", ov.bob_direct, ov.bob_forwarded, th.count_a),
        ("Charlie", ov.charlie_direct, ov.charlie_forwarded, th.count_v),
    ):
        if direct is None or fwd is None:
            continue
        ok = decide(direct, fwd, budget)
        accepted.append(ok)
        lines.append(f"{who}: mismatches ({direct}, {fwd}) budget {budget} -> {'accept' if ok else 'reject'}")
    return report, lines, accepted


def cmd_sign_demo(args) -> int:
    cfg = _config(args)
    out = _out(args)
    if cfg.overrides.replay:
        report, lines, accepted = _replay_report(cfg)
        text = report.to_text() + "\n".join(lines) + ("\n" if lines else "")
        (out / "report.txt").write_text(text)
        sys.stdout.write(text)
        return 0 if all(accepted) else EXIT_REJECT

    from .harness import adversary_hooks, run_protocol

    hooks = None
    if args.strategy != "honest":
        role = "alice" if args.strategy == "repudiating-signer" else "bob"
        hooks = adversary_hooks(role, args.strategy)
    result = run_protocol(cfg, cfg.transport, hooks)
    bob, charlie = result.outcomes[1]["verify"], result.outcomes[2]["verify"]
    lines = [
        f"message m = {result.outcomes[1]['message']}",
        f"Bob: mismatches ({bob.mismatch_direct}, {bob.mismatch_forwarded}) budget "
        f"{result.outcomes[1]['thresholds'].count_a} -> {'accept' if bob.accept else 'reject'}",
        f"Charlie: mismatches ({charlie.mismatch_direct}, {charlie.mismatch_forwarded}) budget "
        f"{result.outcomes[2]['thresholds'].count_v} -> {'accept' if charlie.accept else 'reject'}",
        f"transcript sha256 {result.digest()}",
    ]
    qkd = result.outcomes[1]["qkd"]
    text = key_length_report(qkd["bounds"], qkd["key_length"]) + "\n" + result.report.to_text() + "\n".join(lines) + "\n"
    (out / "report.txt").write_text(text)
    (out / "transcript.bin").write_bytes(result.transcript_bytes())
    (out / "transcript_index.txt").write_text(result.index())
    sys.stdout.write(text)
    return 0 if bob.accept and charlie.accept else EXIT_REJECT


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def cmd_bounds(args) -> int:
    """CSV of (L, s_a, s_v, p_E) -> (eps_rep, eps_for) over the product of the given lists."""
    cfg = _config(args)
    fp = cfg.forging
    rows = []
    for L, s_a, s_v, p_E in itertools.product(
        [int(x) for x in _floats(args.L)], _floats(args.s_a), _floats(args.s_v), _floats(args.p_E)
    ):
        if args.counts:
            s_a, s_v = 2 * s_a / L, 2 * s_v / L
        if not (0 < s_a < 1 and 0 < s_v < 1 and 0 < p_E < 0.5):
            raise errors.ConfigError(f"sweep point out of range: L={L} s_a={s_a} s_v={s_v} p_E={p_E}")
        rep = repudiation_bound(s_a, s_v, L, cfg.eps_qkd)
        try:
            forge = forging_bound(p_E, s_v, L, fp.f, fp.eps, fp.eps_pe, fp.eps_est)
        except errors.NoSecurityError:
            forge = float("inf")
        rows.append((L, s_a, s_v, p_E, rep, forge))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["L", "s_a", "s_v", "p_E", "eps_rep", "eps_for"])
    for r in rows:
        w.writerow([r[0]] + [f"{v:.10g}" for v in r[1:]])
    sys.stdout.write(buf.getvalue())
    if args.out:
        (_out(args) / "bounds.csv").write_text(buf.getvalue())
    return 0


def cmd_keygen(args) -> int:
    from .harness.messages import Party
    from .harness.protocol import derive_seed

    cfg = _config(args)
    out = Path(args.out) if args.out else key_dir()
    out.mkdir(parents=True, exist_ok=True)
    for s in Party:
        for r in Party:
            if s != r:
                bits = random_key(cfg.auth_bits, derive_seed(cfg.seed, 0xA7, int(s), int(r)))
                write_key_file(out / f"auth_{s.name.lower()}_{r.name.lower()}.key", bits)
    write_key_file(out / "preshared_bob_charlie.key", random_key(cfg.preshared_bits, derive_seed(cfg.seed, 0xB0)))
    print(f"wrote key files to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment INI file")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out", help="output directory")

    ap = argparse.ArgumentParser(prog="mdiqds", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="sample the three links and write tallies")
    p.add_argument("--oracle", action="store_true", help="also write photon-number ground truth")
    p.set_defaults(func=cmd_simulate, out_default="out")

    p = sub.add_parser("analyze", parents=[common], help="finite-key bounds and key length")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--tallies", help="tally file written by simulate")
    g.add_argument("--bounds", help="bounds file (setting n_0 n_1 e_1 leak_EC)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("sign-demo", parents=[common], help="full protocol run or replay of recorded counts")
    p.add_argument("--transport", choices=("inproc", "socket"))
    p.add_argument("--strategy", default="honest", choices=("honest", "repudiating-signer", "forging-recipient"))
    p.set_defaults(func=cmd_sign_demo, out_default="out")

    p = sub.add_parser("bounds", parents=[common], help="CSV sweep of the repudiation and forging bounds")
    p.add_argument("--L", required=True, help="comma-separated L values")
    p.add_argument("--s-a", dest="s_a", required=True)
    p.add_argument("--s-v", dest="s_v", required=True)
    p.add_argument("--p-E", dest="p_E", required=True)
    p.add_argument("--counts", action="store_true", help="s_a and s_v are given as counts s*L/2 instead of rates")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("keygen", parents=[common], help="write pre-shared key files")
    p.set_defaults(func=cmd_keygen)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "out", None) is None and getattr(args, "out_default", None):
        args.out = args.out_default
    try:
        return args.func(args)
    except errors.MdiqdsError as exc:
        print(f"error [{exc.stage}]: {exc}", file=sys.stderr)
        return exit_code(exc)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
