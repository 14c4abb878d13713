"""Rebuild the key-length and signature-security numbers of the published run.

Prints the key-length report from the published finite-key
inputs, then replays the messaging stage with the published thresholds
and mismatch counts.

    python3 scripts/reproduce_published.py [--out results/published]
"""

import argparse
from pathlib import Path

from mdiqds.cli import main

ROOT = Path(__file__).resolve().parents[1]

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--out", default="results/published")
    args = ap.parse_args()
    print("== key length from the finite-key inputs ==")
    main(["analyze", "--bounds", str(ROOT / "fixtures" / "published_bounds.txt"), "--out", args.out])
    print("\n== messaging stage replay ==")
    raise SystemExit(main(["sign-demo", "--config", str(ROOT / "configs" / "published_run.ini"), "--out", args.out]))
