"""Check the decoy-state bounds against photon-number ground truth.

Each simulation samples one desk-scale link in oracle mode, runs the
estimator and counts how often a bound is on the wrong side of the
truth.  Violation rates come with 95% Clopper-Pearson intervals.

    python3 scripts/soundness_sweep.py --sims 500 --pulses 3e7
"""

import argparse
import time
from pathlib import Path

from mdiqds.experiments import soundness_sweep

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--sims", type=int, default=500)
    ap.add_argument("--pulses", type=float, default=3e7)
    ap.add_argument("--eps", type=float, default=0.5, help="total QKD epsilon, split uniformly")
    ap.add_argument("--method", default="chernoff", choices=("chernoff", "hoeffding"))
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--out", help="write the table to this file")
    args = ap.parse_args()
    t0 = time.time()
    res = soundness_sweep(args.sims, int(args.pulses), args.seed, args.eps, method=args.method)
    text = res.to_text() + f"# consistent: {res.consistent()}  ({time.time() - t0:.0f} s)\n"
    print(text, end="")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
