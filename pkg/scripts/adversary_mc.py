"""Monte Carlo repudiation and forging attacks against the bounds.

Each point is ``count_a,count_v,p_E`` at the given L.  By default this runs
the published operating point rescaled to L = 1e4 (same entropy gap
(s_v - s_a)^2 L) plus points where the attacks succeed often enough to
be measured.

    python3 scripts/adversary_mc.py --L 10000 --trials 100000
    python3 scripts/adversary_mc.py --point 1000,1120,0.3
"""

import argparse

from mdiqds.experiments import adversary_point

DEFAULT_POINTS = [(14, 428, 0.0874), (1000, 1120, 0.3), (1000, 1100, 0.3), (50, 150, 0.0302), (500, 700, 0.1402)]


def _point(text):
    a, v, p = text.split(",")
    return int(a), int(v), float(p)


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--L", type=int, default=10_000)
    ap.add_argument("--trials", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=11)
    ap.add_argument("--point", type=_point, action="append", help="count_a,count_v,p_E (repeatable)")
    args = ap.parse_args()
    print("count_a count_v p_E rep_mc rep_exact rep_bound forge_mc forge_bound ok")
    all_ok = True
    for i, (a, v, p) in enumerate(args.point or DEFAULT_POINTS):
        r = adversary_point(args.L, a, v, p, args.trials, args.seed + 2 * i)
        all_ok &= r.ok
        print(f"{a} {v} {p:.4f} {r.rep_success:.3e} {r.rep_exact:.3e} {r.rep_bound:.3e} "
              f"{r.forge_success:.3e} {r.forge_bound:.3e} {r.ok}")
    raise SystemExit(0 if all_ok else 1)
