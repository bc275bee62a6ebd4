"""Minimality verdicts for the reference examples across several seeds.

The verdicts are Monte Carlo evidence, so this shows how stable each one
is under a change of seed and replica count.
"""

import argparse

from gbmembed.minimality import (
    BrownianMotionD,
    Deterministic,
    DoobInflated,
    DriftedBM,
    FirstExit,
    GTransform,
    RadialExit,
    minimality_report,
)

CASES = {
    "drifted_bm_deterministic": (DriftedBM(mu=1.0), Deterministic(5.0), "scale"),
    "bm_exit_pm1": (DriftedBM(), FirstExit(-1.0, 1.0), "identity"),
    "bm_doob_inflated": (DriftedBM(), DoobInflated(1.0, 2.0), "identity"),
    "bm3_deterministic": (BrownianMotionD((1.0, 0.0, 0.0)), Deterministic(1.0), GTransform("power_transient", {"y": [0, 0, 0]})),
    "bm2_annulus_exit": (BrownianMotionD((1.0, 0.0)), RadialExit((0.0, 0.0), 0.5, 2.0), GTransform("log_planar", {"z": [0, 0]})),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", default="1,2,3,4,5")
    ap.add_argument("--n", type=int, default=10_000)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    print("case,seed,n,overall,a,b,c,shortcut")
    for name, (proc, rule, g) in CASES.items():
        for seed in map(int, args.seeds.split(",")):
            rep = minimality_report(proc, rule, g, seed, args.n, workers=args.workers)
            print(
                f"{name},{seed},{args.n},{rep.overall},{rep.condition_a.status},"
                f"{rep.condition_b.status},{rep.condition_c.status},{rep.shortcut_used}"
            )


if __name__ == "__main__":
    main()
