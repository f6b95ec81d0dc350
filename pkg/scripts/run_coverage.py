"""Pointwise and uniform coverage of the IF intervals on the Kennedy design.

    python3 scripts/run_coverage.py --n 2000 --reps 500 --out out/coverage
"""
import argparse

from shiftiv.cli import main

p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
p.add_argument("--n", type=int, default=2000)
p.add_argument("--reps", type=int, default=500)
p.add_argument("--b", type=int, default=1000, help="bootstrap draws per replicate")
p.add_argument("--seed", type=int, default=0)
p.add_argument("--threads", type=int, default=1)
p.add_argument("--out", default="out/coverage")
a = p.parse_args()
raise SystemExit(main(["coverage", "--out", a.out, "--seed", str(a.seed), "--threads", str(a.threads),
                       "--set", f"n={a.n}", "--set", f"reps={a.reps}", "--set", f"bootstrap_b={a.b}",
                       "--set", "deltas=[0.5,1,2,3,4]"]))
