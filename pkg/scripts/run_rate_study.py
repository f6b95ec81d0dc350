"""Bias of the plug-in and IF estimators under controlled nuisance error.

    python3 scripts/run_rate_study.py --reps 200 --out out/rate
"""
import argparse

from shiftiv.cli import main

p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
p.add_argument("--reps", type=int, default=500)
p.add_argument("--seed", type=int, default=0)
p.add_argument("--threads", type=int, default=1)
p.add_argument("--pi-mode", default="ratio", choices=["ratio", "density"])
p.add_argument("--out", default="out/rate-study")
a = p.parse_args()
raise SystemExit(main(["rate-study", "--out", a.out, "--seed", str(a.seed), "--threads", str(a.threads),
                       "--set", f"reps={a.reps}", "--set", f"pi_mode={a.pi_mode}"]))
