"""Count usual and shift-based positivity violations over a range of seeds."""
import argparse

from shiftiv.simlab import count_violations, gen_positivity, violation_regions

p = argparse.ArgumentParser(description=__doc__)
p.add_argument("--n", type=int, default=5000)
p.add_argument("--delta", type=float, default=0.1)
p.add_argument("--seeds", type=int, default=20)
a = p.parse_args()

print("seed  usual  shift")
for seed in range(a.seeds):
    usual, shift = count_violations(gen_positivity(a.n, seed), a.delta)
    print(f"{seed:4d}  {usual:5d}  {shift:5d}")
for group, r in violation_regions(gen_positivity(a.n, 0), a.delta).items():
    print(f"x={group}: usual {r['usual']}  shift {[(round(l, 3), round(h, 3)) for l, h in r['shift']]}")
