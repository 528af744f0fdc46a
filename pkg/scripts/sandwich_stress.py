"""Band margins of the implicit scheme as the barrier exponent approaches the (B1) floor.

    python scripts/sandwich_stress.py [--H 0.3] [--paths 2000] [--n 1024]
"""

import argparse

from svvlab.checks import sandwich_suite
from svvlab.sandwich import BoundFunctions, SandwichDrift, SandwichModel
from svvlab.volterra import KernelSpec, TimeGrid


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--H", type=float, default=0.3)
    ap.add_argument("--paths", type=int, default=2000)
    ap.add_argument("--n", type=int, default=1024)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()
    floor = 1 / args.H - 1
    print(f"(B1) floor 1/H - 1 = {floor:.4g}")
    print(f"{'gamma':>8} {'violations':>10} {'margin phi':>12} {'margin psi':>12}")
    for gamma in (0.5 * floor, floor, floor + 0.5, 2 * floor, 4 * floor):
        m = SandwichModel(KernelSpec.power_sum([0.3], [args.H]), BoundFunctions.constant(0.05, 1.0),
                          SandwichDrift.symmetric(0.01, gamma), 0.3, TimeGrid(1.0, args.n), check_assumptions=False)
        r = sandwich_suite(m, args.seed, args.paths)
        print(f"{gamma:8.3f} {r['violations']:10d} {r['min_margin_phi']:12.3e} {r['min_margin_psi']:12.3e}")


if __name__ == "__main__":
    main()
