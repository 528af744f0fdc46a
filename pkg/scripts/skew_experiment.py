"""Skew term structure for the rough and null models, side by side.

    python scripts/skew_experiment.py [--paths 100000] [--seed 20240101] [--out runs/skew_pair]

Writes one report directory per model and prints the fitted exponents.
"""

import argparse
from pathlib import Path

from svvlab.config import load_config
from svvlab.skewlab import dyadic_taus, run_skew_experiment, write_skew_report

CONFIGS = Path(__file__).resolve().parent / "configs"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--out", type=Path, default=Path("runs/skew_pair"))
    args = ap.parse_args()
    for name, expected in (("skew_h01", -0.4), ("skew_null", 0.0)):
        cfg = load_config(CONFIGS / f"{name}.yaml")
        seed = cfg.seed if args.seed is None else args.seed
        taus = dyadic_taus(cfg.model.grid.T, cfg.experiment["m_min"], cfg.experiment["m_max"])
        rep = run_skew_experiment(cfg.model, taus, args.paths, seed,
                                  steps_per_tau=cfg.experiment["steps_per_tau"], config=cfg.digest_payload("skew"))
        out = args.out / name
        out.mkdir(parents=True, exist_ok=True)
        write_skew_report(rep, out)
        print(f"{name}: H={cfg.model.kernel.effective_H} slope={rep.fitted_slope} (expected {expected}) "
              f"r2={rep.r_squared} limit_ratio={rep.limit_ratio}")


if __name__ == "__main__":
    main()
