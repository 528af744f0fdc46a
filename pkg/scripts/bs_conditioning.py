"""Where can a float64 call price pin down implied volatility to 1e-8?

For each (sigma, K/S0, tau) on the round-trip grid, prints the round-trip
error next to one price ulp divided by vega, the smallest sigma change a
float64 price can register.

    python scripts/bs_conditioning.py
"""

import math

import numpy as np

from svvlab.errors import NoSolutionError
from svvlab.pricing import bs_call, bs_vega, implied_vol


def main():
    sigmas = np.round(np.arange(1, 21) * 0.05, 2)
    moneyness = np.round(np.arange(0.8, 1.2001, 0.05), 2)
    taus = [0.01, 0.025, 0.05, 0.1, 0.25, 0.5, 1.0]
    print(f"{'sigma':>6} {'K/S0':>5} {'tau':>6} {'error':>10} {'ulp/vega':>10}")
    n_bad = 0
    for s in sigmas:
        for m in moneyness:
            for tau in taus:
                K = 100 * m
                p = bs_call(100.0, K, 0.0, tau, s)
                try:
                    err = abs(implied_vol(p, 100.0, K, 0.0, tau) - s)
                except NoSolutionError:
                    err = math.inf
                if err >= 1e-8:
                    n_bad += 1
                    floor = np.spacing(p) / max(bs_vega(100.0, K, 0.0, tau, s), 1e-300)
                    print(f"{s:6.2f} {m:5.2f} {tau:6.3f} {err:10.2e} {floor:10.2e}")
    print(f"{n_bad} of {len(sigmas) * len(moneyness) * len(taus)} points miss 1e-8")


if __name__ == "__main__":
    main()
