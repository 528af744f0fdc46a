"""Verification suites comparing the Malliavin formulas with bump oracles.

Random choices (which paths, which index pairs) come from generators seeded
by ``derive_seed(seed, label)`` with a fixed label per suite, so a suite is a
pure function of (model, seed, settings).
"""

from __future__ import annotations

import numpy as np

from .malliavin import (
    bump_first,
    bump_second,
    first_field,
    first_field_reference,
    second_entries,
    streaming_explosion_stats,
)
from .errors import InvalidArgumentError
from .rng import derive_seed
from .sandwich import compiled, simulate_path, simulate_paths
from .volterra import TimeGrid

__all__ = [
    "PAIR_LABEL",
    "TRIPLE_LABEL",
    "relative_deviation",
    "reference_check",
    "first_bump_suite",
    "second_bump_suite",
    "explosion_suite",
    "sandwich_suite",
]

PAIR_LABEL = 1
TRIPLE_LABEL = 2
# below this magnitude a derivative counts as zero and deviations are absolute
ATOL = 1e-8


def relative_deviation(estimate, exact, atol: float = ATOL):
    estimate, exact = np.asarray(estimate, float), np.asarray(exact, float)
    return np.abs(estimate - exact) / np.maximum(np.abs(exact), atol)


def reference_check(model, seed: int, path_index: int = 0) -> float:
    """Max deviation of the O(n^2) field from the direct O(n^3) sum.

    Entries are scaled by |K| + |correction|, the size of the two summands,
    since the field itself can cancel to nearly zero.
    """
    path = simulate_path(model, seed, path_index)
    fast = first_field(path, model).d1
    ref = first_field_reference(path, model)
    W = compiled(model).W
    ii, jj = np.tril_indices(ref.shape[0], -1, ref.shape[1])
    scale = np.abs(W[ii, jj]) + np.abs(ref[ii, jj] - W[ii, jj])
    return float(np.max(np.abs(fast[ii, jj] - ref[ii, jj]) / np.maximum(scale, ATOL)))


def _pairs(rng, n, count, min_lag):
    out = []
    while len(out) < count:
        i = int(rng.integers(min_lag + 1, n + 1))
        j = int(rng.integers(0, i - min_lag))
        out.append((j, i))
    return out


def first_bump_suite(model, seed: int, n_pairs: int = 200, epsilon: float = 1e-4, min_lag: int = 10,
                     n_paths: int = 20) -> dict:
    """Field entries D_{s_j} Y(t_i) against forward bumps, t_i - s_j > min_lag * dt."""
    n = model.grid.n
    if n <= min_lag:
        raise InvalidArgumentError(f"grid too coarse: n={n} <= min_lag={min_lag}")
    rng = np.random.default_rng(derive_seed(seed, PAIR_LABEL))
    records = []
    fields = {}
    for j, i in _pairs(rng, n, n_pairs, min_lag):
        p = int(rng.integers(0, n_paths))
        if p not in fields:
            fields[p] = first_field(simulate_path(model, seed, p), model).d1
        exact = float(fields[p][i, j])
        bump = bump_first(model, seed, p, j, i, epsilon)
        records.append((p, j, i, exact, bump, float(relative_deviation(bump, exact))))
    rel = np.array([r[-1] for r in records])
    return {"records": records, "median": float(np.median(rel)), "max": float(rel.max())}


def second_bump_suite(model, seed: int, n_triples: int = 50, epsilon: float = 1e-3, min_lag: int = 10,
                      n_paths: int = 10) -> dict:
    """Second derivatives against central double bumps, plus (r, s) symmetry."""
    n = model.grid.n
    if n <= min_lag + 1:
        raise InvalidArgumentError(f"grid too coarse: n={n}")
    rng = np.random.default_rng(derive_seed(seed, TRIPLE_LABEL))
    records = []
    for _ in range(n_triples):
        t = int(rng.integers(min_lag + 2, n + 1))
        r, s = (int(x) for x in rng.choice(t - min_lag, size=2, replace=False))
        p = int(rng.integers(0, n_paths))
        path = simulate_path(model, seed, p)
        fld = first_field(path, model)
        rs, sr = second_entries(path, model, fld, [(r, s, t), (s, r, t)])
        bump = bump_second(model, seed, p, r, s, t, epsilon)
        sym = abs(rs.value - sr.value) / max(abs(rs.value), abs(sr.value), ATOL)
        records.append((p, r, s, t, rs.value, bump, float(relative_deviation(bump, rs.value)), sym))
    rel = np.array([x[6] for x in records])
    sym = np.array([x[7] for x in records])
    return {"records": records, "median": float(np.median(rel)), "max": float(rel.max()),
            "symmetry_max": float(sym.max())}


def explosion_suite(model, seed: int, n_paths: int = 1000, coarse_n: int | None = None) -> dict:
    """Normalized first-moment statistic on the model grid and a coarser one.

    ``growth`` = max_fine / max_coarse - 1; a bounded statistic keeps it small.
    """
    coarse_n = coarse_n or model.grid.n // 2
    fine = streaming_explosion_stats(model, seed, n_paths)
    coarse = streaming_explosion_stats(model.with_grid(TimeGrid(model.grid.T, coarse_n)), seed, n_paths)
    return {"fine": fine, "coarse": coarse, "max_fine": fine.max, "max_coarse": coarse.max,
            "growth": fine.max / coarse.max - 1.0}


def sandwich_suite(model, seed: int, n_paths: int, batch: int = 1000) -> dict:
    """Band violations and margins over paths 0..n_paths-1."""
    t = model.grid.nodes
    phi, psi = model.bounds.phi(t), model.bounds.psi(t)
    violations, low, high = 0, np.inf, np.inf
    for start in range(0, n_paths, batch):
        Y = simulate_paths(model, seed, np.arange(start, min(start + batch, n_paths))).Y
        violations += int(np.count_nonzero((Y <= phi) | (Y >= psi)))
        low = min(low, float((Y - phi).min()))
        high = min(high, float((psi - Y).min()))
    return {"violations": violations, "min_margin_phi": low, "min_margin_psi": high, "n_paths": n_paths}
