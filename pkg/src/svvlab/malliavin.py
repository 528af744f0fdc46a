"""First and second Malliavin derivatives of the sandwiched volatility along paths.

Continuous formulas being discretized:

    D_s Y(t) = K(t, s) + int_s^t K(u, s) F1(t, u) du
    D_r D_s Y(t) = int_s^t K(u, s) F1(t, u) (int_u^t b''(v) D_r Y(v) dv) du
                   + int_s^t K(u, s) F2(t, u) D_r Y(u) du

with F1(t, u) = b'(u) E(u, t), F2(t, u) = b''(u) E(u, t) and
E(u, t) = exp(int_u^t b'(v) dv), where b', b'' are evaluated along Y.

Quadrature: kernel values are the cell-averaged weights of the path scheme,
u and v run over right cell endpoints, and the exponential uses the
per-step factors P_k = 1 / (1 - dt b'_k) of the implicit scheme
(E(t_k, t_i) = prod_{m=k..i} P_m = exp(sum -log(1 - dt b'_m))). With these
choices the discrete formulas are the exact derivatives of the simulated map
dB -> Y, which is what the bump oracles measure.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import InvalidArgumentError
from .rng import brownian_increments, check_seed
from .sandwich import PathBundle, SandwichModel, compiled, drift_eval, simulate_from_increments, simulate_paths
from .volterra import TimeGrid

__all__ = [
    "MalliavinField",
    "SecondDerivativeEntry",
    "ExplosionStats",
    "first_field",
    "first_field_reference",
    "second_entries",
    "second_entry_recursive",
    "bump_first",
    "bump_second",
    "explosion_stats",
    "streaming_explosion_stats",
    "write_field_csv",
    "write_second_csv",
    "write_stats_csv",
]

EPS_MIN, EPS_MAX = 1e-7, 1e-2
MIN_FIELDS = 100


@dataclass(eq=False)
class MalliavinField:
    """d1[i, j] = D_{s_j} Y(t_i) on the lower triangle j < i; zero elsewhere."""

    d1: np.ndarray
    grid: TimeGrid
    path_index: int
    seed: int


@dataclass(frozen=True)
class SecondDerivativeEntry:
    r_index: int
    s_index: int
    t_index: int
    value: float


@dataclass(eq=False)
class ExplosionStats:
    """Normalized second moments.

    ``m[i, j]`` = mean (D_{s_j} Y(t_i))^2 (t_i - s_j)^(1-2H) for j < i (NaN
    elsewhere). ``second`` maps (r, s, t) to
    mean (D_r D_s Y(t))^2 / ((t - r) / (t - s))^(1-2H).
    """

    m: np.ndarray
    n_paths: int
    second: dict

    @property
    def max(self) -> float:
        return float(np.nanmax(self.m))


def _log_factors(bprime: np.ndarray, dt: float) -> np.ndarray:
    """log P_k = -log(1 - dt b'_k)."""
    return -np.log1p(-dt * bprime)


def first_field(path: PathBundle, model: SandwichModel) -> MalliavinField:
    """D_{s_j} Y(t_i) for all j < i in O(n^2)."""
    W = compiled(model).W
    d1 = _kernels.first_field_rows(W, np.ascontiguousarray(path.bprime), model.grid.dt)
    return MalliavinField(d1, model.grid, path.path_index, path.seed)


def first_field_reference(path: PathBundle, model: SandwichModel) -> np.ndarray:
    """Direct O(n^3) evaluation of the same quadrature; test oracle only."""
    W = compiled(model).W
    dt = model.grid.dt
    bp = path.bprime
    ell = _log_factors(bp, dt)
    n = model.grid.n
    out = np.zeros((n + 1, n))
    for i in range(1, n + 1):
        # S[k] = sum_{m=k..i} log P_m, so exp(S[k]) = E(t_k, t_i)
        S = np.cumsum(ell[i::-1])[::-1]
        A = dt * bp[: i + 1] * np.exp(S)
        out[i, :i] = W[i, :i] + A @ W[: i + 1, :i]
    return out


def _check_triple(r, s, t, n):
    for name, v in (("r", r), ("s", s), ("t", t)):
        if int(v) != v or v < 0:
            raise InvalidArgumentError(f"index {name}={v} must be a non-negative integer")
    if not (r < t and s < t and t <= n):
        raise InvalidArgumentError(f"need r < t, s < t <= {n}; got (r, s, t) = ({r}, {s}, {t})")


def second_entries(path: PathBundle, model: SandwichModel, field: MalliavinField, triples) -> list:
    """D_{r} D_{s} Y(t) at grid triples (r, s, t), each in O(n)."""
    n, dt = model.grid.n, model.grid.dt
    W = compiled(model).W
    _, bp, bpp = drift_eval(model.drift, model.bounds, model.grid.nodes, path.Y)
    ell = _log_factors(bp, dt)
    Pk = np.exp(ell)
    out = []
    for r, s, t in triples:
        _check_triple(r, s, t, n)
        r, s, t = int(r), int(s), int(t)
        k = np.arange(s + 1, t + 1)
        logE = np.cumsum(ell[t : s : -1])[::-1]  # log E(t_k, t_t) for k = s+1..t
        E = np.exp(logE)
        dr = field.d1[k, r]
        # inner(m) = sum_{k=m..t} b''_k D_r Y(t_k) P_k dt
        inner = np.cumsum((bpp[k] * dr * Pk[k] * dt)[::-1])[::-1]
        w = W[k, s]
        f1_term = np.sum(w * dt * bp[k] * E * inner)
        f2_term = np.sum(w * dt * bpp[k] * E * dr)
        out.append(SecondDerivativeEntry(r, s, t, float(f1_term + f2_term)))
    return out


def second_entry_recursive(path: PathBundle, model: SandwichModel, field: MalliavinField, r, s, t) -> float:
    """Second derivative of the scheme map by forward recursion; test oracle.

    gamma_i = P_i (gamma_{i-1} + dt b''_i D_r Y(t_i) D_s Y(t_i)).
    """
    _check_triple(r, s, t, model.grid.n)
    dt = model.grid.dt
    _, bp, bpp = drift_eval(model.drift, model.bounds, model.grid.nodes, path.Y)
    g = 0.0
    for i in range(max(r, s) + 1, t + 1):
        g = (g + dt * bpp[i] * field.d1[i, r] * field.d1[i, s]) / (1.0 - dt * bp[i])
    return g


def _check_eps(epsilon):
    if not EPS_MIN <= epsilon <= EPS_MAX:
        raise InvalidArgumentError(f"epsilon must lie in [{EPS_MIN}, {EPS_MAX}], got {epsilon}")


def _base_increments(model, seed, path_index):
    dB1, _ = brownian_increments(check_seed(seed), [path_index], model.grid.n, model.grid.dt)
    return dB1[0]


def bump_first(model: SandwichModel, seed: int, path_index: int, j: int, t_index: int, epsilon: float) -> float:
    """Forward difference of Y(t_i) after shifting the volatility increment of cell j.

    Shifting dB1_j by epsilon is the Cameron-Martin direction
    h = (epsilon / dt) 1_cell, so the quotient estimates the cell average of
    D_u Y(t_i) over cell j, directly comparable with ``d1[t_index, j]``.
    """
    _check_eps(epsilon)
    if not 0 <= j < t_index <= model.grid.n:
        raise InvalidArgumentError(f"need 0 <= j < t_index <= n, got j={j}, t_index={t_index}")
    base = _base_increments(model, seed, path_index)
    rows = np.stack([base, base])
    rows[1, j] += epsilon
    Y = simulate_from_increments(model, rows).Y
    return float((Y[1, t_index] - Y[0, t_index]) / epsilon)


def bump_second(model: SandwichModel, seed: int, path_index: int, r: int, s: int, t_index: int, epsilon: float) -> float:
    """Central mixed second difference of Y(t_i) in the increments of cells r and s."""
    _check_eps(epsilon)
    _check_triple(r, s, t_index, model.grid.n)
    base = _base_increments(model, seed, path_index)
    rows = np.stack([base] * 4)
    for k, (sr, ss) in enumerate(((1, 1), (1, -1), (-1, 1), (-1, -1))):
        rows[k, r] += sr * epsilon
        rows[k, s] += ss * epsilon
    Y = simulate_from_increments(model, rows).Y[:, t_index]
    return float((Y[0] - Y[1] - Y[2] + Y[3]) / (4 * epsilon * epsilon))


def _lag_weights(grid: TimeGrid, H: float) -> np.ndarray:
    t = grid.nodes
    lag = t[:, None] - t[None, :-1]
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(lag > 0, np.abs(lag) ** (1 - 2 * H), np.nan)
    return w


def explosion_stats(fields, H: float, second=None) -> ExplosionStats:
    """Normalized moments from materialized fields.

    ``second`` optionally maps path_index to a list of SecondDerivativeEntry.
    Paths are accumulated in path_index order.
    """
    fields = sorted(fields, key=lambda f: f.path_index)
    if len(fields) < MIN_FIELDS:
        raise InvalidArgumentError(f"need at least {MIN_FIELDS} fields, got {len(fields)}")
    grid = fields[0].grid
    if any(f.grid != grid for f in fields):
        raise InvalidArgumentError("fields live on different grids")
    acc = np.zeros_like(fields[0].d1)
    for f in fields:
        acc += f.d1**2
    m = acc / len(fields) * _lag_weights(grid, H)
    sec = {}
    if second:
        t = grid.nodes
        sums, counts = {}, {}
        for pidx in sorted(second):
            for e in second[pidx]:
                key = (e.r_index, e.s_index, e.t_index)
                sums[key] = sums.get(key, 0.0) + e.value**2
                counts[key] = counts.get(key, 0) + 1
        for (r, s, ti), v in sums.items():
            ratio = (t[ti] - t[r]) / (t[ti] - t[s])
            sec[(r, s, ti)] = v / counts[(r, s, ti)] / ratio ** (1 - 2 * H)
    return ExplosionStats(m, len(fields), sec)


def streaming_explosion_stats(model: SandwichModel, seed: int, n_paths: int, H=None, batch: int = 250) -> ExplosionStats:
    """First-derivative statistic over paths 0..n_paths-1 without storing fields.

    Paths are processed in fixed batches of ``batch`` consecutive indices and
    the batch sums are added in index order, so the result depends only on
    (model, seed, n_paths, batch).
    """
    if n_paths < MIN_FIELDS:
        raise InvalidArgumentError(f"need at least {MIN_FIELDS} paths, got {n_paths}")
    H = model.kernel.effective_H if H is None else H
    W = compiled(model).W
    acc = np.zeros_like(W)
    for start in range(0, n_paths, batch):
        paths = simulate_paths(model, seed, np.arange(start, min(start + batch, n_paths)))
        acc += _kernels.field_square_sums(W, np.ascontiguousarray(paths.bprime), model.grid.dt)
    m = acc / n_paths * _lag_weights(model.grid, H)
    return ExplosionStats(m, n_paths, {})


def write_field_csv(fields, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "i", "j", "d1"])
        for f in fields:
            ii, jj = np.tril_indices(f.d1.shape[0], -1, f.d1.shape[1])
            for i, j in zip(ii, jj):
                w.writerow([f.path_index, i, j, float(f.d1[i, j])])


def write_second_csv(entries_by_path: dict, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "r", "s", "t", "d2"])
        for pidx in sorted(entries_by_path):
            for e in entries_by_path[pidx]:
                w.writerow([pidx, e.r_index, e.s_index, e.t_index, float(e.value)])


def write_stats_csv(stats: ExplosionStats, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "m"])
        ii, jj = np.nonzero(np.isfinite(stats.m))
        for i, j in zip(ii, jj):
            w.writerow([i, j, float(stats.m[i, j])])
