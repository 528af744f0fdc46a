"""Volterra kernels, their discretization, and numeric checks on them.

A kernel K(t, s) vanishes for t <= s. Two families are supported:

* ``PowerSum``: K(t, s) = sum_k alpha_k (t - s)^(H_k - 1/2) for s < t.
* ``Tabulated``: values on a uniform (t, s) node grid, linearly interpolated
  in s for each tabulated t.

The Gaussian Volterra process Z(t) = int_0^t K(t, s) dB(s) is discretized with
cell-integrated weights ``w[i, j] = (1/dt) int_{t_j}^{t_{j+1}} K(t_i, u) du``
so that Z(t_i) = sum_j w[i, j] dB_j keeps the singular mass near u = t_i.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError, NonConvergenceError

__all__ = [
    "KernelFamily",
    "KernelSpec",
    "TabulatedTable",
    "TimeGrid",
    "kernel_eval",
    "cell_weights",
    "weight_matrix",
    "holder_certificate",
    "limit_constant",
    "normalized_double_integral",
    "increment_variance",
    "load_tabulated_csv",
    "write_tabulated_csv",
]

_NODE_RTOL = 1e-9


class KernelFamily(str, enum.Enum):
    POWER_SUM = "PowerSum"
    TABULATED = "Tabulated"


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_i = i * T / n on [0, T]."""

    T: float
    n: int

    def __post_init__(self):
        if not (math.isfinite(self.T) and self.T > 0):
            raise InvalidArgumentError(f"grid horizon T must be positive and finite, got {self.T}")
        if int(self.n) != self.n or self.n < 2:
            raise InvalidArgumentError(f"grid needs n >= 2 steps, got {self.n}")
        object.__setattr__(self, "n", int(self.n))

    @property
    def dt(self) -> float:
        return self.T / self.n

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n + 1) * self.dt

    def index_of(self, t: float) -> int:
        """Grid index of time ``t``; raises if ``t`` is not a node."""
        x = t / self.dt
        i = int(round(x))
        if not (0 <= i <= self.n) or abs(x - i) > 1e-9 * max(1.0, abs(x)):
            raise InvalidArgumentError(f"t={t} is not a node of the grid (T={self.T}, n={self.n})")
        return i


@dataclass(frozen=True, eq=False)
class TabulatedTable:
    """Kernel values ``values[a, b] = K(t_a, t_b)`` on uniform nodes ``t``.

    Entries with b >= a are forced to zero (Volterra property).
    """

    t: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        v = np.array(self.values, dtype=float)
        if t.ndim != 1 or t.size < 3 or t[0] != 0.0:
            raise InvalidArgumentError("tabulated kernel needs >= 3 time nodes starting at 0")
        h = np.diff(t)
        if np.any(h <= 0) or np.max(np.abs(h - h[0])) > 1e-9 * h[0]:
            raise InvalidArgumentError("tabulated kernel nodes must be uniformly spaced")
        if v.shape != (t.size, t.size):
            raise InvalidArgumentError(f"tabulated values must have shape {(t.size, t.size)}, got {v.shape}")
        if not np.all(np.isfinite(v[np.tril_indices(t.size, -1)])):
            raise InvalidArgumentError("tabulated kernel values must be finite below the diagonal")
        v[np.triu_indices(t.size)] = 0.0
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "values", v)

    @property
    def h(self) -> float:
        return float(self.t[1])

    @property
    def T(self) -> float:
        return float(self.t[-1])

    def row(self, t: float) -> int:
        x = t / self.h
        a = int(round(x))
        if not (0 <= a < self.t.size) or abs(x - a) > _NODE_RTOL * max(1.0, x):
            raise InvalidArgumentError(f"t={t} is not a tabulated time node")
        return a


@dataclass(frozen=True, eq=False)
class KernelSpec:
    """Parametric description of a Volterra kernel.

    Use :meth:`power_sum`, :meth:`tabulated` or :meth:`zero` rather than the
    raw constructor.
    """

    family: KernelFamily
    alphas: tuple = ()
    hursts: tuple = ()
    effective_H: float = 0.5
    table: TabulatedTable | None = field(default=None, repr=False)
    degenerate: bool = False

    @classmethod
    def power_sum(cls, alphas, hursts) -> "KernelSpec":
        alphas = tuple(float(a) for a in np.atleast_1d(alphas))
        hursts = tuple(float(h) for h in np.atleast_1d(hursts))
        if len(alphas) != len(hursts) or len(alphas) < 1:
            raise InvalidArgumentError("alphas and hursts must have equal length >= 1")
        if not all(math.isfinite(a) and a > 0 for a in alphas):
            raise InvalidArgumentError(f"all alphas must be positive, got {alphas}")
        if not all(0 < h < 1 for h in hursts):
            raise InvalidArgumentError(f"all hursts must lie in (0, 1), got {hursts}")
        if any(b <= a for a, b in zip(hursts, hursts[1:])):
            raise InvalidArgumentError(f"hursts must be strictly increasing, got {hursts}")
        return cls(KernelFamily.POWER_SUM, alphas, hursts, hursts[0])

    @classmethod
    def zero(cls, H: float = 0.5) -> "KernelSpec":
        """Identically-zero kernel for the constant-volatility reduction.

        Violates the positivity of the coefficients on purpose; flagged as
        ``degenerate``.
        """
        return cls(KernelFamily.POWER_SUM, (0.0,), (float(H),), float(H), degenerate=True)

    @classmethod
    def tabulated(cls, table: TabulatedTable, effective_H: float) -> "KernelSpec":
        if not 0 < effective_H < 1:
            raise InvalidArgumentError(f"effective_H must lie in (0, 1), got {effective_H}")
        return cls(KernelFamily.TABULATED, effective_H=float(effective_H), table=table)

    @classmethod
    def tabulate(cls, spec: "KernelSpec", grid: TimeGrid) -> "KernelSpec":
        """Sample ``spec`` on the nodes of ``grid`` into a Tabulated kernel."""
        t = grid.nodes
        tt, ss = np.meshgrid(t, t, indexing="ij")
        values = kernel_eval(spec, tt, ss)
        return cls.tabulated(TabulatedTable(t, values), spec.effective_H)

    def to_dict(self) -> dict:
        if self.family is KernelFamily.POWER_SUM:
            return {"family": self.family.value, "alphas": list(self.alphas), "hursts": list(self.hursts)}
        return {"family": self.family.value, "effective_H": self.effective_H, "nodes": int(self.table.t.size)}


def _check_finite(*xs):
    for x in xs:
        if not np.all(np.isfinite(x)):
            raise InvalidArgumentError(f"non-finite kernel argument: {x}")


def kernel_eval(spec: KernelSpec, t, s):
    """K(t, s); exactly zero where t <= s. Accepts scalars or arrays."""
    _check_finite(t, s)
    t_arr, s_arr = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(s, dtype=float))
    scalar = t_arr.ndim == 0
    t_arr, s_arr = np.atleast_1d(t_arr), np.atleast_1d(s_arr)
    out = np.zeros(t_arr.shape)
    live = t_arr > s_arr
    if spec.family is KernelFamily.POWER_SUM:
        lag = (t_arr - s_arr)[live]
        acc = np.zeros(lag.shape)
        for a, h in zip(spec.alphas, spec.hursts):
            acc += a * lag ** (h - 0.5)
        out[live] = acc
    else:
        tab = spec.table
        for idx in zip(*np.nonzero(live)):
            a = tab.row(t_arr[idx])
            out[idx] = np.interp(s_arr[idx], tab.t[: a + 1], tab.values[a, : a + 1])
    return float(out[0]) if scalar else out


def _power_lag_weights(spec: KernelSpec, dt: float, n: int) -> np.ndarray:
    """c[m] = cell average of K over the cell lying m cells behind t."""
    m = np.arange(n, dtype=float)
    c = np.zeros(n)
    for a, h in zip(spec.alphas, spec.hursts):
        p = h + 0.5
        diff = np.empty(n)
        diff[0] = 1.0
        # (m+1)^p - m^p without cancellation for large m
        if p == 1.0:
            diff[1:] = 1.0
        else:
            diff[1:] = m[1:] ** p * np.expm1(p * np.log1p(1.0 / m[1:]))
        c += a * dt ** (p - 1.0) / p * diff
    return c


def _tabulated_cell_integrals(tab: TabulatedTable, grid: TimeGrid, i: int) -> np.ndarray:
    if grid.T > tab.T * (1 + _NODE_RTOL):
        raise InvalidArgumentError(f"grid horizon {grid.T} exceeds the tabulated range {tab.T}")
    ratio = grid.dt / tab.h
    step = int(round(ratio))
    if step < 1 or abs(ratio - step) > 1e-9 * ratio:
        raise InvalidArgumentError("simulation grid nodes must coincide with tabulated nodes")
    a = i * step
    row = tab.values[a, : a + 1]
    # cumulative trapezoid of the piecewise-linear interpolant in s
    cum = np.concatenate([[0.0], np.cumsum(0.5 * tab.h * (row[:-1] + row[1:]))])
    edges = cum[::step]
    return np.diff(edges) / grid.dt


def cell_weights(spec: KernelSpec, grid: TimeGrid, i: int) -> np.ndarray:
    """Cell-averaged kernel weights w[i, j], j = 0..i-1, for node ``i``."""
    if int(i) != i or not 1 <= i <= grid.n:
        raise InvalidArgumentError(f"node index must satisfy 1 <= i <= {grid.n}, got {i}")
    i = int(i)
    if spec.family is KernelFamily.POWER_SUM:
        return _power_lag_weights(spec, grid.dt, i)[::-1].copy()
    return _tabulated_cell_integrals(spec.table, grid, i)


def weight_matrix(spec: KernelSpec, grid: TimeGrid) -> np.ndarray:
    """Lower-triangular (n+1, n) matrix of cell weights; row 0 is zero."""
    n = grid.n
    W = np.zeros((n + 1, n))
    if spec.family is KernelFamily.POWER_SUM:
        c = _power_lag_weights(spec, grid.dt, n)
        for i in range(1, n + 1):
            W[i, :i] = c[i - 1 :: -1]
    else:
        for i in range(1, n + 1):
            W[i, :i] = _tabulated_cell_integrals(spec.table, grid, i)
    return W


def increment_variance(W: np.ndarray, dt: float) -> np.ndarray:
    """V[a, b] = dt * sum_j (W[b, j] - W[a, j])^2, the discrete analogue of
    int (K(t_b, s) - K(t_a, s))^2 ds."""
    n1 = W.shape[0]
    V = np.zeros((n1, n1))
    for a in range(n1):
        d = W[a + 1 :] - W[a]
        V[a, a + 1 :] = dt * np.einsum("ij,ij->i", d, d)
    return V + V.T


def _holder_sup(spec: KernelSpec, grid: TimeGrid, lam: float) -> float:
    W = weight_matrix(spec, grid)
    V = increment_variance(W, grid.dt)
    idx = np.arange(grid.n + 1)
    a, b = np.triu_indices(grid.n + 1, 1)
    ratio = V[a, b] / ((idx[b] - idx[a]) * grid.dt) ** lam
    return float(ratio.max())


def holder_certificate(spec: KernelSpec, grid: TimeGrid, lam: float) -> float:
    """Empirical constant in int (K(t2,s) - K(t1,s))^2 ds <= C |t2 - t1|^lam.

    The supremum runs over all pairs of grid nodes. A value that stays bounded
    as the grid is refined is numeric evidence that the increment condition
    holds for this ``lam``; the number itself is not a bound on the true
    constant.
    """
    if not 0 < lam < spec.effective_H:
        raise InvalidArgumentError(f"lambda must lie in (0, effective_H={spec.effective_H}), got {lam}")
    return _holder_sup(spec, grid, lam)


def normalized_double_integral(spec: KernelSpec, tau: float) -> float:
    """tau^-(3/2+H) * int_0^tau int_s^tau K(t, s) dt ds with H = effective_H.

    Closed form for PowerSum; trapezoid over tabulated rows otherwise.
    """
    H = spec.effective_H
    if spec.family is KernelFamily.POWER_SUM:
        total = sum(a * tau ** (h + 1.5) / ((h + 0.5) * (h + 1.5)) for a, h in zip(spec.alphas, spec.hursts))
        return total / tau ** (1.5 + H)
    tab = spec.table
    rows = int(round(tau / tab.h))
    if rows < 1 or abs(tau / tab.h - rows) > 1e-9 * rows:
        raise InvalidArgumentError(f"tau={tau} is not a tabulated node")
    v = tab.values[: rows + 1, : rows + 1]
    # G(t_a) = int_0^{t_a} K(t_a, s) ds, exact for the interpolant
    G = tab.h * (v.sum(axis=1) - 0.5 * v[:, 0])
    total = tab.h * (G.sum() - 0.5 * G[0] - 0.5 * G[-1])
    return total / tau ** (1.5 + H)


def limit_constant(spec: KernelSpec, *, min_cells: int = 16) -> float:
    """Small-maturity limit K_Y of the normalized double kernel integral.

    For PowerSum only the roughest term survives the limit. Tabulated kernels
    are extrapolated from dyadic maturities tau = T 2^-m, m = 4..12, using the
    levels that span at least ``min_cells`` table cells.
    """
    if spec.family is KernelFamily.POWER_SUM:
        a, h = spec.alphas[0], spec.hursts[0]
        return a / ((h + 0.5) * (h + 1.5))
    tab = spec.table
    taus = [tab.T * 2.0**-m for m in range(4, 13)]
    taus = [tau for tau in taus if tau / tab.h >= min_cells - 1e-9]
    if len(taus) < 3:
        raise NonConvergenceError("tabulated kernel too coarse: fewer than 3 usable dyadic maturities")
    vals = np.array([normalized_double_integral(spec, tau) for tau in taus])
    estimates = []
    for k in range(len(vals) - 2):
        x0, x1, x2 = vals[k : k + 3]
        d1, d2 = x1 - x0, x2 - x1
        denom = d2 - d1
        if abs(d2) <= 1e-14 * max(1.0, abs(x2)) or abs(denom) <= 1e-300:
            estimates.append(x2)
        else:
            estimates.append(x2 - d2 * d2 / denom)
    if len(estimates) < 2:
        return float(estimates[-1])
    last, prev = estimates[-1], estimates[-2]
    if abs(last - prev) > 0.01 * abs(last):
        raise NonConvergenceError(f"limit extrapolation did not stabilize: {prev:.6g} vs {last:.6g}")
    return float(last)


def load_tabulated_csv(path, effective_H: float) -> KernelSpec:
    """Read a kernel table from CSV with header ``t,s,k``.

    Rows must cover every (t_a, s_b) pair of a uniform node grid with b < a;
    pairs with s >= t may be present but are ignored.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["t", "s", "k"]:
            raise InvalidArgumentError(f"{path}: expected header 't,s,k'")
        rows = [(float(r["t"]), float(r["s"]), float(r["k"])) for r in reader]
    if not rows:
        raise InvalidArgumentError(f"{path}: empty kernel table")
    nodes = np.unique(np.array([r[0] for r in rows] + [r[1] for r in rows] + [0.0]))
    h = nodes[1] - nodes[0]
    n_nodes = int(round(nodes[-1] / h)) + 1
    t = np.arange(n_nodes) * h
    values = np.full((n_nodes, n_nodes), np.nan)
    for tv, sv, kv in rows:
        a, b = int(round(tv / h)), int(round(sv / h))
        values[a, b] = kv
    missing = np.isnan(values[np.tril_indices(n_nodes, -1)])
    if missing.any():
        raise InvalidArgumentError(f"{path}: {int(missing.sum())} grid-aligned (t, s) entries missing")
    return KernelSpec.tabulated(TabulatedTable(t, values), effective_H)


def write_tabulated_csv(spec: KernelSpec, path) -> None:
    tab = spec.table
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "s", "k"])
        for a in range(1, tab.t.size):
            for b in range(a):
                w.writerow([float(tab.t[a]), float(tab.t[b]), float(tab.values[a, b])])

