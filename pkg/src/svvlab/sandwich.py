"""Sandwiched volatility: singular drift, model container, path simulation.

The volatility solves Y(t) = y0 + int_0^t b(s, Y(s)) ds + Z(t) with

    b(t, y) = theta1(t) / (y - phi(t))^gamma1 - theta2(t) / (psi(t) - y)^gamma2 + a(t, y)

and Z the Gaussian Volterra process of :mod:`svvlab.volterra`. Time stepping
is drift-implicit Euler: each step solves y - dt*b(t_{i+1}, y) = c on the
open band (phi, psi). The residual is strictly increasing there and blows up
at both ends, so every simulated node lies strictly inside the band.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import IntegrationError, InvalidArgumentError, OutOfBandError, ValidationError
from .rng import brownian_increments, check_seed
from .volterra import KernelSpec, TimeGrid, weight_matrix

__all__ = [
    "TimeFunction",
    "AFunction",
    "BoundFunctions",
    "SandwichDrift",
    "SandwichModel",
    "PathBundle",
    "PathBatch",
    "drift_eval",
    "implicit_step",
    "simulate_path",
    "simulate_paths",
    "simulate_from_increments",
    "empirical_sandwich_stats",
    "write_paths_csv",
]


@dataclass(frozen=True)
class TimeFunction:
    """Deterministic function of time from a small parametric family.

    constant: c0; affine: c0 + c1 t; sinusoid: c0 + amp sin(2 pi freq t + phase).
    All members are Lipschitz, hence Hölder of every order below one.
    """

    kind: str = "constant"
    c0: float = 0.0
    c1: float = 0.0
    amp: float = 0.0
    freq: float = 0.0
    phase: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "affine", "sinusoid"):
            raise InvalidArgumentError(f"unknown time-function kind {self.kind!r}")

    @classmethod
    def constant(cls, c):
        return cls("constant", float(c))

    @classmethod
    def affine(cls, c0, c1):
        return cls("affine", float(c0), float(c1))

    @classmethod
    def sinusoid(cls, c0, amp, freq, phase=0.0):
        return cls("sinusoid", float(c0), 0.0, float(amp), float(freq), float(phase))

    @classmethod
    def from_dict(cls, d) -> "TimeFunction":
        if isinstance(d, (int, float)):
            return cls.constant(d)
        d = dict(d)
        kind = d.pop("kind", "constant")
        return cls(kind, **{k: float(v) for k, v in d.items()})

    def to_dict(self) -> dict:
        if self.kind == "constant":
            return {"kind": "constant", "c0": self.c0}
        if self.kind == "affine":
            return {"kind": "affine", "c0": self.c0, "c1": self.c1}
        return {"kind": "sinusoid", "c0": self.c0, "amp": self.amp, "freq": self.freq, "phase": self.phase}

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            out = np.full(t.shape, self.c0)
        elif self.kind == "affine":
            out = self.c0 + self.c1 * t
        else:
            out = self.c0 + self.amp * np.sin(2 * np.pi * self.freq * t + self.phase)
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class AFunction:
    """Smooth drift part a(t, y) = a0 + a1 * y.

    Covers the zero, affine and mean-reversion c1 (c2 - y) families; all have
    analytic y-derivatives (a'_y = a1, a''_yy = 0).
    """

    a0: float = 0.0
    a1: float = 0.0
    kind: str = "zero"

    @classmethod
    def zero(cls):
        return cls()

    @classmethod
    def affine(cls, a0, a1):
        return cls(float(a0), float(a1), "affine")

    @classmethod
    def mean_reversion(cls, speed, level):
        return cls(float(speed) * float(level), -float(speed), "mean_reversion")

    @classmethod
    def from_dict(cls, d) -> "AFunction":
        if d is None:
            return cls.zero()
        kind = d.get("kind", "zero")
        if kind == "zero":
            return cls.zero()
        if kind == "affine":
            return cls.affine(d["a0"], d["a1"])
        if kind == "mean_reversion":
            return cls.mean_reversion(d["speed"], d["level"])
        raise InvalidArgumentError(f"unknown a-function kind {kind!r}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "a0": self.a0, "a1": self.a1}

    @property
    def max_slope(self) -> float:
        return self.a1


@dataclass(frozen=True)
class BoundFunctions:
    phi: TimeFunction
    psi: TimeFunction

    @classmethod
    def constant(cls, lower, upper):
        return cls(TimeFunction.constant(lower), TimeFunction.constant(upper))


@dataclass(frozen=True)
class SandwichDrift:
    """Parameters of the singular drift.

    ``theta1=None`` (``theta2=None``) switches the lower (upper) barrier term
    off. With both off the drift is just ``a``: a degenerate mode that waives
    the sandwich assumptions and exists for trivial test oracles.
    """

    theta1: TimeFunction | None
    theta2: TimeFunction | None
    gamma1: float = 1.0
    gamma2: float = 1.0
    a: AFunction = field(default_factory=AFunction)

    @classmethod
    def symmetric(cls, theta, gamma, a=None):
        th = TimeFunction.constant(theta)
        return cls(th, th, float(gamma), float(gamma), a or AFunction.zero())

    @classmethod
    def disabled(cls, a=None):
        return cls(None, None, 1.0, 1.0, a or AFunction.zero())

    @property
    def lower_on(self) -> bool:
        return self.theta1 is not None

    @property
    def upper_on(self) -> bool:
        return self.theta2 is not None

    @property
    def degenerate(self) -> bool:
        return not (self.lower_on and self.upper_on)


def _band_arrays(drift: SandwichDrift, bounds: BoundFunctions, t):
    t = np.asarray(t, dtype=float)
    phi = np.broadcast_to(bounds.phi(t), t.shape).astype(float) if drift.lower_on else np.full(t.shape, -np.inf)
    psi = np.broadcast_to(bounds.psi(t), t.shape).astype(float) if drift.upper_on else np.full(t.shape, np.inf)
    th1 = np.broadcast_to(drift.theta1(t), t.shape).astype(float) if drift.lower_on else np.zeros(t.shape)
    th2 = np.broadcast_to(drift.theta2(t), t.shape).astype(float) if drift.upper_on else np.zeros(t.shape)
    return phi, psi, th1, th2


def drift_eval(drift: SandwichDrift, bounds: BoundFunctions, t, y):
    """Return (b, b'_y, b''_yy) at (t, y); arrays broadcast.

    Raises OutOfBandError unless phi(t) < y < psi(t) for every active barrier.
    """
    t, y = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(y, dtype=float))
    phi, psi, th1, th2 = _band_arrays(drift, bounds, t)
    if not (np.all(y > phi) and np.all(y < psi)):
        raise OutOfBandError("drift evaluated outside the open band (phi(t), psi(t))")
    a = drift.a
    b = a.a0 + a.a1 * y
    by = np.full(y.shape, a.a1)
    byy = np.zeros(y.shape)
    if drift.lower_on:
        d = y - phi
        q = th1 / d**drift.gamma1
        b = b + q
        by = by - drift.gamma1 * q / d
        byy = byy + drift.gamma1 * (drift.gamma1 + 1) * q / d**2
    if drift.upper_on:
        e = psi - y
        q = th2 / e**drift.gamma2
        b = b - q
        by = by - drift.gamma2 * q / e
        byy = byy - drift.gamma2 * (drift.gamma2 + 1) * q / e**2
    if b.ndim == 0:
        return float(b), float(by), float(byy)
    return b, by, byy


@dataclass(frozen=True, eq=False)
class SandwichModel:
    """Full parameter set of the volatility and log-price dynamics.

    Construction validates the model assumptions; a ValidationError names the
    violated condition and the offending field. ``check_assumptions=False``
    skips the (B1) exponent condition only, for experiments that deliberately
    step outside it.
    """

    kernel: KernelSpec
    bounds: BoundFunctions
    drift: SandwichDrift
    y0: float
    grid: TimeGrid
    x0: float = 0.0
    r: float = 0.0
    rho: float = 0.0
    check_assumptions: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self):
        d, g = self.drift, self.grid
        t = g.nodes
        if not abs(self.rho) < 1:
            raise ValidationError(f"|rho| < 1 required, got {self.rho}", "model.rho")
        for name, v in (("model.y0", self.y0), ("model.x0", self.x0), ("model.r", self.r)):
            if not math.isfinite(v):
                raise ValidationError(f"must be finite, got {v}", name)
        if d.lower_on or d.upper_on:
            phi, psi = self.bounds.phi(t), self.bounds.psi(t)
            if d.lower_on and not np.all(phi > 0):
                raise ValidationError("0 < phi(t) required on the grid", "bounds.phi")
            if d.lower_on and d.upper_on and not np.all(phi < psi):
                raise ValidationError("phi(t) < psi(t) required on the grid", "bounds")
            if d.lower_on and not self.y0 > phi[0]:
                raise ValidationError(f"phi(0) < y0 required, got y0={self.y0}", "model.y0")
            if d.upper_on and not self.y0 < psi[0]:
                raise ValidationError(f"y0 < psi(0) required, got y0={self.y0}", "model.y0")
        H = self.kernel.effective_H
        floor = 1.0 / H - 1.0
        for on, gam, th, key in (
            (d.lower_on, d.gamma1, d.theta1, "1"),
            (d.upper_on, d.gamma2, d.theta2, "2"),
        ):
            if not on:
                continue
            if self.check_assumptions and not gam > floor:
                raise ValidationError(
                    f"(B1) gamma{key} > 1/H - 1 = {floor:.6g} required for H={H}, got {gam}",
                    f"drift.gamma{key}",
                )
            if not gam > 0:
                raise ValidationError(f"gamma{key} must be positive, got {gam}", f"drift.gamma{key}")
            if not np.all(th(t) > 0):
                raise ValidationError(f"(B2) theta{key}(t) > 0 required on the grid", f"drift.theta{key}")
        if not g.dt * max(d.a.max_slope, 0.0) < 1:
            raise ValidationError(
                f"step-size gate dt * sup a'_y < 1 violated (dt={g.dt}, a'_y={d.a.max_slope})", "model.n"
            )

    def with_grid(self, grid: TimeGrid) -> "SandwichModel":
        return replace(self, grid=grid)

    def with_rho(self, rho: float) -> "SandwichModel":
        return replace(self, rho=rho)

    def node_arrays(self):
        """(phi, psi, theta1, theta2) sampled at the grid nodes."""
        return _band_arrays(self.drift, self.bounds, self.grid.nodes)


@dataclass(eq=False)
class PathBundle:
    """One simulated realization on the model grid."""

    dB1: np.ndarray
    dB2: np.ndarray
    Z: np.ndarray
    Y: np.ndarray
    bprime: np.ndarray
    seed: int
    path_index: int


@dataclass(eq=False)
class PathBatch:
    """Several realizations stacked row-wise; row k is path ``path_indices[k]``."""

    dB1: np.ndarray
    dB2: np.ndarray
    Z: np.ndarray
    Y: np.ndarray
    bprime: np.ndarray
    seed: int
    path_indices: np.ndarray

    def __len__(self):
        return len(self.path_indices)

    def __getitem__(self, k) -> PathBundle:
        return PathBundle(
            self.dB1[k], self.dB2[k], self.Z[k], self.Y[k], self.bprime[k], self.seed, int(self.path_indices[k])
        )

    def __iter__(self):
        return (self[k] for k in range(len(self)))


class _Compiled:
    """Per-model arrays handed to the compiled kernels (cached on the model)."""

    def __init__(self, model: SandwichModel):
        d = model.drift
        self.W = weight_matrix(model.kernel, model.grid)
        self.Wt = np.ascontiguousarray(self.W.T)
        phi, psi, th1, th2 = model.node_arrays()
        self.args = (
            float(model.y0),
            model.grid.dt,
            np.ascontiguousarray(phi),
            np.ascontiguousarray(psi),
            np.ascontiguousarray(th1),
            np.ascontiguousarray(th2),
            float(d.gamma1),
            float(d.gamma2),
            float(d.a.a0),
            float(d.a.a1),
            d.lower_on,
            d.upper_on,
        )


def compiled(model: SandwichModel) -> _Compiled:
    c = model.__dict__.get("_compiled")
    if c is None:
        c = _Compiled(model)
        object.__setattr__(model, "_compiled", c)
    return c


def implicit_step(drift: SandwichDrift, bounds: BoundFunctions, t_next: float, y_prev: float, dt: float, dZ: float):
    """One drift-implicit Euler step: the root y* of y - dt*b(t_next, y) = y_prev + dZ."""
    phi, psi, th1, th2 = (float(x) for x in _band_arrays(drift, bounds, t_next))
    if not (phi < y_prev < psi) and (drift.lower_on or drift.upper_on):
        raise OutOfBandError(f"y_prev={y_prev} outside the band at the previous node")
    c = y_prev + dZ
    y, status = _kernels.solve_step(
        c, c, dt, phi, psi, th1, th2, float(drift.gamma1), float(drift.gamma2),
        float(drift.a.a0), float(drift.a.a1), drift.lower_on, drift.upper_on,
    )
    if status != _kernels.OK:
        raise IntegrationError("implicit step root search failed")
    return float(y)


def simulate_from_increments(model: SandwichModel, dB1, dB2=None, *, seed=0, path_indices=None) -> PathBatch:
    """Run the scheme on given volatility-driver increments (rows = paths)."""
    dB1 = np.ascontiguousarray(np.atleast_2d(np.asarray(dB1, dtype=float)))
    if dB1.shape[1] != model.grid.n:
        raise InvalidArgumentError(f"expected {model.grid.n} increments per path, got {dB1.shape[1]}")
    if dB2 is None:
        dB2 = np.zeros_like(dB1)
    if path_indices is None:
        path_indices = np.arange(dB1.shape[0])
    c = compiled(model)
    Z, Y, bp, fail = _kernels.simulate_batch(dB1, c.Wt, *c.args)
    bad = np.nonzero(fail >= 0)[0]
    if bad.size:
        k = int(bad[0])
        raise IntegrationError("implicit step root search failed", int(path_indices[k]), int(fail[k]))
    return PathBatch(dB1, np.atleast_2d(dB2), Z, Y, bp, seed, np.asarray(path_indices))


def simulate_paths(model: SandwichModel, seed: int, path_indices) -> PathBatch:
    """Simulate the listed paths; each is a pure function of (model, seed, index)."""
    seed = check_seed(seed)
    idx = np.atleast_1d(np.asarray(path_indices, dtype=np.int64))
    dB1, dB2 = brownian_increments(seed, idx, model.grid.n, model.grid.dt)
    return simulate_from_increments(model, dB1, dB2, seed=seed, path_indices=idx)


def simulate_path(model: SandwichModel, seed: int, path_index: int) -> PathBundle:
    return simulate_paths(model, seed, [path_index])[0]


def empirical_sandwich_stats(paths, model: SandwichModel, max_order: int = 4) -> dict:
    """Minimum distances to both bounds and sample moments of 1/(Y - phi).

    Diagnostics only: the moments are per-node suprema averaged over paths,
    ``mean_k sup_i (Y_i - phi_i)^-r`` for r = 1..max_order.
    """
    if not isinstance(paths, PathBatch):
        paths = list(paths)
        if not paths:
            raise InvalidArgumentError("empty path collection")
    Y = np.atleast_2d(np.stack([p.Y for p in paths]) if not isinstance(paths, PathBatch) else paths.Y)
    if Y.size == 0:
        raise InvalidArgumentError("empty path collection")
    t = model.grid.nodes
    phi, psi = model.bounds.phi(t), model.bounds.psi(t)
    low = Y - phi
    high = psi - Y
    sup_inv = 1.0 / low.min(axis=1)
    return {
        "min_margin_phi": float(low.min()),
        "min_margin_psi": float(high.min()),
        "violations": int(np.count_nonzero((low <= 0) | (high <= 0))),
        "inverse_moments": {r: float(np.mean(sup_inv**r)) for r in range(1, max_order + 1)},
    }


def write_paths_csv(batch: PathBatch, model: SandwichModel, path) -> None:
    t = model.grid.nodes
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "t", "Z", "Y", "bprime"])
        for bundle in batch:
            for i in range(t.size):
                w.writerow([bundle.path_index, float(t[i]), float(bundle.Z[i]), float(bundle.Y[i]), float(bundle.bprime[i])])
