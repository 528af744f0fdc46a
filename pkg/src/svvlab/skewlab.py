"""Skew term-structure experiments and power-law regression."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import InsufficientSignalError, InvalidArgumentError, UndefinedLimitError
from .pricing import atm_skew
from .rng import derive_seed
from .sandwich import SandwichModel
from .volterra import TimeGrid, limit_constant

__all__ = [
    "SkewReport",
    "dyadic_taus",
    "skew_term_structure",
    "fit_power_law",
    "limit_check",
    "run_skew_experiment",
    "config_digest",
    "write_skew_report",
]


@dataclass
class SkewReport:
    points: list
    fitted_slope: float | None
    fitted_intercept: float | None
    r_squared: float | None
    limit_ratio: float | None
    config_digest: str
    notes: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "slope": self.fitted_slope,
            "intercept": self.fitted_intercept,
            "r2": self.r_squared,
            "limit_ratio": self.limit_ratio,
            "config_digest": self.config_digest,
            "notes": list(self.notes),
        }


def dyadic_taus(T: float, m_min: int = 2, m_max: int = 9) -> list:
    return [T * 2.0**-m for m in range(m_max, m_min - 1, -1)]


def config_digest(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def _tau_seed(seed: int, tau: float) -> int:
    return derive_seed(seed, int(np.float64(tau).view(np.uint64)))


def skew_term_structure(model: SandwichModel, taus, n_paths: int, seed: int, *, steps_per_tau: int = 64,
                        antithetic: bool = False, dkappa_factor: float = 0.05) -> list:
    """ATM skew at each maturity, sorted by tau.

    Every tau must be a node of the model grid. Each maturity is simulated on its own grid [0, tau] with ``steps_per_tau``
    steps and its own seed derived from (seed, tau), so points are independent
    and the result is a pure function of the arguments.
    """
    points = []
    for tau in sorted(taus):
        if model.grid.index_of(tau) < 1:
            raise InvalidArgumentError(f"tau={tau} must be a positive grid node")
        sub = model.with_grid(TimeGrid(tau, steps_per_tau))
        points.append(atm_skew(sub, tau, n_paths, _tau_seed(seed, tau), antithetic, dkappa_factor))
    return points


def _significant(points):
    return [p for p in points if abs(p.atm_skew) > 3 * p.stderr]


def fit_power_law(points) -> tuple:
    """Weighted least squares of log|skew| on log tau.

    Weights are (|skew| / stderr)^2, i.e. inverse variances of log|skew|;
    if any stderr is zero all points get equal weight. Only points with
    |skew| > 3 stderr enter; they must share one sign and number at least 4.
    Returns (slope, intercept, r_squared).
    """
    sig = _significant(points)
    if len(sig) < 4:
        raise InsufficientSignalError(f"only {len(sig)} points with |skew| > 3 stderr; need 4")
    signs = {math.copysign(1.0, p.atm_skew) for p in sig}
    if len(signs) > 1:
        raise InsufficientSignalError("significant skews change sign; no power law to fit")
    x = np.log([p.tau for p in sig])
    y = np.log([abs(p.atm_skew) for p in sig])
    se = np.array([p.stderr for p in sig])
    w = np.ones_like(x) if np.any(se == 0) else (np.exp(y) / se) ** 2
    sw = np.sqrt(w)
    A = np.stack([np.ones_like(x), x], axis=1)
    (intercept, slope), *_ = np.linalg.lstsq(A * sw[:, None], y * sw, rcond=None)
    resid = y - (intercept + slope * x)
    ybar = np.sum(w * y) / np.sum(w)
    ss_tot = np.sum(w * (y - ybar) ** 2)
    r2 = 1.0 - np.sum(w * resid**2) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), float(min(max(r2, 0.0), 1.0))


def limit_check(points, model: SandwichModel, K_Y: float) -> float:
    """tau^(1/2-H) skew(tau_min) divided by rho K_Y / y0; tends to 1 as tau -> 0."""
    if abs(model.rho * K_Y) < 1e-12:
        raise UndefinedLimitError("rho * K_Y vanishes; the limit ratio is undefined")
    p = min(points, key=lambda q: q.tau)
    if not abs(p.atm_skew) > 3 * p.stderr:
        raise InsufficientSignalError(f"skew at tau_min={p.tau} is not significant")
    H = model.kernel.effective_H
    return float(p.tau ** (0.5 - H) * p.atm_skew / (model.rho * K_Y / model.y0))


def run_skew_experiment(model: SandwichModel, taus, n_paths: int, seed: int, *, steps_per_tau: int = 64,
                        antithetic: bool = False, dkappa_factor: float = 0.05, config: dict | None = None) -> SkewReport:
    points = skew_term_structure(model, taus, n_paths, seed, steps_per_tau=steps_per_tau,
                                 antithetic=antithetic, dkappa_factor=dkappa_factor)
    digest = config_digest(config if config is not None else {"seed": seed, "taus": list(taus), "n_paths": n_paths})
    notes = []
    slope = intercept = r2 = ratio = None
    try:
        slope, intercept, r2 = fit_power_law(points)
    except InsufficientSignalError as exc:
        notes.append(f"fit: {exc}")
    try:
        ratio = limit_check(points, model, limit_constant(model.kernel))
    except (InsufficientSignalError, UndefinedLimitError) as exc:
        notes.append(f"limit: {exc}")
    return SkewReport(points, slope, intercept, r2, ratio, digest, notes)


def write_skew_report(report: SkewReport, outdir) -> None:
    outdir = Path(outdir)
    with (outdir / "skew_report.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tau", "skew", "stderr", "dkappa"])
        for p in report.points:
            w.writerow([float(p.tau), float(p.atm_skew), float(p.stderr), float(p.dkappa)])
    summary = report.summary()
    summary["points"] = [asdict(p) for p in report.points]
    (outdir / "skew_fit.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    lines = ["ATM implied-volatility skew term structure", ""]
    lines.append(f"{'tau':>12} {'skew':>12} {'stderr':>10}")
    for p in report.points:
        lines.append(f"{p.tau:12.6g} {p.atm_skew:12.5f} {p.stderr:10.5f}")
    lines.append("")
    if report.fitted_slope is None:
        lines.append("power-law fit: null")
    else:
        lines.append(f"power-law fit: slope={report.fitted_slope:.4f} intercept={report.fitted_intercept:.4f} "
                     f"r2={report.r_squared:.4f}")
    lines.append("limit ratio: " + ("null" if report.limit_ratio is None else f"{report.limit_ratio:.4f}"))
    lines.extend(report.notes)
    lines.append(f"config digest: {report.config_digest}")
    (outdir / "summary.txt").write_text("\n".join(lines) + "\n")
