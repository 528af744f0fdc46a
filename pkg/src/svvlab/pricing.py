"""Log-price simulation, Monte Carlo calls, Black-Scholes inversion, ATM skew.

The log-price is

    X(t) = x0 + r t - 1/2 int_0^t Y^2 ds + int_0^t Y (rho dB1 + sqrt(1 - rho^2) dB2)

discretized with left-point sums on the volatility grid, reusing the dB1
increments that drive Y. All strikes of one call to :func:`mc_call_price`
or :func:`atm_skew` share one set of paths.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .errors import InvalidArgumentError, NoSolutionError, SkewUndefinedError
from .rng import brownian_increments, check_seed
from .sandwich import SandwichModel, simulate_from_increments
from .volterra import TimeGrid

__all__ = [
    "PriceEstimate",
    "SkewPoint",
    "TerminalSample",
    "bs_call",
    "bs_vega",
    "implied_vol",
    "simulate_log_price",
    "log_prices",
    "terminal_sample",
    "mc_call_price",
    "mc_put_price",
    "atm_skew",
    "write_price_csv",
]

SIGMA_LO, SIGMA_HI = 1e-6, 5.0
IV_TOL = 1e-10
MIN_PATHS = 1000
MIN_SKEW_PATHS = 10000
CHUNK = 20000


@dataclass(frozen=True)
class PriceEstimate:
    strike: float
    maturity: float
    price: float
    stderr: float
    n_paths: int
    checksum: str = ""


@dataclass(frozen=True)
class SkewPoint:
    """ATM skew d sigma_hat / d kappa at kappa = 0 (negative for rho < 0)."""

    tau: float
    atm_skew: float
    stderr: float
    dkappa: float
    n_paths: int = 0
    iv_minus: float = math.nan
    iv_plus: float = math.nan


def _d12(S0, disc_k, vol):
    d1 = (np.log(S0 / disc_k) + 0.5 * vol**2) / vol
    return d1, d1 - vol


def bs_call(S0, K, r, tau, sigma):
    """Black-Scholes call price; vectorized over all arguments.

    In-the-money calls are evaluated as intrinsic value plus the
    out-of-the-money put, so the small time value is not lost to cancellation.
    """
    S0, K, r, tau, sigma = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (S0, K, r, tau, sigma)))
    if np.any(S0 <= 0) or np.any(K <= 0) or np.any(tau <= 0) or np.any(sigma < 0):
        raise InvalidArgumentError("bs_call needs S0, K, tau > 0 and sigma >= 0")
    disc_k = K * np.exp(-r * tau)
    intrinsic = np.maximum(S0 - disc_k, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        d1, d2 = _d12(S0, disc_k, sigma * np.sqrt(tau))
        call = S0 * ndtr(d1) - disc_k * ndtr(d2)
        put = disc_k * ndtr(-d2) - S0 * ndtr(-d1)
        tv = np.where(S0 > disc_k, put, call)
    price = intrinsic + np.where(sigma * np.sqrt(tau) > 0, np.maximum(tv, 0.0), 0.0)
    return float(price) if price.ndim == 0 else price


def _time_value(S0, disc_k, tau, sigma):
    d1, d2 = _d12(S0, disc_k, sigma * math.sqrt(tau))
    if S0 > disc_k:
        return max(disc_k * ndtr(-d2) - S0 * ndtr(-d1), 0.0)
    return max(S0 * ndtr(d1) - disc_k * ndtr(d2), 0.0)


def bs_vega(S0, K, r, tau, sigma):
    vol = sigma * math.sqrt(tau)
    d1 = (math.log(S0 / (K * math.exp(-r * tau))) + 0.5 * vol * vol) / vol
    return S0 * math.sqrt(tau) * math.exp(-0.5 * d1 * d1) / math.sqrt(2 * math.pi)


def implied_vol(price, S0, K, r, tau) -> float:
    """Black-Scholes implied volatility of a call price.

    Bisection on [1e-6, 5] down to 1e-10 in sigma, then one Newton polish.
    The root is sought on the time value (price minus intrinsic), which is
    monotone in sigma and free of the cancellation in deep in-the-money calls.
    Prices on or outside the open no-arbitrage band (intrinsic, S0) raise
    NoSolutionError; nothing is clamped.
    """
    if not (S0 > 0 and K > 0 and tau > 0):
        raise InvalidArgumentError("implied_vol needs S0, K, tau > 0")
    disc_k = K * math.exp(-r * tau)
    lower = max(S0 - disc_k, 0.0)
    if not (lower < price < S0) or not math.isfinite(price):
        raise NoSolutionError(f"price {price!r} outside the open band ({lower!r}, {S0!r})")
    target = price - lower
    lo, hi = SIGMA_LO, SIGMA_HI
    if _time_value(S0, disc_k, tau, lo) > target or _time_value(S0, disc_k, tau, hi) < target:
        raise NoSolutionError(f"price {price!r} not attained for sigma in [{lo}, {hi}]")
    while hi - lo > IV_TOL:
        mid = 0.5 * (lo + hi)
        if _time_value(S0, disc_k, tau, mid) < target:
            lo = mid
        else:
            hi = mid
    sigma = 0.5 * (lo + hi)
    err = _time_value(S0, disc_k, tau, sigma) - target
    vega = bs_vega(S0, K, r, tau, sigma)
    if vega > 0:
        polished = sigma - err / vega
        if SIGMA_LO <= polished <= SIGMA_HI and abs(_time_value(S0, disc_k, tau, polished) - target) <= abs(err):
            sigma = polished
    return sigma


def _tau_model(model: SandwichModel, tau: float) -> SandwichModel:
    """Model restricted to [0, tau] with the same step; paths agree with the
    first steps of full-horizon paths."""
    m = model.grid.index_of(tau)
    if m < 1:
        raise InvalidArgumentError("tau must be a positive grid node")
    if m == model.grid.n:
        return model
    return model.with_grid(TimeGrid(m * model.grid.dt, m))


def log_prices(model: SandwichModel, dB1, dB2, Y) -> np.ndarray:
    """X(tau) per row, tau = number of increments times dt."""
    dt = model.grid.dt
    m = dB1.shape[1]
    rho = model.rho
    Yl = Y[:, :m]
    noise = rho * dB1 + math.sqrt(1 - rho * rho) * dB2
    return model.x0 + model.r * m * dt - 0.5 * dt * np.sum(Yl * Yl, axis=1) + np.sum(Yl * noise, axis=1)


def simulate_log_price(model: SandwichModel, tau: float, seed: int, path_index: int) -> float:
    sub = _tau_model(model, tau)
    dB1, dB2 = brownian_increments(check_seed(seed), [path_index], sub.grid.n, sub.grid.dt)
    paths = simulate_from_increments(sub, dB1, dB2, seed=seed, path_indices=[path_index])
    return float(log_prices(sub, paths.dB1, paths.dB2, paths.Y)[0])


@dataclass(eq=False)
class TerminalSample:
    """Terminal prices S(tau) from one common path set.

    With antithetic pairing, ``S[k]`` and ``S[k + half]`` come from the same
    base increments with opposite signs.
    """

    S: np.ndarray
    tau: float
    discount: float
    antithetic: bool

    @property
    def checksum(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.S).tobytes()).hexdigest()[:16]

    def samples(self, payoff: np.ndarray) -> np.ndarray:
        """Independent discounted samples of a payoff (pair means if antithetic)."""
        g = self.discount * payoff
        if self.antithetic:
            h = g.size // 2
            return 0.5 * (g[:h] + g[h:])
        return g


def terminal_sample(model: SandwichModel, tau: float, n_paths: int, seed: int, antithetic: bool = False) -> TerminalSample:
    if n_paths < MIN_PATHS:
        raise InvalidArgumentError(f"n_paths must be >= {MIN_PATHS}, got {n_paths}")
    seed = check_seed(seed)
    sub = _tau_model(model, tau)
    n_base = n_paths // 2 if antithetic else n_paths
    X = np.empty(2 * n_base if antithetic else n_base)
    for start in range(0, n_base, CHUNK):
        idx = np.arange(start, min(start + CHUNK, n_base))
        dB1, dB2 = brownian_increments(seed, idx, sub.grid.n, sub.grid.dt)
        paths = simulate_from_increments(sub, dB1, dB2, seed=seed, path_indices=idx)
        X[idx] = log_prices(sub, dB1, dB2, paths.Y)
        if antithetic:
            anti = simulate_from_increments(sub, -dB1, -dB2, seed=seed, path_indices=idx)
            X[n_base + idx] = log_prices(sub, -dB1, -dB2, anti.Y)
    return TerminalSample(np.exp(X), float(tau), math.exp(-model.r * tau), antithetic)


def _estimate(sample: TerminalSample, payoff, strike) -> PriceEstimate:
    g = sample.samples(payoff)
    return PriceEstimate(
        float(strike), sample.tau, float(np.mean(g)), float(np.std(g, ddof=1) / math.sqrt(g.size)),
        int(sample.S.size), sample.checksum,
    )


def mc_call_price(model, tau, strikes, n_paths, seed, antithetic=False, sample=None) -> list:
    """Discounted call prices for all strikes from one common path set."""
    strikes = list(np.atleast_1d(strikes))
    if not strikes:
        raise InvalidArgumentError("no strikes given")
    sample = sample or terminal_sample(model, tau, n_paths, seed, antithetic)
    return [_estimate(sample, np.maximum(sample.S - K, 0.0), K) for K in strikes]


def mc_put_price(model, tau, strikes, n_paths, seed, antithetic=False, sample=None) -> list:
    strikes = list(np.atleast_1d(strikes))
    if not strikes:
        raise InvalidArgumentError("no strikes given")
    sample = sample or terminal_sample(model, tau, n_paths, seed, antithetic)
    return [_estimate(sample, np.maximum(K - sample.S, 0.0), K) for K in strikes]


def atm_skew(model: SandwichModel, tau: float, n_paths: int, seed: int, antithetic: bool = False,
             dkappa_factor: float = 0.05) -> SkewPoint:
    """Central finite-difference ATM skew with delta-method standard error.

    Strikes sit at log-moneyness +-dkappa, dkappa = dkappa_factor * sqrt(tau).
    The error bar uses the empirical covariance of the two payoffs, which are
    strongly correlated because the paths are shared.
    """
    if n_paths < MIN_SKEW_PATHS:
        raise InvalidArgumentError(f"atm_skew needs n_paths >= {MIN_SKEW_PATHS}, got {n_paths}")
    if not dkappa_factor > 0:
        raise InvalidArgumentError(f"dkappa_factor must be positive, got {dkappa_factor}")
    dk = dkappa_factor * math.sqrt(tau)
    S0 = math.exp(model.x0)
    fwd = model.x0 + model.r * tau
    k_minus, k_plus = math.exp(fwd - dk), math.exp(fwd + dk)
    sample = terminal_sample(model, tau, n_paths, seed, antithetic)
    g_minus = sample.samples(np.maximum(sample.S - k_minus, 0.0))
    g_plus = sample.samples(np.maximum(sample.S - k_plus, 0.0))
    c_minus, c_plus = float(np.mean(g_minus)), float(np.mean(g_plus))
    try:
        iv_minus = implied_vol(c_minus, S0, k_minus, model.r, tau)
        iv_plus = implied_vol(c_plus, S0, k_plus, model.r, tau)
    except NoSolutionError as exc:
        raise SkewUndefinedError(f"implied volatility undefined at tau={tau}: {exc}") from exc
    skew = (iv_plus - iv_minus) / (2 * dk)
    cov = np.cov(np.stack([g_minus, g_plus])) / g_minus.size
    v_minus = bs_vega(S0, k_minus, model.r, tau, iv_minus)
    v_plus = bs_vega(S0, k_plus, model.r, tau, iv_plus)
    grad = np.array([-1.0 / v_minus, 1.0 / v_plus]) / (2 * dk)
    var = float(grad @ cov @ grad)
    return SkewPoint(float(tau), float(skew), math.sqrt(max(var, 0.0)), dk, int(sample.S.size), iv_minus, iv_plus)


def write_price_csv(estimates, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tau", "strike", "price", "stderr"])
        for e in estimates:
            w.writerow([float(e.maturity), float(e.strike), float(e.price), float(e.stderr)])
