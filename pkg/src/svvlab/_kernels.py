"""Compiled per-path kernels.

Every routine processes paths independently and in a fixed arithmetic order,
so a path's output does not depend on which other paths share the batch or on
how numba schedules the prange iterations.
"""

import numpy as np
from numba import njit, prange

STEP_TOL = 1e-12
MAX_ITER = 200

OK = 0
BRACKET_FAILURE = 1
NO_CONVERGENCE = 2


@njit(cache=True)
def drift_terms(y, phi, psi, th1, th2, g1, g2, a0, a1, lower_on, upper_on):
    b = a0 + a1 * y
    by = a1
    byy = 0.0
    if lower_on:
        d = y - phi
        q = th1 / d**g1
        b += q
        by -= g1 * q / d
        byy += g1 * (g1 + 1.0) * q / (d * d)
    if upper_on:
        e = psi - y
        q = th2 / e**g2
        b -= q
        by -= g2 * q / e
        byy -= g2 * (g2 + 1.0) * q / (e * e)
    return b, by, byy


@njit(cache=True)
def _residual(y, c, dt, phi, psi, th1, th2, g1, g2, a0, a1, lower_on, upper_on):
    b, by, _ = drift_terms(y, phi, psi, th1, th2, g1, g2, a0, a1, lower_on, upper_on)
    return y - dt * b - c, 1.0 - dt * by


@njit(cache=True)
def solve_step(c, guess, dt, phi, psi, th1, th2, g1, g2, a0, a1, lower_on, upper_on):
    """Root of y - dt*b(y) - c on the band; returns (root, status)."""
    if not lower_on and not upper_on:
        return (c + dt * a0) / (1.0 - dt * a1), OK
    if lower_on:
        lo = phi
    else:
        w = 1.0
        lo = min(c, psi) - w
        while _residual(lo, c, dt, phi, psi, th1, th2, g1, g2, a0, a1, lower_on, upper_on)[0] >= 0.0:
            w *= 2.0
            lo = min(c, psi) - w
            if w > 1e300:
                return np.nan, BRACKET_FAILURE
    if upper_on:
        hi = psi
    else:
        w = 1.0
        hi = max(c, phi) + w
        while _residual(hi, c, dt, phi, psi, th1, th2, g1, g2, a0, a1, lower_on, upper_on)[0] <= 0.0:
            w *= 2.0
            hi = max(c, phi) + w
            if w > 1e300:
                return np.nan, BRACKET_FAILURE
    if not hi - lo > 1e-14:
        return np.nan, BRACKET_FAILURE

    y = guess
    if not (lo < y < hi):
        y = 0.5 * (lo + hi)
    converged = False
    for _ in range(MAX_ITER):
        g, dg = _residual(y, c, dt, phi, psi, th1, th2, g1, g2, a0, a1, lower_on, upper_on)
        if g == 0.0:
            converged = True
            break
        if g > 0.0:
            hi = y
        else:
            lo = y
        nxt = y - g / dg
        if not (lo < nxt < hi):
            nxt = 0.5 * (lo + hi)
        if abs(nxt - y) <= STEP_TOL or hi - lo <= STEP_TOL:
            y = nxt
            converged = True
            break
        y = nxt
    if not converged:
        return y, NO_CONVERGENCE
    # one Newton polish, kept only if it stays strictly inside the bracket
    g, dg = _residual(y, c, dt, phi, psi, th1, th2, g1, g2, a0, a1, lower_on, upper_on)
    if g != 0.0:
        nxt = y - g / dg
        lo_b = phi if lower_on else -np.inf
        hi_b = psi if upper_on else np.inf
        if lo_b < nxt < hi_b and np.isfinite(nxt):
            y = nxt
    if (lower_on and not y > phi) or (upper_on and not y < psi):
        return y, BRACKET_FAILURE
    return y, OK


@njit(cache=True, parallel=True)
def simulate_batch(dB, Wt, y0, dt, phi, psi, th1, th2, g1, g2, a0, a1, lower_on, upper_on):
    """Volterra convolution plus drift-implicit Euler for each row of ``dB``.

    ``Wt`` is the transposed weight matrix, shape (n, n+1). Returns Z, Y,
    b'_y along Y, and a per-path failure step (-1 when the path succeeded).
    """
    P, n = dB.shape
    Z = np.zeros((P, n + 1))
    Y = np.empty((P, n + 1))
    bp = np.empty((P, n + 1))
    fail = np.full(P, -1, dtype=np.int64)
    for p in prange(P):
        z = Z[p]
        for j in range(n):
            x = dB[p, j]
            wj = Wt[j]
            for i in range(j + 1, n + 1):
                z[i] += wj[i] * x
        Y[p, 0] = y0
        _, by, _ = drift_terms(y0, phi[0], psi[0], th1[0], th2[0], g1, g2, a0, a1, lower_on, upper_on)
        bp[p, 0] = by
        drift_sum = 0.0
        for i in range(1, n + 1):
            c = (y0 + drift_sum) + z[i]
            guess = Y[p, i - 1] + (z[i] - z[i - 1])
            y, status = solve_step(c, guess, dt, phi[i], psi[i], th1[i], th2[i], g1, g2, a0, a1, lower_on, upper_on)
            if status != OK:
                fail[p] = i
                for k in range(i, n + 1):
                    Y[p, k] = np.nan
                    bp[p, k] = np.nan
                break
            Y[p, i] = y
            b, by, _ = drift_terms(y, phi[i], psi[i], th1[i], th2[i], g1, g2, a0, a1, lower_on, upper_on)
            bp[p, i] = by
            drift_sum += dt * b
    return Z, Y, bp, fail


@njit(cache=True)
def first_field_rows(W, bp, dt):
    """D[i, j] = W[i, j] + R[i, j] with R propagated row by row.

    R[i, j] = P_i (R[i-1, j] + dt b'_i W[i, j]), P_i = 1 / (1 - dt b'_i),
    which is the integral term of the first Malliavin derivative evaluated
    with the scheme-consistent discrete exponential.
    """
    n1, n = W.shape
    D = np.zeros((n1, n))
    R = np.zeros(n)
    for i in range(1, n1):
        Pi = 1.0 / (1.0 - dt * bp[i])
        f = dt * bp[i]
        for j in range(i):
            R[j] = Pi * (R[j] + f * W[i, j])
            D[i, j] = W[i, j] + R[j]
    return D


@njit(cache=True, parallel=True)
def field_square_sums(W, BP, dt):
    """Sum over paths of D[i, j]^2 for a batch of paths sharing one grid.

    Paths are accumulated in batch order for every entry, so the result does
    not depend on thread scheduling.
    """
    n1, n = W.shape
    P = BP.shape[0]
    out = np.zeros((n1, n))
    R = np.zeros((n, P))
    Pi = np.empty(P)
    f = np.empty(P)
    for i in range(1, n1):
        for p in range(P):
            Pi[p] = 1.0 / (1.0 - dt * BP[p, i])
            f[p] = dt * BP[p, i]
        for j in prange(i):
            w = W[i, j]
            r = R[j]
            acc = 0.0
            for p in range(P):
                r[p] = Pi[p] * (r[p] + f[p] * w)
                d = w + r[p]
                acc += d * d
            out[i, j] = acc
    return out
