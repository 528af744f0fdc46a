import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from svvlab.errors import InvalidArgumentError, NonConvergenceError
from svvlab.volterra import (
    KernelSpec,
    TabulatedTable,
    TimeGrid,
    _holder_sup,
    cell_weights,
    holder_certificate,
    kernel_eval,
    limit_constant,
    load_tabulated_csv,
    normalized_double_integral,
    weight_matrix,
    write_tabulated_csv,
)

mpmath.mp.dps = 30


def power(alpha, H):
    return KernelSpec.power_sum([alpha], [H])


# ---------------------------------------------------------------- kernel_eval

def test_constant_kernel_value():
    assert kernel_eval(power(1.0, 0.5), 0.7, 0.3) == 1.0


def test_kernel_vanishes_on_diagonal():
    for spec in (power(1.0, 0.1), power(2.0, 0.5), KernelSpec.power_sum([1, 1], [0.1, 0.4])):
        assert kernel_eval(spec, 0.5, 0.5) == 0.0


def test_rough_kernel_value_matches_mpmath():
    expected = float(mpmath.power(mpmath.mpf("0.25"), mpmath.mpf("-0.4")))
    assert kernel_eval(power(1.0, 0.1), 1.0, 0.75) == pytest.approx(expected, rel=1e-14)
    assert expected == pytest.approx(1.7411, abs=1e-4)


def test_volterra_property_on_grid():
    g = TimeGrid(1.0, 16)
    t = g.nodes
    specs = [power(1.0, 0.3), KernelSpec.power_sum([0.5, 1.0], [0.2, 0.7])]
    specs.append(KernelSpec.tabulate(specs[0], g))
    for spec in specs:
        tt, ss = np.meshgrid(t, t, indexing="ij")
        K = kernel_eval(spec, tt, ss)
        assert np.all(K[np.triu_indices(t.size)] == 0.0)


def test_kernel_rejects_non_finite():
    with pytest.raises(InvalidArgumentError):
        kernel_eval(power(1.0, 0.3), math.nan, 0.1)
    with pytest.raises(InvalidArgumentError):
        kernel_eval(power(1.0, 0.3), 1.0, math.inf)


@pytest.mark.parametrize(
    "alphas,hursts",
    [([1.0], [1.2]), ([1.0], [0.0]), ([-1.0], [0.3]), ([1.0, 1.0], [0.4, 0.2]), ([1.0], [0.3, 0.4])],
)
def test_power_sum_invariants(alphas, hursts):
    with pytest.raises(InvalidArgumentError):
        KernelSpec.power_sum(alphas, hursts)


def test_effective_h_is_smallest_exponent():
    assert KernelSpec.power_sum([1, 2, 3], [0.1, 0.3, 0.6]).effective_H == 0.1


# --------------------------------------------------------------- cell weights

def test_constant_kernel_weights_are_one():
    g = TimeGrid(2.0, 10)
    for i in range(1, 11):
        w = cell_weights(power(1.0, 0.5), g, i)
        assert w.shape == (i,)
        np.testing.assert_allclose(w, 1.0, rtol=0, atol=1e-15)


def test_first_cell_weight_matches_quadrature():
    g = TimeGrid(1.0, 10)
    oracle = mpmath.quad(lambda u: (mpmath.mpf("0.1") - u) ** mpmath.mpf("-0.4"), [0, mpmath.mpf("0.1")]) / mpmath.mpf("0.1")
    w = cell_weights(power(1.0, 0.1), g, 1)
    assert w[0] == pytest.approx(float(oracle), rel=1e-13)
    # closed form (dt^0.6 / 0.6) / dt = 0.1^-0.4 / 0.6 = 4.18648
    assert w[0] == pytest.approx(0.1**-0.4 / 0.6, rel=1e-14)
    assert w[0] == pytest.approx(4.18648, abs=1e-5)


@pytest.mark.parametrize("i", [1, 2, 7, 50, 200])
def test_cell_weights_match_quadrature_for_sum_kernel(i):
    spec = KernelSpec.power_sum([0.7, 0.4], [0.15, 0.65])
    g = TimeGrid(1.5, 200)
    w = cell_weights(spec, g, i)
    dt = mpmath.mpf(1.5) / 200
    ti = i * dt

    def K(u):
        return 0.7 * (ti - u) ** mpmath.mpf(-0.35) + 0.4 * (ti - u) ** mpmath.mpf(0.15)

    for j in sorted({0, i // 2, i - 1}):
        oracle = mpmath.quad(K, [j * dt, (j + 1) * dt]) / dt
        assert w[j] == pytest.approx(float(oracle), rel=1e-11)


def test_cell_weights_index_range():
    g = TimeGrid(1.0, 8)
    for bad in (0, 9, -1, 2.5):
        with pytest.raises(InvalidArgumentError):
            cell_weights(power(1.0, 0.3), g, bad)


def test_weight_matrix_rows_are_cell_weights():
    spec = KernelSpec.power_sum([1.0, 0.2], [0.3, 0.8])
    g = TimeGrid(1.0, 32)
    W = weight_matrix(spec, g)
    assert W.shape == (33, 32)
    assert np.all(W[0] == 0)
    for i in (1, 5, 32):
        np.testing.assert_array_equal(W[i, :i], cell_weights(spec, g, i))
        assert np.all(W[i, i:] == 0)


def test_variance_consistency_h03():
    # Var Z(t_n) from the weights vs int_0^T K^2 ds = alpha^2 T^(2H) / (2H)
    H, alpha = 0.3, 0.8
    g = TimeGrid(1.0, 1024)
    w = cell_weights(power(alpha, H), g, g.n)
    exact = alpha**2 / (2 * H)
    assert abs(g.dt * np.sum(w**2) / exact - 1) < 1e-3


@pytest.mark.parametrize("H", [0.1, 0.3])
def test_variance_bias_vanishes_at_rate_2h(H):
    errs = []
    for n in (512, 2048, 8192):
        g = TimeGrid(1.0, n)
        w = cell_weights(power(1.0, H), g, n)
        errs.append(abs(g.dt * np.sum(w**2) * 2 * H - 1))
    rates = [math.log(errs[k] / errs[k + 1]) / math.log(4) for k in range(2)]
    for r in rates:
        assert r == pytest.approx(2 * H, abs=0.05)


def test_variance_exact_for_constant_kernel():
    g = TimeGrid(1.0, 100)
    w = cell_weights(power(1.0, 0.5), g, 100)
    assert g.dt * np.sum(w**2) == pytest.approx(1.0, rel=1e-14)


# ------------------------------------------------------------ tabulated table

def test_tabulated_reproduces_power_weights_for_constant_kernel():
    g = TimeGrid(1.0, 16)
    tab = KernelSpec.tabulate(power(1.0, 0.5), g)
    # off-diagonal cells of a constant kernel are exact; cells touching the
    # diagonal see the forced zero at s = t
    W = weight_matrix(tab, g)
    np.testing.assert_array_equal(W[2:, 0], 1.0)
    assert W[5, 0] == 1.0 and W[5, 4] == 0.5


def test_tabulated_linear_interpolation_in_s():
    g = TimeGrid(1.0, 4)
    t = g.nodes
    values = np.tril(np.add.outer(t, 2 * t), -1)
    spec = KernelSpec.tabulated(TabulatedTable(t, values), 0.5)
    assert kernel_eval(spec, 1.0, 0.125) == pytest.approx(1.0 + 0.25)


def test_tabulated_csv_roundtrip(tmp_path):
    g = TimeGrid(1.0, 8)
    spec = KernelSpec.tabulate(power(1.0, 0.3), g)
    path = tmp_path / "k.csv"
    write_tabulated_csv(spec, path)
    assert path.read_text().splitlines()[0] == "t,s,k"
    back = load_tabulated_csv(path, 0.3)
    np.testing.assert_array_equal(weight_matrix(back, g), weight_matrix(spec, g))


def test_tabulated_csv_missing_entries(tmp_path):
    path = tmp_path / "k.csv"
    path.write_text("t,s,k\n0.5,0.0,1.0\n1.0,0.0,1.0\n")
    with pytest.raises(InvalidArgumentError):
        load_tabulated_csv(path, 0.3)


def test_tabulated_rejects_misaligned_grid():
    spec = KernelSpec.tabulate(power(1.0, 0.3), TimeGrid(1.0, 8))
    with pytest.raises(InvalidArgumentError):
        weight_matrix(spec, TimeGrid(1.0, 12))


# ----------------------------------------------------------- holder certificate

def test_holder_constant_kernel_bounded_by_horizon():
    T = 2.0
    g = TimeGrid(T, 64)
    assert holder_certificate(power(1.0, 0.5), g, 0.49) <= T


def test_holder_stable_under_refinement():
    spec = power(1.0, 0.3)
    c1 = holder_certificate(spec, TimeGrid(1.0, 256), 0.25)
    c2 = holder_certificate(spec, TimeGrid(1.0, 512), 0.25)
    assert 0.5 <= c2 / c1 <= 2.0


def test_holder_tabulated_matches_power_sum():
    spec = power(1.0, 0.3)
    g = TimeGrid(1.0, 256)
    c_pow = holder_certificate(spec, g, 0.25)
    c_tab = holder_certificate(KernelSpec.tabulate(spec, g), g, 0.25)
    assert abs(c_tab / c_pow - 1) < 0.10


def test_holder_lambda_must_be_below_h():
    g = TimeGrid(1.0, 32)
    for lam in (0.3, 0.5, 0.0, -0.1):
        with pytest.raises(InvalidArgumentError):
            holder_certificate(power(1.0, 0.3), g, lam)


def test_holder_sup_explodes_above_threshold():
    # the increment integral of a power kernel scales as |dt|^(2H), so the
    # ratio grows like 2^(lambda - 2H) per grid halving once lambda > 2H
    spec = power(1.0, 0.1)
    vals = [_holder_sup(spec, TimeGrid(1.0, n), 0.9) for n in (64, 128, 256)]
    assert vals[1] / vals[0] >= 1.5 and vals[2] / vals[1] >= 1.5


@pytest.mark.parametrize("H,lam", [(0.3, 0.5), (0.2, 0.35), (0.1, 0.9)])
def test_holder_sup_scales_like_dt_power(H, lam):
    spec = power(1.0, H)
    a = _holder_sup(spec, TimeGrid(1.0, 128), lam)
    b = _holder_sup(spec, TimeGrid(1.0, 256), lam)
    growth = math.log2(b / a)
    assert growth == pytest.approx(max(lam - 2 * H, 0.0), abs=0.05)


# ------------------------------------------------------------- limit constant

def _mp_normalized(alpha, H, tau):
    tau = mpmath.mpf(tau)
    p = mpmath.mpf(H) - mpmath.mpf("0.5")
    # inner integral over the lag u = t - s keeps the singularity at a fixed endpoint
    inner = lambda s: mpmath.quad(lambda u: u**p, [0, tau - s])  # noqa: E731
    return alpha * mpmath.quad(inner, [0, tau]) / tau ** (mpmath.mpf("1.5") + H)


@pytest.mark.parametrize("H,expected", [(0.1, 1 / (0.6 * 1.6)), (0.5, 0.5), (0.3, 1 / (0.8 * 1.8))])
def test_limit_constant_closed_form(H, expected):
    assert limit_constant(power(1.0, H)) == pytest.approx(expected, rel=1e-15)


@pytest.mark.parametrize("H", [0.1, 0.3, 0.5])
def test_limit_constant_vs_double_quadrature(H):
    oracle = float(_mp_normalized(1.0, H, 2.0**-12))
    assert abs(limit_constant(power(1.0, H)) / oracle - 1) < 1e-6
    assert abs(normalized_double_integral(power(1.0, H), 2.0**-12) / oracle - 1) < 1e-6


def test_limit_constant_multi_term_keeps_roughest():
    spec = KernelSpec.power_sum([1.0, 1.0], [0.1, 0.4])
    assert limit_constant(spec) == pytest.approx(1.041667, abs=1e-6)
    tau = 2.0**-12
    oracle = float(_mp_normalized(1.0, 0.1, tau) + _mp_normalized(1.0, 0.4, tau) * mpmath.mpf(tau) ** 0.3)
    assert normalized_double_integral(spec, tau) == pytest.approx(oracle, rel=1e-9)
    # the excess over the limit is exactly the smoother term, which vanishes as tau -> 0
    taus = [2.0**-m for m in (4, 8, 12, 16)]
    gaps = [normalized_double_integral(spec, t) - limit_constant(spec) for t in taus]
    assert all(a > b > 0 for a, b in zip(gaps, gaps[1:]))


@pytest.mark.parametrize("H", [0.1, 0.3, 0.5])
def test_limit_constant_tabulated_extrapolation(H):
    spec = power(1.0, H)
    tab = KernelSpec.tabulate(spec, TimeGrid(1.0, 1024))
    assert abs(limit_constant(tab) / limit_constant(spec) - 1) < 0.01


def test_limit_constant_tabulated_too_coarse():
    tab = KernelSpec.tabulate(power(1.0, 0.3), TimeGrid(1.0, 64))
    with pytest.raises(NonConvergenceError):
        limit_constant(tab)


# -------------------------------------------------------------- properties

@settings(max_examples=40, deadline=None)
@given(
    H=st.floats(0.05, 0.95),
    alpha=st.floats(0.01, 10.0),
    n=st.integers(2, 64),
)
def test_cell_weights_integrate_kernel(H, alpha, n):
    # sum of cell integrals = int_0^T K(T, u) du in closed form
    spec = power(alpha, H)
    g = TimeGrid(1.0, n)
    w = cell_weights(spec, g, n)
    assert g.dt * w.sum() == pytest.approx(alpha / (H + 0.5), rel=1e-11)
    assert np.all(w > 0)
