import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from cyclelab.errors import Degenerate, EveryPointFixed, NoFixedPoint, NoRoot, OutOfRegime, SpecViolation
from cyclelab.quotient import (
    IDENTITY,
    AffineMap1D,
    CycleCentralData,
    InequalityReport,
    biaccumulation_alignment,
    closed_form_exponent,
    closing_residual,
    compose,
    compose_all,
    constant_check,
    corbd_solve,
    fixed_point,
    franks_rescale_factor,
    multiplier_closed_form,
    nu_for_fixed_point,
    nu_table,
    power,
    return_map,
    scalar_checks,
    solved_multiplier,
    theta_bound,
)

HALF = CycleCentralData(lam=0.5, beta=2.0, tau=1)
affine = st.builds(AffineMap1D, st.floats(-4, 4), st.floats(-4, 4))


def test_compose_examples():
    assert compose(AffineMap1D(2, 0), AffineMap1D(1, 0)) == AffineMap1D(2, 0)
    assert compose(AffineMap1D(-1, 0), AffineMap1D(-1, 0)) == AffineMap1D(1, 0)
    f = compose_all([AffineMap1D(-1, 0), AffineMap1D(0.125, 0), AffineMap1D(1, 0.1875), AffineMap1D(16, 0)])
    assert (f.slope, f.intercept) == (-2.0, 3.0)


@given(affine, affine, affine, st.floats(-10, 10))
def test_compose_associative(f, g, h, x):
    a = compose(f, compose(g, h))
    b = compose(compose(f, g), h)
    assert a(x) == pytest.approx(b(x), rel=1e-12, abs=1e-9)
    assert compose(f, IDENTITY) == f and compose(IDENTITY, f) == f


@given(affine)
def test_fixed_point_formula(f):
    assume(abs(f.slope - 1.0) > 1e-3)
    x = fixed_point(f)
    assert x == pytest.approx(f.intercept / (1 - f.slope))
    assert f(x) == pytest.approx(x, abs=1e-9 * max(1.0, abs(x)))


def test_fixed_point_examples():
    assert fixed_point(AffineMap1D(-2, 3)) == 1.0
    assert fixed_point(AffineMap1D(0.5, 0)) == 0.0
    with pytest.raises(NoFixedPoint):
        fixed_point(AffineMap1D(1, 0.3))
    with pytest.raises(EveryPointFixed):
        fixed_point(AffineMap1D(1, 0))


def test_power_matches_repeated_composition():
    f = AffineMap1D(-1.5, 0.25)
    g = IDENTITY
    for _ in range(7):
        g = compose(f, g)
    assert power(f, 7).slope == pytest.approx(g.slope)
    assert power(f, 7).intercept == pytest.approx(g.intercept)


def test_data_validation():
    with pytest.raises(SpecViolation):
        CycleCentralData(lam=1.2)
    with pytest.raises(SpecViolation):
        CycleCentralData(tau=0)
    with pytest.raises(SpecViolation):
        CycleCentralData(lam=0.5, regime=True)
    assert CycleCentralData(lam=0.95, regime=True).lam == 0.95


def _nu_oracle(data, l, m):
    # root of beta^m (-tau lam^l + nu) - 1 found by bracketing
    g = lambda nu: data.beta ** m * (-data.tau * data.lam ** l + nu) - 1.0
    return brentq(g, -10, 10, xtol=1e-15)


@pytest.mark.parametrize("tau,expected", [(1, 0.1875), (-1, -0.0625)])
def test_nu_examples(tau, expected):
    data = CycleCentralData(lam=0.5, beta=2.0, tau=tau)
    sol = nu_for_fixed_point(data, 3, 4)
    assert sol.nu == pytest.approx(expected, abs=1e-15)
    assert sol.nu == pytest.approx(_nu_oracle(data, 3, 4), abs=1e-12)
    assert sol.period == 11


def test_nu_trivial_and_period():
    assert nu_for_fixed_point(CycleCentralData(lam=0.3, beta=3.0), 0, 0).nu == 2.0
    d = CycleCentralData(pi_a=3, pi_b=2, t_ab=4, t_ba=5)
    assert nu_for_fixed_point(d, 2, 3).period == 3 * 2 + 2 * 3 + 4 + 5


def test_return_map_examples():
    f = return_map(HALF, 0.1875, 3, 4)
    assert (f.slope, f.intercept) == (-2.0, 3.0)
    assert fixed_point(f) == 1.0
    rev = CycleCentralData(lam=0.5, beta=2.0, tau=-1)
    assert return_map(rev, 0.0, 0, 0) == AffineMap1D(1.0, 0.0)
    g = return_map(HALF, 0.0, 1, 1)
    assert (g.slope, g.intercept) == (-1.0, 0.0)


@settings(max_examples=200)
@given(st.sampled_from([0.3, 0.5, 0.7, 0.9, 0.95, 0.99]), st.sampled_from([1.05, 1.2, 2.0, 3.0]),
       st.sampled_from([1, -1]), st.integers(1, 40), st.integers(1, 40))
def test_nu_residual_property(lam, beta, tau, l, m):
    data = CycleCentralData(lam=lam, beta=beta, tau=tau)
    sol = nu_for_fixed_point(data, l, m)
    f = return_map(data, sol.nu, l, m)
    assume(abs(abs(f.slope) - 1.0) > 1e-9)
    assert closing_residual(data, sol) < 1e-12
    assert abs(fixed_point(f) - 1.0) < 1e-10
    assert f.slope == pytest.approx(-tau * beta ** m * lam ** l, rel=1e-12)
    assert abs(sol.multiplier) == pytest.approx(beta ** m * lam ** l, rel=1e-12)


def _corbd_oracle(lam, k, outer, inner):
    g = lambda b: b ** outer * (lam ** (k - 2) - lam ** k + b ** (-inner)) - 1.0
    # the larger root: scan down from the top of the bracket
    grid = [1.0 + 1e-9 + i * (63.0 / 20000) for i in range(20001)]
    for hi, lo in zip(reversed(grid), reversed(grid[:-1])):
        if g(lo) < 0 < g(hi):
            return brentq(g, lo, hi, xtol=1e-15)
    raise AssertionError("oracle found no root")


def test_corbd_example_digits():
    sol = corbd_solve(HALF, 4, 2, 6, "preserving")
    assert sol.beta_bar == pytest.approx(_corbd_oracle(0.5, 4, 2, 6), abs=1e-12)
    assert sol.beta_bar == pytest.approx(2.2651121672726737, abs=1e-12)
    assert sol.xi_offset == pytest.approx(sol.beta_bar ** -6, rel=1e-14)
    assert sol.xi_offset == pytest.approx(0.0074, abs=5e-5)
    assert sol.nu_k == pytest.approx(0.25 + sol.xi_offset)
    assert max(sol.residual_1, sol.residual_2) < 1e-10


def test_corbd_reversing_symmetry():
    pres = corbd_solve(HALF, 4, 2, 6, "preserving")
    rev = corbd_solve(HALF, 4, 6, 2, "reversing")
    assert rev.beta_bar == pytest.approx(pres.beta_bar, abs=1e-12)
    assert rev.xi_offset == pytest.approx(rev.beta_bar ** -6)
    assert rev.nu_k == pytest.approx(-0.0625 + rev.xi_offset)
    assert max(rev.residual_1, rev.residual_2) < 1e-10


def test_corbd_large_q_limit():
    sol = corbd_solve(HALF, 4, 2, 60, "preserving")
    assert sol.beta_bar == pytest.approx(0.1875 ** -0.5, abs=1e-6)


def test_corbd_errors():
    with pytest.raises(ValueError):
        corbd_solve(HALF, 5, 2, 6)
    with pytest.raises(ValueError):
        corbd_solve(HALF, 4, 6, 2, "preserving")
    with pytest.raises(Degenerate):
        corbd_solve(CycleCentralData(lam=1e-170, beta=2.0), 4, 2, 6)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from([0.5, 0.95]), st.sampled_from([4, 6, 8]), st.integers(1, 4), st.integers(1, 5),
       st.sampled_from(["preserving", "reversing"]))
def test_corbd_closed_form_property(lam, k, small, extra, orient):
    data = CycleCentralData(lam=lam, beta=2.0)
    p, q = (small, small + extra) if orient == "preserving" else (small + extra, small)
    try:
        sol = corbd_solve(data, k, p, q, orient)
    except NoRoot:
        # short corridors can leave the closing residual positive everywhere
        outer, inner = (p, q) if orient == "preserving" else (q, p)
        gap = lam ** (k - 2) - lam ** k
        grid = np.geomspace(1 + 1e-9, 64.0, 200001)
        assert np.min(grid ** outer * gap + grid ** (outer - inner) - 1) > 0
        return
    assert max(sol.residual_1, sol.residual_2) < 1e-10
    m = closed_form_exponent(sol)
    assume(sol.beta_bar ** m * sol.xi_offset < 1)
    closed = multiplier_closed_form(lam, sol.beta_bar, sol.xi_offset, m, orient)
    assert abs(solved_multiplier(sol, lam) - closed) < 1e-9
    if sol.beta_bar ** m * sol.xi_offset <= 0.5:
        theta = theta_bound(lam, orient)
        assert 1 / theta < solved_multiplier(sol, lam) < theta


def test_multiplier_closed_form_examples():
    assert multiplier_closed_form(0.5, 1.0, 0.0, 0, "preserving") == pytest.approx(1 / 3, abs=1e-15)
    assert multiplier_closed_form(0.5, 1.0, 0.0, 0, "reversing") == pytest.approx(4 / 3, abs=1e-15)
    sol = corbd_solve(HALF, 4, 2, 6, "preserving")
    v = multiplier_closed_form(0.5, sol.beta_bar, sol.xi_offset, 2, "preserving")
    assert v == pytest.approx((1 - sol.beta_bar ** -4) / 3, rel=1e-12)
    assert v == pytest.approx(sol.beta_bar ** 2 * 0.5 ** 4, abs=1e-9)
    assert v == pytest.approx(0.3207, abs=1e-4)
    with pytest.raises(OutOfRegime):
        multiplier_closed_form(0.5, 2.0, 0.5, 1, "preserving")


def test_theta_examples():
    assert theta_bound(0.5, "preserving") == pytest.approx(6.0)
    assert theta_bound(0.95, "preserving") == pytest.approx(2 * 0.9025 / 0.0975, rel=1e-12)
    assert theta_bound(0.95, "preserving") == pytest.approx(18.513, abs=1e-3)
    assert theta_bound(1 / math.sqrt(2), "preserving") == pytest.approx(2.0)


def test_franks_examples():
    assert franks_rescale_factor(2.0, 11, 0.05) == pytest.approx(1.05 * 2 ** (-1 / 11))
    assert franks_rescale_factor(2.0, 11, 0.05) == pytest.approx(0.98592, abs=5e-5)
    assert franks_rescale_factor(1.0, 17, 0.0) == 1.0
    assert franks_rescale_factor(9.2564, 1000, 0.01) == pytest.approx(1.00775, abs=1e-5)


@given(st.floats(0.01, 100), st.integers(1, 500), st.floats(0, 1))
def test_franks_rescaled_multiplier(mult, period, eps):
    f = franks_rescale_factor(mult, period, eps)
    assert period * math.log(f) + math.log(mult) == pytest.approx(period * math.log1p(eps), abs=1e-9)


def test_alignment_examples():
    assert biaccumulation_alignment(0.5, -1, 5) == pytest.approx(0.05)
    assert biaccumulation_alignment(0.7, -0.7, 9) == pytest.approx(0.0, abs=1e-16)
    assert biaccumulation_alignment(0.95, -0.5, 10) == pytest.approx(-0.04275)


@given(st.floats(0.3, 0.99), st.floats(-1, 1), st.integers(1, 60))
def test_alignment_identity(lam, z, k):
    t = biaccumulation_alignment(lam, z, k)
    assert lam ** k * z + k * lam ** (k - 1) * t == pytest.approx(-lam ** (k + 1), abs=1e-14)


def test_inequality_report_strict():
    assert not InequalityReport.less("x", 1.0, 1.0).holds
    assert InequalityReport.less("x", 1.0, 1.0 + 2 ** -52).holds


def test_constant_check_values():
    rep = constant_check(CycleCentralData(), 320)
    assert rep.holds and rep.lhs == pytest.approx(311.93, abs=5e-3)
    assert not constant_check(CycleCentralData(), 100).holds


def test_scalar_checks_examples():
    d = CycleCentralData()
    reps = {r.name: r for r in scalar_checks(d, 320, math.log(1.2), 17, 5, 4)}
    assert reps["C_constant"].holds
    assert reps["fraction"].lhs == pytest.approx(1 - 320 * math.log(1.2))
    assert reps["fraction"].lhs < 0 and reps["fraction"].holds
    pure = {r.name: r for r in scalar_checks(d, 320, 0.01, 0, 1, 0)}
    assert pure["fraction"].lhs == pytest.approx(1 - 3.2) and pure["fraction"].rhs == 1.0
    with pytest.raises(ValueError):
        scalar_checks(d, 320, 0.0, 1, 1, 4)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.05, 0.999), st.floats(1.001, 5.0), st.sampled_from([1, -1]),
       st.integers(0, 60), st.integers(0, 60))
def test_nu_table_matches_scalar_path(lam, beta, tau, l0, m0):
    data = CycleCentralData(lam=lam, beta=beta, tau=tau)
    ls, ms = range(l0, l0 + 5), range(m0, m0 + 5)
    table = nu_table(data, ls, ms)
    for i, l in enumerate(ls):
        for j, m in enumerate(ms):
            sol = nu_for_fixed_point(data, l, m)
            rm = return_map(data, sol.nu, l, m)
            assert (table.nu[i, j], table.nu_lo[i, j]) == (sol.nu, sol.nu_lo)
            assert (table.multiplier[i, j], table.intercept[i, j]) == (rm.slope, rm.intercept)
            assert table.period[i, j] == sol.period
            exact = closing_residual(data, sol)
            assert abs(table.residual[i, j] - exact) <= 1e-28 + 1e-12 * exact
