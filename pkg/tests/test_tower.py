import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cyclelab.errors import BoundViolated, Infeasible, NonPositive, TowerRejected
from cyclelab.tower import (
    Tower,
    TowerConfig,
    _point_distance,
    anchored_level1,
    b_saddle,
    brute_force_certificate,
    build_tower,
    candidate_pairs,
    first_orbit_checks,
    init_tower,
    kappa_product,
    kappa_tail,
    projection_chain,
    r_sequence,
    rebuild_tower,
    search_first,
    support_bound,
    verify_good_approx,
)


# ------------------------------------------------------------ default tower

def test_default_tower_shape(default_tower):
    assert [(lv.l, lv.m, lv.period) for lv in default_tower.levels] == [
        (17, 5, 26), (2, 3, 84), (3, 18, 1519), (151, 111, 168764)]


def test_default_tower_conditions(default_tower):
    tw, C = default_tower, default_tower.config.C
    lvs = tw.levels
    for prev, lv in zip(lvs, lvs[1:]):
        assert lv.period > prev.period
        assert 0 < lv.chi < 0.5 * prev.chi
        assert lv.certificate.passed
        assert prev.kappa == lv.certificate.kappa
        assert prev.kappa >= 1 - C * prev.chi
        assert prev.gamma == lv.certificate.gamma
        assert prev.gamma < tw.gamma_ceiling(prev.n)
        assert abs(lv.sigma) > 1
    for lv in lvs:
        assert lv.chi <= lvs[0].chi * 0.5 ** (lv.n - 1)
        cert = lv.certificate
        assert cert.fiber_count == cert.included_blocks
        assert int(np.count_nonzero(cert.projection() >= 0)) == cert.fiber_count * cert.parent_period
        assert cert.kappa == cert.included_blocks * cert.parent_period / cert.child_period
        assert all(r.holds for r in lv.reports)
    assert lvs[-1].gamma is None and lvs[-1].kappa is None


def test_level1_against_b_saddle(default_tower):
    # the B saddle sits at the chart centre, so the whole B phase shadows it
    cert = default_tower.level(1).certificate
    assert cert.parent_period == 1 and cert.included_blocks == default_tower.level(1).m
    assert cert.gamma_measured < default_tower.system.spec.chart_radius * 2


@pytest.mark.parametrize("n", [1, 2, 3])
def test_certificate_matches_brute_force(default_tower, n):
    lv = default_tower.level(n)
    parent = default_tower.base if n == 1 else default_tower.level(n - 1).orbit
    cert = lv.certificate
    assert lv.period <= 10 ** 4
    included, gm = brute_force_certificate(lv.orbit, parent, cert.gamma)
    assert included == cert.included
    assert gm == pytest.approx(cert.gamma_measured, rel=1e-9, abs=1e-300)


def test_gamma_zero_empties_certificate(default_tower):
    child, parent = default_tower.level(2).orbit, default_tower.level(1).orbit
    cert = verify_good_approx(child, parent, 0.0)
    assert cert.included_blocks == 0 and cert.kappa == 0.0
    assert not (cert.gamma_bound_ok or cert.kappa_ok or cert.fibers_equal)


def test_projection_chain_shadows(default_tower):
    tw = default_tower
    r = r_sequence(tw)
    for m, n in [(3, 1), (3, 2), (4, 2)]:
        chain = projection_chain(tw, m, n)
        Xm, Xn = tw.level(m).orbit, tw.level(n).orbit
        good = np.nonzero(chain >= 0)[0]
        assert len(good) == math.prod(tw.level(k).certificate.included_blocks for k in range(n + 1, m + 1)) * Xn.period
        cm, cn = Xm.points(), Xn.points()
        for i in good[:: max(1, len(good) // 300)]:
            p = (cm.charts[i], cm.comps[i], cm.xs[i], cm.xu[i])
            j = chain[i]
            q = (cn.charts[j], cn.comps[j], cn.xs[j], cn.xu[j])
            assert _point_distance(Xm, p, q) <= r[n - 1]


def test_rebuild_reproduces(default_tower):
    recs = [{"l": lv.l, "m": lv.m, "exit_offset": lv.exit_offset} for lv in default_tower.levels]
    again = rebuild_tower(default_tower.system, default_tower.config, recs)
    for a, b in zip(default_tower.levels, again.levels):
        assert (a.period, a.sigma, a.chi, a.d, a.gamma, a.kappa) == (b.period, b.sigma, b.chi, b.d, b.gamma, b.kappa)


# ------------------------------------------------------------ search

def test_extend_choice_is_first_admissible(default_tower):
    """Independent enumeration of the analytic tests for level 2."""
    tw = default_tower
    lam, P = tw.system.data.lam, tw.level(1).orbit
    C, h = tw.config.C, tw.config.halving_ratio
    need = max(1 - C * tw.level(1).chi, 0.0)
    found = []
    for m in range(2, 40):
        for l in range(0, 400):
            per = m * P.period + l + 4
            ls = m * math.log(abs(P.sigma)) + l * math.log(lam)
            if ls > 0 and ls / per < h * tw.level(1).chi and (m - 1) * P.period / per >= need:
                found.append((m, l))
    assert found
    assert next(iter(candidate_pairs(Tower(tw.system, tw.config, tw.base, tw.levels[:1]))))[:2] == found[0]
    assert (tw.level(2).m, tw.level(2).l) in found


def test_search_first_passes_scalar_tests(default_system):
    cfg = TowerConfig(first_l=None, first_m=None)
    l, m = search_first(default_system, cfg)
    orb = anchored_level1(default_system, l, m)
    assert all(r.holds for r in first_orbit_checks(default_system, cfg, orb))
    assert init_tower(default_system, cfg).level(1).l == l


def test_minimize_period_not_longer(default_system, default_tower):
    tw = build_tower(default_system, TowerConfig(minimize_period=True), levels=2)
    assert tw.level(2).period <= default_tower.level(2).period


def test_infeasible_with_tiny_m_budget(default_system):
    with pytest.raises(Infeasible) as exc:
        build_tower(default_system, TowerConfig(m_max=1), levels=2)
    ledger = exc.value.ledger
    assert ledger["level"] == 2 and ledger["fraction_margin"] < 0


def test_rejections(default_system):
    with pytest.raises(TowerRejected, match="first_exponent_halving"):
        init_tower(default_system, TowerConfig(), first=b_saddle(default_system))
    with pytest.raises(TowerRejected, match="311.93"):
        init_tower(default_system, TowerConfig(C=100.0))
    with pytest.raises(TowerRejected):
        init_tower(default_system, TowerConfig(halving_ratio=1.0))


# ------------------------------------------------------------ sequences on synthetic towers

def fake_tower(kappas, gammas, ds, chi_top, C=320.0, h=0.5):
    n = len(ds)
    levels = [SimpleNamespace(n=i + 1, kappa=(kappas[i] if i < n - 1 else None),
                              gamma=(gammas[i] if i < n - 1 else None), d=ds[i],
                              chi=(chi_top if i == n - 1 else 1.0)) for i in range(n)]
    cfg = TowerConfig(C=C, halving_ratio=h)
    tw = Tower(None, cfg, None, levels)
    tw.level = lambda k: levels[k - 1]
    return tw


def test_kappa_product_examples():
    tw = fake_tower([0.9], [1e-9], [1.0, 1.0], chi_top=1e-4)
    tail = kappa_tail(tw)
    assert tail == pytest.approx(math.prod(1 - 320 * 1e-4 * 0.5 ** j for j in range(80)), rel=1e-14)
    assert kappa_product(tw, 1).value == pytest.approx(0.9 * tail)
    assert kappa_product(tw, 2).value == tail
    tw = fake_tower([0.902, 0.951, 0.9755], [0, 0, 0], [1.0] * 4, chi_top=0.0245 / 320 / 2)
    # deficits 0.098 * 2^-k continue geometrically past the top level
    oracle = math.prod(1 - 0.098 * 0.5 ** k for k in range(90))
    assert kappa_product(tw, 1).value == pytest.approx(oracle, rel=1e-12)
    assert 0.81 < oracle < 0.82
    with pytest.raises(NonPositive):
        kappa_product(fake_tower([0.0], [0], [1, 1], 1e-4), 1)
    with pytest.raises(NonPositive):
        kappa_tail(fake_tower([0.9], [0], [1, 1], 1.0 / 320))


def test_r_sequence_extremal_schedule():
    d, n = 0.3, 6
    tw = fake_tower([0.9] * (n - 1), [d / (3 * 2 ** k) for k in range(1, n)], [d] * n, 1e-6)
    # equality in every ceiling puts r_1 on the boundary d_1/3
    r = r_sequence(tw, check=False)
    for k in range(1, n + 1):
        assert r[k - 1] == pytest.approx(d * 2.0 ** (1 - k) / 3, rel=1e-15)
    with pytest.raises(BoundViolated):
        r_sequence(tw)
    single = fake_tower([], [], [d], 1e-6)
    assert r_sequence(single, check=False) == [d / 3]
    bad = fake_tower([0.9], [d / 3], [d, d], 1e-6)
    with pytest.raises(BoundViolated):
        r_sequence(bad)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(1e-6, 1.0), min_size=1, max_size=8), st.data())
def test_condition4_implies_ball_separation(ds, data):
    n = len(ds)
    gammas = []
    for k in range(1, n):
        ceil = min(ds[:k]) / (3 * 2 ** k)
        gammas.append(ceil * data.draw(st.floats(0.0, 1.0, exclude_max=True)))
    r = r_sequence(fake_tower([0.9] * (n - 1), gammas, ds, 1e-6), check=False)
    for k in range(1, n + 1):
        assert r[k - 1] <= ds[k - 1] * 2.0 ** (1 - k) / 3 * (1 + 1e-12)


# ------------------------------------------------------------ support

@pytest.mark.parametrize("n", [1, 2, 3])
def test_support_bounds(default_tower, n):
    for m in range(n + 1, default_tower.top.n + 1):
        sb = support_bound(default_tower, n, m)
        assert sb.ball_count == default_tower.level(n).period
        assert sb.margin >= 0
        assert sb.min_points / default_tower.level(m).period >= sb.measure_lower_bound * (1 - 1e-12)


def test_support_bound_full_shadow_is_exact(default_tower):
    sb = support_bound(default_tower, 1, 2)
    kap = default_tower.level(1).kappa
    assert sb.measure_lower_bound == pytest.approx(kap / default_tower.level(1).period)
    assert sb.required_points == default_tower.level(2).certificate.included_blocks
