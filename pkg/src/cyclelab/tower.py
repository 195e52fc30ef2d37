"""Inductive construction of periodic orbits with halving central exponents.

Level 1 is an orbit that leaves B, visits A and comes back.  Level n+1 repeats
level n m times, then visits A for l periods and returns.  Every level carries
a certificate that it shadows its parent on whole repetition blocks.

Indexing: ``levels[i].certificate`` compares X_n with X_{n-1} (X_0 = B).  The
pair (gamma_n, kappa_n) attached to level n is the one under which X_{n+1}
approximates X_n, so it is filled in when level n+1 is built and is None at
the top of the tower.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    BoundViolated,
    CountingShortfall,
    DisjointnessFailed,
    Infeasible,
    NonPositive,
    TowerRejected,
)
from .points import PointCloud, ball_counts, exp_diff, min_gap, strong_sq, sum_columns
from .quotient import InequalityReport, constant_check, nu_for_fixed_point, scalar_checks
from .system import (
    ChartId,
    CycleSystem,
    PeriodicOrbit,
    AmbientPoint,
    child_cycle,
    exit_geometry,
    is_b_saddle,
    iter_steps,
    level1_word,
    orbit_cloud,
    realize_orbit,
    word,
    b,
)


def _per_level(value, n: int):
    """Value for level n from a scalar or a per-level list (last entry repeats)."""
    if isinstance(value, (list, tuple)):
        if not value:
            raise ValueError("empty per-level list")
        return value[min(n - 1, len(value) - 1)]
    return value


@dataclass
class TowerConfig:
    C: float = 320.0
    halving_ratio: float = 0.5
    max_levels: int = 4
    m_min: int | list = 2
    m_max: int | list = 5000
    l_max: int | list = 100000
    # lower bound on the certified fraction of level n against level n-1
    kappa_floor: float | list = field(default_factory=lambda: [0.0, 0.0, 0.0, 0.99])
    first_l: int | None = 17
    first_m: int | None = 5
    first_m_max: int = 200
    exit_fraction: float = 0.25
    period_cap: int = 10 ** 6
    minimize_period: bool = False

    def validate(self, system: CycleSystem) -> list[InequalityReport]:
        rep = constant_check(system.data, self.C)
        if not rep.holds:
            raise TowerRejected(f"C = {self.C} violates C > 16/|chi_A| = {rep.lhs:.6g}")
        if not 0.0 < self.halving_ratio < 1.0:
            raise TowerRejected(f"halving_ratio = {self.halving_ratio} must lie in (0, 1)")
        if not 0.0 < self.exit_fraction < 1.0:
            raise TowerRejected("exit_fraction must lie in (0, 1)")
        return [rep]


@dataclass
class GoodApproxCertificate:
    gamma: float
    kappa: float
    gamma_measured: float
    included_blocks: int
    fiber_count: int
    gamma_bound_ok: bool
    kappa_ok: bool
    fibers_equal: bool
    block_start: int = 0
    m: int = 0
    parent_period: int = 1
    child_period: int = 1
    ceiling: float | None = None
    kappa_bound: float | None = None
    included: tuple = ()
    window_max: tuple = ()

    @property
    def passed(self) -> bool:
        return self.gamma_bound_ok and self.kappa_ok and self.fibers_equal

    def projection(self) -> np.ndarray:
        """Index in the parent orbit of every child point in Gamma, -1 elsewhere."""
        proj = np.full(self.child_period, -1, dtype=np.int64)
        for r in self.included:
            k = self.block_start + r * self.parent_period + np.arange(self.parent_period)
            proj[k % self.child_period] = np.arange(self.parent_period)
        return proj


@dataclass
class TowerLevel:
    n: int
    orbit: PeriodicOrbit
    l: int
    m: int
    chi: float
    d: float
    certificate: GoodApproxCertificate
    exit_offset: float = 0.0
    gamma: float | None = None
    kappa: float | None = None
    reports: list = field(default_factory=list)

    @property
    def period(self) -> int:
        return self.orbit.period

    @property
    def sigma(self) -> float:
        return self.orbit.sigma


@dataclass
class Tower:
    system: CycleSystem
    config: TowerConfig
    base: PeriodicOrbit  # the B saddle
    levels: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def top(self) -> TowerLevel:
        return self.levels[-1]

    def level(self, n: int) -> TowerLevel:
        return self.levels[n - 1]

    def gamma_ceiling(self, n: int) -> float:
        """min_{i<=n} d_i / (3 * 2^n)."""
        return min(lv.d for lv in self.levels[:n]) / (3.0 * 2.0 ** n)


# ----------------------------------------------------------- point clouds

def derivative_profile(system: CycleSystem, orbit: PeriodicOrbit) -> np.ndarray:
    slopes = np.array([s[1] for s in iter_steps(system, orbit.word)])
    out = np.empty(len(slopes))
    out[0] = 1.0
    out[1:] = np.cumprod(slopes[:-1])
    return out


def anchored_level1(system: CycleSystem, l: int, m: int) -> PeriodicOrbit:
    """The orbit T_ba a^l T_ab(nu) b^m with base exactly at central coordinate 1."""
    sol = nu_for_fixed_point(system.data, l, m)
    orb = realize_orbit(system, level1_word(sol.nu, l, m))
    base = orb.base
    orb.base = AmbientPoint(base.chart, base.x_s, 1.0, base.x_u)
    cloud = orbit_cloud(orb)
    cloud.deriv = derivative_profile(system, orb)
    orb.cloud = cloud
    return orb


def b_saddle(system: CycleSystem) -> PeriodicOrbit:
    orb = realize_orbit(system, word(b()))
    cloud = orbit_cloud(orb)
    cloud.deriv = np.ones(1)
    orb.cloud = cloud
    return orb


def _signed_power(sign: float, log_abs: float, k) -> np.ndarray:
    k = np.asarray(k)
    signs = np.where((sign < 0) & (k % 2 == 1), -1.0, 1.0)
    return signs * np.exp(k * log_abs)


def child_orbit(system: CycleSystem, parent: PeriodicOrbit, l: int, m: int, exit_offset: float) -> PeriodicOrbit:
    """Realize the child word and build its points from the parent's points.

    Block r point j equals parent point j plus D_j * delta_r exactly (the
    maps are affine), so it is stored as the parent's expansion with one new
    trailing column.  The A-visit and the transitions are built from the
    exit point in the same way.
    """
    d = system.data
    delta_0, delta_m = exit_geometry(system, parent, m, exit_offset)
    nu, w = child_cycle(system, parent, l, m, exit_offset)
    orb = realize_orbit(system, w)
    P = parent.points()
    pP = parent.period
    sgn = -1.0 if parent.sigma < 0 else 1.0
    la = parent.log_abs_sigma
    r = np.arange(m)
    # delta_r = delta_m * sigma^(r - m)
    deltas = delta_m * _signed_power(sgn, -la, m - r)
    Dr = _signed_power(sgn, la, r)

    depth = P.depth + 1
    blocks = np.empty((m * pP, depth))
    blocks[:, : P.depth] = np.tile(P.comps, (m, 1))
    blocks[:, P.depth] = (deltas[:, None] * P.deriv[None, :]).ravel()
    charts = [np.tile(P.charts, m)]
    deriv = [(Dr[:, None] * P.deriv[None, :]).ravel()]

    base_cols = P.comps[0]
    exit_pt = np.concatenate([base_cols, [delta_m]])
    child_base = np.concatenate([base_cols, [delta_0]])
    D_exit = float(_signed_power(sgn, la, m))
    tail, tail_ch, tail_D = [], [], []
    idx = system.index
    for j in range(d.t_ba):
        v = exit_pt if j == 0 else -exit_pt
        tail.append(v[None, :])
        tail_ch.append(idx[ChartId("ba", j)])
        tail_D.append(D_exit if j == 0 else -D_exit)
    n_a = l * d.pi_a
    # cumulative products reproduce sequential multiplication bit for bit
    factors = np.full((n_a + 1, depth), system.lam_step)
    factors[0] = -exit_pt
    a_vals = np.cumprod(factors, axis=0)
    a_D = -D_exit * np.cumprod(np.concatenate([[1.0], np.full(n_a, system.lam_step)]))
    for k in range(n_a):
        tail.append(a_vals[k][None, :])
        tail_ch.append(idx[ChartId("A", k % d.pi_a)])
        tail_D.append(a_D[k])
    for j in range(d.t_ab):
        v = a_vals[n_a] if j == 0 else child_base
        tail.append(v[None, :])
        tail_ch.append(idx[ChartId("ab", j)])
        tail_D.append(a_D[n_a] if j == 0 else d.tau * a_D[n_a])

    comps = np.vstack([blocks] + tail)
    ch = np.concatenate(charts + [np.array(tail_ch, dtype=np.int64)])
    dv = np.concatenate(deriv + [np.array(tail_D)])
    if system.has_strong_offsets:
        strong = orbit_cloud(orb)
        xs, xu = strong.xs, strong.xu
    else:
        xs = np.zeros((len(ch), system.spec.s_dim))
        xu = np.zeros((len(ch), system.spec.u_dim))
    orb.cloud = PointCloud(ch, comps, xs, xu, dv)
    orb.base = AmbientPoint(orb.base.chart, orb.base.x_s, float(sum_columns(comps[:1])[0]), orb.base.x_u)
    return orb


# ------------------------------------------------------------ certificates

def block_layout(child: PeriodicOrbit, parent: PeriodicOrbit) -> tuple[int, int]:
    """(index of the first repetition block, number of repetitions) in the child word."""
    system = child.system
    from .system import word_summary
    start = 0
    for t in child.word.tokens:
        if is_b_saddle(parent) and t.kind == "b":
            return start, t.count // parent.word.tokens[0].count
        if t.kind == "sub" and t.sub == parent.word:
            return start, t.count
        if t.kind == "sub":
            start += t.count * word_summary(system, t.sub).period
        else:
            start += t.count * len(system.token_steps(t))
    raise ValueError("child word contains no repetition of the parent word")


def aligned_shadow(child: PeriodicOrbit, parent: PeriodicOrbit, start: int, m: int) -> np.ndarray:
    """dist(child point start+k, parent point k mod pi_P) for k covering every block window."""
    system = child.system
    C, P = child.points(), parent.points()
    pP, pc = parent.period, child.period
    span = m * pP + pP - 1 if pP > 1 else m
    k = np.arange(span)
    ci = (start + k) % pc
    pi = k % pP
    depth = max(C.depth, P.depth)
    cc, pcmp = C.padded(depth), P.padded(depth)
    same = C.charts[ci] == P.charts[pi]
    out = system.separation[C.charts[ci], P.charts[pi]].astype(float)
    if same.any():
        a, bb = ci[same], pi[same]
        dc = exp_diff(cc[a], pcmp[bb])
        d2 = dc * dc + strong_sq(C.xs[a], P.xs[bb], C.xu[a], P.xu[bb])
        out[same] = np.sqrt(d2) * system.metric_scale
    return out


def block_windows(shadow: np.ndarray, m: int, pP: int) -> np.ndarray:
    """Max shadow over the window of every block: its own points plus pP-1 successors."""
    if pP == 1:
        return shadow[:m].copy()
    padded = np.concatenate([shadow, [0.0]]).reshape(m + 1, pP)
    own = padded[:m].max(axis=1)
    ahead = padded[1:, : pP - 1].max(axis=1)
    return np.maximum(own, ahead)


def verify_good_approx(child: PeriodicOrbit, parent: PeriodicOrbit, gamma: float,
                       kappa_bound: float | None = None, ceiling: float | None = None,
                       windows: np.ndarray | None = None) -> GoodApproxCertificate:
    start, m = block_layout(child, parent)
    pP, pc = parent.period, child.period
    if windows is None:
        windows = block_windows(aligned_shadow(child, parent, start, m), m, pP)
    included = tuple(int(r) for r in np.nonzero(windows < gamma)[0])
    n_inc = len(included)
    gm = float(max((windows[r] for r in included), default=0.0))
    kappa = n_inc * pP / pc
    # fibers: every included block hits each parent point once
    if n_inc:
        proj = np.concatenate([np.arange(pP) for _ in included])
        fibers = np.bincount(proj, minlength=pP)
        fibers_equal = bool(np.all(fibers == fibers[0]))
        fiber_count = int(fibers[0])
    else:
        fibers_equal, fiber_count = False, 0
    gamma_ok = n_inc > 0 and gm < gamma and (ceiling is None or gamma < ceiling)
    if kappa_bound is None:
        kappa_ok = n_inc > 0
    else:
        kappa_ok = n_inc > 0 and kappa >= kappa_bound
    return GoodApproxCertificate(
        gamma=float(gamma), kappa=kappa, gamma_measured=gm, included_blocks=n_inc,
        fiber_count=fiber_count, gamma_bound_ok=bool(gamma_ok), kappa_ok=bool(kappa_ok),
        fibers_equal=fibers_equal, block_start=start, m=m, parent_period=pP, child_period=pc,
        ceiling=ceiling, kappa_bound=kappa_bound, included=included,
        window_max=tuple(float(x) for x in windows),
    )


def brute_force_certificate(child: PeriodicOrbit, parent: PeriodicOrbit, gamma: float):
    """Pointwise re-check of every window with scalar distance calls (small periods only)."""
    start, m = block_layout(child, parent)
    cpts = list(_cloud_points(child))
    ppts = list(_cloud_points(parent))
    pP, pc = parent.period, child.period
    included, gm = [], 0.0
    for r in range(m):
        worst = 0.0
        for j in range(pP):
            y = start + r * pP + j
            for i in range(pP):
                dist = _point_distance(child, cpts[(y + i) % pc], ppts[(j + i) % pP])
                worst = max(worst, dist)
        if worst < gamma:
            included.append(r)
            gm = max(gm, worst)
    return tuple(included), gm


def _cloud_points(orbit):
    c = orbit.points()
    for i in range(len(c)):
        yield c.charts[i], c.comps[i], c.xs[i], c.xu[i]


def _point_distance(orbit, p, q) -> float:
    system = orbit.system
    if p[0] != q[0]:
        return float(system.separation[p[0], q[0]])
    depth = max(len(p[1]), len(q[1]))
    a = np.zeros(depth)
    a[: len(p[1])] = p[1]
    bb = np.zeros(depth)
    bb[: len(q[1])] = q[1]
    dc = 0.0
    for k in range(depth - 1, -1, -1):
        dc += a[k] - bb[k]
    sq = dc * dc + float(np.sum((p[2] - q[2]) ** 2) + np.sum((p[3] - q[3]) ** 2))
    return math.sqrt(sq) * system.metric_scale


def choose_gamma(measured: float, ceiling: float) -> float:
    """Geometric mean of the measured shadow and the ceiling; half the ceiling if nothing was measured."""
    if measured <= 0.0:
        return 0.5 * ceiling
    return math.sqrt(measured * ceiling)


def certify(child: PeriodicOrbit, parent: PeriodicOrbit, ceiling: float,
            kappa_bound: float | None) -> GoodApproxCertificate:
    start, m = block_layout(child, parent)
    windows = block_windows(aligned_shadow(child, parent, start, m), m, parent.period)
    below = windows[windows < ceiling]
    gm = float(below.max()) if below.size else math.inf
    gamma = choose_gamma(gm, ceiling) if below.size else ceiling
    return verify_good_approx(child, parent, gamma, kappa_bound, ceiling, windows)


# ------------------------------------------------------------------- tower

def level_gap(orbit: PeriodicOrbit) -> float:
    cloud = orbit.points()
    if orbit.period == 1:
        return math.inf
    g = min_gap(cloud, orbit.system.metric_scale)
    if len(np.unique(cloud.charts)) > 1:
        g = min(g, orbit.system.spec.chart_separation)
    return g


def first_orbit_checks(system: CycleSystem, config: TowerConfig, orbit: PeriodicOrbit) -> list[InequalityReport]:
    d = system.data
    chi_b = d.chi_b
    return [
        InequalityReport.less("first_expanding", 1.0, abs(orbit.sigma)),
        InequalityReport.less("first_exponent_positive", 0.0, orbit.chi),
        InequalityReport.less("first_exponent_halving", orbit.chi, 0.5 * chi_b),
        InequalityReport.less("first_fraction_positive", orbit.chi, 1.0 / config.C),
    ]


def search_first(system: CycleSystem, config: TowerConfig) -> tuple[int, int]:
    """Lexicographic (m, l) search over level-1 orbits with every scalar test green."""
    d = system.data
    t = d.t_ab + d.t_ba
    L = -math.log(d.lam)
    for m in range(1, config.first_m_max + 1):
        top = int(m * math.log(d.beta) / L) + 1
        for l in range(0, top + 1):
            reps = scalar_checks(d, config.C, d.chi_b, l, m, t)
            per = d.period(l, m)
            chi = (m * math.log(d.beta) + l * math.log(d.lam)) / per
            if all(r.holds for r in reps) and chi < 1.0 / config.C:
                return l, m
    raise Infeasible("no level-1 orbit passes the scalar tests", {"first_m_max": config.first_m_max})


def init_tower(system: CycleSystem, config: TowerConfig, first: PeriodicOrbit | None = None) -> Tower:
    inits = config.validate(system)
    base = b_saddle(system)
    tower = Tower(system, config, base)
    if config.max_levels <= 0 and first is None:
        return tower
    if first is None:
        if config.first_l is None or config.first_m is None:
            l, m = search_first(system, config)
        else:
            l, m = config.first_l, config.first_m
        first = anchored_level1(system, l, m)
    reps = first_orbit_checks(system, config, first)
    bad = [r for r in reps if not r.holds]
    if bad:
        raise TowerRejected("first orbit rejected: " + "; ".join(f"{r.name}: {r.lhs:.6g} !< {r.rhs:.6g}" for r in bad))
    l, m = _first_lm(first)
    d = system.data
    reps = inits + reps + scalar_checks(d, config.C, d.chi_b, l, m, d.t_ab + d.t_ba)[1:]
    ceiling = system.spec.chart_separation / 3.0
    cert = certify(first, base, ceiling, kappa_bound=None)
    kb = 1.0 - config.C * d.chi_b
    cert.kappa_bound = kb
    cert.kappa_ok = cert.kappa_ok and cert.kappa >= kb
    lv = TowerLevel(n=1, orbit=first, l=l, m=m, chi=first.chi, d=level_gap(first),
                    certificate=cert, reports=reps)
    tower.levels.append(lv)
    return tower


def _first_lm(orbit: PeriodicOrbit) -> tuple[int, int]:
    l = sum(t.count for t in orbit.word.tokens if t.kind == "a")
    m = sum(t.count for t in orbit.word.tokens if t.kind == "b")
    return l, m


@dataclass
class Candidate:
    m: int
    l: int
    period: int
    chi: float
    kappa_estimate: float
    failures: dict


def candidate_pairs(tower: Tower):
    """(m, l) pairs passing the analytic tests, in search order."""
    cfg = tower.config
    d = tower.system.data
    top = tower.top
    n = top.n + 1
    P = top.orbit
    pP, lsP, chiP = P.period, P.log_abs_sigma, top.chi
    h = cfg.halving_ratio
    L = -math.log(d.lam)
    t = d.t_ab + d.t_ba
    need = max(1.0 - cfg.C * chiP, _per_level(cfg.kappa_floor, n))
    drop = 1 if pP > 1 else 0
    m_lo, m_hi = _per_level(cfg.m_min, n), _per_level(cfg.m_max, n)
    l_hi = _per_level(cfg.l_max, n)
    for m in range(max(m_lo, drop + 1), m_hi + 1):
        if m * pP > cfg.period_cap:
            return
        lo = (m * lsP - h * chiP * (m * pP + t)) / (L + h * chiP * d.pi_a)
        l = max(0, int(math.floor(lo)) - 1)
        while l <= l_hi:
            per = m * pP + l * d.pi_a + t
            ls = m * lsP - l * L
            if ls <= 0 or per > cfg.period_cap:
                break
            chi = ls / per
            kap = (m - drop) * pP / per
            if kap < need:
                break
            if chi < h * chiP:
                yield m, l, per, chi, kap
            l += 1


def fraction_margins(tower: Tower, need: float) -> dict:
    """Best analytic fraction reachable in the configured m range, and its shortfall."""
    cfg = tower.config
    d = tower.system.data
    n = tower.top.n + 1
    P = tower.top.orbit
    drop = 1 if P.period > 1 else 0
    lo, hi = _per_level(cfg.m_min, n), _per_level(cfg.m_max, n)
    best = 0.0
    for m in range(max(lo, 1), hi + 1):
        # smallest l keeping the child exponent below the halving target
        chi_t = cfg.halving_ratio * tower.top.chi
        l = max(0, math.ceil((m * P.log_abs_sigma - chi_t * (m * P.period + d.t_ab + d.t_ba))
                             / (-math.log(d.lam) + chi_t * d.pi_a)))
        per = m * P.period + l * d.pi_a + d.t_ab + d.t_ba
        if per > cfg.period_cap:
            break
        best = max(best, (m - drop) * P.period / per)
    return {"m_range": [lo, hi], "period_cap": cfg.period_cap, "best_fraction": best,
            "fraction_margin": best - need}


def extend(tower: Tower) -> TowerLevel:
    cfg = tower.config
    system = tower.system
    d = system.data
    top = tower.top
    n = top.n + 1
    P = top.orbit
    chiP = top.chi
    ceiling = tower.gamma_ceiling(top.n)
    kb = 1.0 - cfg.C * chiP
    need = max(kb, _per_level(cfg.kappa_floor, n))
    Dmax = float(np.max(np.abs(P.points().deriv)))
    scale = system.metric_scale
    best = None
    tried = 0
    pairs = candidate_pairs(tower)
    if cfg.minimize_period:
        pairs = sorted(pairs, key=lambda c: (c[2], c[0], c[1]))
    for m, l, per, chi, kap in pairs:
        tried += 1
        mag = cfg.exit_fraction * ceiling * abs(P.sigma) / (scale * Dmax)
        # the exit point sits at 1 + e, so keep it inside the box tolerance
        mag = min(mag, 0.5 * system.spec.overflow_tol)
        sign = -1.0 if (P.sigma > 0 or m % 2 == 0) else 1.0
        e = sign * mag
        child = child_orbit(system, P, l, m, e)
        cert = certify(child, P, ceiling, need)
        gap = level_gap(child)
        failures = {}
        if not abs(child.sigma) > 1.0:
            failures["i_expanding"] = abs(child.sigma) - 1.0
        if not child.chi < cfg.halving_ratio * chiP:
            failures["ii_halving"] = cfg.halving_ratio * chiP - child.chi
        if not cert.kappa_ok:
            failures["iii_fraction"] = cert.kappa - need
        if not cert.gamma_bound_ok:
            failures["iv_gamma"] = ceiling - cert.gamma_measured
        if not gap > 0.0:
            failures["gap"] = gap
        if not failures:
            reps = scalar_checks(d, cfg.C, chiP, l, m, d.t_ab + d.t_ba,
                                   parent_log_multiplier=P.log_abs_sigma, parent_period=P.period)
            reps.append(InequalityReport("certified_fraction", need, cert.kappa, cert.kappa >= need,
                                         {"kappa_bound": kb, "kappa_floor": need}))
            cert.kappa_bound = kb
            lv = TowerLevel(n=n, orbit=child, l=l, m=m, chi=child.chi, d=gap, certificate=cert,
                            exit_offset=e, reports=reps)
            top.gamma, top.kappa = cert.gamma, cert.kappa
            tower.levels.append(lv)
            return lv
        if best is None or len(failures) < len(best.failures):
            best = Candidate(m, l, per, chi, kap, failures)
    ledger = {"level": n, "candidates_tried": tried, "kappa_needed": need, "gamma_ceiling": ceiling}
    if best is not None:
        ledger["best"] = {"m": best.m, "l": best.l, "period": best.period, "chi": best.chi,
                          "failures": best.failures}
    else:
        ledger["best"] = None
        ledger["reason"] = "no (m, l) pair passes the analytic tests (i)-(iii) within the bounds"
        ledger.update(fraction_margins(tower, need))
    raise Infeasible(f"no admissible child at level {n}", ledger)


def build_tower(system: CycleSystem, config: TowerConfig, levels: int | None = None) -> Tower:
    levels = config.max_levels if levels is None else levels
    tower = init_tower(system, config) if levels > 0 else Tower(system, config, b_saddle(system))
    while len(tower.levels) < levels:
        extend(tower)
    return tower


def rebuild_tower(system: CycleSystem, config: TowerConfig, spec_levels: Sequence[dict]) -> Tower:
    """Rebuild from recorded (l, m, exit_offset) per level without searching."""
    tower = Tower(system, config, b_saddle(system))
    if not spec_levels:
        return tower
    first = anchored_level1(system, spec_levels[0]["l"], spec_levels[0]["m"])
    cfg1 = TowerConfig(**{**config.__dict__, "first_l": spec_levels[0]["l"], "first_m": spec_levels[0]["m"]})
    tower = init_tower(system, cfg1, first)
    tower.config = config
    for rec in spec_levels[1:]:
        top = tower.top
        P = top.orbit
        n = top.n + 1
        ceiling = tower.gamma_ceiling(top.n)
        kb = 1.0 - config.C * top.chi
        need = max(kb, _per_level(config.kappa_floor, n))
        child = child_orbit(system, P, rec["l"], rec["m"], rec["exit_offset"])
        cert = certify(child, P, ceiling, need)
        cert.kappa_bound = kb
        reps = scalar_checks(system.data, config.C, top.chi, rec["l"], rec["m"],
                               system.data.t_ab + system.data.t_ba,
                               parent_log_multiplier=P.log_abs_sigma, parent_period=P.period)
        reps.append(InequalityReport("certified_fraction", need, cert.kappa, cert.kappa >= need,
                                     {"kappa_bound": kb, "kappa_floor": need}))
        lv = TowerLevel(n=n, orbit=child, l=rec["l"], m=rec["m"], chi=child.chi, d=level_gap(child),
                        certificate=cert, exit_offset=rec["exit_offset"], reports=reps)
        top.gamma, top.kappa = cert.gamma, cert.kappa
        tower.levels.append(lv)
    return tower


# ------------------------------------------------------ derived sequences

@dataclass
class KappaProduct:
    from_n: int
    built: float
    tail: float

    @property
    def value(self) -> float:
        return self.built * self.tail


def kappa_tail(tower: Tower) -> float:
    """Lower bound for prod_{k >= top} kappa_k of any continuation obeying the halving rule."""
    cfg = tower.config
    chi = tower.top.chi
    h = cfg.halving_ratio
    s = 0.0
    j = 0
    while True:
        x = cfg.C * chi * h ** j
        if x >= 1.0:
            raise NonPositive(f"tail factor 1 - C*chi*h^{j} = {1 - x!r} is not positive")
        s += math.log1p(-x)
        if x < 1e-20:
            break
        j += 1
    return math.exp(s)


def kappa_product(tower: Tower, from_n: int) -> KappaProduct:
    top = tower.top.n
    if not 1 <= from_n <= top:
        raise ValueError(f"from_n must lie in [1, {top}]")
    logs = 0.0
    for lv in tower.levels[from_n - 1 : top - 1]:
        if lv.kappa is None or lv.kappa <= 0.0:
            raise NonPositive(f"kappa_{lv.n} = {lv.kappa!r} is not positive")
        logs += math.log(lv.kappa)
    return KappaProduct(from_n, math.exp(logs), kappa_tail(tower))


def gamma_tail(tower: Tower) -> float:
    """sum_{k >= top} min_i d_i / (3 * 2^k)."""
    top = tower.top.n
    return min(lv.d for lv in tower.levels) * 2.0 ** (1 - top) / 3.0


def r_sequence(tower: Tower, check: bool = True) -> list[float]:
    top = tower.top.n
    tail = gamma_tail(tower)
    out = []
    for n in range(1, top + 1):
        built = [lv.gamma for lv in tower.levels[n - 1 : top - 1]]
        r = math.fsum(built) + tail
        lv = tower.level(n)
        if check:
            if not r < lv.d / 3.0:
                raise BoundViolated(f"r_{n} = {r!r} is not below d_{n}/3 = {lv.d / 3.0!r}")
            if not r <= lv.d * 2.0 ** (1 - n) / 3.0:
                raise BoundViolated(f"r_{n} = {r!r} exceeds d_{n} 2^(1-n)/3")
        out.append(r)
    return out


@dataclass
class SupportBound:
    n: int
    m: int
    ball_count: int
    measure_lower_bound: float
    required_points: int
    min_points: int
    radius: float

    @property
    def margin(self) -> int:
        return self.min_points - self.required_points


def projection_chain(tower: Tower, m: int, n: int) -> np.ndarray:
    """For each point of X_m its image in X_n under the composed projections, -1 if undefined."""
    idx = np.arange(tower.level(m).period)
    for k in range(m, n, -1):
        proj = tower.level(k).certificate.projection()
        idx = np.where(idx >= 0, proj[np.maximum(idx, 0)], -1)
    return idx


def support_bound(tower: Tower, n: int, m: int) -> SupportBound:
    top = tower.top.n
    if not 1 <= n < m <= top:
        raise ValueError("need 1 <= n < m <= top")
    r = r_sequence(tower, check=False)[n - 1]
    Xn = tower.level(n)
    if not r < Xn.d / 3.0:
        raise DisjointnessFailed(f"r_{n} = {r!r} is not below d_{n}/3")
    required = 1
    prod = 1.0
    for k in range(n, m):
        required *= tower.level(k + 1).certificate.included_blocks
        prod *= tower.level(k).kappa
    counts = ball_counts(Xn.orbit.points(), tower.level(m).orbit.points(), r, tower.system.metric_scale)
    worst = int(np.argmin(counts))
    if counts[worst] < required:
        raise CountingShortfall(
            f"ball {worst} of X_{n} holds {int(counts[worst])} points of X_{m}, needs {required}")
    return SupportBound(n, m, Xn.period, prod / Xn.period, required, int(counts.min()), r)
