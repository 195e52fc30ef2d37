"""Uniform measures on periodic orbits and the bookkeeping for their limits."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NoSuchN
from .system import CycleSystem, PeriodicOrbit
from .tower import Tower, kappa_product, projection_chain, r_sequence


@dataclass
class PeriodicMeasure:
    orbit: PeriodicOrbit

    @property
    def atom_mass(self) -> float:
        return 1.0 / self.orbit.period


@dataclass
class TestFunction:
    """phi(x) = sum_k coeffs[chart, k] * x_c**k on each chart.

    ``lipschitz`` is a bound in the ambient metric.  Points in different
    charts are at least the chart separation apart, so per-chart constants
    contribute oscillation / separation.
    """

    id: str
    coeffs: np.ndarray  # (n_charts, degree + 1)
    lipschitz: float
    box: float = 1.0  # |x_c| <= box on every chart

    __test__ = False  # not a pytest class

    def values(self, charts: np.ndarray, central: np.ndarray) -> np.ndarray:
        c = self.coeffs[charts]
        out = np.zeros(len(charts))
        for k in range(self.coeffs.shape[1] - 1, -1, -1):
            out = out * central + c[:, k]
        return out

    def chart_range(self) -> np.ndarray:
        """(n_charts, 2) min and max of each chart polynomial on [-box, box]."""
        out = np.empty((self.coeffs.shape[0], 2))
        for i, row in enumerate(self.coeffs):
            p = np.polynomial.Polynomial(row)
            xs = [-self.box, self.box]
            if len(row) > 2:
                xs += [r.real for r in p.deriv().roots() if abs(r.imag) < 1e-14 and abs(r.real) <= self.box]
            v = p(np.array(xs))
            out[i] = v.min(), v.max()
        return out

    @property
    def oscillation(self) -> float:
        r = self.chart_range()
        return float(r[:, 1].max() - r[:, 0].min())

    def gradient_bound(self) -> float:
        """max over charts of sup |p'| on [-box, box]."""
        best = 0.0
        for row in self.coeffs:
            if len(row) < 2:
                continue
            best = max(best, sum(k * abs(row[k]) * self.box ** (k - 1) for k in range(1, len(row))))
        return best


def make_function(system: CycleSystem, fid: str, coeffs) -> TestFunction:
    coeffs = np.atleast_2d(np.asarray(coeffs, dtype=float))
    if coeffs.shape[0] == 1:
        coeffs = np.repeat(coeffs, len(system.charts), axis=0)
    box = 1.0 + system.spec.overflow_tol
    f = TestFunction(fid, coeffs, 0.0, box)
    within = f.gradient_bound() / system.metric_scale
    across = f.oscillation / system.spec.chart_separation
    f.lipschitz = max(within, across)
    return f


def default_dictionary(system: CycleSystem) -> list[TestFunction]:
    a_mask = system.role_mask("A").astype(float)
    b_mask = system.role_mask("B").astype(float)
    return [
        make_function(system, "constant", [[1.0]]),
        make_function(system, "central", [[0.0, 1.0]]),
        make_function(system, "a_phase", a_mask[:, None]),
        make_function(system, "b_phase", b_mask[:, None]),
        make_function(system, "central_log_derivative", system.chart_log_derivative()[:, None]),
    ]


def function_by_id(system: CycleSystem, fid: str) -> TestFunction:
    for f in default_dictionary(system):
        if f.id == fid:
            return f
    raise KeyError(f"unknown test function {fid!r}")


# ---------------------------------------------------------------- integrals

def orbit_values(orbit: PeriodicOrbit, phi: TestFunction) -> np.ndarray:
    c = orbit.points()
    return phi.values(c.charts, c.central())


def integrate(mu: PeriodicMeasure, phi: TestFunction) -> float:
    """Average of phi over the orbit, accumulated per chart and per monomial."""
    c = mu.orbit.points()
    x = c.central()
    n_ch = phi.coeffs.shape[0]
    total = 0.0
    power = np.ones_like(x)
    for k in range(phi.coeffs.shape[1]):
        sums = np.bincount(c.charts, weights=power, minlength=n_ch) if k else np.bincount(c.charts, minlength=n_ch).astype(float)
        total += math.fsum(phi.coeffs[:, k] * sums)
        power = power * x
    return total / mu.orbit.period


def n_measure_integral(orbit: PeriodicOrbit, index: int, n: int, phi: TestFunction) -> float:
    """(1/n) sum_{i<n} phi(f^i(x)) for x the orbit point at the given index."""
    if n <= 0:
        raise ValueError("n must be positive")
    vals = orbit_values(orbit, phi)
    idx = (index + np.arange(n)) % orbit.period
    return math.fsum(vals[idx]) / n


def window_averages(vals: np.ndarray, n: int) -> np.ndarray:
    """Cyclic averages of n consecutive values starting at every index."""
    P = len(vals)
    reps = n // P
    rem = n % P
    ext = np.concatenate([[0.0], np.cumsum(np.concatenate([vals, vals[:rem]]))])
    total = math.fsum(vals)
    part = ext[np.arange(P) + rem] - ext[np.arange(P)]
    return (reps * total + part) / n


def modulus_of_continuity(phi: TestFunction, delta: float) -> float:
    if delta < 0:
        raise ValueError("delta must be non-negative")
    if delta == 0:
        return 0.0
    return min(phi.lipschitz * delta, phi.oscillation)


def central_exponent_of_measure(mu: PeriodicMeasure) -> float:
    phi = make_function(mu.orbit.system, "central_log_derivative", mu.orbit.system.chart_log_derivative()[:, None])
    return integrate(mu, phi)


def weak_star_gap(mu_a: PeriodicMeasure, mu_b: PeriodicMeasure, dictionary: list[TestFunction]) -> float:
    if not dictionary:
        raise ValueError("dictionary must be non-empty")
    return max(abs(integrate(mu_a, f) - integrate(mu_b, f)) for f in dictionary)


def weak_star_bound(tower: Tower, n: int, m: int, phi: TestFunction) -> float:
    """sum_{k=n}^{m-1} (lip * gamma_k + (1 - kappa_k) * oscillation)."""
    return sum(phi.lipschitz * tower.level(k).gamma + (1.0 - tower.level(k).kappa) * phi.oscillation
               for k in range(n, m))


# ---------------------------------------------------------------- ergodicity

@dataclass
class ChoiceOfN:
    N: int
    delta: float
    r_margin: float
    kappa_margin: float


def _delta_for(phi: TestFunction, eps: float) -> float:
    if phi.oscillation < eps:
        return math.inf
    return eps / phi.lipschitz


def choose_N(tower: Tower, phi: TestFunction, eps: float) -> ChoiceOfN:
    if not eps > 0:
        raise ValueError("eps must be positive")
    delta = _delta_for(phi, eps)
    top = tower.top.n
    rs = r_sequence(tower)
    for N in range(1, top + 1):
        kp = kappa_product(tower, N).value
        if rs[N - 1] < delta and kp > 1.0 - eps:
            return ChoiceOfN(N, delta, delta - rs[N - 1], kp - (1.0 - eps))
    raise NoSuchN(f"no level in 1..{top} meets r_N < {delta!r} and kappa product > {1 - eps!r}",
                  depth_estimate=_depth_estimate(tower, delta, eps))


def _depth_estimate(tower: Tower, delta: float, eps: float) -> int:
    """First level k >= top at which the geometric tails alone would satisfy both requirements."""
    cfg = tower.config
    top = tower.top.n
    chi = tower.top.chi
    h = cfg.halving_ratio
    min_d = min(lv.d for lv in tower.levels)
    for k in range(top, top + 4096):
        r_tail = min_d * 2.0 ** (1 - k) / 3.0
        s, j = 0.0, 0
        while True:
            x = cfg.C * chi * h ** (k - top + j)
            if x >= 1.0:
                s = -math.inf
                break
            s += math.log1p(-x)
            if x < 1e-20:
                break
            j += 1
        if r_tail < delta and math.exp(s) > 1.0 - eps:
            return k
    return top + 4096


@dataclass
class ErgodicityCheckReport:
    phi: str
    eps: float
    N: int | None
    delta: float
    max_deviation: dict = field(default_factory=dict)  # (m, n) -> float
    deviation_bound: dict = field(default_factory=dict)  # (m, n) -> lip * r_n
    good_fraction: dict = field(default_factory=dict)  # m -> float
    passed: bool = False
    notes: list = field(default_factory=list)


def check_ergodicity_criterion(tower: Tower, phi: TestFunction, eps: float) -> ErgodicityCheckReport:
    try:
        ch = choose_N(tower, phi, eps)
    except NoSuchN as exc:
        rep = ErgodicityCheckReport(phi.id, eps, None, _delta_for(phi, eps))
        rep.notes.append(f"no N: {exc} (depth estimate {exc.depth_estimate})")
        return rep
    N, top = ch.N, tower.top.n
    rep = ErgodicityCheckReport(phi.id, eps, N, ch.delta)
    if N > top - 1:
        rep.notes.append(f"N = {N} leaves no pair N <= n < m <= {top}")
        return rep
    rs = r_sequence(tower)
    ok = True
    for m in range(N + 1, top + 1):
        Xm = tower.level(m).orbit
        chain = projection_chain(tower, m, N)
        good = chain >= 0
        frac = float(np.count_nonzero(good)) / Xm.period
        rep.good_fraction[m] = frac
        ok &= frac > 1.0 - eps
        vals = orbit_values(Xm, phi)
        for n in range(N, m):
            Xn = tower.level(n).orbit
            target = integrate(PeriodicMeasure(Xn), phi)
            avg = window_averages(vals, Xn.period)
            dev = float(np.max(np.abs(avg[good] - target))) if good.any() else math.inf
            rep.max_deviation[(m, n)] = dev
            rep.deviation_bound[(m, n)] = phi.lipschitz * rs[n - 1]
            ok &= dev < eps
    rep.passed = bool(ok)
    return rep


@dataclass
class ExponentTrace:
    pairs: list  # (n, chi of mu_n)
    extrapolated_limit: float
    decay_ratio: float


def exponent_trace(tower: Tower) -> ExponentTrace:
    pairs = [(lv.n, central_exponent_of_measure(PeriodicMeasure(lv.orbit))) for lv in tower.levels]
    xs = [p[1] for p in pairs]
    ratios = [xs[i + 1] / xs[i] for i in range(len(xs) - 1) if xs[i] != 0]
    ratio = max(ratios) if ratios else math.nan
    if len(xs) >= 3:
        x0, x1, x2 = xs[-3:]
        den = (x2 - x1) - (x1 - x0)
        limit = x2 - (x2 - x1) ** 2 / den if den != 0 else x2
    elif xs:
        limit = 0.0 if ratios and ratio < 1 else xs[-1]
    else:
        limit = math.nan
    return ExponentTrace(pairs, float(limit), float(ratio))
