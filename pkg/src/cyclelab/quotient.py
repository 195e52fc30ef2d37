"""One-dimensional central dynamics of a simple cycle.

Everything here runs on affine maps x -> slope*x + intercept.  The two
saddles act by multiplication (lambda on the contracting side A, beta on the
expanding side B), the transition B -> A is x -> -x and the transition
A -> B is x -> tau*x + nu.
"""
from __future__ import annotations

import math
from fractions import Fraction
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    Degenerate,
    EveryPointFixed,
    NoFixedPoint,
    NoRoot,
    OutOfRegime,
    SpecViolation,
)


@dataclass(frozen=True)
class AffineMap1D:
    slope: float
    intercept: float = 0.0

    def __call__(self, x: float) -> float:
        return self.slope * x + self.intercept

    def then(self, other: "AffineMap1D") -> "AffineMap1D":
        """Apply self first, then other."""
        return compose(other, self)

    def inverse(self) -> "AffineMap1D":
        if self.slope == 0.0:
            raise Degenerate("constant map has no inverse")
        return AffineMap1D(1.0 / self.slope, -self.intercept / self.slope)


IDENTITY = AffineMap1D(1.0, 0.0)


def compose(f: AffineMap1D, g: AffineMap1D) -> AffineMap1D:
    """x -> f(g(x))."""
    return AffineMap1D(f.slope * g.slope, f.slope * g.intercept + f.intercept)


def compose_all(maps: Iterable[AffineMap1D]) -> AffineMap1D:
    """Compose maps given in application order (first applied first)."""
    out = IDENTITY
    for h in maps:
        out = compose(h, out)
    return out


def power(f: AffineMap1D, n: int) -> AffineMap1D:
    """n-fold iterate of f by repeated squaring."""
    if n < 0:
        return power(f.inverse(), -n)
    out, base = IDENTITY, f
    while n:
        if n & 1:
            out = compose(base, out)
        base = compose(base, base)
        n >>= 1
    return out


def fixed_point(f: AffineMap1D, tol: float = 1e-14) -> float:
    if abs(f.slope - 1.0) <= tol:
        if f.intercept == 0.0:
            raise EveryPointFixed("identity map: every point is fixed")
        raise NoFixedPoint(f"translation by {f.intercept!r} has no fixed point")
    return f.intercept / (1.0 - f.slope)


class Orientation(str, Enum):
    PRESERVING = "preserving"
    REVERSING = "reversing"

    @property
    def tau(self) -> int:
        return 1 if self is Orientation.PRESERVING else -1

    @classmethod
    def from_tau(cls, tau: int) -> "Orientation":
        return cls.PRESERVING if tau > 0 else cls.REVERSING


@dataclass(frozen=True)
class CycleCentralData:
    lam: float = 0.95
    beta: float = 1.2
    tau: int = 1
    pi_a: int = 1
    pi_b: int = 1
    t_ab: int = 2
    t_ba: int = 2
    regime: bool = False  # require lam in (0.9, 1) as in the C-constant regime

    def __post_init__(self):
        if not (0.0 < self.lam < 1.0 < self.beta):
            raise SpecViolation(f"need 0 < lambda < 1 < beta, got lambda={self.lam}, beta={self.beta}")
        if self.tau not in (-1, 1):
            raise SpecViolation(f"tau must be +1 or -1, got {self.tau}")
        for name in ("pi_a", "pi_b", "t_ab", "t_ba"):
            if int(getattr(self, name)) < 1:
                raise SpecViolation(f"{name} must be a positive integer")
        if self.regime and not (0.9 < self.lam < 1.0):
            raise SpecViolation(f"regime flag requires lambda in (0.9, 1), got {self.lam}")

    @property
    def chi_a(self) -> float:
        return math.log(self.lam) / self.pi_a

    @property
    def chi_b(self) -> float:
        return math.log(self.beta) / self.pi_b

    @property
    def orientation(self) -> Orientation:
        return Orientation.from_tau(self.tau)

    def t_ba_map(self) -> AffineMap1D:
        return AffineMap1D(-1.0, 0.0)

    def t_ab_map(self, nu: float) -> AffineMap1D:
        return AffineMap1D(float(self.tau), nu)

    def period(self, l: int, m: int) -> int:
        return m * self.pi_b + l * self.pi_a + self.t_ab + self.t_ba


@dataclass(frozen=True)
class NuSolution:
    l: int
    m: int
    nu: float
    multiplier: float
    period: int
    nu_lo: float = 0.0  # rounding error of nu: the exact value is nu + nu_lo

    @property
    def chi(self) -> float:
        return math.log(abs(self.multiplier)) / self.period


def return_map(data: CycleCentralData, nu: float, l: int, m: int) -> AffineMap1D:
    """Central return map of the word T_ba, a^l, T_ab(nu), b^m starting at T_ba."""
    a_l = AffineMap1D(data.lam ** l, 0.0)
    b_m = AffineMap1D(data.beta ** m, 0.0)
    return compose_all([data.t_ba_map(), a_l, data.t_ab_map(nu), b_m])


def nu_for_fixed_point(data: CycleCentralData, l: int, m: int) -> NuSolution:
    if l < 0 or m < 0:
        raise ValueError("l and m must be non-negative")
    nu, nu_lo = two_sum(data.beta ** (-m), data.tau * data.lam ** l)
    rm = return_map(data, nu, l, m)
    return NuSolution(l=l, m=m, nu=nu, multiplier=rm.slope, period=data.period(l, m), nu_lo=nu_lo)


def two_sum(a: float, b: float) -> tuple[float, float]:
    """(s, e) with s = fl(a + b) and s + e = a + b exactly."""
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


def closing_residual(data: CycleCentralData, sol: NuSolution) -> float:
    """|beta^m (-tau lam^l + nu) - 1| in exact rational arithmetic on the stored doubles.

    Plain double evaluation cancels catastrophically once beta^m is large,
    so nu is carried with its rounding error and nothing is rounded here
    until the final conversion.
    """
    return exact_closing(data.beta, data.lam ** sol.l, data.tau, sol.nu, sol.nu_lo, sol.m)


def exact_closing(beta: float, lam_l: float, tau: int, nu: float, nu_lo: float, m: int) -> float:
    """|beta^m (-tau lam_l + nu + nu_lo) - 1| with no intermediate rounding."""
    # every double is an integer over a power of two; keep one common denominator
    terms = [float(x).as_integer_ratio() for x in (-tau * lam_l, nu, nu_lo)]
    den = max(d for _, d in terms)
    num = sum(n * (den // d) for n, d in terms)
    bn, bd = float(beta).as_integer_ratio()
    top, bottom = bn ** m * num, bd ** m * den
    return abs(top - bottom) / bottom


# ------------------------------------------------------ whole (l, m) tables

def _two_sum(a, b):
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


def _split(a):
    c = 134217729.0 * a  # 2^27 + 1
    hi = c - (c - a)
    return hi, a - hi


def _two_prod(a, b):
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    return p, ((ah * bh - p) + ah * bl + al * bh) + al * bl


def _dd_power(beta: float, m: int) -> tuple[float, float]:
    """beta**m (of the stored double) as an unevaluated sum hi + lo."""
    exact = Fraction(beta) ** m
    hi = float(exact)
    return hi, float(exact - Fraction(hi))


@dataclass
class NuTable:
    """nu_for_fixed_point over a rectangle of (l, m), one row per l."""

    ls: np.ndarray
    ms: np.ndarray
    nu: np.ndarray
    nu_lo: np.ndarray
    multiplier: np.ndarray
    intercept: np.ndarray  # of the return map
    residual: np.ndarray  # |beta^m (-tau lam^l + nu + nu_lo) - 1|
    period: np.ndarray

    def fixed_points(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.intercept / (1.0 - self.multiplier)


def nu_table(data: CycleCentralData, ls: Sequence[int], ms: Sequence[int]) -> NuTable:
    """Vectorized nu_for_fixed_point and closing residual.

    Powers come from Python floats so every entry matches the scalar path
    bit for bit.  The residual runs in double-double arithmetic, accurate
    to roughly 1e-30 absolute on these magnitudes.
    """
    ls = np.asarray(ls, dtype=np.int64)
    ms = np.asarray(ms, dtype=np.int64)
    if (ls < 0).any() or (ms < 0).any():
        raise ValueError("l and m must be non-negative")
    lam_l = np.array([data.lam ** int(l) for l in ls])[:, None]
    beta_m = np.array([data.beta ** int(m) for m in ms])[None, :]
    beta_inv = np.array([data.beta ** (-int(m)) for m in ms])[None, :]
    tau = float(data.tau)
    nu, nu_lo = _two_sum(beta_inv, tau * lam_l)
    # same operation order as return_map
    slope = beta_m * (tau * (lam_l * -1.0))
    intercept = beta_m * nu
    # inner = nu + nu_lo - tau lam^l as three non-overlapping terms
    u_hi, u_lo = _two_sum(nu, -tau * lam_l)
    s2, e2 = _two_sum(u_lo, nu_lo)
    pw = [_dd_power(float(data.beta), int(m)) for m in ms]
    bh = np.array([p[0] for p in pw])[None, :]
    bl = np.array([p[1] for p in pw])[None, :]
    acc, comp = np.full(slope.shape, -1.0), np.zeros(slope.shape)
    for t in (u_hi, s2, e2):
        p, q = _two_prod(bh, t)
        for term in (p, q, bl * t):
            acc, err = _two_sum(acc, term)
            comp = comp + err
    residual = np.abs(acc + comp)
    period = (ms * data.pi_b)[None, :] + (ls * data.pi_a)[:, None] + data.t_ab + data.t_ba
    return NuTable(ls, ms, nu, np.broadcast_to(nu_lo, nu.shape).copy(), slope, intercept, residual, period)


# ---------------------------------------------------------------- corbd solver

@dataclass(frozen=True)
class CorbdSolution:
    k: int
    p: int
    q: int
    beta_bar: float
    xi_offset: float
    nu_k: float
    orientation: Orientation
    residual_1: float
    residual_2: float

    @property
    def long_orbit(self) -> tuple[int, int]:
        """(l, m) of the orbit with k A-steps."""
        return (self.k, self.p)

    @property
    def short_orbit(self) -> tuple[int, int]:
        """(l, m) of the orbit with k - 2 A-steps."""
        return (self.k - 2, self.q)


BRACKET_LO = 1.0 + 1e-9
BRACKET_HI = 64.0
ROOT_TOL = 1e-13


def _solve_increasing(g, lo: float, hi: float, tol: float = ROOT_TOL, max_iter: int = 400) -> float:
    """Root of g on [lo, hi] with g(lo) < 0 < g(hi); bisection plus a secant probe."""
    glo, ghi = g(lo), g(hi)
    x = 0.5 * (lo + hi)
    for _ in range(max_iter):
        # secant probe, kept only if it lands strictly inside the bracket
        if ghi != glo:
            s = hi - ghi * (hi - lo) / (ghi - glo)
            if lo < s < hi:
                gs = g(s)
                if abs(gs) < tol:
                    return s
                if gs < 0:
                    lo, glo = s, gs
                else:
                    hi, ghi = s, gs
        x = 0.5 * (lo + hi)
        gx = g(x)
        if abs(gx) < tol or hi - lo < 4 * math.ulp(x):
            return x
        if gx < 0:
            lo, glo = x, gx
        else:
            hi, ghi = x, gx
    return x


def corbd_solve(data: CycleCentralData, k: int, p: int, q: int,
                orientation: Orientation | str | None = None,
                beta_max: float = BRACKET_HI) -> CorbdSolution:
    """Solve the two simultaneous closing equations for a common beta_bar.

    Preserving: beta_bar^p (lam^(k-2) - lam^k + beta_bar^-q) = 1, nu = lam^(k-2) + xi.
    Reversing:  beta_bar^q (lam^(k-2) - lam^k + beta_bar^-p) = 1, nu = -lam^k + xi.
    The residual has two roots on (1, beta_max] in general; the larger one (the
    small-offset branch) is returned.
    """
    orientation = Orientation(orientation) if orientation is not None else data.orientation
    if k % 2 or k < 4:
        raise ValueError("k must be even and >= 4")
    if p < 1 or q < 1:
        raise ValueError("p and q must be positive")
    lam = data.lam
    gap = lam ** (k - 2) - lam ** k
    if gap < 1e-300:
        raise Degenerate(f"lambda^(k-2) - lambda^k = {gap!r} is below tolerance")
    if orientation is Orientation.PRESERVING:
        outer, inner = p, q
        if not q > p:
            raise ValueError("preserving case requires q > p")
    else:
        outer, inner = q, p
        if not p > q:
            raise ValueError("reversing case requires p > q")

    def g(b: float) -> float:
        return math.exp(outer * math.log(b)) * gap + math.exp((outer - inner) * math.log(b)) - 1.0

    # scan a geometric grid from the top for the last sign change
    n = 2048
    ratio = math.log(beta_max / BRACKET_LO) / n
    grid = [BRACKET_LO * math.exp(ratio * i) for i in range(n + 1)]
    grid[-1] = beta_max
    vals = [g(b) for b in grid]
    root = None
    for i in range(n, 0, -1):
        if vals[i] == 0.0:
            root = grid[i]
            break
        if vals[i - 1] * vals[i] < 0.0:
            sgn = 1.0 if vals[i] > 0.0 else -1.0
            root = _solve_increasing(lambda b: sgn * g(b), grid[i - 1], grid[i])
            break
    if root is None:
        raise NoRoot(f"no sign change of the closing residual on ({BRACKET_LO}, {beta_max}]")

    beta_bar = root
    xi = beta_bar ** (-inner)
    tau = orientation.tau
    nu, nu_lo = two_sum(lam ** (k - 2) if orientation is Orientation.PRESERVING else -lam ** k, xi)
    # first condition: the k-2 orbit with q B-steps; second: the k orbit with p B-steps
    r1 = exact_closing(beta_bar, lam ** (k - 2), tau, nu, nu_lo, q)
    r2 = exact_closing(beta_bar, lam ** k, tau, nu, nu_lo, p)
    return CorbdSolution(k=k, p=p, q=q, beta_bar=beta_bar, xi_offset=xi, nu_k=nu,
                         orientation=orientation, residual_1=r1, residual_2=r2)


def multiplier_closed_form(lam: float, beta_bar: float, xi_offset: float, m: int,
                           orientation: Orientation | str) -> float:
    orientation = Orientation(orientation)
    if not 0.0 < lam < 1.0:
        raise OutOfRegime("lambda must lie in (0, 1)")
    load = beta_bar ** m * xi_offset
    if load >= 1.0:
        raise OutOfRegime(f"beta_bar^m * xi = {load!r} >= 1")
    if orientation is Orientation.PRESERVING:
        return (1.0 - load) * lam ** 2 / (1.0 - lam ** 2)
    return (1.0 - load) / (1.0 - lam ** 2)


def solved_multiplier(sol: CorbdSolution, lam: float) -> float:
    """|beta_bar^m lam^l| for the orbit the closed form describes."""
    if sol.orientation is Orientation.PRESERVING:
        l, m = sol.k, sol.p
    else:
        l, m = sol.k - 2, sol.q
    return math.exp(m * math.log(sol.beta_bar) + l * math.log(lam))


def closed_form_exponent(sol: CorbdSolution) -> int:
    """The m that pairs with the solved orbit in multiplier_closed_form."""
    return sol.p if sol.orientation is Orientation.PRESERVING else sol.q


def theta_bound(data: CycleCentralData | float, orientation: Orientation | str | None = None) -> float:
    lam = data.lam if isinstance(data, CycleCentralData) else float(data)
    if orientation is None:
        orientation = data.orientation if isinstance(data, CycleCentralData) else Orientation.PRESERVING
    v = multiplier_closed_form(lam, 1.0, 0.0, 0, orientation)
    return 2.0 * max(v, 1.0 / v)


def franks_rescale_factor(multiplier: float, period: int, eps: float) -> float:
    if multiplier == 0.0 or period < 1 or eps < 0:
        raise ValueError("need multiplier != 0, period >= 1, eps >= 0")
    return (1.0 + eps) * abs(multiplier) ** (-1.0 / period)


def biaccumulation_alignment(lam: float, zeta_c: float, k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    return (-lam * zeta_c - lam * lam) / k


# ----------------------------------------------------------- scalar inequalities

@dataclass(frozen=True)
class InequalityReport:
    name: str
    lhs: float
    rhs: float
    holds: bool
    context: dict = field(default_factory=dict)

    @classmethod
    def less(cls, name: str, lhs: float, rhs: float, **context) -> "InequalityReport":
        return cls(name=name, lhs=float(lhs), rhs=float(rhs), holds=bool(lhs < rhs), context=context)

    def margin(self) -> float:
        return self.rhs - self.lhs


def constant_check(data: CycleCentralData, C: float) -> InequalityReport:
    """C must exceed 16/|chi_A| with chi_A = ln(lambda)/pi_a."""
    return InequalityReport.less("C_constant", 16.0 / abs(data.chi_a), C, lam=data.lam, pi_a=data.pi_a)


def scalar_checks(data: CycleCentralData, C: float, chi_parent: float, l: int, m: int, t: int,
                    parent_log_multiplier: float | None = None,
                    parent_period: int | None = None) -> list[InequalityReport]:
    """The four scalar tests for a child built from m parent repetitions and l A-periods.

    With no parent data the parent is the B saddle itself (multiplier beta,
    period pi_b).  t is the number of transition steps added by the child.
    """
    if not chi_parent > 0:
        raise ValueError("chi_parent must be positive")
    if parent_log_multiplier is None:
        parent_log_multiplier = math.log(data.beta)
    if parent_period is None:
        parent_period = data.pi_b
    ctx = dict(l=l, m=m, t=t, C=C, chi_parent=chi_parent)
    out = [constant_check(data, C)]

    period = m * parent_period + l * data.pi_a + t
    log_sigma = m * parent_log_multiplier + l * math.log(data.lam)
    chi = log_sigma / period if period > 0 else float("nan")
    out.append(InequalityReport.less("exponent_positive", 0.0, chi, **ctx))
    out.append(InequalityReport.less("exponent_halving", chi, 0.5 * chi_parent, **ctx))

    fraction = m * parent_period / period if period > 0 else float("nan")
    out.append(InequalityReport.less("fraction", 1.0 - C * chi_parent, fraction, **ctx))

    # l < -(log T)/log(lam^(1/2)) - m log(beta_eq^2)/log(lam^(1/2)), T = 1
    transition_constant = 1.0
    half_log_lam = 0.5 * math.log(data.lam) * data.pi_a
    l_bound = -math.log(transition_constant) / half_log_lam - m * 2.0 * parent_log_multiplier / half_log_lam
    out.append(InequalityReport.less("l_bound", l, l_bound, transition_constant=transition_constant, **ctx))
    return out
