"""Piecewise-affine model of a simple cycle and the periodic orbits it carries.

Charts: one per phase of the contracting saddle A, one per phase of the
expanding saddle B and one per step of each transition corridor.  The
corridor B -> A starts at chart ``ba0``; a point there with central
coordinate 1 is the exit point of the B-side.  Every step acts as
x_s -> rho_s x_s + a_s, x_c -> affine, x_u -> rho_u x_u + a_u.

Orbits are given by itinerary words; the word decides at the exit charts
whether to stay near the saddle or to take the transition.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import DegenerateWord, NoBranch, ParentNotAnchored, SpecViolation
from .points import PointCloud, min_gap
from .quotient import AffineMap1D, CycleCentralData, IDENTITY, compose, fixed_point, power

ROLES = ("A", "B", "ab", "ba")


@dataclass(frozen=True)
class ChartId:
    role: str
    j: int = 0

    def __str__(self) -> str:
        return f"{self.role}{self.j}"


@dataclass(frozen=True)
class AmbientPoint:
    chart: ChartId
    x_s: tuple = ()
    x_c: float = 0.0
    x_u: tuple = ()


@dataclass(frozen=True)
class CycleSpec:
    central: CycleCentralData = field(default_factory=CycleCentralData)
    s_dim: int = 1
    u_dim: int = 1
    rho_s: float | None = None  # default 0.5*lambda
    rho_u: float | None = None  # default 2*beta
    chart_radius: float = 1e-3
    chart_separation: float = 1.0
    # {"ab": {"s": [...], "u": [...]}, "ba": {...}}; "u" acts on a corridor's
    # first step, "s" on its last step
    strong_offsets: dict = field(default_factory=dict)
    overflow_tol: float = 1e-3

    @property
    def rs(self) -> float:
        return 0.5 * self.central.lam if self.rho_s is None else self.rho_s

    @property
    def ru(self) -> float:
        return 2.0 * self.central.beta if self.rho_u is None else self.rho_u


@dataclass(frozen=True)
class BranchMap:
    source: ChartId
    target: ChartId
    central: AffineMap1D
    rho_s: float
    a_s: tuple
    rho_u: float
    a_u: tuple

    @property
    def central_log_derivative(self) -> float:
        return math.log(abs(self.central.slope))


# ------------------------------------------------------------------- words

@dataclass(frozen=True)
class Token:
    kind: str  # 'a', 'b', 'ab', 'ba', 'sub'
    count: int = 1
    nu: float = 0.0
    sub: "ItineraryWord | None" = None

    def __post_init__(self):
        if self.kind not in ("a", "b", "ab", "ba", "sub"):
            raise ValueError(f"unknown token kind {self.kind!r}")
        if self.count < 0:
            raise ValueError("negative repetition count")
        if (self.kind == "sub") != (self.sub is not None):
            raise ValueError("sub tokens need a word, other tokens must not carry one")


SIDES = {"a": ("A", "A"), "b": ("B", "B"), "ab": ("A", "B"), "ba": ("B", "A")}


@dataclass(frozen=True)
class ItineraryWord:
    tokens: tuple

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(t for t in self.tokens if t.count > 0))

    def __str__(self) -> str:
        parts = []
        for t in self.tokens:
            if t.kind in ("a", "b"):
                parts.append(f"[{t.kind}^{t.count}]" if t.count != 1 else f"[{t.kind}]")
            elif t.kind == "ab":
                parts.append(f"[T_ab({t.nu:.6g})]" * t.count)
            elif t.kind == "ba":
                parts.append("[T_ba]" * t.count)
            else:
                parts.append(f"({t.sub})^{t.count}")
        return "".join(parts)

    def sides(self) -> tuple[str, str]:
        return token_sides(self.tokens[0])[0], token_sides(self.tokens[-1])[1]

    def is_closed(self) -> bool:
        if not self.tokens:
            return False
        seq = []
        for t in self.tokens:
            if t.kind == "sub" and not t.sub.is_closed():
                return False
            seq.append(token_sides(t))
        return all(seq[i][1] == seq[(i + 1) % len(seq)][0] for i in range(len(seq)))


def token_sides(t: Token) -> tuple[str, str]:
    if t.kind == "sub":
        return t.sub.sides()
    return SIDES[t.kind]


def a(n: int = 1) -> Token:
    return Token("a", n)


def b(n: int = 1) -> Token:
    return Token("b", n)


def t_ab(nu: float) -> Token:
    return Token("ab", 1, nu=float(nu))


def t_ba() -> Token:
    return Token("ba", 1)


def rep(word: ItineraryWord, n: int) -> Token:
    return Token("sub", n, sub=word)


def word(*tokens: Token) -> ItineraryWord:
    return ItineraryWord(tuple(tokens))


def level1_word(nu: float, l: int, m: int) -> ItineraryWord:
    """T_ba, a^l, T_ab(nu), b^m -- base at the B exit with central coordinate 1."""
    return word(t_ba(), a(l), t_ab(nu), b(m))


# ----------------------------------------------------------------- the model

@dataclass(frozen=True)
class StrongAffine:
    """x -> rate*x + offset on a vector space of fixed dimension."""
    rate: float
    offset: tuple

    def compose(self, inner: "StrongAffine") -> "StrongAffine":
        off = tuple(self.rate * o + p for o, p in zip(inner.offset, self.offset))
        return StrongAffine(self.rate * inner.rate, off)


class CycleSystem:
    """Immutable model built from a CycleSpec."""

    def __init__(self, spec: CycleSpec):
        self.spec = spec
        d = spec.central
        self.data = d
        charts = [ChartId("A", j) for j in range(d.pi_a)]
        charts += [ChartId("B", j) for j in range(d.pi_b)]
        charts += [ChartId("ab", j) for j in range(d.t_ab)]
        charts += [ChartId("ba", j) for j in range(d.t_ba)]
        self.charts = tuple(charts)
        self.index = {c: i for i, c in enumerate(charts)}
        self.lam_step = d.lam if d.pi_a == 1 else d.lam ** (1.0 / d.pi_a)
        self.beta_step = d.beta if d.pi_b == 1 else d.beta ** (1.0 / d.pi_b)
        self.metric_scale = spec.chart_radius / math.sqrt(spec.s_dim + 1 + spec.u_dim)
        self.separation = np.full((len(charts), len(charts)), spec.chart_separation)
        np.fill_diagonal(self.separation, 0.0)
        self._offsets = {}
        for kind in ("ab", "ba"):
            entry = spec.strong_offsets.get(kind, {}) if spec.strong_offsets else {}
            s = tuple(float(x) for x in entry.get("s", [0.0] * spec.s_dim))
            u = tuple(float(x) for x in entry.get("u", [0.0] * spec.u_dim))
            if len(s) != spec.s_dim or len(u) != spec.u_dim:
                raise SpecViolation(f"strong offset vectors for {kind} have the wrong dimension")
            self._offsets[kind] = (s, u)
        self.has_strong_offsets = any(any(v) for s, u in self._offsets.values() for v in (s, u))
        self._zero_s = (0.0,) * spec.s_dim
        self._zero_u = (0.0,) * spec.u_dim

    # chart helpers
    def chart_role(self, idx: int) -> str:
        return self.charts[idx].role

    def role_mask(self, role: str) -> np.ndarray:
        return np.array([c.role == role for c in self.charts])

    def chart_log_derivative(self) -> np.ndarray:
        """Per source chart log|central derivative| of its branch (word independent)."""
        out = np.zeros(len(self.charts))
        for i, c in enumerate(self.charts):
            if c.role == "A":
                out[i] = math.log(self.lam_step)
            elif c.role == "B":
                out[i] = math.log(self.beta_step)
        return out

    # per-step pieces of a token: (source chart index, central map, a_s, a_u)
    def token_steps(self, t: Token) -> list:
        d = self.data
        zs, zu = self._zero_s, self._zero_u
        if t.kind == "a":
            m = AffineMap1D(self.lam_step, 0.0)
            return [(self.index[ChartId("A", j)], m, zs, zu) for j in range(d.pi_a)]
        if t.kind == "b":
            m = AffineMap1D(self.beta_step, 0.0)
            return [(self.index[ChartId("B", j)], m, zs, zu) for j in range(d.pi_b)]
        if t.kind in ("ab", "ba"):
            n = d.t_ab if t.kind == "ab" else d.t_ba
            first = d.t_ab_map(t.nu) if t.kind == "ab" else d.t_ba_map()
            s_off, u_off = self._offsets[t.kind]
            steps = []
            for j in range(n):
                cm = first if j == 0 else IDENTITY
                a_u = u_off if j == 0 else zu
                a_s = s_off if j == n - 1 else zs
                steps.append((self.index[ChartId(t.kind, j)], cm, a_s, a_u))
            return steps
        raise ValueError("sub tokens have no single step list")

    def branch(self, source: ChartId, target: ChartId | None = None, nu: float | None = None) -> BranchMap:
        """The branch map leaving source; exit charts need an explicit target."""
        d = self.data
        role, j = source.role, source.j
        zs, zu = self._zero_s, self._zero_u
        rs, ru = self.spec.rs, self.spec.ru
        if source not in self.index:
            raise NoBranch(f"unknown chart {source}")
        if role == "A":
            cm = AffineMap1D(self.lam_step, 0.0)
            if j < d.pi_a - 1:
                nxt = ChartId("A", j + 1)
            else:
                nxt = target or ChartId("A", 0)
                if nxt not in (ChartId("A", 0), ChartId("ab", 0)):
                    raise NoBranch(f"no branch {source} -> {nxt}")
            return BranchMap(source, nxt, cm, rs, zs, ru, zu)
        if role == "B":
            cm = AffineMap1D(self.beta_step, 0.0)
            if j < d.pi_b - 1:
                nxt = ChartId("B", j + 1)
            else:
                nxt = target or ChartId("B", 0)
                if nxt not in (ChartId("B", 0), ChartId("ba", 0)):
                    raise NoBranch(f"no branch {source} -> {nxt}")
            return BranchMap(source, nxt, cm, rs, zs, ru, zu)
        n = d.t_ab if role == "ab" else d.t_ba
        s_off, u_off = self._offsets[role]
        if j == 0:
            if role == "ab":
                if nu is None:
                    raise NoBranch("the A -> B transition needs its parameter nu")
                cm = d.t_ab_map(nu)
            else:
                cm = d.t_ba_map()
        else:
            cm = IDENTITY
        a_u = u_off if j == 0 else zu
        a_s = s_off if j == n - 1 else zs
        if j < n - 1:
            nxt = ChartId(role, j + 1)
        else:
            default = ChartId("B", 0) if role == "ab" else ChartId("A", 0)
            nxt = target or default
            allowed = {default, ChartId("ba", 0)} if role == "ab" else {default, ChartId("ab", 0)}
            if nxt not in allowed:
                raise NoBranch(f"no branch {source} -> {nxt}")
        return BranchMap(source, nxt, cm, rs, a_s, ru, a_u)


def build_model(spec: CycleSpec) -> CycleSystem:
    d = spec.central
    if not 0.0 < spec.rs < 1.0 < spec.ru:
        raise SpecViolation(f"need rho_s < 1 < rho_u, got rho_s={spec.rs}, rho_u={spec.ru}")
    if not spec.rs < d.lam ** (1.0 / d.pi_a):
        raise SpecViolation(f"domination fails: rho_s={spec.rs} must be below lambda^(1/pi_a)={d.lam ** (1.0 / d.pi_a)}")
    if not d.beta ** (1.0 / d.pi_b) < spec.ru:
        raise SpecViolation(f"domination fails: rho_u={spec.ru} must exceed beta^(1/pi_b)={d.beta ** (1.0 / d.pi_b)}")
    if not spec.chart_radius > 0:
        raise SpecViolation("chart_radius must be positive")
    if not spec.chart_separation > 2 * spec.chart_radius:
        raise SpecViolation("chart_separation must exceed 2*chart_radius")
    if spec.s_dim < 0 or spec.u_dim < 0:
        raise SpecViolation("strong dimensions must be non-negative")
    return CycleSystem(spec)


def step(system: CycleSystem, p: AmbientPoint, target: ChartId | None = None,
         nu: float | None = None) -> AmbientPoint:
    br = system.branch(p.chart, target, nu)
    xs = tuple(br.rho_s * x + o for x, o in zip(p.x_s, br.a_s))
    xu = tuple(br.rho_u * x + o for x, o in zip(p.x_u, br.a_u))
    return AmbientPoint(br.target, xs, br.central(p.x_c), xu)


def distance(system: CycleSystem, p: AmbientPoint, q: AmbientPoint) -> float:
    if p.chart != q.chart:
        return float(system.separation[system.index[p.chart], system.index[q.chart]])
    sq = (p.x_c - q.x_c) ** 2
    sq += sum((x - y) ** 2 for x, y in zip(p.x_s, q.x_s))
    sq += sum((x - y) ** 2 for x, y in zip(p.x_u, q.x_u))
    return system.metric_scale * math.sqrt(sq)


# --------------------------------------------------------- word bookkeeping

@dataclass(frozen=True)
class WordSummary:
    period: int
    central: AffineMap1D
    log_abs_sigma: float
    stable: StrongAffine
    unstable_back: StrongAffine  # inverse of the forward strong-unstable map over the word
    first_chart: int
    n_a: int
    n_b: int


def _summaries(system: CycleSystem):
    cache = {}

    def summary(w: ItineraryWord) -> WordSummary:
        key = w
        if key in cache:
            return cache[key]
        spec = system.spec
        period = 0
        central = IDENTITY
        logs = 0.0
        st = StrongAffine(1.0, system._zero_s)
        un = StrongAffine(1.0, system._zero_u)
        n_a = n_b = 0
        first = None
        for t in w.tokens:
            if t.kind == "sub":
                s = summary(t.sub)
                tp, tc, tl = s.period, s.central, s.log_abs_sigma
                ts, tu = s.stable, s.unstable_back
                ta, tb = s.n_a, s.n_b
                if first is None:
                    first = s.first_chart
            else:
                steps = system.token_steps(t)
                if first is None:
                    first = steps[0][0]
                tp = len(steps)
                tc = IDENTITY
                ts = StrongAffine(1.0, system._zero_s)
                tu = StrongAffine(1.0, system._zero_u)
                for _, cm, a_s, a_u in steps:
                    tc = compose(cm, tc)
                    ts = StrongAffine(spec.rs, a_s).compose(ts)
                    # backward: x -> (x - a_u)/rho_u, applied in reverse order
                    tu = tu.compose(StrongAffine(1.0 / spec.ru, tuple(-x / spec.ru for x in a_u)))
                tl = sum(math.log(abs(cm.slope)) for _, cm, _, _ in steps)
                ta = tp if t.kind == "a" else 0
                tb = tp if t.kind == "b" else 0
            n = t.count
            period += n * tp
            central = compose(power(tc, n), central)
            logs += n * tl
            ts_n = _strong_power(ts, n)
            tu_n = _strong_power(tu, n)
            st = ts_n.compose(st)
            un = un.compose(tu_n)
            n_a += n * ta
            n_b += n * tb
        out = WordSummary(period, central, logs, st, un, first if first is not None else 0, n_a, n_b)
        cache[key] = out
        return out

    return summary


def _strong_power(f: StrongAffine, n: int) -> StrongAffine:
    out = StrongAffine(1.0, tuple(0.0 for _ in f.offset))
    base = f
    while n:
        if n & 1:
            out = base.compose(out)
        base = base.compose(base)
        n >>= 1
    return out


def word_summary(system: CycleSystem, w: ItineraryWord) -> WordSummary:
    if not hasattr(system, "_summary_fn"):
        system._summary_fn = _summaries(system)
    return system._summary_fn(w)


# ----------------------------------------------------------------- orbits

@dataclass
class PeriodicOrbit:
    word: ItineraryWord
    base: AmbientPoint
    period: int
    central_return: AffineMap1D
    sigma: float
    chi: float
    log_abs_sigma: float
    system: CycleSystem = field(repr=False, compare=False)
    cloud: PointCloud | None = field(default=None, repr=False, compare=False)

    def points(self) -> PointCloud:
        if self.cloud is None:
            self.cloud = orbit_cloud(self)
        return self.cloud


def realize_orbit(system: CycleSystem, w: ItineraryWord, tol: float = 1e-12) -> PeriodicOrbit:
    if not w.is_closed():
        raise DegenerateWord(f"word {w} is not closed")
    s = word_summary(system, w)
    sigma = s.central.slope
    if abs(abs(sigma) - 1.0) <= tol or abs(s.log_abs_sigma) <= tol:
        raise DegenerateWord(f"central multiplier {sigma!r} has modulus 1")
    if math.isfinite(sigma):
        c = fixed_point(s.central)
    else:
        c = float("nan")
    xs = tuple(o / (1.0 - s.stable.rate) for o in s.stable.offset)
    xu = tuple(o / (1.0 - s.unstable_back.rate) for o in s.unstable_back.offset)
    base = AmbientPoint(system.charts[s.first_chart], xs, c, xu)
    chi = s.log_abs_sigma / s.period
    return PeriodicOrbit(w, base, s.period, s.central, sigma, chi, s.log_abs_sigma, system)


def iter_steps(system: CycleSystem, w: ItineraryWord) -> Iterator[tuple]:
    """One pass over the word's steps: (source chart, slope, intercept, a_s, a_u)."""
    for t in w.tokens:
        if t.kind == "sub":
            for _ in range(t.count):
                yield from iter_steps(system, t.sub)
        else:
            steps = [(ch, cm.slope, cm.intercept, a_s, a_u) for ch, cm, a_s, a_u in system.token_steps(t)]
            for _ in range(t.count):
                yield from steps


def _cyclic_steps(system, w, start):
    s = word_summary(system, w)
    first = True
    while True:
        it = iter_steps(system, w)
        if first:
            for _ in range(start % s.period):
                next(it)
            first = False
        yield from it


def stream_chunks(orbit: PeriodicOrbit, start: int = 0, count: int | None = None,
                  chunk: int = 1 << 14):
    """Yield (charts, x_c, x_s, x_u) numpy chunks for orbit points start..start+count-1.

    Memory is bounded by the chunk size plus a fixed lookahead used for the
    strong-unstable coordinates (which depend on the future of the orbit).
    """
    system = orbit.system
    spec = system.spec
    if count is None:
        count = orbit.period
    rs, ru = spec.rs, spec.ru
    sd, ud = spec.s_dim, spec.u_dim
    need_u = system.has_strong_offsets and ud > 0
    look = int(math.ceil(45.0 / math.log(ru))) + 1 if need_u else 0

    # state at index start
    c = orbit.base.x_c
    xs = np.array(orbit.base.x_s, dtype=float)
    steps = _cyclic_steps(system, orbit.word, 0)
    for _ in range(start):
        ch, sl, ic, a_s, _ = next(steps)
        c = sl * c + ic
        if sd:
            xs = rs * xs + np.asarray(a_s)
    buf = deque()
    for _ in range(look):
        buf.append(next(steps))

    done = 0
    while done < count:
        n = min(chunk, count - done)
        charts = np.empty(n, dtype=np.int64)
        cc = np.empty(n)
        xss = np.empty((n, sd))
        au = np.zeros((n + look, ud))
        for i in range(n):
            buf.append(next(steps))
            ch, sl, ic, a_s, a_u = buf.popleft()
            charts[i] = ch
            cc[i] = c
            if sd:
                xss[i] = xs
                xs = rs * xs + np.asarray(a_s)
            if need_u:
                au[i] = a_u
            c = sl * c + ic
        xuu = np.zeros((n, ud))
        if need_u:
            for k, st in enumerate(buf):
                au[n + k] = st[4]
            acc = np.zeros(ud)
            for i in range(n + look - 1, -1, -1):
                acc = (acc - au[i]) / ru
                if i < n:
                    xuu[i] = acc
        yield charts, cc, xss, xuu
        done += n


def orbit_points(orbit: PeriodicOrbit, start: int = 0, count: int | None = None) -> Iterator[AmbientPoint]:
    charts = orbit.system.charts
    for ch, cc, xs, xu in stream_chunks(orbit, start, count):
        for i in range(len(ch)):
            yield AmbientPoint(charts[ch[i]], tuple(xs[i]), float(cc[i]), tuple(xu[i]))


def orbit_cloud(orbit: PeriodicOrbit) -> PointCloud:
    parts = list(stream_chunks(orbit))
    charts = np.concatenate([p[0] for p in parts])
    comps = np.concatenate([p[1] for p in parts])[:, None]
    xs = np.concatenate([p[2] for p in parts])
    xu = np.concatenate([p[3] for p in parts])
    return PointCloud(charts, comps, xs, xu)


def central_exponent(orbit: PeriodicOrbit, block: int = 1 << 16) -> float:
    """Birkhoff average of log|central derivative| along one period."""
    logs = orbit.system.chart_log_derivative()
    total = 0.0
    for ch, *_ in stream_chunks(orbit, chunk=block):
        total += float(np.sum(logs[ch]))
    return total / orbit.period


def min_orbit_gap(orbit: PeriodicOrbit) -> float:
    if orbit.period == 1:
        return math.inf
    cloud = orbit.points()
    g = min_gap(cloud, orbit.system.metric_scale)
    if len(np.unique(cloud.charts)) > 1:
        g = min(g, orbit.system.spec.chart_separation)
    return g


def brute_force_gap(orbit: PeriodicOrbit) -> float:
    pts = list(orbit_points(orbit))
    best = math.inf
    for i in range(len(pts)):
        for j in range(i + 1, len(pts)):
            best = min(best, distance(orbit.system, pts[i], pts[j]))
    return best


# ------------------------------------------------------------------ children

def is_b_saddle(orbit: PeriodicOrbit) -> bool:
    toks = orbit.word.tokens
    return len(toks) == 1 and toks[0].kind == "b"


def exit_geometry(system: CycleSystem, parent: PeriodicOrbit, m: int, exit_offset: float = 0.0):
    """Offsets (delta_0, delta_m) of the child relative to the parent base.

    The child enters its shadow phase at parent_base + delta_0 and leaves it,
    after m parent periods, at parent_base + delta_m = parent_base + delta_0*sigma^m.
    """
    if is_b_saddle(parent):
        c_p = parent.base.x_c
        delta_m = 1.0 + exit_offset - c_p
    else:
        anchored = parent.base.chart == ChartId("ba", 0) and abs(parent.base.x_c - 1.0) < 1e-3
        if not anchored:
            raise ParentNotAnchored(
                f"parent base must sit in chart ba0 with central coordinate 1, got {parent.base.chart} at {parent.base.x_c!r}")
        delta_m = exit_offset
    if abs(parent.sigma) <= 1.0:
        raise ParentNotAnchored("parent must be central-expanding (|sigma| > 1)")
    sign = (-1.0 if parent.sigma < 0 and m % 2 else 1.0)
    delta_0 = sign * delta_m * math.exp(-m * parent.log_abs_sigma)
    return delta_0, delta_m


def child_cycle(system: CycleSystem, parent: PeriodicOrbit, l: int, m: int,
                exit_offset: float = 0.0, base_central: float | None = None):
    """(nu', word) for the child that repeats the parent m times, then visits A for l periods.

    With exit_offset = 0 the child re-enters exactly at the parent base
    (nu' = c + tau*lam^l for base coordinate c = 1).  A nonzero offset makes the
    child leave at parent_base + exit_offset, so its points differ from the
    parent's and the two orbits have disjoint point sets.
    """
    d = system.data
    delta_0, delta_m = exit_geometry(system, parent, m, exit_offset)
    c_p = parent.base.x_c if base_central is None else base_central
    nu = c_p + delta_0 + d.tau * d.lam ** l * (c_p + delta_m)
    if is_b_saddle(parent):
        w = word(b(m * parent.word.tokens[0].count), t_ba(), a(l), t_ab(nu))
    else:
        w = word(rep(parent.word, m), t_ba(), a(l), t_ab(nu))
    return nu, w
