"""Independent reference computations shared by the test modules."""
import random

from cyclelab.quotient import CycleCentralData
from cyclelab.system import AmbientPoint, ChartId, CycleSpec, build_model, step, word, a, b, t_ab, t_ba

# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list = []

OFFSETS = {"ab": {"s": [0.3], "u": [-0.2]}, "ba": {"s": [-0.1], "u": [0.4]}}


def offset_system():
    return build_model(CycleSpec(CycleCentralData(lam=0.5, beta=2.0), rho_s=0.25, rho_u=4.0, strong_offsets=OFFSETS))


def random_word(rng: random.Random, max_period: int):
    """A closed word made of excursions b^m T_ba a^l T_ab(nu)."""
    tokens, period = [], 0
    while True:
        m, l = rng.randint(1, 6), rng.randint(0, 6)
        cost = m + l + 4
        if period + cost > max_period:
            break
        tokens += [b(m), t_ba(), a(l), t_ab(rng.uniform(-1.5, 1.5))]
        period += cost
        if rng.random() < 0.4:
            break
    if not tokens:
        tokens = [b(1), t_ba(), a(1), t_ab(0.3)]
    return word(*tokens)


def flat_route(system, w):
    """(chart, nu) for every step of one period, independent of the package's step iterator."""
    route = []
    for t in w.tokens:
        d = system.data
        if t.kind == "a":
            route += [(ChartId("A", j), None) for j in range(d.pi_a)] * t.count
        elif t.kind == "b":
            route += [(ChartId("B", j), None) for j in range(d.pi_b)] * t.count
        elif t.kind == "ab":
            route += [(ChartId("ab", j), t.nu if j == 0 else None) for j in range(d.t_ab)]
        elif t.kind == "ba":
            route += [(ChartId("ba", j), None) for j in range(d.t_ba)]
    return route


def word_map(system, route, p):
    for i, (ch, nu) in enumerate(route):
        nxt = route[(i + 1) % len(route)][0]
        p = step(system, AmbientPoint(ch, p.x_s, p.x_c, p.x_u), target=nxt, nu=nu)
    return p


def stabilized_base(system, route, iterations=200):
    start = route[0][0]
    f = lambda s, c, u: word_map(system, route, AmbientPoint(start, (s,), c, (u,)))
    p0, p1 = f(0.0, 0.0, 0.0), f(0.0, 1.0, 0.0)
    sl, ic = p1.x_c - p0.x_c, p0.x_c
    u1 = f(0.0, 0.0, 1.0).x_u[0]
    su, iu = u1 - p0.x_u[0], p0.x_u[0]
    c, s, u = 0.5, 0.5, 0.5
    for _ in range(iterations):
        c = sl * c + ic if abs(sl) < 1 else (c - ic) / sl
        s = f(s, 0.0, 0.0).x_s[0]
        u = (u - iu) / su
    return s, c, u, sl


