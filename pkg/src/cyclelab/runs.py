"""Experiment drivers shared by the command line and the tests.

Each driver returns a plain dict (the run report) plus an exit status.
"""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import RunConfig, validate_config, with_override
from .errors import (
    BoundViolated,
    CountingShortfall,
    CycleLabError,
    Degenerate,
    DisjointnessFailed,
    Infeasible,
    NonPositive,
    NoRoot,
    SpecViolation,
    TowerRejected,
)
from .measures import PeriodicMeasure, central_exponent_of_measure, check_ergodicity_criterion, function_by_id
from .quotient import (
    closing_residual,
    corbd_solve,
    multiplier_closed_form,
    nu_for_fixed_point,
    return_map,
    scalar_checks,
    solved_multiplier,
    closed_form_exponent,
)
from .system import build_model
from .tower import (
    Tower,
    b_saddle,
    build_tower,
    extend,
    init_tower,
    kappa_product,
    r_sequence,
    rebuild_tower,
    support_bound,
    verify_good_approx,
    _per_level,
)

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_VIOLATION = 3
EXIT_PARSE = 64
EXIT_VALIDATION = 65


def config_echo(cfg: RunConfig) -> dict:
    return cfg.model_dump(mode="python")


# ------------------------------------------------------------------- solve

def solve_rows(cfg: RunConfig) -> list[dict]:
    spec = cfg.model.to_spec()
    d = spec.central
    t = d.t_ab + d.t_ba
    rows = []
    l_lo, l_hi = cfg.solve.l
    m_lo, m_hi = cfg.solve.m
    for l in range(l_lo, l_hi + 1):
        for m in range(m_lo, m_hi + 1):
            sol = nu_for_fixed_point(d, l, m)
            fp = return_map(d, sol.nu, l, m)(1.0)
            checks = scalar_checks(d, cfg.tower.C, d.chi_b, l, m, t)
            rows.append({
                "kind": "fixed_point", "l": l, "m": m, "nu": sol.nu, "multiplier": sol.multiplier,
                "period": sol.period, "chi": sol.chi, "residual": closing_residual(d, sol),
                "fixed_point_error": abs(fp - 1.0), "checks_green": all(r.holds for r in checks),
            })
    for row in cfg.solve.corbd:
        sol = corbd_solve(d, row.k, row.p, row.q, row.orientation)
        m = closed_form_exponent(sol)
        closed = multiplier_closed_form(d.lam, sol.beta_bar, sol.xi_offset, m, sol.orientation)
        rows.append({
            "kind": "corbd", "k": row.k, "p": row.p, "q": row.q,
            "orientation": sol.orientation.value, "beta_bar": sol.beta_bar, "xi": sol.xi_offset,
            "nu": sol.nu_k, "residual_1": sol.residual_1, "residual_2": sol.residual_2,
            "multiplier": solved_multiplier(sol, d.lam), "multiplier_closed_form": closed,
        })
    return rows


def run_solve(cfg: RunConfig) -> tuple[dict, int]:
    report = {"command": "solve", "config": config_echo(cfg)}
    try:
        report["rows"] = solve_rows(cfg)
        report["status"] = "ok"
        return report, EXIT_OK
    except (NoRoot, Degenerate) as exc:
        report["rows"] = []
        report["status"] = "no_solution"
        report["failure"] = f"{type(exc).__name__}: {exc}"
        return report, EXIT_INFEASIBLE


# ------------------------------------------------------------------- tower

def certificate_dict(c) -> dict:
    return {
        "gamma": c.gamma, "kappa": c.kappa, "gamma_measured": c.gamma_measured,
        "included_blocks": c.included_blocks, "fiber_count": c.fiber_count,
        "gamma_bound_ok": c.gamma_bound_ok, "kappa_ok": c.kappa_ok, "fibers_equal": c.fibers_equal,
        "ceiling": c.ceiling, "kappa_bound": c.kappa_bound,
    }


def level_rows(tower: Tower) -> list[dict]:
    try:
        rs = r_sequence(tower, check=False) if tower.levels else []
    except CycleLabError:
        rs = [None] * len(tower.levels)
    rows = []
    for lv, r in zip(tower.levels, rs):
        rows.append({
            "n": lv.n, "l": lv.l, "m": lv.m, "period": lv.period, "sigma": lv.sigma, "chi": lv.chi,
            "gamma": lv.gamma, "kappa": lv.kappa, "d": lv.d, "r": r, "exit_offset": lv.exit_offset,
            "certificate": certificate_dict(lv.certificate),
        })
    return rows


FLAT_COLUMNS = ["n", "l", "m", "period", "sigma", "chi", "gamma", "kappa", "d", "r", "exit_offset",
                "gamma_measured", "included_blocks", "fiber_count", "gamma_bound_ok", "kappa_ok",
                "fibers_equal"]


def flat_levels(rows: list[dict]) -> list[dict]:
    out = []
    for r in rows:
        flat = {k: v for k, v in r.items() if k != "certificate"}
        for k in ("gamma_measured", "included_blocks", "fiber_count", "gamma_bound_ok", "kappa_ok", "fibers_equal"):
            flat[k] = r["certificate"][k]
        out.append(flat)
    return out


def tower_summary(tower: Tower) -> dict:
    out = {"levels": level_rows(tower)}
    kp = []
    if tower.levels:
        for n in range(1, tower.top.n + 1):
            try:
                p = kappa_product(tower, n)
                kp.append({"from_n": n, "built": p.built, "tail": p.tail, "value": p.value})
            except NonPositive as exc:
                kp.append({"from_n": n, "error": str(exc)})
    out["kappa_products"] = kp
    out["inequalities"] = [
        {"level": lv.n, "name": r.name, "lhs": r.lhs, "rhs": r.rhs, "holds": r.holds}
        for lv in tower.levels for r in lv.reports
    ]
    return out


def run_build(cfg: RunConfig) -> tuple[dict, int, Tower | None]:
    system = build_model(cfg.model.to_spec())
    tcfg = cfg.tower.to_config()
    report = {"command": "build-tower", "config": config_echo(cfg)}
    tower = Tower(system, tcfg, b_saddle(system))
    try:
        if cfg.tower.levels > 0:
            tower = init_tower(system, tcfg)
        while len(tower.levels) < cfg.tower.levels:
            extend(tower)
        status, code = "ok", EXIT_OK
    except Infeasible as exc:
        status, code = "infeasible", EXIT_INFEASIBLE
        report["failure"] = {"message": str(exc), "ledger": exc.ledger}
    except TowerRejected as exc:
        status, code = "rejected", EXIT_VIOLATION
        report["failure"] = {"message": str(exc)}
    report["status"] = status
    report.update(tower_summary(tower))
    return report, code, tower


# ------------------------------------------------------------------ verify

@dataclass
class Assertion:
    name: str
    passed: bool
    detail: str

    def as_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "detail": self.detail}


def condition_assertions(tower: Tower, gammas: list | None = None) -> list[Assertion]:
    """Conditions 1 to 5 of the construction as literal checks.

    ``gammas`` overrides the per-level gamma values (as read from a tower file).
    """
    system = tower.system
    cfg = tower.config
    spec = system.spec
    lv = tower.levels
    top = len(lv)
    if gammas is None:
        gammas = [x.gamma for x in lv]
    out = []

    # 1: every orbit point lies in its chart box
    box = 1.0 + spec.overflow_tol
    worst = 0.0
    for x in lv:
        c = x.orbit.points()
        worst = max(worst, float(np.max(np.abs(c.central()))))
        if c.xs.size:
            worst = max(worst, float(np.max(np.abs(c.xs))))
        if c.xu.size:
            worst = max(worst, float(np.max(np.abs(c.xu))))
    out.append(Assertion("condition_1_chart_boxes", worst <= box, f"max coordinate {worst!r} vs box {box!r}"))

    # 2: strictly growing periods
    periods = [x.period for x in lv]
    ok = all(a < b for a, b in zip(periods, periods[1:]))
    out.append(Assertion("condition_2_growing_periods", ok, f"periods {periods}"))

    # 3: good approximation certificates under the stated gamma
    msgs, ok = [], True
    first = lv[0].certificate if lv else None
    if first is not None and not (first.gamma_bound_ok and first.fibers_equal and first.included_blocks > 0):
        ok = False
        msgs.append("level 1 does not shadow B")
    for n in range(1, top):
        g = gammas[n - 1]
        need = max(1.0 - cfg.C * lv[n - 1].chi, _per_level(cfg.kappa_floor, n + 1))
        if g is None or not g > 0:
            ok = False
            msgs.append(f"gamma_{n} missing")
            continue
        cert = verify_good_approx(lv[n].orbit, lv[n - 1].orbit, g, need)
        if not (cert.gamma_bound_ok and cert.kappa_ok and cert.fibers_equal):
            ok = False
            msgs.append(f"X_{n + 1} is not a ({g!r}, {need!r}) good approximation of X_{n} (kappa {cert.kappa!r})")
        if cert.fiber_count != cert.included_blocks:
            ok = False
            msgs.append(f"fiber count mismatch at level {n + 1}")
    out.append(Assertion("condition_3_good_approximation", ok, "; ".join(msgs) or "all certificates hold"))

    # 4: gamma_n < min_{i<=n} d_i / (3 * 2^n)
    msgs, ok = [], True
    for n in range(1, top):
        g = gammas[n - 1]
        ceil = tower.gamma_ceiling(n)
        if g is None or not g < ceil:
            ok = False
            msgs.append(f"gamma_{n} = {g!r} is not below min d_i/(3*2^{n}) = {ceil!r}")
    out.append(Assertion("condition_4_gamma_bound", ok, "; ".join(msgs) or "all gamma below their ceilings"))

    # 5: positive exponents halving by the configured ratio
    msgs, ok = [], True
    for n in range(1, top):
        a, b = lv[n - 1].chi, lv[n].chi
        if not (0.0 < b < cfg.halving_ratio * a):
            ok = False
            msgs.append(f"chi_{n + 1} = {b!r} not in (0, {cfg.halving_ratio} * chi_{n})")
    if lv and not lv[0].chi > 0:
        ok = False
        msgs.append("chi_1 is not positive")
    out.append(Assertion("condition_5_exponent_halving", ok, "; ".join(msgs) or "exponents halve"))
    return out


def _close(a, b, rtol=1e-12) -> bool:
    if a is None or b is None:
        return a is None and b is None
    if isinstance(a, float) and isinstance(b, float) and math.isinf(a) and math.isinf(b):
        return a == b
    return abs(a - b) <= rtol * max(abs(a), abs(b), 1e-300)


def run_verify(cfg: RunConfig, tower_doc: dict | None = None) -> tuple[dict, int]:
    report = {"command": "verify", "config": config_echo(cfg)}
    system = build_model(cfg.model.to_spec())
    tcfg = cfg.tower.to_config()
    recorded = None
    try:
        if tower_doc is None:
            tower = build_tower(system, tcfg, cfg.tower.levels)
        else:
            recorded = tower_doc.get("levels", [])
            tower = rebuild_tower(system, tcfg, recorded)
    except (Infeasible, TowerRejected, SpecViolation) as exc:
        report["status"] = "failed"
        report["first_failure"] = f"build: {exc}"
        return report, EXIT_VIOLATION

    gammas = [r.get("gamma") for r in recorded] if recorded is not None else None
    checks = condition_assertions(tower, gammas) if tower.levels else []

    if recorded is not None:
        mism = []
        for rec, row in zip(recorded, level_rows(tower)):
            for key in ("period", "sigma", "chi", "gamma", "kappa", "d"):
                if not _close(rec.get(key), row[key]):
                    mism.append(f"level {row['n']} {key}: file {rec.get(key)!r} rebuilt {row[key]!r}")
        checks.append(Assertion("round_trip", not mism, "; ".join(mism) or "file matches rebuild"))

    r_values, supports, ergo = [], [], []
    if tower.levels:
        try:
            r_values = r_sequence(tower)
            checks.append(Assertion("r_chain", True, "r_n < d_n/3 and r_n <= d_n 2^(1-n)/3"))
        except BoundViolated as exc:
            checks.append(Assertion("r_chain", False, str(exc)))
        try:
            prods = [kappa_product(tower, n).value for n in range(1, tower.top.n + 1)]
            checks.append(Assertion("kappa_products_positive", all(p > 0 for p in prods), f"{prods}"))
        except NonPositive as exc:
            checks.append(Assertion("kappa_products_positive", False, str(exc)))
        ok, msgs = True, []
        top = tower.top.n
        for n in range(1, min(cfg.verify.support_max_n, top - 1) + 1):
            for m in range(n + 1, top + 1):
                try:
                    sb = support_bound(tower, n, m)
                    supports.append({"n": n, "m": m, "balls": sb.ball_count, "radius": sb.radius,
                                     "measure_lower_bound": sb.measure_lower_bound,
                                     "required_points": sb.required_points, "min_points": sb.min_points})
                except (DisjointnessFailed, CountingShortfall) as exc:
                    ok = False
                    msgs.append(f"n={n} m={m}: {exc}")
        checks.append(Assertion("support_bounds", ok, "; ".join(msgs) or f"{len(supports)} pairs counted"))
        ok, msgs = True, []
        for eps in cfg.verify.eps:
            block = {"eps": eps, "functions": []}
            for fid in cfg.verify.dictionary:
                phi = function_by_id(system, fid)
                rep = check_ergodicity_criterion(tower, phi, eps)
                block["functions"].append({
                    "phi": fid, "N": rep.N, "delta": rep.delta, "passed": rep.passed,
                    "good_fraction": [{"m": m, "value": v} for m, v in sorted(rep.good_fraction.items())],
                    "max_deviation": [{"m": m, "n": n, "value": v, "bound": rep.deviation_bound[(m, n)]}
                                      for (m, n), v in sorted(rep.max_deviation.items())],
                    "notes": rep.notes,
                })
                if not rep.passed:
                    ok = False
                    msgs.append(f"{fid} at eps={eps}")
            ergo.append(block)
        checks.append(Assertion("ergodicity_criterion", ok, "; ".join(msgs) or "all functions pass"))
        exps = [abs(central_exponent_of_measure(PeriodicMeasure(lv.orbit)) - lv.chi) for lv in tower.levels]
        checks.append(Assertion("exponent_consistency", max(exps) <= 1e-12, f"max |integral - chi| = {max(exps)!r}"))

    report.update(tower_summary(tower))
    report["r_sequence"] = r_values
    report["support_bounds"] = supports
    report["ergodicity"] = ergo
    report["assertions"] = [c.as_dict() for c in checks]
    failed = [c for c in checks if not c.passed]
    report["status"] = "ok" if not failed else "failed"
    report["first_failure"] = f"{failed[0].name}: {failed[0].detail}" if failed else None
    return report, (EXIT_OK if not failed else EXIT_VIOLATION)


# ------------------------------------------------------------------- sweep

def _sweep_cell(args) -> dict:
    index, data, params = args
    cfg = validate_config(data)
    row = {"index": index, **params}
    try:
        system = build_model(cfg.model.to_spec())
        tower = build_tower(system, cfg.tower.to_config(), cfg.tower.levels)
        row.update(status="ok", levels=len(tower.levels),
                   chi_top=tower.top.chi if tower.levels else None,
                   period_top=tower.top.period if tower.levels else None,
                   kappa_product=kappa_product(tower, 1).value if tower.levels else None, message="")
    except Infeasible as exc:
        row.update(status="infeasible", levels=exc.ledger.get("level", 0) - 1, chi_top=None,
                   period_top=None, kappa_product=None, message=str(exc))
    except CycleLabError as exc:
        row.update(status=type(exc).__name__, levels=0, chi_top=None, period_top=None,
                   kappa_product=None, message=str(exc))
    return row


def sweep_cells(cfg: RunConfig) -> list[tuple[int, dict, dict]]:
    keys = list(cfg.sweep.grid)
    cells = []
    for i, values in enumerate(itertools.product(*(cfg.sweep.grid[k] for k in keys))):
        params = dict(zip(keys, values))
        try:
            data = with_override(cfg, params).model_dump()
        except Exception as exc:  # invalid cell: record it instead of aborting the sweep
            cells.append((i, None, {**params, "_error": str(exc)}))
            continue
        cells.append((i, data, params))
    return cells


def run_sweep(cfg: RunConfig) -> tuple[dict, int]:
    cells = sweep_cells(cfg)
    valid = [c for c in cells if c[1] is not None]
    if cfg.sweep.workers > 1 and len(valid) > 1:
        with ProcessPoolExecutor(max_workers=cfg.sweep.workers) as pool:
            done = list(pool.map(_sweep_cell, valid))
    else:
        done = [_sweep_cell(c) for c in valid]
    by_index = {r["index"]: r for r in done}
    rows = []
    for i, data, params in cells:
        if data is None:
            err = params.pop("_error")
            rows.append({"index": i, **params, "status": "invalid", "levels": 0, "chi_top": None,
                         "period_top": None, "kappa_product": None, "message": err})
        else:
            rows.append(by_index[i])
    return {"command": "sweep", "config": config_echo(cfg), "status": "ok", "rows": rows}, EXIT_OK


def plot_rows(report: dict) -> list[dict]:
    levels = report.get("levels", [])
    kp = {k["from_n"]: k.get("value") for k in report.get("kappa_products", [])}
    h = report["config"]["tower"]["halving_ratio"]
    rows = []
    for lv in levels:
        chi1 = levels[0]["chi"]
        rows.append({
            "n": lv["n"], "chi": lv["chi"], "chi_envelope": chi1 * h ** (lv["n"] - 1),
            "kappa_product_from_n": kp.get(lv["n"]), "gamma": lv["gamma"],
            "gamma_ceiling": None, "d": lv["d"], "r": lv["r"],
        })
    for i, row in enumerate(rows):
        n = row["n"]
        row["gamma_ceiling"] = min(l["d"] for l in levels[:n]) / (3.0 * 2.0 ** n)
    return rows
