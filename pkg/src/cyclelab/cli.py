"""Command line: cyclelab {solve, build-tower, verify, sweep, report}.

Exit codes: 0 success, 2 infeasible search, 3 violated assertion,
64 usage or parse error, 65 invalid configuration.
"""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from . import report as rpt
from .config import ConfigParseError, ConfigValidationError, load_config, validate_config
from .runs import (
    EXIT_PARSE,
    EXIT_VALIDATION,
    FLAT_COLUMNS,
    flat_levels,
    plot_rows,
    run_build,
    run_solve,
    run_sweep,
    run_verify,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_PARSE, f"{self.prog}: error: {message}\n")


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML run configuration")
    common.add_argument("--out", type=Path, help="write the report here instead of stdout")
    common.add_argument("--format", choices=("json", "csv"), help="report format (default from config)")
    common.add_argument("--levels", type=int, help="override tower.levels")
    common.add_argument("--no-timing", action="store_true", help="omit the timing block")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--emit-plot-data", action="store_true",
                        help="also write <out>.plot.csv with per-level series")

    p = _Parser(prog="cyclelab", description="Periodic-orbit towers over a simple heterodimensional cycle.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("solve", parents=[common], help="fixed-point and corbd solver tables")
    sub.add_parser("build-tower", parents=[common], help="build the orbit tower")
    v = sub.add_parser("verify", parents=[common], help="check a tower against every condition")
    v.add_argument("tower", nargs="?", type=Path, help="tower report from build-tower (rebuilt if omitted)")
    sub.add_parser("sweep", parents=[common], help="build towers over a parameter grid")
    r = sub.add_parser("report", parents=[common], help="re-emit a saved report")
    r.add_argument("input", type=Path)
    return p


def _resolve_config(args, doc: dict | None = None):
    if args.config is None and doc is not None and "config" in doc:
        cfg = validate_config(doc["config"])
    else:
        cfg = load_config(args.config)
    updates = {}
    if args.levels is not None:
        if args.levels < 0:
            raise ConfigValidationError("levels: must be non-negative")
        updates["tower"] = cfg.tower.model_copy(update={"levels": args.levels})
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.format is not None:
        updates["output"] = cfg.output.model_copy(update={"format": args.format})
    if updates:
        cfg = validate_config({**cfg.model_dump(), **{k: (v.model_dump() if hasattr(v, "model_dump") else v)
                                                     for k, v in updates.items()}})
    return cfg


def _render(report: dict, fmt: str) -> str:
    if fmt == "json":
        return rpt.dumps(report)
    if "assertions" in report:
        return rpt.to_csv(report["assertions"], ["name", "passed", "detail"])
    if "levels" in report:
        return rpt.to_csv(flat_levels(report["levels"]), FLAT_COLUMNS)
    rows = report.get("rows", [])
    cols: list = []
    for r in rows:
        cols += [k for k in r if k not in cols]
    return rpt.to_csv(rows, cols)


def _write(text: str, path: Path | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _load_doc(path: Path) -> dict:
    try:
        return rpt.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ConfigParseError(f"cannot read report {path}: {exc}") from None


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    start = time.perf_counter()
    try:
        doc = None
        if args.command == "verify" and args.tower is not None:
            doc = _load_doc(args.tower)
        if args.command == "report":
            doc = _load_doc(args.input)
        cfg = _resolve_config(args, doc)
    except ConfigParseError as exc:
        print(f"cyclelab: parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ConfigValidationError as exc:
        print(f"cyclelab: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_VALIDATION

    if args.emit_plot_data and args.out is None:
        print("cyclelab: --emit-plot-data needs --out", file=sys.stderr)
        return EXIT_PARSE

    if args.command == "solve":
        report, code = run_solve(cfg)
    elif args.command == "build-tower":
        report, code, _ = run_build(cfg)
    elif args.command == "verify":
        report, code = run_verify(cfg, doc)
    elif args.command == "sweep":
        report, code = run_sweep(cfg)
    else:
        report, code = doc, 0

    if not args.no_timing and args.command != "report":
        report["timing"] = {"seconds": time.perf_counter() - start}
    fmt = cfg.output.format
    out = args.out if args.out is not None else (Path(cfg.output.path) if cfg.output.path else None)
    _write(_render(report, fmt), out)
    if args.emit_plot_data and "levels" in report:
        _write(rpt.to_csv(plot_rows(report)), out.with_name(out.name + ".plot.csv"))

    if code != 0:
        reason = report.get("first_failure") or report.get("failure") or report.get("status")
        if isinstance(reason, dict):
            reason = reason.get("message")
        print(f"cyclelab {args.command}: exit {code}: {reason}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
