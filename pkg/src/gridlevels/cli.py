"""Command-line entry point ``gridlevels``.

Subcommands ``build``, ``steady``, ``certify``, ``gains``, ``simulate``,
``compare`` and ``batch`` each run one stage, reusing artifacts found in
``--out``; ``run`` executes the whole pipeline from scratch.

Exit codes: 0 ok, 2 config error, 3 convergence error, 4 stability error.
The log level is read from ``GRIDLEVELS_LOG`` (default ``WARNING``).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import GridLevelsError
from .scenario import (CONTROLLERS, Pipeline, default_scenario, env_log_level, exit_code,
                       load_scenario, run_batch, _clean)

log = logging.getLogger("gridlevels")

STAGE_OF = {"build": "build", "steady": "steady_state", "certify": "certificate",
            "gains": "gains", "simulate": "simulate", "compare": "simulate",
            "batch": "batch", "run": "run"}


def _parser():
    p = argparse.ArgumentParser(prog="gridlevels", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("build", "build and validate the network"),
        ("steady", "solve for the synchronous state"),
        ("certify", "evaluate the Lyapunov certificate"),
        ("gains", "synthesize distributed and centralized gains"),
        ("simulate", "simulate the nonlinear grid"),
        ("compare", "simulate open, distributed and central loops side by side"),
        ("batch", "run the scenario over many perturbation seeds"),
        ("run", "run the whole pipeline and write report.json"),
    ]:
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", type=Path, help="scenario JSON (default: bundled scenario)")
        sp.add_argument("--out", type=Path, help="output directory (default: scenario 'outputs')")
        sp.add_argument("--controller", choices=sorted(CONTROLLERS),
                        help="override the scenario controller")
        if name == "batch":
            sp.add_argument("--seeds", type=int, default=10)
            sp.add_argument("--workers", type=int, default=1)
    return p


def _emit(obj):
    print(json.dumps(_clean(obj), indent=2, sort_keys=True))


def _dispatch(args, pl: Pipeline):
    cmd = args.command
    if cmd == "build":
        g = pl.graph()
        rep = pl.validation()
        _emit({"nodes": g.n, "lines": len(g.lines), "reference": g.reference,
               "validation_passed": rep.passed, "failed_clauses": rep.failed()})
    elif cmd == "steady":
        _emit(pl.steady().to_dict(pl.graph()))
    elif cmd == "certify":
        _emit(pl.certificate().to_dict())
    elif cmd == "gains":
        _emit(pl._gain_summary())
    elif cmd == "simulate":
        _emit(pl.simulate()[0])
    elif cmd == "compare":
        rows = {c: pl.simulate(c)[0] for c in ("open", "distributed", "central")}
        (pl.out / "compare.json").write_text(json.dumps(_clean(rows), indent=2, sort_keys=True))
        _emit(rows)
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=env_log_level(), format="%(levelname)s %(name)s: %(message)s")
    args = _parser().parse_args(argv)
    stage = "config"
    try:
        sc = load_scenario(args.config) if args.config else default_scenario()
        if args.controller:
            sc.sim["controller"] = CONTROLLERS[args.controller]
        stage = STAGE_OF[args.command]
        if args.command == "run":
            rep = Pipeline(sc, args.out).run()
            _emit({"status": rep["status"], "errors": rep["errors"], "verdicts": rep["verdicts"]})
            return rep["errors"][0]["exit_code"] if rep["errors"] else 0
        if args.command == "batch":
            res = run_batch(sc, args.seeds, out=args.out, workers=args.workers)
            _emit({"mean": res["mean"], "failed": res["failed"], "n_seeds": res["n_seeds"]})
            return 0
        return _dispatch(args, Pipeline(sc, args.out, reuse=True))
    except GridLevelsError as exc:
        exc.stage = exc.stage or stage
        print(f"error at stage {exc.stage}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
