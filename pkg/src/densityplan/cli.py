"""Command-line front end.

Exit codes: 0 success, 2 scenario validation failure, 3 infeasible
instance (a named check failed), 4 solver failure or numerical trouble.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .errors import (InfeasibleError, NumericalError,
                     ScenarioValidationError, SolverFailure, ValidationError)
from .pipeline import run_pipeline, write_heatmap
from .scenario import parse_scenario

_STAGE_OF = {
    "solve-game": "solve-game",
    "predict": "predict",
    "synthesize": "synthesize",
    "evaluate": "evaluate",
    "run": "evaluate",
}


def _add_common(parser, *, needs_out=True):
    parser.add_argument("--scenario", required=True, help="scenario JSON file")
    parser.add_argument("--out", required=needs_out,
                        default=None, help="output directory")
    parser.add_argument("--mode", choices=("exaggeration", "ambiguity"),
                        default=None, help="override the scenario's deception mode")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the scenario's sampling seed")
    parser.add_argument("--tol", type=float, default=None,
                        help="override the solver tolerance")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="densityplan",
        description="Deceptive density-control planning against "
                    "maximum-entropy adversary predictions.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, descr in (
            ("solve-game", "solve the allocation games only"),
            ("predict", "games plus adversary predictions"),
            ("synthesize", "games, predictions, and deceptive synthesis"),
            ("evaluate", "full pipeline including observer evaluation"),
            ("run", "full pipeline (alias of evaluate)")):
        p = sub.add_parser(name, help=descr)
        _add_common(p)
    hm = sub.add_parser("heatmap", help="re-render a density CSV as a PGM image")
    hm.add_argument("--scenario", required=True, help="scenario JSON (grid geometry)")
    hm.add_argument("--csv", required=True, help="density CSV (row,col,value)")
    hm.add_argument("--out", required=True, help="output directory")
    return parser


def _heatmap_command(args) -> int:
    scenario = parse_scenario(args.scenario)
    density = {}
    lines = Path(args.csv).read_text().splitlines()
    for line in lines[1:]:
        row, col, value = line.split(",")
        value = float(value)
        if value >= 0:
            density[(int(col), int(row))] = value
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, pgm_path = write_heatmap(density, scenario.width, scenario.height,
                                       scenario.obstacles,
                                       out / Path(args.csv).stem)
    print(pgm_path)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "heatmap":
            return _heatmap_command(args)
        scenario = parse_scenario(args.scenario)
        result = run_pipeline(scenario, args.out, mode=args.mode,
                              seed=args.seed, tol=args.tol,
                              stop_after=_STAGE_OF[args.command])
        print(result.out_dir / "report.json")
        return 0
    except ScenarioValidationError as exc:
        for issue in exc.issues:
            print(f"scenario error: {issue}", file=sys.stderr)
        return 2
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 3
    except (SolverFailure, NumericalError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
