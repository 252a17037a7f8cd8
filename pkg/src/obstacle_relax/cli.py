"""Command-line entry point.

Exit status: 0 when every solve converged (or every check passed),
1 when something did not, 2 for usage or configuration errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import bench
from .grid import WEIGHTINGS
from .smoothing import KINDS

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

DEFAULT_SCHEDULES = {
    "table": "1e-1,1e-2,1e-3,1e-4",
    "oracle": "1e-1,1e-2,1e-3,1e-4",
    "gradcheck": "1e-1",
    "calibrate": "1e-3",
    "solve": "1e-3",
}


def parse_alphas(text: str) -> tuple[float, ...]:
    text = text.strip()
    if not text:
        return ()
    try:
        return tuple(float(tok) for tok in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--n", type=int, default=None, help="subdivisions per side (default 20; 8 for gradcheck)")
    common.add_argument("--alpha", type=parse_alphas, default=None,
                        help="smoothing parameter or strictly decreasing comma list")
    common.add_argument("--theta", choices=KINDS, default="frac")
    common.add_argument("--solver", choices=bench.SOLVERS, default="barrier")
    common.add_argument("--weighting", choices=WEIGHTINGS, default="node-sum")
    common.add_argument("--tol", type=float, default=1e-3)
    common.add_argument("--max-iter", type=int, default=500)
    common.add_argument("--seed", type=int, default=42)
    common.add_argument("--out", default=None, help="output path (CSV for tables; a .json report is written alongside)")
    common.add_argument("--deterministic", action="store_true",
                        help="sequential, reproducible run (recorded in the report)")
    common.add_argument("--cold", action="store_true", help="do not warm-start along the alpha schedule")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="obstacle-relax",
                                     description="Relaxed obstacle-constrained optimal control benchmarks")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("table", parents=[common], help="alpha sweep with one table row per alpha")
    sub.add_parser("gradcheck", parents=[common], help="finite-difference checks of all derivatives")
    sub.add_parser("oracle", parents=[common], help="compare relaxed states with the obstacle-problem solver")
    sub.add_parser("calibrate", parents=[common], help="choose the weighting mode against the reference objective")
    solve = sub.add_parser("solve", parents=[common], help="single solve (continuation over --alpha)")
    solve.add_argument("--dump", default=None, help="write a grid dump of y, v, xi, psi for plotting")
    return parser


def _spec(args) -> bench.RunSpec:
    alphas = args.alpha if args.alpha is not None else parse_alphas(DEFAULT_SCHEDULES[args.command])
    n = args.n if args.n is not None else (8 if args.command == "gradcheck" else 20)
    return bench.RunSpec(n=n, theta=args.theta, alphas=alphas, solver=args.solver, weighting=args.weighting,
                         tol=args.tol, max_iter=args.max_iter, out=args.out, seed=args.seed,
                         deterministic=args.deterministic, warm_start=not args.cold)


def _print_rows(rows) -> None:
    print(",".join(bench.TABLE_FIELDS))
    for r in rows:
        print(",".join(bench.row_cells(r)))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        spec = _spec(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    try:
        if args.command == "table":
            rows, report = bench.run_table(spec)
            _print_rows(rows)
            return EXIT_OK if report["all_converged"] else EXIT_FAIL
        if args.command == "gradcheck":
            report = bench.run_gradcheck(spec)
            for name, err in report["errors"].items():
                print(f"{name:26s} {err:.3e}")
            print(f"max relative error {report['max_error']:.3e} (limit {report['limit']:.0e})")
            if spec.out:
                bench.write_report(report, bench._report_path(spec.out))
            return EXIT_OK if report["passed"] else EXIT_FAIL
        if args.command == "oracle":
            report = bench.run_oracle_compare(spec)
            print("alpha,vi_distance_inf,comp_error,converged")
            for s in report["stages"]:
                print(f"{bench.format_sci(s['alpha'])},{bench.format_sci(s['vi_distance_inf'])},"
                      f"{bench.format_sci(s['comp_error'])},{s['converged']}")
            print(f"distance nonincreasing: {report['distance_nonincreasing']}")
            ok = report["all_converged"] and report["distance_nonincreasing"]
            return EXIT_OK if ok else EXIT_FAIL
        if args.command == "calibrate":
            alpha = spec.alphas[-1] if spec.alphas else 1e-3
            mode, report = bench.calibrate_weighting(spec.n, spec.theta, alpha, cfg=spec.config())
            print(f"# selected weighting: {mode}")
            for k, res in report["modes"].items():
                print(f"{k:10s} objective={res['objective']:.6e} gap={res['relative_gap']:.3e} "
                      f"converged={res['converged']}")
            if spec.out:
                bench.write_report(report, bench._report_path(spec.out))
            return EXIT_OK if all(r["converged"] for r in report["modes"].values()) else EXIT_FAIL
        report = bench.solve_single(spec, dump=args.dump)
        print(json.dumps(bench._jsonable(report["stages"]), indent=2))
        return EXIT_OK if report["all_converged"] else EXIT_FAIL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
