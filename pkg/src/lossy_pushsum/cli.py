"""Command-line entry point: ``lossy-pushsum <command> [options]``.

Every command writes a CSV whose leading ``#`` lines record the package
version and the fully resolved configuration, so that a file can be
regenerated byte-for-byte.  Options may also come from a flat
``key = value`` file given with ``--config``; command-line flags win.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import io
import logging
import math
import sys
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from . import __version__
from .bounds import bound_set, write_bounds_csv
from .coefficients import (
    TriangleHistogram,
    empirical_measure,
    sample_taus,
    write_tau_csv,
)
from .experiments import label_regions, run_comparison, simulate_grid
from .measure import invariance_iterate, measure_R, recombine_upper_bound
from .protocol import ProtocolParams

logger = logging.getLogger("lossy_pushsum")

# not part of the provenance header: they do not influence any value
_UNRECORDED = {"out", "regions_out", "samples_out", "bounds_out", "threads", "config",
               "verbose", "no_plot_script", "func"}

DEFAULT_P_EDGES = "0,0.005,0.01,0.02,0.05,0.1:0.95:0.05,1"


class UsageError(ValueError):
    pass


def parse_grid(text: str) -> list[float]:
    """Parse ``"0.1,0.2"`` or ``"start:stop:step"`` (inclusive), or a mix of both."""
    values: list[float] = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if ":" in part:
            start, stop, step = (float(v) for v in part.split(":"))
            if step <= 0:
                raise UsageError(f"grid step must be positive in {part!r}")
            count = int(math.floor((stop - start) / step + 1e-9)) + 1
            values.extend(round(start + k * step, 12) for k in range(count))
        else:
            values.append(float(part))
    if not values:
        raise UsageError("empty grid")
    return values


def read_config(path: str) -> dict:
    config = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        config[key.replace("-", "_")] = value
    return config


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"refusing to write non-finite value {x!r}")
    return repr(x)


def _header(args: argparse.Namespace) -> str:
    lines = [f"# lossy_pushsum {__version__}", f"# command = {args.command}"]
    for key in sorted(vars(args)):
        if key in _UNRECORDED or key == "command":
            continue
        lines.append(f"# {key} = {getattr(args, key)}")
    return "\n".join(lines) + "\n"


@contextlib.contextmanager
def _output(path: Optional[str]) -> Iterator[io.TextIOBase]:
    if path in (None, "-"):
        yield sys.stdout
        return
    with open(path, "w", newline="") as fh:
        yield fh


def _write_table(path, args, columns, rows, extra_header: Sequence[str] = ()) -> None:
    with _output(path) as fh:
        fh.write(_header(args))
        for line in extra_header:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([v if isinstance(v, str) else _fmt(v) for v in row])


def _plot_script(args, path, body: str) -> None:
    if path in (None, "-") or args.no_plot_script:
        return
    script = Path(str(path) + ".gp")
    script.write_text(
        f"# gnuplot script for {Path(path).name}\n"
        "set datafile separator ','\nset key autotitle columnhead\n"
        f"data = '{Path(path).name}'\n{body}\n"
    )


def cmd_bounds(args) -> None:
    grid = parse_grid(args.p_grid)
    if any(not 0.0 <= p <= 1.0 for p in grid):
        raise UsageError("p-grid must lie within [0, 1]")
    buf = io.StringIO()
    write_bounds_csv(buf, grid)
    with _output(args.out) as fh:
        fh.write(_header(args))
        fh.write(buf.getvalue())
    _plot_script(args, args.out, "set xlabel 'p'\nset ylabel 'R'\n"
                 "plot for [c=3:6] data using 1:c with lines")


def cmd_simulate(args) -> None:
    grid = parse_grid(args.p_grid)
    if any(not 0.0 <= p < 1.0 for p in grid):
        raise UsageError("simulate needs every p in [0, 1)")
    if args.trials < 2:
        raise UsageError("simulate needs at least 2 trials for a standard error")
    estimates = simulate_grid(grid, args.n, args.trials, args.seed, args.threads, args.alpha)
    rows = [(e.p, e.R_hat, e.stderr, e.nonconverged_fraction)
            for e in estimates]
    _write_table(args.out, args, ("p", "R_hat", "stderr", "nonconverged_fraction"), rows)
    _plot_script(args, args.out, "set xlabel 'p'\nset ylabel 'R'\n"
                 "plot data using 1:2:3 with yerrorbars")


def cmd_hist(args) -> None:
    if args.n not in (2, 3):
        raise UsageError("hist supports n = 2 or n = 3")
    params = ProtocolParams(args.n, args.p, args.alpha)
    if args.samples_out:
        batch = sample_taus(params, args.trials, args.seed, args.threads)
        with _output(args.samples_out) as fh:
            fh.write(_header(args))
            write_tau_csv(fh, batch)
    hist = empirical_measure(params, args.trials, args.bins, args.seed, args.threads)
    if isinstance(hist, TriangleHistogram):
        c = hist.centers
        rows = [(c[i], c[j], hist.mass[i, j]) for i in range(hist.bins) for j in range(hist.bins)
                if c[i] + c[j] <= 1.0 + 0.5 / hist.bins]
        _write_table(args.out, args, ("tau_1", "tau_2", "mass"), rows)
        _plot_script(args, args.out, "set xlabel 'tau_1'\nset ylabel 'tau_2'\n"
                     "plot data using 1:2:3 with points pt 5 ps 0.3 palette")
    else:
        rows = zip(hist.centers, hist.bins)
        _write_table(args.out, args, ("bin_center", "mass"), rows)
        _plot_script(args, args.out, "set xlabel 'tau_1'\nplot data using 1:2 with steps")


def cmd_compare(args) -> None:
    records = run_comparison(
        samples=args.samples, trials_per_sample=args.trials, n=args.n, eps=args.eps,
        seed=args.seed, max_steps=args.max_steps, tol=args.tol, threads=args.threads,
    )
    columns = ("sample", "algorithm", "p", "alpha", "error", "stderr", "speed", "converged_fraction")
    rows = [(str(r.sample), r.algorithm, r.p, r.alpha, r.error,
             r.stderr if math.isfinite(r.stderr) else "", r.speed, r.converged_fraction)
            for r in records]
    _write_table(args.out, args, columns, rows)
    regions = label_regions(records, parse_grid(args.error_edges), parse_grid(args.p_edges))
    regions_out = args.regions_out
    if regions_out is None and args.out not in (None, "-"):
        out = Path(args.out)
        regions_out = str(out.with_name(out.stem + "_regions" + out.suffix))
    if regions_out:
        _write_table(regions_out, args,
                     ("p_center", "error_center", "region", "pushsum_count", "consensus_count"),
                     regions.rows())
        _plot_script(args, regions_out, "set xlabel 'error'\nset ylabel 'p'\n"
                     "plot data using 2:1:(stringcolumn(3) eq 'a' ? 1 : stringcolumn(3) eq 'b' ? 2 : 3) "
                     "with points pt 5 lc variable")
    for label in "abc":
        logger.info("region %s: %.0f%% of cells", label, 100 * regions.fraction(label))


def cmd_fixpoint(args) -> None:
    nu = invariance_iterate(args.p, args.N, args.iterations, args.start)
    R = measure_R(nu)
    _write_table(args.out, args, ("bin_center", "mass"), zip(nu.centers, nu.bins),
                 extra_header=[f"R = {_fmt(R)}"])
    _plot_script(args, args.out, "set xlabel 'tau_1'\nplot data using 1:2 with lines")
    if args.bounds_out:
        bs = bound_set(args.p)
        recombined = recombine_upper_bound(args.p) if 0.0 < args.p < 1.0 else None
        _write_table(
            args.bounds_out, args,
            ("p", "N", "R_fixpoint", "lower_closed", "lower_series", "upper_general",
             "upper_highp", "recombined_upper"),
            [(args.p, args.N, R, bs.lower_closed, bs.lower_series, bs.upper_general,
              bs.upper_highp, recombined)],
        )
    logger.info("fixed point p=%g N=%d: R = %.6g", args.p, args.N, R)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value file with option defaults")
    common.add_argument("--seed", type=int, default=0, help="base seed (64-bit integer)")
    common.add_argument("--out", default="-", help="output CSV (default: stdout)")
    common.add_argument("--threads", type=int, default=1, help="worker processes")
    common.add_argument("--no-plot-script", action="store_true",
                        help="do not write a gnuplot script next to the CSV")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="lossy-pushsum", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bounds", parents=[common], help="analytical bounds on a p grid")
    p.add_argument("--p-grid", default="0:1:0.05")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo error on a p grid")
    p.add_argument("--p-grid", default="0.1:0.9:0.1")
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--trials", type=int, default=100_000)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("hist", parents=[common], help="histogram of the coefficient law")
    p.add_argument("--p", type=float, default=0.6)
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--bins", type=int, default=101)
    p.add_argument("--samples-out", help="also write the raw coefficient samples")
    p.set_defaults(func=cmd_hist)

    p = sub.add_parser("compare", parents=[common], help="push-sum vs consensus speed/error")
    p.add_argument("--samples", type=int, default=10_000, help="number of (p, alpha) draws")
    p.add_argument("--trials", type=int, default=16, help="runs per draw and algorithm")
    p.add_argument("--n", type=int, default=5)
    p.add_argument("--eps", type=float, default=1e-6, help="spread target for the speed metric")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-steps", type=int, default=200_000)
    p.add_argument("--error-edges", default="0:0.1:0.01")
    p.add_argument("--p-edges", default=DEFAULT_P_EDGES)
    p.add_argument("--regions-out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("fixpoint", parents=[common], help="solve the two-node invariance equation")
    p.add_argument("--p", type=float, default=0.6)
    p.add_argument("--N", type=int, default=100_001)
    p.add_argument("--iterations", type=int, default=500)
    p.add_argument("--start", choices=("uniform", "centered"), default="uniform")
    p.add_argument("--bounds-out", help="also write a one-row bound comparison CSV")
    p.set_defaults(func=cmd_fixpoint)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    config = read_config(known.config)
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    chosen = next((a for a in argv if a in subparsers.choices), None)
    if chosen is None:
        return
    sub = subparsers.choices[chosen]
    unknown = set(config) - {a.dest for a in sub._actions}
    if unknown:
        raise UsageError(f"unknown config keys for {chosen}: {', '.join(sorted(unknown))}")
    sub.set_defaults(**config)


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
    except (OSError, UsageError) as exc:
        print(f"lossy-pushsum: error: {exc}", file=sys.stderr)
        return 2
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (UsageError, ValueError) as exc:
        print(f"lossy-pushsum: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"lossy-pushsum: I/O error: {exc}", file=sys.stderr)
        return 1
    return 0
