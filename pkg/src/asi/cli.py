"""Command-line entry point: ``asi solve | bench | check | phantom``.

Exit codes
  0  converged (solve), all audits passed (check), success (bench, phantom)
  2  bad command-line usage or invalid parameters
  3  stopped at the epoch limit without converging
  4  diverged (iterate norm above 1e12 or non-finite)
  5  staleness violation
  6  input/output error
  7  audit failure
  8  run aborted (repeated worker failures)
"""

from __future__ import annotations

import csv
import logging
import math
import os
import sys
from pathlib import Path

import click

from . import harness, storage
from .errors import AsiError, InvalidParameter
from .phantom import make_phantom, write_pgm
from .problems import default_angles, make_projector
from .runtime import ABORTED, CONVERGED, DIVERGED, MAX_EPOCHS, STALENESS

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NOT_CONVERGED = 3
EXIT_DIVERGED = 4
EXIT_STALENESS = 5
EXIT_IO = 6
EXIT_AUDIT = 7
EXIT_ABORTED = 8

REASON_EXIT = {CONVERGED: EXIT_OK, MAX_EPOCHS: EXIT_NOT_CONVERGED, DIVERGED: EXIT_DIVERGED,
               STALENESS: EXIT_STALENESS, ABORTED: EXIT_ABORTED}

OUTPUT_ENV = "ASI_OUTPUT_DIR"


def _outdir(value) -> Path:
    path = Path(value or os.environ.get(OUTPUT_ENV) or "asi-out")
    path.mkdir(parents=True, exist_ok=True)
    return path


def problem_options(f):
    opts = [
        click.option("--problem", type=click.Choice(["random", "phantom", "load"]), default="random", show_default=True),
        click.option("--M", "M", type=int, default=20, show_default=True, help="rows of a random system"),
        click.option("--N", "N", type=int, default=10, show_default=True, help="columns of a random system"),
        click.option("--nnz", type=int, default=3, show_default=True, help="nonzeros per row of a random system"),
        click.option("--n", type=int, default=64, show_default=True, help="phantom side length"),
        click.option("--angles", type=int, default=90, show_default=True),
        click.option("--detectors", type=int, default=None, help="default ceil(sqrt(2) n) + 4"),
        click.option("--A", "A_path", type=click.Path(), default=None, help="Matrix Market file"),
        click.option("--b", "b_path", type=click.Path(), default=None),
        click.option("--x", "x_path", type=click.Path(), default=None, help="known solution, optional"),
        click.option("--family", type=click.Choice(["art", "drop"]), default="drop", show_default=True),
        click.option("--r", type=int, default=40, show_default=True, help="number of row blocks"),
        click.option("--partition", type=click.Choice(["contiguous", "strided", "overlapping"]),
                     default="contiguous", show_default=True),
        click.option("--overlap", type=int, default=1, show_default=True),
        click.option("--column-counts", type=click.Choice(["block", "global"]), default="block", show_default=True),
        click.option("--seed", type=int, default=0, show_default=True),
    ]
    for o in reversed(opts):
        f = o(f)
    return f


def run_options(f):
    opts = [
        click.option("--alg", type=click.Choice(["asi", "ekn", "km"]), default="asi", show_default=True),
        click.option("--w", type=int, default=1, show_default=True, help="number of workers"),
        click.option("--tau", type=int, default=0, show_default=True, help="staleness cap"),
        click.option("--lambda", "lam", default="auto", show_default=True,
                     help="step size, or 'auto' for 1/(2 tau + 1 + epsilon)"),
        click.option("--epsilon", type=float, default=1e-3, show_default=True),
        click.option("--unsafe", is_flag=True, help="allow steps above the delay-safe bound"),
        click.option("--stop", type=click.Choice(["residual", "true_error", "max_epochs"]), default="residual",
                     show_default=True),
        click.option("--threshold", type=float, default=1e-6, show_default=True, help="relative stopping threshold"),
        click.option("--max-epochs", type=float, default=1000, show_default=True),
        click.option("--engine", type=click.Choice(["simulate", "threaded"]), default="simulate", show_default=True),
        click.option("--delays", type=click.Choice(["pool", "uniform", "max", "zero"]), default="pool",
                     show_default=True,
                     help="simulated delays: worker pool events, uniform random <= tau, always tau, or none"),
        click.option("--dispatch", type=click.Choice(["per-node", "global"]), default="per-node", show_default=True),
        click.option("--t-min", type=int, default=1, show_default=True, help="simulated service time range"),
        click.option("--t-max", type=int, default=3, show_default=True),
        click.option("--outdir", type=click.Path(), default=None, help=f"default ${OUTPUT_ENV} or ./asi-out"),
    ]
    for o in reversed(opts):
        f = o(f)
    return f


def _config(**kw) -> harness.RunConfig:
    if kw.get("A_path") and kw.get("problem") == "random":
        kw["problem"] = "load"
    if kw.get("lam") not in (None, "auto"):
        try:
            kw["lam"] = float(kw["lam"])
        except ValueError:
            raise InvalidParameter(f"--lambda must be a number or 'auto', got {kw['lam']!r}")
    return harness.RunConfig(**kw).validate()


def _fail(code: int, msg: str):
    click.echo(f"error: {msg}", err=True)
    sys.exit(code)


@click.group()
@click.option("-v", "--verbose", is_flag=True)
def main(verbose):
    """Asynchronous sequential inertial solvers for sparse consistent systems."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@problem_options
@run_options
def solve(**kw):
    """Run one solve and write run.csv and summary.json."""
    try:
        cfg = _config(**kw)
        system = harness.build_problem(cfg)
        rec = harness.execute(cfg, system)
        out = _outdir(cfg.outdir)
        rec.write_csv(out / "run.csv")
        summary = rec.summary_dict()
        storage.write_json(out / "summary.json", summary)
    except InvalidParameter as e:
        _fail(EXIT_USAGE, str(e))
    except OSError as e:
        _fail(EXIT_IO, str(e))
    except AsiError as e:
        _fail(EXIT_USAGE, str(e))
    s = rec.summary
    click.echo(f"{s['reason']}: {s['epochs']:.2f} epochs, {s['iterations']} iterations, "
               f"realized tau {s['realized_tau']}, relative residual {s.get('residual_b', math.nan):.3e}")
    if s["diagnostic"]:
        click.echo(s["diagnostic"], err=True)
    click.echo(f"wrote {out / 'run.csv'} and {out / 'summary.json'}")
    sys.exit(REASON_EXIT.get(s["reason"], EXIT_ABORTED))


@main.command()
@problem_options
@run_options
@click.option("--ws", default="1,2,4,8", show_default=True, help="comma-separated worker counts")
@click.option("--trials", type=int, default=5, show_default=True)
@click.option("--algs", default="asi,ekn", show_default=True)
def bench(ws, trials, algs, **kw):
    """Sweep worker counts and seeds; write bench_runs.csv, bench_table.csv and bench.json."""
    try:
        cfg = _config(**kw)
        wlist = [int(v) for v in ws.split(",") if v.strip()]
        alist = [a.strip() for a in algs.split(",") if a.strip()]
        system = harness.build_problem(cfg)
        _, ops = harness.build_ops(cfg, system)
        res = harness.bench(cfg, wlist, trials, alist, system, ops,
                            progress=lambda r: click.echo(f"  {r['alg']} w={r['w']} seed={r['seed']}: "
                                                          f"{r['reason']} after {r['epochs']:.1f} epochs"))
        out = _outdir(cfg.outdir)
        table = res.summary()
        with open(out / "bench_runs.csv", "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=list(res.rows[0]), lineterminator="\n")
            wr.writeheader()
            wr.writerows(res.rows)
        with open(out / "bench_table.csv", "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["algorithm", "metric"] + [f"w={w}" for w in wlist])
            for alg in alist:
                for metric, key in (("time", "mean_time"), ("# epochs", "mean_epochs"), ("speedup", "speedup")):
                    wr.writerow([alg.upper(), metric] + [repr(table[(alg, w)][key]) for w in wlist])
        storage.write_json(out / "bench.json", {"config": cfg.to_dict(), "ws": wlist, "trials": trials,
                                                 "table": {f"{a}/w={w}": v for (a, w), v in table.items()},
                                                 "runs": res.rows})
    except InvalidParameter as e:
        _fail(EXIT_USAGE, str(e))
    except OSError as e:
        _fail(EXIT_IO, str(e))
    unit = "wall seconds" if cfg.engine == "threaded" else "simulated time units"
    click.echo(f"{'alg':<5}{'w':>4}{'epochs':>10}{'time':>12}{'speedup':>9}  (time in {unit})")
    for (alg, w), s in sorted(table.items()):
        click.echo(f"{alg:<5}{w:>4}{s['mean_epochs']:>10.1f}{s['mean_time']:>12.1f}{s['speedup']:>9.2f}")


@main.command()
@problem_options
@click.option("--w", type=int, default=4, show_default=True, help="workers for the dry-run dispatch stream")
@click.option("--trials", type=int, default=100, show_default=True, help="probe pairs per operator")
def check(w, trials, **kw):
    """Audit a problem and its operators; exit 7 if anything fails."""
    try:
        cfg = _config(**kw)
        system = harness.build_problem(cfg)
        items = harness.run_audits(system, cfg.family, cfg.r, cfg.partition, cfg.overlap, cfg.column_counts,
                                   w=w, probe_trials=trials, seed=cfg.seed)
    except InvalidParameter as e:
        _fail(EXIT_USAGE, str(e))
    except OSError as e:
        _fail(EXIT_IO, str(e))
    for it in items:
        click.echo(it.line())
    sys.exit(EXIT_OK if all(it.passed for it in items) else EXIT_AUDIT)


@main.command()
@click.option("--n", type=int, default=64, show_default=True)
@click.option("--angles", type=int, default=90, show_default=True)
@click.option("--detectors", type=int, default=None, help="default ceil(sqrt(2) n) + 4")
@click.option("--outdir", type=click.Path(), default=None, help=f"default ${OUTPUT_ENV} or ./asi-out")
def phantom(n, angles, detectors, outdir):
    """Write phantom.pgm, A.mtx, b.txt, x_true.txt and geometry.json."""
    try:
        out = _outdir(outdir)
        img = make_phantom(n)
        system = make_projector(n, default_angles(angles), detectors, image=img)
        write_pgm(out / "phantom.pgm", img.values)
        paths = storage.save_system(out, system, config={"n": n, "angles": angles, "detectors": detectors})
    except InvalidParameter as e:
        _fail(EXIT_USAGE, str(e))
    except OSError as e:
        _fail(EXIT_IO, str(e))
    click.echo(f"{system.A.shape[0]} x {system.A.shape[1]} system, {system.A.nnz} nonzeros")
    for p in [out / "phantom.pgm", *paths.values()]:
        click.echo(f"wrote {p}")


if __name__ == "__main__":
    main()
