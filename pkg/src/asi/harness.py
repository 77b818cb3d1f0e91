"""Run configuration, problem/operator assembly, audits and benchmark sweeps.

The command-line interface is a thin layer over these functions.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .control import ControlSequence, DelayModel, almost_cyclic_check
from .errors import InvalidParameter
from .iteration import ASI, EKN, DEFAULT_EPSILON, StepSchedule
from .linear import ScaledDropOperator, build_blocks, build_operators, spectral_certificate
from .operators import nonexpansive_probe
from .problems import RandomSystemSpec, default_angles, make_projector, make_random_system
from .runtime import NodePool, RunRecord, StoppingRule, TimingModel, simulate, simulate_async
from .storage import load_system

log = logging.getLogger(__name__)

ALGORITHMS = ("asi", "ekn", "km")
FAMILIES = ("art", "drop")


@dataclass
class RunConfig:
    """Everything needed to reproduce one run; echoed into every artifact."""

    problem: str = "random"  # random | phantom | load
    M: int = 20
    N: int = 10
    nnz: int = 3
    n: int = 64
    angles: int = 90
    detectors: int | None = None
    A_path: str | None = None
    b_path: str | None = None
    x_path: str | None = None
    alg: str = "asi"
    family: str = "drop"
    r: int = 40
    partition: str = "contiguous"
    overlap: int = 1
    column_counts: str = "block"
    w: int = 1
    tau: int = 0
    lam: float | str = "auto"
    epsilon: float = DEFAULT_EPSILON
    unsafe: bool = False
    stop: str = "residual"
    threshold: float = 1e-6
    max_epochs: float = 1000
    seed: int = 0
    engine: str = "simulate"  # simulate | threaded
    delays: str = "pool"  # pool | uniform | max | zero
    dispatch: str = "per-node"
    t_min: int = 1
    t_max: int = 3
    outdir: str | None = None

    def validate(self) -> "RunConfig":
        if self.problem not in ("random", "phantom", "load"):
            raise InvalidParameter(f"unknown problem source {self.problem!r}")
        if self.alg not in ALGORITHMS:
            raise InvalidParameter(f"unknown algorithm {self.alg!r}")
        if self.family not in FAMILIES:
            raise InvalidParameter(f"unknown operator family {self.family!r}")
        if self.engine not in ("simulate", "threaded"):
            raise InvalidParameter(f"unknown engine {self.engine!r}")
        if self.delays not in ("pool", "uniform", "max", "zero"):
            raise InvalidParameter(f"unknown delay model {self.delays!r}")
        if self.problem == "load" and not (self.A_path and self.b_path):
            raise InvalidParameter("loading a problem needs A and b paths")
        if self.w < 1 or self.tau < 0 or self.r < 1:
            raise InvalidParameter("need w >= 1, tau >= 0, r >= 1")
        if self.alg == "km" and (self.tau != 0 or self.w != 1):
            raise InvalidParameter("km is the synchronous case: use tau 0 and w 1")
        if self.lam != "auto":
            self.lam = float(self.lam)
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def build_problem(cfg: RunConfig):
    if cfg.problem == "random":
        return make_random_system(RandomSystemSpec(cfg.M, cfg.N, cfg.nnz, seed=cfg.seed))
    if cfg.problem == "phantom":
        return make_projector(cfg.n, default_angles(cfg.angles), cfg.detectors)
    return load_system(cfg.A_path, cfg.b_path, cfg.x_path)


def build_ops(cfg: RunConfig, system):
    M = system.A.shape[0]
    r = min(cfg.r, M)
    part = build_blocks(M, r, cfg.partition, overlap=cfg.overlap)
    return part, build_operators(system.A, system.b, part, cfg.family, column_counts=cfg.column_counts)


def step_schedule(cfg: RunConfig) -> StepSchedule:
    lam = None if cfg.lam == "auto" else cfg.lam
    return StepSchedule(lam, tau=cfg.tau, epsilon=cfg.epsilon, safe=not cfg.unsafe)


def execute(cfg: RunConfig, system=None, ops=None, audit=None) -> RunRecord:
    """Build whatever is missing and run once according to ``cfg``."""
    cfg.validate()
    system = system if system is not None else build_problem(cfg)
    if ops is None:
        _, ops = build_ops(cfg, system)
    m = len(ops)
    mode = EKN if cfg.alg == "ekn" else ASI
    schedule = step_schedule(cfg)
    stop = StoppingRule(cfg.stop, cfg.threshold, cfg.max_epochs)
    echo = {"run_config": cfg.to_dict(), "shape": list(system.A.shape)}
    if cfg.engine == "threaded":
        from .threaded import run_threaded

        return run_threaded(system, ops, NodePool.strided(m, min(cfg.w, m)), cfg.tau, schedule, mode, stop,
                            audit=audit, seed=cfg.seed, config=echo)
    if cfg.delays == "pool":
        return simulate_async(system, ops, NodePool.strided(m, min(cfg.w, m)), cfg.tau, schedule, mode, stop,
                              seed=cfg.seed, timing=TimingModel(cfg.t_min, cfg.t_max), dispatch=cfg.dispatch,
                              audit=audit, config=echo)
    if cfg.delays == "uniform" and cfg.tau > 0:
        delays = DelayModel.uniform(cfg.tau, cfg.seed)
    elif cfg.delays == "max":
        delays = DelayModel.scripted([cfg.tau])  # always the oldest admissible iterate
    else:
        delays = DelayModel(cfg.tau, "zero")
    return simulate(system, ops, ControlSequence.cyclic(m), delays, schedule, mode, stop, seed=cfg.seed,
                    audit=audit, config=echo)


# -- audits -----------------------------------------------------------------

@dataclass
class AuditItem:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def dry_run_stream(m: int, w: int, length: int, seed: int = 0, timing: TimingModel | None = None):
    """Arrival order of a per-node cyclic pool under random service times, without computing anything."""
    timing = timing or TimingModel()
    rng = np.random.default_rng(seed)
    pool = NodePool.strided(m, w)
    finish = [int(rng.integers(timing.t_min, timing.t_max + 1)) for _ in range(w)]
    arrivals = []
    while len(arrivals) < length:
        node = min(range(w), key=lambda l: (finish[l], l))
        arrivals.append(node)
        finish[node] += int(rng.integers(timing.t_min, timing.t_max + 1))
    return pool, arrivals


def run_audits(system, family: str = "drop", r: int = 40, partition: str = "contiguous", overlap: int = 1,
               column_counts: str = "block", w: int = 4, probe_trials: int = 100, seed: int = 0,
               blocks=None) -> list[AuditItem]:
    items: list[AuditItem] = []
    A, b = system.A, system.b
    ok = A.norm_cache_ok()
    items.append(AuditItem("row-norm cache", ok, "cached squared row norms match recomputation" if ok
                           else "cached squared row norms are stale (matrix changed after construction)"))
    zr, zc = A.zero_rows(), A.zero_columns()
    items.append(AuditItem("nonzero rows/columns", zr.size == 0 and zc.size == 0,
                           f"{zr.size} zero rows, {zc.size} zero columns"))
    if system.x_true is not None:
        err = float(np.linalg.norm(A.matvec(system.x_true) - b))
        tol = 1e-10 * (1.0 + float(np.linalg.norm(b)))
        items.append(AuditItem("consistency", err <= tol and ok, f"||A x_true - b|| = {err:.3e} (tol {tol:.1e})"))
    else:
        items.append(AuditItem("consistency", True, "no x_true supplied; skipped"))
    if zr.size:
        return items  # operators cannot be built on zero rows
    M = A.shape[0]
    part = build_blocks(M, min(r, M), partition, overlap=overlap, blocks=blocks)
    ops = build_operators(A, b, part, family, column_counts=column_counts)
    if family == "drop":
        worst, unconverged, empty = 0.0, 0, 0
        for op in ops:
            cert = spectral_certificate(op, seed=seed)
            worst = max(worst, cert.estimate)
            unconverged += not cert.converged
            empty += op.empty_columns > 0
        items.append(AuditItem("spectral certificates", worst <= 1 + 1e-8,
                               f"max rho(D A^T W A) = {worst:.12f} over {len(ops)} blocks; {unconverged} without "
                               f"a converged estimate; {empty} blocks have empty columns (their D entries are 0)"))
        probe_ops = [ScaledDropOperator(op) for op in ops]
    else:
        probe_ops = ops
    worst = 0.0
    for t, op in enumerate(probe_ops):
        rep = nonexpansive_probe(op, trials=probe_trials, seed=seed + t)
        worst = max(worst, rep.max_ratio)
    items.append(AuditItem("nonexpansiveness probes", worst <= 1 + 1e-10,
                           f"max ||Tx - Ty|| / ||x - y|| = {worst:.12f} over {len(probe_ops)} operators"))
    m = len(ops)
    w = min(w, m)
    pool, arrivals = dry_run_stream(m, w, 20 * m, seed=seed)
    ctl = ControlSequence.per_node_cyclic(pool.subsets, arrivals)
    stream = ctl.window(1, len(arrivals))
    ac = almost_cyclic_check(stream, m, ctl.M)
    items.append(AuditItem("almost-cyclic dispatch", ac, f"{len(arrivals)} dry-run arrivals from {w} nodes, M = {ctl.M}"))
    return items


# -- benchmark --------------------------------------------------------------

@dataclass
class BenchResult:
    rows: list = field(default_factory=list)  # one dict per run

    def summary(self) -> dict:
        out = {}
        for row in self.rows:
            out.setdefault((row["alg"], row["w"]), []).append(row)
        table = {}
        for (alg, w), rs in sorted(out.items()):
            good = [r for r in rs if r["converged"]]
            table[(alg, w)] = {
                "runs": len(rs),
                "converged": len(good),
                "mean_epochs": float(np.mean([r["epochs"] for r in good])) if good else math.nan,
                "mean_time": float(np.mean([r["time"] for r in good])) if good else math.nan,
                "mean_wall_s": float(np.mean([r["wall_s"] for r in good])) if good else math.nan,
            }
        for (alg, w), s in table.items():
            base = table.get((alg, min(ww for a, ww in table if a == alg)))
            s["speedup"] = base["mean_time"] / s["mean_time"] if s["mean_time"] > 0 else math.nan
        return table


def bench(cfg: RunConfig, ws, trials: int, algs=("asi", "ekn"), system=None, ops=None, progress=None) -> BenchResult:
    """Repeat runs over ``ws`` and seeds ``cfg.seed .. cfg.seed + trials - 1``; failures are recorded, not raised."""
    if trials < 1:
        raise InvalidParameter("trials must be >= 1")
    cfg.validate()
    system = system if system is not None else build_problem(cfg)
    if ops is None:
        _, ops = build_ops(cfg, system)
    res = BenchResult()
    for alg in algs:
        for w in ws:
            for t in range(trials):
                c = dataclasses.replace(cfg, alg=alg, w=w, seed=cfg.seed + t)
                t0 = time.perf_counter()
                try:
                    rec = execute(c, system, ops)
                    s = rec.summary
                    row = {"alg": alg, "w": w, "seed": c.seed, "converged": rec.converged, "reason": s["reason"],
                           "epochs": s["epochs"], "realized_tau": s["realized_tau"],
                           "time": s.get("simulated_time", s.get("wall_s", 0.0)),
                           "wall_s": time.perf_counter() - t0}
                except Exception as e:  # keep sweeping
                    log.error("bench run alg=%s w=%d seed=%d failed: %s", alg, w, c.seed, e)
                    row = {"alg": alg, "w": w, "seed": c.seed, "converged": False, "reason": f"error: {e}",
                           "epochs": math.nan, "realized_tau": None, "time": math.nan,
                           "wall_s": time.perf_counter() - t0}
                res.rows.append(row)
                if progress:
                    progress(row)
    return res
