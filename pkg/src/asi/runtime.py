"""Deterministic execution of ASI/EKN runs and the records they produce.

Two simulated drivers share one master loop:

* :func:`simulate` follows a given control sequence and delay model, one
  update per tick.
* :func:`simulate_async` plays out a master/worker schedule with integer
  service times, so delays arise from which worker finishes first.

Neither touches the wall clock while iterating, so reruns with the same
inputs give identical records.
"""

from __future__ import annotations

import csv
import heapq
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .control import ControlSequence, DelayModel, delay_histogram
from .errors import InvalidParameter, StalenessViolation
from .iteration import ASI, AsiState, StepSchedule, XiMonitor, asi_update, combine, xi_decrease_bound, xi_value

CSV_COLUMNS = ("k", "epoch", "theta", "node", "op_index", "delay", "residual_b", "true_error", "xi", "wall_ms")

DIVERGENCE_NORM = 1e12

CONVERGED = "converged"
MAX_EPOCHS = "max_epochs"
DIVERGED = "diverged"
STALENESS = "staleness"
ABORTED = "aborted"


@dataclass
class StoppingRule:
    """Stop when the chosen error drops below ``threshold`` or after ``max_epochs``.

    ``kind`` is ``true_error`` (``||x - x*||``), ``residual`` (``||A x - b||``)
    or ``max_epochs``. With ``relative`` the error is divided by ``||x*||``
    or ``||b||``. Errors are checked every ``check_every`` iterations
    (default: once per epoch of ``m`` iterations).
    """

    kind: str = "residual"
    threshold: float = 1e-6
    max_epochs: float = 1000
    relative: bool = True
    check_every: int | None = None

    def __post_init__(self):
        if self.kind not in ("true_error", "residual", "max_epochs"):
            raise InvalidParameter(f"unknown stopping rule {self.kind!r}")
        if self.kind != "max_epochs" and not self.threshold > 0:
            raise InvalidParameter("stopping threshold must be positive")
        if not self.max_epochs > 0:
            raise InvalidParameter("max_epochs must be positive")

    def describe(self) -> dict:
        return {"kind": self.kind, "threshold": self.threshold, "max_epochs": self.max_epochs,
                "relative": self.relative, "check_every": self.check_every}


class NodePool:
    """``w`` workers, each owning a subcollection of the ``m`` operators and a cyclic cursor."""

    def __init__(self, subsets, m: int | None = None):
        self.subsets = [np.asarray(s, dtype=np.int64) for s in subsets]
        if not self.subsets or any(s.size == 0 for s in self.subsets):
            raise InvalidParameter("every node needs at least one operator")
        allops = np.concatenate(self.subsets)
        self.m = int(allops.max()) + 1 if m is None else int(m)
        if allops.min() < 0 or allops.max() >= self.m:
            raise InvalidParameter(f"operator ids must lie in [0, {self.m})")
        if np.unique(allops).size != self.m:
            raise InvalidParameter("node subcollections do not cover every operator")
        if self.w > self.m:
            raise InvalidParameter(f"more nodes ({self.w}) than operators ({self.m})")
        self.cursor = [0] * self.w

    @classmethod
    def strided(cls, m: int, w: int) -> "NodePool":
        """Node ``l`` holds operators ``l, l + w, l + 2w, ...``."""
        if not 1 <= w <= m:
            raise InvalidParameter(f"need 1 <= w <= m, got w={w}, m={m}")
        return cls([np.arange(l, m, w) for l in range(w)], m)

    @classmethod
    def contiguous(cls, m: int, w: int) -> "NodePool":
        if not 1 <= w <= m:
            raise InvalidParameter(f"need 1 <= w <= m, got w={w}, m={m}")
        return cls(np.array_split(np.arange(m), w), m)

    @property
    def w(self) -> int:
        return len(self.subsets)

    def reset(self) -> None:
        self.cursor = [0] * self.w

    def next_op(self, node: int) -> int:
        s = self.subsets[node]
        i = int(s[self.cursor[node] % s.size])
        self.cursor[node] += 1
        return i

    def describe(self) -> dict:
        return {"w": self.w, "m": self.m, "subsets": [s.tolist() for s in self.subsets]}


@dataclass
class Event:
    theta: int
    node: int
    op_index: int
    read_version: int
    applied_version: int | None  # None when the output was refused as too stale

    @property
    def staleness(self) -> int | None:
        return None if self.applied_version is None else self.applied_version - self.read_version


@dataclass
class EventSchedule:
    events: list[Event] = field(default_factory=list)

    def add(self, ev: Event) -> None:
        if self.events and ev.theta < self.events[-1].theta:
            raise InvalidParameter("event times must be nondecreasing")
        self.events.append(ev)

    def arrivals(self, theta: int) -> list[int]:
        """Nodes whose outputs reached the master at time ``theta`` (``F_theta``)."""
        return [e.node for e in self.events if e.theta == theta]

    def applied(self) -> list[Event]:
        return [e for e in self.events if e.applied_version is not None]

    def max_staleness(self) -> int:
        return max((e.staleness for e in self.applied()), default=0)

    def refused(self) -> int:
        return sum(e.applied_version is None for e in self.events)


@dataclass
class TimingModel:
    """Integer service time per dispatch, uniform on ``[t_min, t_max]``."""

    t_min: int = 1
    t_max: int = 3

    def __post_init__(self):
        if not 1 <= self.t_min <= self.t_max:
            raise InvalidParameter("need 1 <= t_min <= t_max")


class RunRecord:
    """Per-iteration log plus a run summary."""

    def __init__(self, config: dict):
        self.config = config
        self.cols: dict[str, list] = {c: [] for c in CSV_COLUMNS}
        self.xi_bound: list = []
        self.summary: dict = {}
        self.x: np.ndarray | None = None
        self.schedule: EventSchedule | None = None

    def add(self, **row) -> None:
        for c in CSV_COLUMNS:
            self.cols[c].append(row.get(c))

    def __len__(self) -> int:
        return len(self.cols["k"])

    def column(self, name: str) -> np.ndarray:
        """Column as a float array with NaN for unrecorded entries."""
        return np.array([np.nan if v is None else v for v in self.cols[name]], dtype=np.float64)

    @property
    def delays(self) -> list[int]:
        return [d for d in self.cols["delay"] if d is not None]

    @property
    def op_stream(self) -> list[int]:
        return list(self.cols["op_index"])

    @property
    def converged(self) -> bool:
        return self.summary.get("reason") == CONVERGED

    @property
    def epochs(self) -> float:
        return self.summary["epochs"]

    def csv_text(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(CSV_COLUMNS)
        for row in zip(*(self.cols[c] for c in CSV_COLUMNS)):
            wr.writerow("" if v is None else (repr(v) if isinstance(v, float) else v) for v in row)
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.csv_text())

    def summary_dict(self) -> dict:
        return {"config": self.config, **self.summary}


def realized_tau(record: RunRecord) -> int:
    """Largest delay over all applied updates."""
    return max(record.delays, default=0)


class _Master:
    """Owns the iterate; applies one update per call and decides when to stop."""

    def __init__(self, problem, operators, schedule: StepSchedule, mode: str, stop: StoppingRule, tau: int,
                 record: RunRecord, x0=None, z=None, monitor: XiMonitor | None = None, audit=None,
                 divergence: float = DIVERGENCE_NORM, clock=None):
        self.ops = list(operators)
        if not self.ops:
            raise InvalidParameter("no operators")
        n = self.ops[0].dimension
        if any(op.dimension != n for op in self.ops):
            raise InvalidParameter("operators disagree on dimension")
        self.m = len(self.ops)
        self.A = getattr(problem, "A", None)
        self.b = getattr(problem, "b", None)
        self.x_true = getattr(problem, "x_true", None)
        self.schedule = schedule
        self.stop = stop
        self.record = record
        self.audit = audit
        self.divergence = divergence
        self.clock = clock
        self.t0 = clock() if clock else None
        self.state = AsiState(np.zeros(n) if x0 is None else x0, tau, mode)
        self.z = None if z is None else np.asarray(z, dtype=np.float64)
        self.monitor = monitor if (monitor is not None and self.z is not None) else None
        if self.monitor is not None and self.monitor.tau != tau:
            raise InvalidParameter("xi monitor tau differs from the run's tau")
        self.xi = xi_value(self.monitor, self.state.window(), self.z) if self.monitor else None
        self.check_every = stop.check_every or self.m
        self.max_iter = int(math.ceil(stop.max_epochs * self.m))
        self.bnorm = float(np.linalg.norm(self.b)) if self.b is not None else None
        self.xnorm = float(np.linalg.norm(self.x_true)) if self.x_true is not None else None
        if stop.kind == "residual" and self.A is None:
            raise InvalidParameter("residual stopping needs a linear problem")
        if stop.kind == "true_error" and self.x_true is None:
            raise InvalidParameter("true-error stopping needs a known solution")
        self.last_step = None
        self.reason = None
        self.diagnostic = ""

    @property
    def k(self) -> int:
        return self.state.k

    def residual_b(self, x) -> float | None:
        if self.A is None:
            return None
        r = float(np.linalg.norm(self.A.matvec(x) - self.b))
        return r / self.bnorm if self.stop.relative and self.bnorm > 0 else r

    def true_error(self, x) -> float | None:
        if self.x_true is None:
            return None
        e = float(np.linalg.norm(x - self.x_true))
        return e / self.xnorm if self.stop.relative and self.xnorm > 0 else e

    def step(self, op_index: int, delay: int, node: int = 0, theta: int | None = None, image=None) -> str | None:
        """Apply update ``k``; returns a termination reason or None."""
        st = self.state
        k = st.k
        if st.warming_up:
            x_next = st.x
            st.advance(x_next)
            self.last_step = 0.0
        else:
            lam = self.schedule(k)
            try:
                x_hat = st.delayed(delay)
            except StalenessViolation as e:
                self.reason, self.diagnostic = STALENESS, str(e)
                return self.reason
            x = st.x
            if image is None:
                br = asi_update(x, x_hat, lam, self.ops[op_index], st.mode)
            else:
                br = combine(x, x_hat, lam, image, st.mode)
            if self.audit is not None:
                self.audit(k, x, x_hat, lam, br)
            oldest = st.history[-1]  # x^{k-tau}, dropped by the advance below
            st.advance(br.next)
            x_next = br.next
            self.last_step = None
            if self.monitor is not None:
                bound = xi_decrease_bound(self.monitor, self.xi, lam, x_hat - br.image, [oldest] + st.window())
                self.record.xi_bound.append((k, self.xi, bound))
        row = dict(k=k, epoch=(k - 1) // self.m + 1, theta=k if theta is None else theta, node=node,
                   op_index=op_index, delay=delay)
        if self.monitor is not None:
            self.xi = xi_value(self.monitor, st.window(), self.z)
            row["xi"] = self.xi
        if self.clock:
            row["wall_ms"] = round((self.clock() - self.t0) * 1e3, 3)
        nrm = float(np.linalg.norm(x_next))
        if not math.isfinite(nrm) or nrm > self.divergence:
            self.record.add(**row)
            self.reason, self.diagnostic = DIVERGED, f"iterate norm {nrm:.3e} exceeded {self.divergence:.0e} at k={k}"
            return self.reason
        if k % self.check_every == 0 or k >= self.max_iter or self.monitor is not None:
            rb, te = self.residual_b(x_next), self.true_error(x_next)
            row["residual_b"], row["true_error"] = rb, te
            self.record.add(**row)
            if (self.stop.kind == "residual" and rb < self.stop.threshold) or (
                    self.stop.kind == "true_error" and te < self.stop.threshold):
                if not st.warming_up:
                    self.reason = CONVERGED
                    return self.reason
        else:
            self.record.add(**row)
        if k >= self.max_iter:
            self.reason = MAX_EPOCHS
            return self.reason
        return None

    def finish(self, extra: dict | None = None) -> RunRecord:
        st = self.state
        x = st.x
        iterations = st.k - 1
        rec = self.record
        rec.x = x
        summ = {
            "reason": self.reason,
            "converged": self.reason == CONVERGED,
            "diagnostic": self.diagnostic,
            "iterations": iterations,
            "epochs": iterations / self.m,
            "m": self.m,
            "realized_tau": realized_tau(rec),
            "delay_histogram": {str(k): v for k, v in delay_histogram(rec.delays).items()},
        }
        if self.reason != DIVERGED:
            summ["residual_b"] = self.residual_b(x)
            summ["true_error"] = self.true_error(x)
            summ["last_step_norm"] = float(np.linalg.norm(st.history[0] - st.history[1])) if st.tau >= 1 else None
            summ["max_operator_residual"] = max(float(np.linalg.norm(op.residual(x))) for op in self.ops)
        if extra:
            summ.update(extra)
        rec.summary.update(summ)
        return rec


def _config(kind, schedule, mode, stop, tau, seed, **more) -> dict:
    cfg = {"driver": kind, "mode": mode, "tau": tau, "seed": seed, "step": schedule.describe(), "stop": stop.describe()}
    cfg.update(more)
    return cfg


def simulate(problem, operators, control: ControlSequence, delays: DelayModel, schedule: StepSchedule,
             mode: str = ASI, stop: StoppingRule | None = None, seed: int = 0, *, x0=None, z=None,
             monitor: XiMonitor | None = None, audit=None, divergence: float = DIVERGENCE_NORM,
             config: dict | None = None) -> RunRecord:
    """Run with operator ``control(k)`` and delay ``delays(k)`` at iteration ``k``.

    ``z`` together with ``monitor`` switches on per-step xi logging and the
    one-step decrease bound (kept in ``record.xi_bound``). ``audit`` is
    called as ``audit(k, x, x_hat, lam, breakdown)`` for every non-warm-up
    step.
    """
    stop = stop or StoppingRule()
    if control.m != len(operators):
        raise InvalidParameter(f"control covers {control.m} operators, {len(operators)} given")
    cfg = _config("simulate", schedule, mode, stop, delays.tau, seed, delays=delays.describe(),
                  control={"kind": control.kind, "m": control.m, "M": control.M}, **(config or {}))
    rec = RunRecord(cfg)
    master = _Master(problem, operators, schedule, mode, stop, delays.tau, rec, x0=x0, z=z, monitor=monitor,
                     audit=audit, divergence=divergence)
    while True:
        k = master.k
        if master.step(control(k), delays(k)) is not None:
            break
    return master.finish()


def simulate_async(problem, operators, pool: NodePool, tau: int, schedule: StepSchedule, mode: str = ASI,
                   stop: StoppingRule | None = None, seed: int = 0, *, timing: TimingModel | None = None,
                   dispatch: str = "per-node", control: ControlSequence | None = None, retry_cap: int = 100,
                   x0=None, z=None, monitor: XiMonitor | None = None, audit=None,
                   divergence: float = DIVERGENCE_NORM, config: dict | None = None) -> RunRecord:
    """Discrete-event master/worker run.

    Each worker reads the newest iterate when dispatched and returns after
    a random integer service time. Outputs finishing at the same time are
    applied in node order; an output older than ``tau`` versions is refused
    and the worker recomputes the same operator from the current iterate.
    ``dispatch="per-node"`` cycles each worker through its own operators;
    ``"global"`` hands out indices from one shared ``control`` sequence.
    """
    stop = stop or StoppingRule()
    timing = timing or TimingModel()
    if pool.m != len(operators):
        raise InvalidParameter(f"pool covers {pool.m} operators, {len(operators)} given")
    if dispatch == "global":
        control = control or ControlSequence.cyclic(pool.m)
    elif dispatch != "per-node":
        raise InvalidParameter(f"unknown dispatch mode {dispatch!r}")
    pool.reset()
    rng = np.random.default_rng(seed)
    cfg = _config("simulate_async", schedule, mode, stop, tau, seed, pool=pool.describe(), dispatch=dispatch,
                  timing={"t_min": timing.t_min, "t_max": timing.t_max}, retry_cap=retry_cap, **(config or {}))
    rec = RunRecord(cfg)
    sched = EventSchedule()
    rec.schedule = sched
    master = _Master(problem, operators, schedule, mode, stop, tau, rec, x0=x0, z=z, monitor=monitor,
                     audit=audit, divergence=divergence)
    gcount = [0]

    def next_index(node):
        if dispatch == "global":
            gcount[0] += 1
            return control(gcount[0])
        return pool.next_op(node)

    # heap of (finish time, node, op index, version read)
    heap = []
    for node in range(pool.w):
        heapq.heappush(heap, (int(rng.integers(timing.t_min, timing.t_max + 1)), node, next_index(node), 1))
    retries = [0] * pool.w
    reason = None
    while reason is None:
        theta, node, op, read = heapq.heappop(heap)
        version = master.k
        if version - read > tau:
            sched.add(Event(theta, node, op, read, None))
            retries[node] += 1
            if retries[node] > retry_cap:
                master.reason = ABORTED
                master.diagnostic = f"node {node} refused {retries[node]} times in a row for staleness"
                break
            heapq.heappush(heap, (theta + int(rng.integers(timing.t_min, timing.t_max + 1)), node, op, version))
            continue
        retries[node] = 0
        sched.add(Event(theta, node, op, read, version))
        reason = master.step(op, version - read, node=node, theta=theta)
        heapq.heappush(heap, (theta + int(rng.integers(timing.t_min, timing.t_max + 1)), node, next_index(node),
                              master.k))
    return master.finish({"refused": sched.refused(), "simulated_time": sched.events[-1].theta if sched.events else 0})
