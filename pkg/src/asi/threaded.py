"""Shared-memory master/worker engine.

The master thread alone writes the iterate. Workers receive a snapshot and
an operator index, return ``S_i(snapshot)`` with the snapshot's version, and
wait for the next task. Outputs that would be applied more than ``tau``
versions after their snapshot are refused and recomputed. A worker that
reports an error or stays silent past ``timeout`` seconds is replaced and
its task handed out again; after ``retry_cap`` consecutive failures on one
node the run is aborted.

Timing depends on the OS scheduler, so these runs are not reproducible.
"""

from __future__ import annotations

import logging
import queue
import threading
import time
from dataclasses import dataclass, field

from .errors import InvalidParameter
from .iteration import ASI, StepSchedule
from .runtime import ABORTED, DIVERGENCE_NORM, NodePool, RunRecord, StoppingRule, _config, _Master

log = logging.getLogger(__name__)


@dataclass
class FaultPlan:
    """Injected failures, keyed by node.

    ``crash[node] = n``: the worker thread dies silently on its ``n``-th task
    (1-based). ``drop[node]``: task numbers whose result is computed but
    never delivered. ``error[node]``: task numbers that raise inside the worker.
    """

    crash: dict = field(default_factory=dict)
    drop: dict = field(default_factory=dict)
    error: dict = field(default_factory=dict)

    def describe(self) -> dict:
        return {"crash": {str(k): v for k, v in self.crash.items()},
                "drop": {str(k): list(v) for k, v in self.drop.items()},
                "error": {str(k): list(v) for k, v in self.error.items()}}


class _Worker(threading.Thread):
    def __init__(self, node, operators, outbox, faults: FaultPlan, task_offset=0):
        super().__init__(name=f"asi-worker-{node}", daemon=True)
        self.node = node
        self.ops = operators
        self.inbox: queue.Queue = queue.Queue()
        self.outbox = outbox
        self.faults = faults
        self.tasks = task_offset

    def run(self):
        while True:
            msg = self.inbox.get()
            if msg is None:
                return
            ticket, op, version, snapshot = msg
            self.tasks += 1
            if self.faults.crash.get(self.node) == self.tasks:
                log.info("worker %d crashing on task %d (injected)", self.node, self.tasks)
                return
            try:
                if self.tasks in self.faults.error.get(self.node, ()):
                    raise RuntimeError("injected worker error")
                s = self.ops[op].residual(snapshot)
            except Exception as e:  # reported to the master, which re-dispatches
                self.outbox.put((self.node, ticket, op, version, None, repr(e)))
                continue
            if self.tasks in self.faults.drop.get(self.node, ()):
                continue
            self.outbox.put((self.node, ticket, op, version, s, None))


def run_threaded(problem, operators, pool: NodePool, tau: int, schedule: StepSchedule, mode: str = ASI,
                 stop: StoppingRule | None = None, *, faults: FaultPlan | None = None, retry_cap: int = 5,
                 timeout: float = 5.0, x0=None, audit=None, divergence: float = DIVERGENCE_NORM,
                 seed: int | None = None, config: dict | None = None) -> RunRecord:
    """Run ASI/EKN with ``pool.w`` worker threads (per-node cyclic dispatch)."""
    stop = stop or StoppingRule()
    faults = faults or FaultPlan()
    if pool.m != len(operators):
        raise InvalidParameter(f"pool covers {pool.m} operators, {len(operators)} given")
    if retry_cap < 0 or timeout <= 0:
        raise InvalidParameter("retry_cap must be >= 0 and timeout > 0")
    pool.reset()
    cfg = _config("threaded", schedule, mode, stop, tau, seed, pool=pool.describe(), retry_cap=retry_cap,
                  timeout=timeout, faults=faults.describe(), **(config or {}))
    rec = RunRecord(cfg)
    master = _Master(problem, operators, schedule, mode, stop, tau, rec, x0=x0, audit=audit,
                     divergence=divergence, clock=time.perf_counter)
    outbox: queue.Queue = queue.Queue()
    workers = [_Worker(l, operators, outbox, faults) for l in range(pool.w)]
    for wk in workers:
        wk.start()

    pending = {}  # node -> (ticket, op, version, dispatched_at)
    failures = [0] * pool.w
    counters = {"tickets": 0, "refused": 0, "failed": 0, "respawned": 0}

    def dispatch(node, op):
        counters["tickets"] += 1
        ticket = counters["tickets"]
        version = master.k
        pending[node] = (ticket, op, version, time.perf_counter())
        workers[node].inbox.put((ticket, op, version, master.state.x.copy()))

    def fail(node, why):
        counters["failed"] += 1
        failures[node] += 1
        _, op, _, _ = pending[node]
        log.warning("node %d failed (%s); failure %d of %d", node, why, failures[node], retry_cap)
        if failures[node] > retry_cap:
            return f"node {node} failed {failures[node]} times in a row; last: {why}"
        if why in ("worker died", "timeout"):
            old = workers[node]
            old.inbox.put(None)
            workers[node] = _Worker(node, operators, outbox, faults, task_offset=old.tasks)
            workers[node].start()
            counters["respawned"] += 1
        dispatch(node, op)
        return None

    for node in range(pool.w):
        dispatch(node, pool.next_op(node))

    wake = 0
    reason = None
    t0 = time.perf_counter()
    while reason is None:
        try:
            batch = [outbox.get(timeout=min(timeout, 0.05))]
        except queue.Empty:
            batch = []
        while True:
            try:
                batch.append(outbox.get_nowait())
            except queue.Empty:
                break
        now = time.perf_counter()
        for node, (ticket, op, version, since) in list(pending.items()):
            if any(b[0] == node and b[1] == ticket for b in batch):
                continue
            dead = not workers[node].is_alive()
            if dead or now - since > timeout:
                why = fail(node, "worker died" if dead else "timeout")
                if why:
                    master.reason, master.diagnostic = ABORTED, why
                    reason = ABORTED
                    break
        if reason is not None or not batch:
            continue
        wake += 1
        # several arrivals in one wake-up are applied in node order
        for node, ticket, op, version, s, err in sorted(batch, key=lambda b: b[0]):
            if pending.get(node, (None,))[0] != ticket:
                continue  # answer to a task that was already given up on
            if err is not None:
                why = fail(node, err)
                if why:
                    master.reason, master.diagnostic = ABORTED, why
                    reason = ABORTED
                    break
                continue
            failures[node] = 0
            if master.k - version > tau:
                counters["refused"] += 1
                dispatch(node, op)
                continue
            x_hat = master.state.history[master.k - version]
            reason = master.step(op, master.k - version, node=node, theta=wake, image=x_hat - s)
            if reason is not None:
                break
            dispatch(node, pool.next_op(node))

    for wk in workers:
        wk.inbox.put(None)
    for wk in workers:
        wk.join(timeout=1.0)
    return master.finish({"wall_s": time.perf_counter() - t0, **counters})
