"""End-to-end acceptance checks; each test reports one PASS/FAIL line."""

import time

import numpy as np
import pytest

from asi.control import ControlSequence, DelayModel
from asi.iteration import ASI, EKN, StepSchedule, XiMonitor, max_step_size
from asi.linear import (DropBlockOperator, Hyperplane, ScaledDropOperator, build_blocks, build_operators,
                        spectral_certificate)
from asi.operators import nonexpansive_probe
from asi.problems import RandomSystemSpec, make_random_system
from asi.runtime import CONVERGED, NodePool, StoppingRule, TimingModel, realized_tau, simulate, simulate_async
from asi.sparse import SparseMatrix
from asi.threaded import FaultPlan, run_threaded

TAU = 4
R = 40
EPOCHS = 5000
TOL = 1e-6


def max_operator_residual(ops, x):
    return max(float(np.linalg.norm(op.residual(x))) for op in ops)


def rel_residual(system, x):
    return float(np.linalg.norm(system.A.matvec(x) - system.b) / np.linalg.norm(system.b))


# -- 1 ----------------------------------------------------------------------

def test_km_reduction(report, rng):
    n = 50
    a = rng.standard_normal(n)
    a[rng.random(n) < 0.5] = 0.0
    beta = 1.7
    h = Hyperplane.from_dense(a, beta)
    x0 = rng.standard_normal(n)
    steps = 2000
    seen = []
    prob = type("P", (), {"A": None, "b": None, "x_true": None})()
    t0 = time.perf_counter()
    simulate(prob, [h], ControlSequence.cyclic(1), DelayModel.zero(), StepSchedule(0.5, tau=0), ASI,
             StoppingRule("max_epochs", max_epochs=steps), x0=x0, audit=lambda k, x, xh, lam, br: seen.append(br.next))
    elapsed = time.perf_counter() - t0
    # standalone loop with a dense projection formula
    x = x0.copy()
    worst = 0.0
    for got in seen:
        px = x - (a @ x - beta) / (a @ a) * a
        x = 0.5 * x + 0.5 * px
        worst = max(worst, float(np.linalg.norm(got - x) / max(np.linalg.norm(x), 1e-300)))
    ok = len(seen) == steps and worst <= 1e-14 and elapsed < 1.0
    report(1, ok, f"{len(seen)} iterates, max relative deviation {worst:.2e}, {elapsed:.3f} s")
    assert ok


# -- 2 ----------------------------------------------------------------------

def test_xi_monotone(report):
    t0 = time.perf_counter()
    runs = worst = 0
    violations = 0
    for seed in range(50):
        g = np.random.default_rng(1000 + seed)
        N = int(g.integers(5, 51))
        M = int(g.integers(2 * N, 201))
        s = make_random_system(RandomSystemSpec(M, N, int(g.integers(2, min(N, 6) + 1)), seed=seed))
        m = int(g.integers(2, 11))
        if seed % 2:
            # DROP in the scaled variable y = D^{-1/2} x, where a shared D makes every block Euclidean nonexpansive
            drop = build_operators(s.A, s.b, build_blocks(M, m), "drop", column_counts="global")
            ops = [ScaledDropOperator(op) for op in drop]
            z = s.x_true / drop[0].sqrt_d
        else:
            ops = build_operators(s.A, s.b, build_blocks(M, m), "art")
            z = s.x_true
        for tau in (0, 1, 2, 4):
            delays = DelayModel.scripted(g.integers(0, tau + 1, size=int(g.integers(3, 30))).tolist(), tau)
            rec = simulate(s, ops, ControlSequence.cyclic(m), delays, StepSchedule(max_step_size(tau, 1e-3), tau=tau),
                           ASI, StoppingRule("max_epochs", max_epochs=30), z=z, monitor=XiMonitor(tau, 1.0, 1e-3))
            k = rec.column("k")
            xi = rec.column("xi")
            post = xi[k > tau]
            inc = np.diff(post)
            violations += int(np.sum(inc > 1e-12))
            worst = max(worst, float(inc.max(initial=-np.inf)))
            runs += 1
    elapsed = time.perf_counter() - t0
    ok = violations == 0 and elapsed < 30
    report(2, ok, f"{runs} runs, {violations} increases above 1e-12 (largest change {worst:.2e}), {elapsed:.1f} s")
    assert ok


# -- 3 and 9 ----------------------------------------------------------------

class InertialAudit:
    """Checks every applied step: next is convex + inertial and inertial is lam (x - x_hat)."""

    def __init__(self):
        self.steps = self.sum_mismatch = self.inertial_mismatch = 0
        self.max_dev = 0.0

    def __call__(self, k, x, x_hat, lam, br):
        self.steps += 1
        self.sum_mismatch += not np.array_equal(br.next, br.convex_part + br.inertial_part)
        self.inertial_mismatch += not np.array_equal(br.inertial_part, lam * (x - x_hat))
        dev = np.max(np.abs((br.next - br.convex_part) - lam * (x - x_hat)))
        self.max_dev = max(self.max_dev, float(dev))


@pytest.fixture(scope="module")
def phantom_runs(phantom_system):
    out = {}
    part = build_blocks(phantom_system.A.shape[0], R)
    for family in ("art", "drop"):
        ops = build_operators(phantom_system.A, phantom_system.b, part, family)
        audit = InertialAudit()
        t0 = time.perf_counter()
        rec = simulate(phantom_system, ops, ControlSequence.cyclic(R), DelayModel.uniform(TAU, 0),
                       StepSchedule(tau=TAU), ASI, StoppingRule("residual", TOL, EPOCHS), audit=audit)
        out[family] = (rec, ops, audit, time.perf_counter() - t0)
    return out


def test_phantom_convergence(report, phantom_runs, phantom_system):
    ok = True
    details = []
    total = 0.0
    for family, (rec, ops, _, secs) in phantom_runs.items():
        res = rel_residual(phantom_system, rec.x)
        opres = max_operator_residual(ops, rec.x)
        total += secs
        good = rec.converged and res < TOL and opres < TOL
        ok &= good
        details.append(f"{family}: {rec.summary['reason']} after {rec.epochs:.0f} epochs, residual {res:.2e}, "
                       f"max operator residual {opres:.2e}")
    ok &= total < 120
    report(3, ok, "; ".join(details) + f"; {total:.0f} s")
    assert ok


def test_inertial_term_audit(report, phantom_runs, phantom_system):
    bad = 0
    steps = 0
    dev = 0.0
    for rec, _, audit, _ in phantom_runs.values():
        bad += audit.sum_mismatch + audit.inertial_mismatch
        steps += audit.steps
        dev = max(dev, audit.max_dev)
    # w = 1, tau = 0: both modes must produce the same iterates bit for bit
    part = build_blocks(phantom_system.A.shape[0], R)
    ops = build_operators(phantom_system.A, phantom_system.b, part, "drop")
    traj = {}
    for mode in (ASI, EKN):
        seen = []
        simulate_async(phantom_system, ops, NodePool.strided(R, 1), 0, StepSchedule(0.9, tau=0), mode,
                       StoppingRule("max_epochs", max_epochs=20), seed=3,
                       audit=lambda k, x, xh, lam, br: seen.append(br.next))
        traj[mode] = seen
    same = len(traj[ASI]) == len(traj[EKN]) and all(np.array_equal(a, b) for a, b in zip(traj[ASI], traj[EKN]))
    ok = bad == 0 and steps > 0 and same
    report(9, ok, f"{steps} audited steps, {bad} mismatches (max |next - convex - lam (x - x_hat)| = {dev:.1e}); "
                  f"w=1/tau=0 trajectories identical over {len(traj[ASI])} steps: {same}")
    assert ok


# -- 4 ----------------------------------------------------------------------

def random_block(g):
    rows = int(g.integers(1, 61))
    cols = int(g.integers(1, 61))
    a = g.standard_normal((rows, cols)) * (g.random((rows, cols)) < g.uniform(0.05, 0.6))
    for i in np.flatnonzero(~a.any(axis=1)):
        a[i, g.integers(cols)] = g.standard_normal() or 1.0
    return a


def dense_oracle(a, counting=None):
    s = (a != 0).sum(axis=0) if counting is None else counting
    d = np.where(s > 0, 1.0 / np.maximum(s, 1), 0.0)
    w = 1.0 / (a * a).sum(axis=1)
    abar = a * np.sqrt(d)
    return float(np.linalg.eigvalsh(abar.T @ (w[:, None] * abar)).max())


def test_drop_certificates(report, phantom_system):
    t0 = time.perf_counter()
    g = np.random.default_rng(2024)
    worst = worst_gap = 0.0
    for t in range(100):
        a = random_block(g)
        op = DropBlockOperator(SparseMatrix.from_dense(a), np.zeros(a.shape[0]), np.arange(a.shape[0]))
        cert = spectral_certificate(op, iterations=5000, tol=1e-14, seed=t)
        worst = max(worst, cert.estimate)
        worst_gap = max(worst_gap, abs(cert.estimate - dense_oracle(a)))
    part = build_blocks(phantom_system.A.shape[0], R)
    ph = 0.0
    for t, op in enumerate(build_operators(phantom_system.A, phantom_system.b, part, "drop")):
        ph = max(ph, spectral_certificate(op, seed=t).estimate)
    elapsed = time.perf_counter() - t0
    ok = worst <= 1 + 1e-8 and ph <= 1 + 1e-8 and worst_gap <= 1e-8 and elapsed < 30
    report(4, ok, f"random blocks max rho {worst:.12f} (max gap to dense eigensolver {worst_gap:.1e}); "
                  f"phantom blocks max rho {ph:.12f}; {elapsed:.1f} s")
    assert ok


# -- 5 ----------------------------------------------------------------------

def test_nonexpansive_probes(report, phantom_system):
    A, b = phantom_system.A, phantom_system.b
    s = make_random_system(RandomSystemSpec(200, 50, 5, seed=5))
    g = np.random.default_rng(9)
    hyper = [Hyperplane.from_row(A, b, int(i)) for i in g.choice(A.shape[0], 5, replace=False)]
    hyper += [Hyperplane.from_row(s.A, s.b, int(i)) for i in g.choice(200, 5, replace=False)]
    drop = [ScaledDropOperator(op) for op in build_operators(A, b, build_blocks(A.shape[0], R), "drop")[::10]]
    drop += [ScaledDropOperator(op) for op in build_operators(s.A, s.b, build_blocks(200, 10), "drop")]
    hw = max(nonexpansive_probe(op, trials=10_000, seed=t).max_ratio for t, op in enumerate(hyper))
    dw = max(nonexpansive_probe(op, trials=10_000, seed=t).max_ratio for t, op in enumerate(drop))
    ok = hw <= 1 + 1e-10 and dw <= 1 + 1e-10
    report(5, ok, f"{len(hyper)} hyperplanes max ratio {hw:.12f}; {len(drop)} DROP maps max ratio {dw:.12f}; "
                  "10^4 pairs each")
    assert ok


# -- 6 ----------------------------------------------------------------------

def test_epoch_trend(report, phantom_system):
    t0 = time.perf_counter()
    tau, lam = 16, 0.2
    ops = build_operators(phantom_system.A, phantom_system.b, build_blocks(phantom_system.A.shape[0], R), "drop")
    means = {}
    for mode in (ASI, EKN):
        for w in (1, 2, 4, 8):
            ep = []
            for seed in range(5):
                rec = simulate_async(phantom_system, ops, NodePool.strided(R, w), tau,
                                     StepSchedule(lam, tau=tau, safe=False), mode,
                                     StoppingRule("residual", 1e-2, 300), seed=seed, timing=TimingModel(1, 3))
                ep.append(rec.epochs if rec.summary["reason"] == CONVERGED else np.inf)
            means[(mode, w)] = float(np.mean(ep))
    asi = [means[(ASI, w)] for w in (1, 2, 4, 8)]
    spread = (max(asi) - min(asi)) / min(asi)
    growth = means[(EKN, 8)] / means[(EKN, 1)] - 1
    elapsed = time.perf_counter() - t0
    ok = spread < 0.25 and growth > 0.25 and elapsed < 300
    report(6, ok, "mean epochs ASI " + "/".join(f"{v:.1f}" for v in asi) + ", EKN "
                  + "/".join(f"{means[(EKN, w)]:.1f}" for w in (1, 2, 4, 8))
                  + f" at w=1/2/4/8; ASI spread {spread:.1%}, EKN growth {growth:.1%}; {elapsed:.0f} s")
    assert ok


# -- 7 ----------------------------------------------------------------------

def test_threaded_worker_failure(report, phantom_system):
    ops = build_operators(phantom_system.A, phantom_system.b, build_blocks(phantom_system.A.shape[0], R), "drop")
    rec = run_threaded(phantom_system, ops, NodePool.strided(R, 4), TAU, StepSchedule(tau=TAU), ASI,
                       StoppingRule("residual", TOL, EPOCHS), faults=FaultPlan(crash={1: 5}), timeout=2.0)
    delays = rec.delays
    stale_ok = max(delays) <= TAU and realized_tau(rec) <= TAU
    res = rel_residual(phantom_system, rec.x)
    opres = max_operator_residual(ops, rec.x)
    conv = rec.converged and res < TOL and opres < TOL
    ok = conv and stale_ok and rec.summary["respawned"] >= 1
    report(7, ok, f"{rec.summary['reason']} after {rec.epochs:.0f} epochs, residual {res:.2e}, max operator "
                  f"residual {opres:.2e}, {rec.summary['respawned']} respawn(s); staleness audit: realized tau "
                  f"{realized_tau(rec)} <= {TAU} over {len(delays)} updates: {stale_ok}")
    assert ok


# -- 8 ----------------------------------------------------------------------

def test_determinism(report, phantom_system, tmp_path):
    ops = build_operators(phantom_system.A, phantom_system.b, build_blocks(phantom_system.A.shape[0], R), "drop")
    blobs = []
    for run in range(2):
        rec = simulate_async(phantom_system, ops, NodePool.strided(R, 4), TAU, StepSchedule(tau=TAU), ASI,
                             StoppingRule("max_epochs", max_epochs=10), seed=42)
        path = tmp_path / f"pool{run}.csv"
        rec.write_csv(path)
        rec2 = simulate(phantom_system, ops, ControlSequence.cyclic(R), DelayModel.uniform(TAU, 42),
                        StepSchedule(tau=TAU), EKN, StoppingRule("max_epochs", max_epochs=10))
        path2 = tmp_path / f"uniform{run}.csv"
        rec2.write_csv(path2)
        blobs.append((path.read_bytes(), path2.read_bytes()))
    ok = blobs[0] == blobs[1]
    report(8, ok, f"two reruns each of a pool run and a uniform-delay run; CSV sizes "
                  f"{len(blobs[0][0])} and {len(blobs[0][1])} bytes; identical: {ok}")
    assert ok
