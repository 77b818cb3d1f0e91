"""The asynchronous sequential inertial update, step-size rules and the xi monitor."""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, InvalidParameter, StalenessViolation
from .operators import FixedPointOperator

log = logging.getLogger(__name__)

ASI = "asi"
EKN = "ekn"
MODES = (ASI, EKN)

DEFAULT_EPSILON = 1e-3


def max_step_size(tau: int, epsilon: float = DEFAULT_EPSILON) -> float:
    """Largest step with a convergence guarantee under delays bounded by ``tau``: ``1/(2 tau + 1 + epsilon)``."""
    if tau < 0 or epsilon <= 0:
        raise InvalidParameter("need tau >= 0 and epsilon > 0")
    return 1.0 / (2 * tau + 1 + epsilon)


def weighted_step_bound(tau: int, mu: float = 1.0, epsilon: float = DEFAULT_EPSILON) -> float:
    """Step bound ``1/(1 + tau (1/mu + mu) + epsilon)`` for a general weight ``mu > 0``.

    ``mu = 1`` minimises ``1/mu + mu`` and recovers :func:`max_step_size`.
    """
    if tau < 0 or epsilon <= 0 or mu <= 0:
        raise InvalidParameter("need tau >= 0, mu > 0 and epsilon > 0")
    return 1.0 / (1 + tau * (1.0 / mu + mu) + epsilon)


def arock_step_bound(tau: int, m: int) -> float:
    """Heuristic bound ``1/(1 + 2 tau / sqrt(m))`` for randomly ordered updates; carries no guarantee here."""
    if tau < 0 or m < 1:
        raise InvalidParameter("need tau >= 0 and m >= 1")
    return 1.0 / (1 + 2 * tau / math.sqrt(m))


class StepSchedule:
    """Produces ``lambda_k``.

    In safe mode (the default) every step is clamped to
    ``max_step_size(tau, epsilon)`` and steps below ``epsilon`` are
    rejected. ``safe=False`` allows any step in (0, 1).
    """

    def __init__(self, lam=None, *, tau: int = 0, epsilon: float = DEFAULT_EPSILON, safe: bool = True, sequence=None):
        if epsilon <= 0:
            raise InvalidParameter("epsilon must be positive")
        self.tau = int(tau)
        self.epsilon = float(epsilon)
        self.safe = safe
        self.bound = max_step_size(self.tau, self.epsilon)
        if sequence is not None:
            self.kind = "sequence"
            self._seq = [self._admit(v) for v in sequence]
            if not self._seq:
                raise InvalidParameter("step sequence is empty")
        else:
            self.kind = "constant"
            self._lam = self._admit(self.bound if lam is None else lam)

    @classmethod
    def auto(cls, tau: int, epsilon: float = DEFAULT_EPSILON) -> "StepSchedule":
        return cls(None, tau=tau, epsilon=epsilon)

    def _admit(self, lam: float) -> float:
        lam = float(lam)
        if not 0.0 < lam < 1.0:
            raise InvalidParameter(f"step size must lie in (0, 1), got {lam}")
        if self.safe:
            if lam < self.epsilon:
                raise InvalidParameter(f"step {lam} is below the margin epsilon={self.epsilon}")
            if lam > self.bound:
                log.warning("clamping step %.6g to the delay-safe bound %.6g (tau=%d)", lam, self.bound, self.tau)
                lam = self.bound
        return lam

    def __call__(self, k: int) -> float:
        if self.kind == "constant":
            return self._lam
        return self._seq[(k - 1) % len(self._seq)]

    def describe(self) -> dict:
        d = {"kind": self.kind, "tau": self.tau, "epsilon": self.epsilon, "safe": self.safe}
        if self.kind == "constant":
            d["lambda"] = self._lam
        else:
            d["sequence"] = list(self._seq)
        return d


@dataclass
class StepBreakdown:
    """One update split into its convex-combination and inertial parts.

    ``next`` is the iterate the mode actually produced: ``convex_part +
    inertial_part`` for ASI and ``convex_part`` alone for EKN.
    """

    convex_part: np.ndarray
    inertial_part: np.ndarray
    next: np.ndarray
    image: np.ndarray  # T(x_hat)
    mode: str = ASI


def asi_update(x: np.ndarray, x_hat: np.ndarray, lam: float, op: FixedPointOperator, mode: str = ASI) -> StepBreakdown:
    """``x - lam * S(x_hat)``, evaluated as convex combination plus inertial term.

    Computing ``(1 - lam) x + lam T(x_hat)`` first makes the zero-delay case
    reproduce the Krasnosel'skii-Mann update bit for bit, since the inertial
    term is then an exact zero vector.
    """
    if x.shape != (op.dimension,) or x_hat.shape != (op.dimension,):
        raise ContractViolation(f"iterate shapes {x.shape}, {x_hat.shape} do not match dimension {op.dimension}")
    return combine(x, x_hat, lam, op.apply(x_hat), mode)


def combine(x: np.ndarray, x_hat: np.ndarray, lam: float, image: np.ndarray, mode: str = ASI) -> StepBreakdown:
    """Assemble the update from an already computed ``image = T(x_hat)``."""
    if image.shape != x.shape:
        raise ContractViolation(f"operator image has shape {image.shape}, iterate {x.shape}")
    convex = (1.0 - lam) * x + lam * image
    inertial = lam * (x - x_hat)
    if mode == ASI:
        nxt = convex + inertial
    elif mode == EKN:
        nxt = convex
    else:
        raise InvalidParameter(f"unknown mode {mode!r}")
    return StepBreakdown(convex_part=convex, inertial_part=inertial, next=nxt, image=image, mode=mode)


class AsiState:
    """Current iterate plus the last ``tau + 1`` iterates.

    ``history[0]`` is ``x^k`` and ``history[d]`` is ``x^{k-d}``; before
    ``tau`` updates have happened the buffer is padded with ``x^1``.
    """

    def __init__(self, x0, tau: int, mode: str = ASI):
        if tau < 0:
            raise InvalidParameter("tau must be nonnegative")
        if mode not in MODES:
            raise InvalidParameter(f"unknown mode {mode!r}")
        x0 = np.array(x0, dtype=np.float64)
        self.tau = int(tau)
        self.mode = mode
        self.k = 1
        self.history = deque([x0] * (self.tau + 1), maxlen=self.tau + 1)

    @property
    def x(self) -> np.ndarray:
        return self.history[0]

    @property
    def warming_up(self) -> bool:
        return self.k <= self.tau

    def delayed(self, depth: int) -> np.ndarray:
        if depth < 0 or depth > self.tau:
            raise StalenessViolation(f"delay {depth} at k={self.k} exceeds the cap tau={self.tau}")
        return self.history[depth]

    def advance(self, x_next: np.ndarray) -> None:
        self.history.appendleft(x_next)
        self.k += 1

    def window(self) -> list[np.ndarray]:
        """Iterates ``x^{k-tau}, ..., x^k``, oldest first."""
        return list(reversed(self.history))


def asi_step(state: AsiState, lam: float, op: FixedPointOperator, delay: int) -> tuple[np.ndarray, StepBreakdown | None]:
    """Advance ``state`` by one iteration.

    During warm-up (``k <= tau``) the iterate is carried over unchanged and
    no breakdown is returned.
    """
    if state.warming_up:
        x = state.x
        state.advance(x)
        return x, None
    x_hat = state.delayed(delay)
    br = asi_update(state.x, x_hat, lam, op, state.mode)
    state.advance(br.next)
    return br.next, br


@dataclass(frozen=True)
class XiMonitor:
    """Weights for ``xi_k = ||x^k - z||^2 + sum_l c_l ||x^{k+1-l} - x^{k-l}||^2``."""

    tau: int
    mu: float = 1.0
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if self.tau < 0 or self.mu <= 0 or self.epsilon <= 0:
            raise InvalidParameter("need tau >= 0, mu > 0, epsilon > 0")

    @property
    def coefficients(self) -> np.ndarray:
        """``c_j = (tau + 1 - j) mu + epsilon`` for ``j = 1 .. tau + 1``."""
        j = np.arange(1, self.tau + 2)
        return (self.tau + 1 - j) * self.mu + self.epsilon

    @property
    def step_bound(self) -> float:
        return weighted_step_bound(self.tau, self.mu, self.epsilon)


def _sq(v: np.ndarray) -> float:
    return float(np.dot(v, v))


def xi_value(monitor: XiMonitor, history, z) -> float:
    """``xi_k`` from the iterates ``x^{k-tau}, ..., x^k`` (oldest first)."""
    hist = list(history)
    if len(hist) < monitor.tau + 1:
        raise ContractViolation(f"xi needs {monitor.tau + 1} iterates, got {len(hist)}")
    hist = hist[len(hist) - monitor.tau - 1:]
    c = monitor.coefficients
    xk = hist[-1]
    total = _sq(xk - np.asarray(z))
    for ell in range(1, monitor.tau + 1):
        # x^{k+1-l} - x^{k-l}; hist[-1] is x^k
        total += c[ell - 1] * _sq(hist[-ell] - hist[-ell - 1])
    return total


def xi_decrease_bound(monitor: XiMonitor, xi_k: float, lam: float, step_residual, history_next) -> float:
    """Right-hand side of the one-step xi inequality.

    ``xi_k - lam ||S(x_hat)||^2 (1 - lam (1 + tau/mu + c_1)) - c_{tau+1} ||x^{k+1-tau} - x^{k-tau}||^2``,
    with ``history_next`` the iterates ``x^{k-tau}, ..., x^{k+1}`` (oldest first).
    Under the step bound this never exceeds ``xi_k``.
    """
    tau, mu = monitor.tau, monitor.mu
    c = monitor.coefficients
    hist = list(history_next)
    if len(hist) < tau + 2:
        raise ContractViolation(f"need {tau + 2} iterates, got {len(hist)}")
    hist = hist[len(hist) - tau - 2:]
    s2 = _sq(np.asarray(step_residual))
    # hist[1] is x^{k+1-tau} and hist[0] is x^{k-tau}
    tail = _sq(hist[1] - hist[0])
    return xi_k - lam * s2 * (1.0 - lam * (1.0 + tau / mu + c[0])) - c[tau] * tail
