"""Fixed-point operator abstractions and the nonexpansiveness probe."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, InvalidParameter

NONEXPANSIVE_RTOL = 1e-10


class FixedPointOperator:
    """A map ``T`` on real vectors of length ``dimension``.

    Subclasses implement :meth:`apply`; :meth:`residual` is ``S = Id - T``
    and may be overridden when a subclass can form it more cheaply.
    """

    dimension: int
    nonexpansive: bool = True

    def apply(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def residual(self, x: np.ndarray) -> np.ndarray:
        return x - self.apply(x)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.apply(x)

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dimension,):
            raise ContractViolation(
                f"{type(self).__name__} acts on vectors of length {self.dimension}, got shape {x.shape}"
            )
        return x


class IdentityOperator(FixedPointOperator):
    def __init__(self, dimension: int):
        self.dimension = int(dimension)

    def apply(self, x):
        return self._check(x).copy()


class FunctionOperator(FixedPointOperator):
    """Wraps a plain callable. ``nonexpansive`` is whatever the caller claims."""

    def __init__(self, func, dimension: int, nonexpansive: bool = True, name: str | None = None):
        self.func = func
        self.dimension = int(dimension)
        self.nonexpansive = nonexpansive
        self.name = name or getattr(func, "__name__", "function")

    def apply(self, x):
        y = np.asarray(self.func(self._check(x)), dtype=np.float64)
        if y.shape != (self.dimension,):
            raise ContractViolation(f"{self.name} changed the dimension to {y.shape}")
        return y


class MatrixOperator(FixedPointOperator):
    """Affine map ``x -> G x + h``; nonexpansive iff the spectral norm of ``G`` is at most 1."""

    def __init__(self, G, h=None):
        self.G = np.atleast_2d(np.asarray(G, dtype=np.float64))
        n = self.G.shape[0]
        if self.G.shape != (n, n):
            raise InvalidParameter("G must be square")
        self.h = np.zeros(n) if h is None else np.asarray(h, dtype=np.float64)
        self.dimension = n
        self.nonexpansive = bool(np.linalg.norm(self.G, 2) <= 1 + NONEXPANSIVE_RTOL)

    def apply(self, x):
        return self.G @ self._check(x) + self.h


class RelaxedOperator(FixedPointOperator):
    """``(1 - alpha) Id + alpha T``."""

    def __init__(self, base: FixedPointOperator, alpha: float):
        if not 0.0 <= alpha <= 2.0:
            raise InvalidParameter(f"relaxation alpha must lie in [0, 2], got {alpha}")
        self.base = base
        self.alpha = float(alpha)
        self.dimension = base.dimension
        self.nonexpansive = base.nonexpansive

    @property
    def averaged(self) -> bool:
        return self.base.nonexpansive and 0.0 < self.alpha < 1.0

    def apply(self, x):
        x = self._check(x)
        return (1.0 - self.alpha) * x + self.alpha * self.base.apply(x)


def relax(T: FixedPointOperator, alpha: float) -> RelaxedOperator:
    return RelaxedOperator(T, alpha)


def residual(T: FixedPointOperator, x) -> np.ndarray:
    """``x - T(x)``; zero exactly at the fixed points of ``T``."""
    return T.residual(T._check(x))


@dataclass
class ProbeReport:
    trials: int
    max_ratio: float
    violated: bool
    worst_pair: tuple | None = None


def nonexpansive_probe(T: FixedPointOperator, trials: int = 1000, seed: int = 0, scale: float = 1.0) -> ProbeReport:
    """Sample pairs and report the largest ``||T x - T y|| / ||x - y||``.

    Half the pairs are independent draws, half are small perturbations of
    each other, so both global and local expansion are probed.
    """
    if trials < 1:
        raise InvalidParameter("trials must be >= 1")
    rng = np.random.default_rng(seed)
    n = T.dimension
    worst, worst_pair = 0.0, None
    for t in range(trials):
        x = scale * rng.standard_normal(n) * rng.lognormal(0.0, 1.0)
        if t % 2:
            y = x + scale * 1e-3 * rng.standard_normal(n)
        else:
            y = scale * rng.standard_normal(n) * rng.lognormal(0.0, 1.0)
        dx = np.linalg.norm(x - y)
        if dx == 0.0:
            continue
        ratio = np.linalg.norm(T.apply(x) - T.apply(y)) / dx
        if ratio > worst:
            worst, worst_pair = float(ratio), (x, y)
    return ProbeReport(trials=trials, max_ratio=worst, violated=worst > 1.0 + NONEXPANSIVE_RTOL, worst_pair=worst_pair)
