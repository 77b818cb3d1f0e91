"""Operators for consistent sparse linear systems ``A x = b``.

Row-action operators (hyperplane projections and sequential Kaczmarz
sweeps over a block) and DROP block operators, together with row
partitions and the spectral check behind DROP's nonexpansiveness.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ContractViolation, InvalidOperator, InvalidParameter
from .operators import FixedPointOperator
from .sparse import SparseMatrix

STRATEGIES = ("contiguous", "strided", "overlapping", "user")


class Hyperplane(FixedPointOperator):
    """Orthogonal projection onto ``{x : <a, x> = b}`` for a sparse row ``a``."""

    def __init__(self, indices, values, b: float, dimension: int):
        self.indices = np.asarray(indices, dtype=np.int64)
        self.values = np.asarray(values, dtype=np.float64)
        self.b = float(b)
        self.dimension = int(dimension)
        self.norm_sq = float(np.dot(self.values, self.values))
        if not self.norm_sq > 0:
            raise InvalidOperator("hyperplane normal is the zero vector")
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= self.dimension):
            raise ContractViolation("row indices fall outside the vector dimension")

    @classmethod
    def from_dense(cls, a, b: float) -> "Hyperplane":
        a = np.asarray(a, dtype=np.float64)
        idx = np.flatnonzero(a)
        return cls(idx, a[idx], b, a.size)

    @classmethod
    def from_row(cls, A: SparseMatrix, b, i: int) -> "Hyperplane":
        idx, val = A.row(i)
        return cls(idx, val, b[i], A.shape[1])

    def coefficient(self, x: np.ndarray) -> float:
        """``(<a, x> - b) / ||a||^2``."""
        return (np.dot(self.values, x[self.indices]) - self.b) / self.norm_sq

    def apply(self, x):
        x = self._check(x)
        y = x.copy()
        y[self.indices] -= self.coefficient(x) * self.values
        return y

    def residual_sparse(self, x) -> tuple[np.ndarray, np.ndarray]:
        """``x - P(x)`` on the coordinates the row touches: ``(indices, values)``.

        Every other coordinate of the residual is exactly zero.
        """
        x = self._check(x)
        xi = x[self.indices]
        return self.indices, xi - (xi - self.coefficient(x) * self.values)


def hyperplane_project(h: Hyperplane, x) -> np.ndarray:
    return h.apply(x)


def kaczmarz_residual(h: Hyperplane, x) -> np.ndarray:
    return h.residual(x)


class KaczmarzSweep(FixedPointOperator):
    """Composition of the row projections of one block, applied in row order.

    A composition of projections is nonexpansive and its fixed points are
    the solutions of the block's equations. A single-row block is exactly
    that row's projection.
    """

    def __init__(self, A: SparseMatrix, b, rows):
        self.rows = np.asarray(rows, dtype=np.int64)
        if self.rows.size == 0:
            raise InvalidOperator("empty block")
        if np.any(A.row_norms_sq[self.rows] <= 0):
            raise InvalidOperator("block contains a zero row")
        self.A = A
        self.b = np.asarray(b, dtype=np.float64)
        self.dimension = A.shape[1]

    def apply(self, x):
        x = self._check(x)
        return _kernels.kaczmarz_sweep(
            self.A.indptr, self.A.indices, self.A.data, self.b, self.A.row_norms_sq, self.rows, x
        )


class DropBlockOperator(FixedPointOperator):
    """DROP operator of one row block.

    ``apply`` is the x-space map ``x - D A_t^T W (A_t x - b_t)`` that the
    iteration uses; ``apply_scaled`` is the symmetrised map
    ``U(y) = y - Abar^T W (Abar y - b_t)`` with ``Abar = A_t D^{1/2}``,
    which is nonexpansive in the Euclidean norm.

    ``column_counts="block"`` counts nonzeros per column of ``A_t``;
    ``"global"`` uses the counts of the whole matrix. Columns the block
    never touches get weight 0, so the operator leaves them alone.
    """

    def __init__(self, A: SparseMatrix, b, rows, column_counts: str = "block"):
        self.rows = np.asarray(rows, dtype=np.int64)
        if self.rows.size == 0:
            raise InvalidOperator("empty block")
        b = np.asarray(b, dtype=np.float64)
        self.At = A.csr[self.rows]
        self.AtT = self.At.T.tocsr()
        self.bt = b[self.rows]
        norms = A.row_norms_sq[self.rows]
        if np.any(norms <= 0):
            raise InvalidOperator("block contains a zero row")
        self.w = 1.0 / norms
        if column_counts == "block":
            s = np.bincount(self.At.indices[self.At.data != 0], minlength=A.shape[1])
        elif column_counts == "global":
            s = A.column_counts()
        else:
            raise InvalidParameter(f"column_counts must be 'block' or 'global', got {column_counts!r}")
        self.column_counts = s
        self.d = np.where(s > 0, 1.0 / np.maximum(s, 1), 0.0)
        self.sqrt_d = np.sqrt(self.d)
        self.support = np.flatnonzero(s > 0)
        self.dimension = A.shape[1]
        self.counting = column_counts

    @property
    def empty_columns(self) -> int:
        return int(self.dimension - self.support.size)

    def block_residual(self, x: np.ndarray) -> np.ndarray:
        """``A_t x - b_t``."""
        return self.At @ x - self.bt

    def gradient(self, x: np.ndarray) -> np.ndarray:
        """``D A_t^T W (A_t x - b_t)``."""
        return self.d * (self.AtT @ (self.w * self.block_residual(x)))

    def apply(self, x):
        x = self._check(x)
        return x - self.gradient(x)

    def residual(self, x):
        return self.gradient(self._check(x))

    def apply_scaled(self, y):
        y = self._check(y)
        r = self.At @ (self.sqrt_d * y) - self.bt
        return y - self.sqrt_d * (self.AtT @ (self.w * r))

    def symmetric_product(self, v: np.ndarray) -> np.ndarray:
        """``Abar^T W Abar v``; same spectrum as ``D A_t^T W A_t``."""
        return self.sqrt_d * (self.AtT @ (self.w * (self.At @ (self.sqrt_d * v))))


class ScaledDropOperator(FixedPointOperator):
    """View of a DROP block as the symmetrised operator ``U`` on y-space."""

    def __init__(self, block: DropBlockOperator):
        self.block = block
        self.dimension = block.dimension

    def apply(self, y):
        return self.block.apply_scaled(y)


def drop_apply(U: DropBlockOperator, y) -> np.ndarray:
    return U.apply_scaled(y)


def drop_residual_update(block: DropBlockOperator, x, lam: float) -> np.ndarray:
    """``x - lam D_t A_t^T W_t (A_t x - b_t)``."""
    x = block._check(x)
    return x - lam * block.gradient(x)


def drop_componentwise_reference(A: SparseMatrix, b, x) -> np.ndarray:
    """Full-matrix DROP update written coordinate by coordinate.

    ``x_j - (1/s_j) sum_i ((<a^i, x> - b_i) / ||a^i||^2) a^i_j`` with ``s_j``
    the nonzero count of column ``j``. Deliberately loops over rows rather
    than sharing code with :class:`DropBlockOperator`.
    """
    x = np.asarray(x, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    M, N = A.shape
    if x.shape != (N,) or b.shape != (M,):
        raise ContractViolation("dimension mismatch between A, b and x")
    acc = np.zeros(N)
    s = np.zeros(N)
    for i in range(M):
        idx, val = A.row(i)
        norm_sq = sum(v * v for v in val)
        coef = (sum(v * x[j] for j, v in zip(idx, val)) - b[i]) / norm_sq
        for j, v in zip(idx, val):
            acc[j] += coef * v
            if v != 0:
                s[j] += 1
    out = x.copy()
    hit = s > 0
    out[hit] -= acc[hit] / s[hit]
    return out


@dataclass
class BlockPartition:
    """Row blocks ``B_t`` (0-based row ids) whose union is every row."""

    M: int
    blocks: list[np.ndarray]
    strategy: str = "user"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.blocks = [np.asarray(b, dtype=np.int64) for b in self.blocks]
        if not self.blocks:
            raise InvalidParameter("partition has no blocks")
        for t, blk in enumerate(self.blocks):
            if blk.size == 0:
                raise InvalidParameter(f"block {t} is empty")
            if blk.min() < 0 or blk.max() >= self.M:
                raise InvalidParameter(f"block {t} has row ids outside [0, {self.M})")
        if not self.covers():
            raise InvalidParameter("blocks do not cover every row")

    @property
    def r(self) -> int:
        return len(self.blocks)

    def covers(self) -> bool:
        seen = np.zeros(self.M, dtype=bool)
        for blk in self.blocks:
            seen[blk] = True
        return bool(seen.all())

    def overlapping(self) -> bool:
        return sum(b.size for b in self.blocks) > self.M

    def singletons(self) -> bool:
        return all(b.size == 1 for b in self.blocks)


def build_blocks(M: int, r: int, strategy: str = "contiguous", overlap: int = 1, blocks=None) -> BlockPartition:
    """Cover ``range(M)`` with ``r`` row blocks.

    ``contiguous`` splits into runs whose sizes differ by at most one (larger
    runs first); ``strided`` takes every ``r``-th row; ``overlapping`` extends
    each contiguous run by ``overlap`` further rows, wrapping past the end.
    """
    if strategy == "user":
        if blocks is None:
            raise InvalidParameter("user strategy needs explicit blocks")
        return BlockPartition(M, list(blocks), "user")
    if not 1 <= r <= M:
        raise InvalidParameter(f"need 1 <= r <= M, got r={r}, M={M}")
    rows = np.arange(M)
    if strategy == "contiguous":
        out = np.array_split(rows, r)
        params = {}
    elif strategy == "strided":
        out = [rows[t::r] for t in range(r)]
        params = {}
    elif strategy == "overlapping":
        if overlap < 0:
            raise InvalidParameter("overlap must be nonnegative")
        out = []
        start = 0
        for base in np.array_split(rows, r):
            stop = start + base.size + overlap
            out.append(np.unique(np.arange(start, stop) % M) if stop - start >= M else np.arange(start, stop) % M)
            start += base.size
        params = {"overlap": overlap}
    else:
        raise InvalidParameter(f"unknown block strategy {strategy!r}")
    return BlockPartition(M, out, strategy, params)


@dataclass
class SpectralCertificate:
    estimate: float
    converged: bool
    iterations: int

    def certifies(self, tol: float = 1e-8) -> bool:
        return self.converged and self.estimate <= 1.0 + tol


def spectral_certificate(block: DropBlockOperator, iterations: int = 500, tol: float = 1e-10, seed: int = 0) -> SpectralCertificate:
    """Power-iteration estimate of ``rho(D_t A_t^T W_t A_t)``.

    Iterates on the symmetric similar matrix ``Abar^T W Abar`` so the
    Rayleigh quotient is meaningful. ``converged`` is False when successive
    quotients still differ by more than ``tol`` after ``iterations`` steps.
    """
    if iterations < 1:
        raise InvalidParameter("iterations must be >= 1")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(block.dimension)
    off = np.ones(block.dimension, dtype=bool)
    off[block.support] = False
    v[off] = 0.0
    nv = np.linalg.norm(v)
    if nv == 0:
        return SpectralCertificate(0.0, True, 0)
    v /= nv
    prev = None
    for it in range(1, iterations + 1):
        u = block.symmetric_product(v)
        rq = float(np.dot(v, u))
        nu = np.linalg.norm(u)
        if nu == 0:
            return SpectralCertificate(0.0, True, it)
        v = u / nu
        if prev is not None and abs(rq - prev) <= tol * max(1.0, abs(rq)):
            return SpectralCertificate(rq, True, it)
        prev = rq
    return SpectralCertificate(prev, False, iterations)


def build_operators(A: SparseMatrix, b, partition: BlockPartition, family: str, column_counts: str = "block"):
    """One operator per block: Kaczmarz sweeps (``art``) or DROP blocks (``drop``).

    With singleton blocks the ``art`` family yields plain hyperplane projections.
    """
    b = np.asarray(b, dtype=np.float64)
    if family == "art":
        if partition.singletons():
            return [Hyperplane.from_row(A, b, int(blk[0])) for blk in partition.blocks]
        return [KaczmarzSweep(A, b, blk) for blk in partition.blocks]
    if family == "drop":
        return [DropBlockOperator(A, b, blk, column_counts=column_counts) for blk in partition.blocks]
    raise InvalidParameter(f"unknown operator family {family!r}")
