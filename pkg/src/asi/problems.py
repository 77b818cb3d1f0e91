"""Test problems: parallel-beam tomography systems and random sparse systems.

Both generators return a :class:`TomographySystem`, a consistent system
``A x_true = b`` whose matrix has no zero rows or columns.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameter
from .phantom import PhantomImage, make_phantom
from .sparse import SparseMatrix

# Segments shorter than this fraction of a pixel side are rounding debris
# from rays passing exactly through grid corners.
_MIN_SEGMENT = 1e-12


@dataclass
class TomographySystem:
    A: SparseMatrix
    b: np.ndarray
    x_true: np.ndarray
    geometry: dict = field(default_factory=dict)
    row_index: np.ndarray | None = None
    col_index: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape

    def consistency_error(self) -> float:
        return float(np.linalg.norm(self.A.matvec(self.x_true) - self.b))

    def is_consistent(self, rtol: float = 1e-10) -> bool:
        return self.consistency_error() <= rtol * (1.0 + np.linalg.norm(self.b))


def default_angles(count: int = 90) -> np.ndarray:
    """``count`` equispaced angles on [0, pi)."""
    return np.arange(count) * (np.pi / count)


def _snap(v: float) -> float:
    return 0.0 if abs(v) < 1e-14 else v


def trace_ray(n: int, theta: float, t: float):
    """Pixels crossed by the line ``<p, (cos theta, sin theta)> = t`` and the chord lengths.

    The grid has unit pixels covering ``[-n/2, n/2]^2``; pixel ``(r, c)`` has
    flat index ``r * n + c`` with row 0 at the top. A ray lying exactly on a
    grid line is credited to the pixel to its right (vertical lines) or
    below it (horizontal lines).
    """
    ct, st = _snap(np.cos(theta)), _snap(np.sin(theta))
    px, py = t * ct, t * st
    ux, uy = -st, ct
    h = n / 2.0

    s_lo, s_hi = -np.inf, np.inf
    for p, u in ((px, ux), (py, uy)):
        if u == 0.0:
            if p < -h or p > h:
                return np.empty(0, dtype=np.int64), np.empty(0)
            continue
        a, b = (-h - p) / u, (h - p) / u
        s_lo, s_hi = max(s_lo, min(a, b)), min(s_hi, max(a, b))
    if not s_hi > s_lo:
        return np.empty(0, dtype=np.int64), np.empty(0)

    edges = np.arange(n + 1) - h
    cuts = [np.array([s_lo, s_hi])]
    if ux != 0.0:
        cuts.append((edges - px) / ux)
    if uy != 0.0:
        cuts.append((edges - py) / uy)
    s = np.concatenate(cuts)
    s = np.unique(s[(s >= s_lo) & (s <= s_hi)])
    ds = np.diff(s)
    mid = 0.5 * (s[:-1] + s[1:])
    mx, my = px + mid * ux, py + mid * uy
    col = np.floor(mx + h).astype(np.int64)
    row = np.floor(h - my).astype(np.int64)
    # a ray along the right or bottom boundary maps to index n and is dropped
    ok = (ds > _MIN_SEGMENT) & (col >= 0) & (col < n) & (row >= 0) & (row < n)
    pix = row[ok] * n + col[ok]
    lengths = ds[ok]
    if pix.size == 0:
        return pix, lengths
    order = np.argsort(pix, kind="stable")
    pix, lengths = pix[order], lengths[order]
    uniq, start = np.unique(pix, return_index=True)
    return uniq, np.add.reduceat(lengths, start)


def projection_matrix(n: int, angles, detectors: int, spacing: float = 1.0) -> SparseMatrix:
    """Unpruned line-intersection matrix, one row per (angle, detector) pair."""
    angles = np.asarray(angles, dtype=np.float64).ravel()
    if angles.size < 1:
        raise InvalidParameter("need at least one projection angle")
    if detectors < 1:
        raise InvalidParameter("need at least one detector")
    offsets = (np.arange(detectors) - (detectors - 1) / 2.0) * spacing
    rows, cols, vals = [], [], []
    ray = 0
    for theta in angles:
        for t in offsets:
            pix, ln = trace_ray(n, float(theta), float(t))
            rows.append(np.full(pix.size, ray, dtype=np.int64))
            cols.append(pix)
            vals.append(ln)
            ray += 1
    return SparseMatrix.from_coo(
        np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), (ray, n * n)
    )


def prune(A: SparseMatrix) -> tuple[SparseMatrix, np.ndarray, np.ndarray]:
    """Drop zero rows and columns; returns the matrix plus kept row/column ids."""
    keep_r = np.flatnonzero(A.row_norms_sq > 0)
    keep_c = np.flatnonzero(A.column_counts() > 0)
    return SparseMatrix(A.csr[keep_r][:, keep_c]), keep_r, keep_c


def make_projector(
    n: int = 64,
    angles=None,
    detectors: int | None = None,
    spacing: float = 1.0,
    image: PhantomImage | np.ndarray | None = None,
) -> TomographySystem:
    """Parallel-beam tomography system for an ``n x n`` image.

    ``image`` defaults to the Shepp-Logan phantom. ``b`` is formed by
    multiplying the pruned matrix with the pruned image, so the system is
    consistent by construction.
    """
    if angles is None:
        angles = default_angles(90)
    angles = np.asarray(angles, dtype=np.float64).ravel()
    if detectors is None:
        detectors = int(np.ceil(np.sqrt(2.0) * n)) + 4
    if image is None:
        image = make_phantom(n) if n >= 8 else np.ones((n, n))
    values = image.values if isinstance(image, PhantomImage) else np.asarray(image, dtype=np.float64)
    if values.shape != (n, n):
        raise InvalidParameter(f"image shape {values.shape} does not match grid side {n}")

    full = projection_matrix(n, angles, detectors, spacing)
    if full.nnz == 0:
        raise InvalidParameter("no ray intersects the pixel grid")
    A, keep_r, keep_c = prune(full)
    x_true = values.ravel()[keep_c].copy()
    b = A.matvec(x_true)
    geometry = {
        "kind": "parallel-beam",
        "n": int(n),
        "angles": [float(a) for a in angles],
        "detectors": int(detectors),
        "spacing": float(spacing),
        "rays": int(full.shape[0]),
        "pixels": int(n * n),
    }
    return TomographySystem(A=A, b=b, x_true=x_true, geometry=geometry, row_index=keep_r, col_index=keep_c)


@dataclass(frozen=True)
class RandomSystemSpec:
    M: int
    N: int
    nnz_per_row: int
    seed: int = 0
    solution: str = "normal"  # or "uniform"
    max_retries: int = 20


def make_random_system(spec: RandomSystemSpec) -> TomographySystem:
    if not 1 <= spec.nnz_per_row <= spec.N:
        raise InvalidParameter(f"nnz_per_row must lie in [1, {spec.N}], got {spec.nnz_per_row}")
    if spec.M < 1:
        raise InvalidParameter("M must be positive")
    seeds = np.random.SeedSequence(spec.seed).spawn(spec.max_retries)
    for ss in seeds:
        rng = np.random.default_rng(ss)
        cols = np.concatenate([rng.choice(spec.N, spec.nnz_per_row, replace=False) for _ in range(spec.M)])
        if np.unique(cols).size < spec.N:
            continue
        rows = np.repeat(np.arange(spec.M), spec.nnz_per_row)
        vals = rng.standard_normal(cols.size)
        A = SparseMatrix.from_coo(rows, cols, vals, (spec.M, spec.N))
        if A.zero_rows().size or A.zero_columns().size:
            continue
        if spec.solution == "uniform":
            x = rng.uniform(0.0, 1.0, spec.N)
        elif spec.solution == "normal":
            x = rng.standard_normal(spec.N)
        else:
            raise InvalidParameter(f"unknown solution distribution {spec.solution!r}")
        geometry = {"kind": "random", "M": spec.M, "N": spec.N, "nnz_per_row": spec.nnz_per_row, "seed": spec.seed}
        return TomographySystem(
            A=A, b=A.matvec(x), x_true=x, geometry=geometry,
            row_index=np.arange(spec.M), col_index=np.arange(spec.N),
        )
    raise InvalidParameter(
        f"could not cover all {spec.N} columns after {spec.max_retries} attempts; increase M or nnz_per_row"
    )
