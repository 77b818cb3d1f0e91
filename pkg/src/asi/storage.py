"""File formats: Matrix Market matrices, text/binary vectors, JSON descriptors."""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp

from .problems import TomographySystem
from .sparse import SparseMatrix


class StorageError(OSError):
    """Unreadable or malformed input/output file."""


def write_matrix(path, A: SparseMatrix) -> None:
    # 17 significant digits round-trip every float64 exactly
    scipy.io.mmwrite(str(path), A.csr.tocoo(), field="real", precision=17, symmetry="general")


def read_matrix(path) -> SparseMatrix:
    try:
        M = scipy.io.mmread(str(path))
    except (OSError, ValueError) as e:
        raise StorageError(f"cannot read Matrix Market file {path}: {e}") from e
    if not sp.issparse(M):
        M = sp.csr_matrix(M)
    return SparseMatrix(sp.csr_matrix(M, dtype=np.float64))


def _is_binary(path) -> bool:
    return Path(path).suffix in (".bin", ".f64", ".raw")


def write_vector(path, v, binary: bool | None = None) -> None:
    """Plain text, one number per line, or little-endian float64 for ``.bin``/``.f64``/``.raw``."""
    v = np.asarray(v, dtype=np.float64).ravel()
    if binary is None:
        binary = _is_binary(path)
    if binary:
        Path(path).write_bytes(v.astype("<f8").tobytes())
    else:
        Path(path).write_text("".join(f"{x!r}\n" for x in v.tolist()))


def read_vector(path, binary: bool | None = None) -> np.ndarray:
    if binary is None:
        binary = _is_binary(path)
    try:
        if binary:
            raw = Path(path).read_bytes()
            if len(raw) % 8:
                raise StorageError(f"{path}: size {len(raw)} is not a multiple of 8 bytes")
            return np.frombuffer(raw, dtype="<f8").astype(np.float64)
        lines = [ln.strip() for ln in Path(path).read_text().splitlines()]
        return np.array([float(ln) for ln in lines if ln], dtype=np.float64)
    except ValueError as e:
        raise StorageError(f"{path}: {e}") from e
    except OSError as e:
        raise StorageError(f"cannot read {path}: {e}") from e


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, ValueError) as e:
        raise StorageError(f"cannot read JSON {path}: {e}") from e


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


SYSTEM_FILES = {"A": "A.mtx", "b": "b.txt", "x_true": "x_true.txt", "geometry": "geometry.json"}


def save_system(outdir, system: TomographySystem, config: dict | None = None) -> dict:
    """Write ``A``, ``b``, ``x_true`` and the geometry descriptor; returns the paths."""
    outdir = Path(outdir)
    os.makedirs(outdir, exist_ok=True)
    paths = {k: outdir / v for k, v in SYSTEM_FILES.items()}
    write_matrix(paths["A"], system.A)
    write_vector(paths["b"], system.b)
    write_vector(paths["x_true"], system.x_true)
    geom = dict(system.geometry)
    if config is not None:
        geom["config"] = config
    write_json(paths["geometry"], geom)
    return paths


def load_system(A_path, b_path, x_path=None, geometry_path=None) -> TomographySystem:
    A = read_matrix(A_path)
    b = read_vector(b_path)
    if b.size != A.shape[0]:
        raise StorageError(f"b has {b.size} entries but A has {A.shape[0]} rows")
    x = None
    if x_path is not None:
        x = read_vector(x_path)
        if x.size != A.shape[1]:
            raise StorageError(f"x_true has {x.size} entries but A has {A.shape[1]} columns")
    geom = read_json(geometry_path) if geometry_path is not None else {"kind": "loaded"}
    return TomographySystem(A=A, b=b, x_true=x, geometry=geom)
