"""Ellipse phantoms (Shepp-Logan by default) sampled at pixel centers."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import InvalidParameter


@dataclass(frozen=True)
class Ellipse:
    intensity: float
    a: float
    b: float
    x0: float = 0.0
    y0: float = 0.0
    phi_deg: float = 0.0

    def contains(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        phi = np.deg2rad(self.phi_deg)
        c, s = np.cos(phi), np.sin(phi)
        dx, dy = x - self.x0, y - self.y0
        u = dx * c + dy * s
        v = -dx * s + dy * c
        return (u / self.a) ** 2 + (v / self.b) ** 2 <= 1.0


def load_ellipse_table(path: str | Path | None = None) -> list[Ellipse]:
    """Read an ellipse table from JSON; ``None`` loads the bundled Shepp-Logan table."""
    if path is None:
        text = resources.files("asi").joinpath("data/shepp_logan.json").read_text()
    else:
        text = Path(path).read_text()
    payload = json.loads(text)
    rows = payload["ellipses"] if isinstance(payload, dict) else payload
    return [Ellipse(**row) for row in rows]


@dataclass
class PhantomImage:
    values: np.ndarray
    table: list[Ellipse] = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def flat(self) -> np.ndarray:
        return self.values.ravel()


def pixel_centers(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Center coordinates on [-1, 1]^2; row 0 is the top of the image."""
    half = (n - 1) / 2
    ax = (np.arange(n) - half) / half
    x = np.broadcast_to(ax[None, :], (n, n))
    y = np.broadcast_to(-ax[:, None], (n, n))
    return x, y


def make_phantom(n: int = 64, table=None) -> PhantomImage:
    if n < 8:
        raise InvalidParameter(f"phantom side must be >= 8, got {n}")
    if table is None:
        table = load_ellipse_table()
    table = list(table)
    if not table:
        raise InvalidParameter("ellipse table is empty")
    x, y = pixel_centers(n)
    img = np.zeros((n, n))
    for e in table:
        img[e.contains(x, y)] += e.intensity
    return PhantomImage(values=img, table=table)


def write_pgm(path: str | Path, values: np.ndarray) -> None:
    """Binary 8-bit graymap; values are clipped to [0, 1] before scaling."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    pix = np.rint(v * 255).astype(np.uint8)
    h, w = pix.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pix.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        end = pos
        while not raw[end : end + 1].isspace():
            end += 1
        fields.append(raw[pos:end])
        pos = end
    if fields[0] != b"P5":
        raise InvalidParameter(f"{path}: not a binary graymap")
    w, h, maxval = (int(f) for f in fields[1:])
    # exactly one whitespace byte separates the header from the raster
    pix = np.frombuffer(raw[pos + 1 : pos + 1 + w * h], dtype=np.uint8).reshape(h, w)
    return pix.astype(np.float64) / maxval
