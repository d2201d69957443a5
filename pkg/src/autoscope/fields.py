"""Regular-grid scalar fields and their on-disk formats.

A field is stored row-major with shape ``(height, width)``.  Pixel ``(row, col)``
covers the physical box ``[col*dx, (col+1)*dx) x [row*dy, (row+1)*dy)`` and its
sample point is the box centre.  ``x`` runs along columns, ``y`` along rows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class Grid:
    """Pixel geometry without values: ``width`` x ``height`` pixels over ``extent`` nm."""

    width: int
    height: int
    extent: tuple[float, float]

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"grid must be at least 1x1, got {self.width}x{self.height}")
        ex, ey = (float(e) for e in self.extent)
        if not (ex > 0 and ey > 0):
            raise ValueError(f"extent components must be positive, got {self.extent}")
        object.__setattr__(self, "extent", (ex, ey))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def pixel_size(self) -> tuple[float, float]:
        return (self.extent[0] / self.width, self.extent[1] / self.height)

    def centers(self) -> np.ndarray:
        """Pixel-centre coordinates, shape ``(height*width, 2)`` in row-major order."""
        dx, dy = self.pixel_size
        xs = (np.arange(self.width) + 0.5) * dx
        ys = (np.arange(self.height) + 0.5) * dy
        gx, gy = np.meshgrid(xs, ys)
        return np.column_stack([gx.ravel(), gy.ravel()])

    def to_pixel(self, pos) -> tuple[int, int]:
        """(row, col) of the pixel containing physical position ``pos``, clipped to the grid."""
        dx, dy = self.pixel_size
        col = int(np.clip(np.floor(pos[0] / dx), 0, self.width - 1))
        row = int(np.clip(np.floor(pos[1] / dy), 0, self.height - 1))
        return row, col

    def to_position(self, pixel) -> tuple[float, float]:
        """Physical centre of pixel ``(row, col)``."""
        dx, dy = self.pixel_size
        return ((pixel[1] + 0.5) * dx, (pixel[0] + 0.5) * dy)


@dataclass
class ScalarField2D:
    """Scalar map on a regular grid (ground truth, reconstructions, acquisition surfaces)."""

    width: int
    height: int
    extent: tuple[float, float]
    values: np.ndarray

    def __post_init__(self):
        self.grid  # validates dims and extent
        self.extent = (float(self.extent[0]), float(self.extent[1]))
        values = np.asarray(self.values, dtype=float)
        if values.size != self.width * self.height:
            raise ValueError(
                f"values has {values.size} entries, expected {self.width}*{self.height}"
            )
        self.values = values.reshape(self.height, self.width)

    @property
    def grid(self) -> Grid:
        return Grid(self.width, self.height, self.extent)

    @classmethod
    def on(cls, grid: Grid, values) -> "ScalarField2D":
        return cls(grid.width, grid.height, grid.extent, values)

    @classmethod
    def full(cls, grid: Grid, fill: float) -> "ScalarField2D":
        return cls.on(grid, np.full(grid.shape, float(fill)))

    def copy(self) -> "ScalarField2D":
        return ScalarField2D(self.width, self.height, self.extent, self.values.copy())

    def sample(self, points) -> np.ndarray:
        """Bilinear interpolation at physical ``points`` (N, 2); constant beyond the outer pixel centres."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        dx, dy = self.grid.pixel_size
        u = _snap(np.clip(pts[:, 0] / dx - 0.5, 0.0, self.width - 1))
        v = _snap(np.clip(pts[:, 1] / dy - 0.5, 0.0, self.height - 1))
        c0 = np.minimum(np.floor(u).astype(int), max(self.width - 2, 0))
        r0 = np.minimum(np.floor(v).astype(int), max(self.height - 2, 0))
        c1 = np.minimum(c0 + 1, self.width - 1)
        r1 = np.minimum(r0 + 1, self.height - 1)
        fu = u - c0
        fv = v - r0
        f = self.values
        top = f[r0, c0] * (1 - fu) + f[r0, c1] * fu
        bottom = f[r1, c0] * (1 - fu) + f[r1, c1] * fu
        out = top * (1 - fv) + bottom * fv
        # exact hits on pixel centres return the stored value bit-for-bit
        on_node = (fu == 0) & (fv == 0)
        out[on_node] = f[r0[on_node], c0[on_node]]
        return out


def _snap(u: np.ndarray) -> np.ndarray:
    # absorb round-off so that pixel-centre queries land exactly on nodes
    r = np.rint(u)
    return np.where(np.abs(u - r) < 1e-9, r, u)


# --- file formats ---------------------------------------------------------


def to_pgm_bytes(values: np.ndarray) -> bytes:
    """8-bit binary PGM (P5), min-max scaled; a constant image maps to 0."""
    arr = np.asarray(values, dtype=np.float32).astype(float)
    h, w = arr.shape
    finite = np.isfinite(arr)
    if finite.any():
        lo, hi = arr[finite].min(), arr[finite].max()
    else:
        lo = hi = 0.0
    scaled = np.zeros_like(arr)
    if hi > lo:
        scaled = np.where(finite, (arr - lo) / (hi - lo), 0.0)
    pix = np.clip(np.rint(scaled * 255), 0, 255).astype(np.uint8)
    return b"P5\n%d %d\n255\n" % (w, h) + pix.tobytes()


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM supported")
    pix = np.frombuffer(data[-w * h:], dtype=np.uint8)
    return pix.reshape(h, w)


def raw_bytes(values: np.ndarray) -> bytes:
    return np.ascontiguousarray(values, dtype="<f4").tobytes()


def write_field(field: ScalarField2D, stem, **header_extra) -> list[Path]:
    """Write ``stem.json`` (header), ``stem.raw`` (little-endian float32) and ``stem.pgm``."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "width": field.width,
        "height": field.height,
        "extent": list(field.extent),
        "dtype": "<f4",
        "planes": ["values"],
        **header_extra,
    }
    paths = [stem.with_suffix(".json"), stem.with_suffix(".raw"), stem.with_suffix(".pgm")]
    paths[0].write_text(json.dumps(header, sort_keys=True, indent=1) + "\n")
    paths[1].write_bytes(raw_bytes(field.values))
    paths[2].write_bytes(to_pgm_bytes(field.values))
    return paths


def read_field(stem) -> ScalarField2D:
    stem = Path(stem)
    header = json.loads(stem.with_suffix(".json").read_text())
    raw = np.frombuffer(stem.with_suffix(".raw").read_bytes(), dtype="<f4")
    return ScalarField2D(
        header["width"], header["height"], tuple(header["extent"]), raw.astype(float)
    )
