"""Uniform vertex-centred 2-D grids, bilinear interpolation and field I/O.

Interpolation clamps the *query point* to the ROI before looking up the
stencil, which gives the state-constraint / Neumann-like boundary treatment
the solvers rely on.  The interpolant is written as a nonnegative weighted
sum followed by a clip to the stencil's [min, max]; both steps are monotone
under IEEE rounding, so the discrete Bellman operators built on top stay
monotone in floating point and not just in exact arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, ParseError

# Fractional indices this close to an integer are snapped onto the node.
SNAP = 1e-9


@dataclass(frozen=True)
class Grid2:
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ContractError(f"grid needs at least 2 nodes per axis, got {self.nx}x{self.ny}")
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ContractError("grid bounds must satisfy min < max")

    @classmethod
    def square(cls, half_width: float, n: int) -> "Grid2":
        return cls(-half_width, half_width, -half_width, half_width, n, n)

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.nx - 1)

    @property
    def dy(self) -> float:
        return (self.y_max - self.y_min) / (self.ny - 1)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def size(self) -> int:
        return self.nx * self.ny

    def xs(self) -> np.ndarray:
        return self.x_min + np.arange(self.nx) * self.dx

    def ys(self) -> np.ndarray:
        return self.y_min + np.arange(self.ny) * self.dy

    def node(self, i: int, j: int) -> tuple[float, float]:
        return (self.x_min + i * self.dx, self.y_min + j * self.dy)

    def points(self) -> np.ndarray:
        """Node coordinates, shape (ny, nx, 2); ``points()[j, i] == node(i, j)``."""
        X, Y = np.meshgrid(self.xs(), self.ys())
        return np.stack([X, Y], axis=-1)

    def clamp(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        out = np.empty_like(p)
        out[..., 0] = np.minimum(np.maximum(p[..., 0], self.x_min), self.x_max)
        out[..., 1] = np.minimum(np.maximum(p[..., 1], self.y_min), self.y_max)
        return out


class ScalarField:
    """Immutable node values on a Grid2, stored as an (ny, nx) array."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: Grid2, values):
        values = np.array(values, dtype=float, copy=True).reshape(grid.shape)
        if not np.all(np.isfinite(values)):
            raise ContractError("field values must be finite")
        values.setflags(write=False)
        self.grid = grid
        self.values = values

    @classmethod
    def constant(cls, grid: Grid2, c: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(c)))

    @classmethod
    def from_function(cls, grid: Grid2, fn) -> "ScalarField":
        return cls(grid, fn(grid.points()))

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def __eq__(self, other):
        if not isinstance(other, ScalarField):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.values, other.values)

    def __repr__(self):
        return f"ScalarField({self.grid.nx}x{self.grid.ny}, min={self.values.min():.6g}, max={self.values.max():.6g})"


# -- interpolation ------------------------------------------------------------

def _axis_scalar(p: float, lo: float, hi: float, d: float, n: int) -> tuple[int, float]:
    p = min(max(p, lo), hi)
    s = (p - lo) / d
    r = round(s)
    if abs(s - r) <= SNAP:
        s = float(r)
    i0 = math.floor(s)
    i0 = min(max(i0, 0), n - 2)
    return i0, s - i0


def interpolate(field: ScalarField, p) -> float:
    """Bilinear value at a single point (scalar code path)."""
    g = field.grid
    px, py = float(p[0]), float(p[1])
    i0, t = _axis_scalar(px, g.x_min, g.x_max, g.dx, g.nx)
    j0, u = _axis_scalar(py, g.y_min, g.y_max, g.dy, g.ny)
    v = field.values
    v00 = float(v[j0, i0])
    v10 = float(v[j0, i0 + 1])
    v01 = float(v[j0 + 1, i0])
    v11 = float(v[j0 + 1, i0 + 1])
    w00 = (1.0 - t) * (1.0 - u)
    w10 = t * (1.0 - u)
    w01 = (1.0 - t) * u
    w11 = t * u
    val = w00 * v00 + w10 * v10 + w01 * v01 + w11 * v11
    lo = min(v00, v10, v01, v11)
    hi = max(v00, v10, v01, v11)
    return min(max(val, lo), hi)


@dataclass(frozen=True)
class Stencil:
    """Precomputed bilinear lookups for a fixed set of query points."""

    i00: np.ndarray
    i10: np.ndarray
    i01: np.ndarray
    i11: np.ndarray
    w00: np.ndarray
    w10: np.ndarray
    w01: np.ndarray
    w11: np.ndarray


def _axis_vec(p, lo, hi, d, n):
    p = np.minimum(np.maximum(p, lo), hi)
    s = (p - lo) / d
    r = np.rint(s)
    s = np.where(np.abs(s - r) <= SNAP, r, s)
    i0 = np.clip(np.floor(s), 0, n - 2)
    return i0.astype(np.intp), s - i0


def make_stencil(grid: Grid2, pts) -> Stencil:
    pts = np.asarray(pts, dtype=float)
    i0, t = _axis_vec(pts[..., 0], grid.x_min, grid.x_max, grid.dx, grid.nx)
    j0, u = _axis_vec(pts[..., 1], grid.y_min, grid.y_max, grid.dy, grid.ny)
    nx = grid.nx
    base = j0 * nx + i0
    return Stencil(
        i00=base, i10=base + 1, i01=base + nx, i11=base + nx + 1,
        w00=(1.0 - t) * (1.0 - u), w10=t * (1.0 - u), w01=(1.0 - t) * u, w11=t * u,
    )


def apply_stencil(values_flat: np.ndarray, st: Stencil) -> np.ndarray:
    v00 = values_flat[st.i00]
    v10 = values_flat[st.i10]
    v01 = values_flat[st.i01]
    v11 = values_flat[st.i11]
    val = st.w00 * v00 + st.w10 * v10 + st.w01 * v01 + st.w11 * v11
    lo = np.minimum(np.minimum(v00, v10), np.minimum(v01, v11))
    hi = np.maximum(np.maximum(v00, v10), np.maximum(v01, v11))
    return np.minimum(np.maximum(val, lo), hi)


def interpolate_many(field: ScalarField, pts) -> np.ndarray:
    """Vectorised ``interpolate``; bitwise identical to the scalar path."""
    return apply_stencil(field.flat(), make_stencil(field.grid, pts))


def resample(field: ScalarField, grid: Grid2) -> ScalarField:
    """Evaluate ``field`` at the nodes of another grid (exact on shared nodes)."""
    return ScalarField(grid, interpolate_many(field, grid.points()))


# -- field arithmetic ---------------------------------------------------------

@dataclass(frozen=True)
class FieldStats:
    max_abs: float
    mean_abs: float
    argmax: tuple[int, int]  # (i, j)


def _check_same_grid(a: ScalarField, b: ScalarField):
    if a.grid != b.grid:
        raise ContractError(f"grid mismatch: {a.grid} vs {b.grid}")


def sup_diff(a: ScalarField, b: ScalarField) -> FieldStats:
    _check_same_grid(a, b)
    d = np.abs(a.values - b.values)
    j, i = np.unravel_index(int(np.argmax(d)), d.shape)
    return FieldStats(max_abs=float(d.max()), mean_abs=float(d.mean()), argmax=(int(i), int(j)))


def sup_norm(a: ScalarField) -> float:
    return float(np.max(np.abs(a.values)))


def clamp_field(field: ScalarField, lo: float, hi: float) -> ScalarField:
    if lo > hi:
        raise ContractError(f"empty clamp range [{lo}, {hi}]")
    return ScalarField(field.grid, np.clip(field.values, lo, hi))


# -- file formats -------------------------------------------------------------

def write_field(field: ScalarField, path) -> None:
    g = field.grid
    lines = [
        "FIELD v1",
        f"{g.nx} {g.ny} {g.x_min!r} {g.x_max!r} {g.y_min!r} {g.y_max!r}",
    ]
    lines.extend(repr(float(v)) for v in field.flat())
    Path(path).write_text("\n".join(lines) + "\n")


def read_field(path) -> ScalarField:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "FIELD v1":
        raise ParseError("missing 'FIELD v1' header", line=1)
    if len(lines) < 2:
        raise ParseError("missing grid line", line=2)
    parts = lines[1].split()
    if len(parts) != 6:
        raise ParseError("grid line needs 'nx ny x_min x_max y_min y_max'", line=2)
    try:
        nx, ny = int(parts[0]), int(parts[1])
        bounds = [float(s) for s in parts[2:]]
        grid = Grid2(bounds[0], bounds[1], bounds[2], bounds[3], nx, ny)
    except (ValueError, ContractError) as exc:
        raise ParseError(f"bad grid line: {exc}", line=2) from None
    body = [ln for ln in lines[2:]]
    while body and not body[-1].strip():
        body.pop()
    if len(body) != grid.size:
        raise ParseError(f"expected {grid.size} values, found {len(body)}", line=2 + min(len(body), grid.size) + 1)
    values = np.empty(grid.size)
    for k, tok in enumerate(body):
        lineno = k + 3
        try:
            v = float(tok)
        except ValueError:
            raise ParseError(f"not a number: {tok!r}", line=lineno) from None
        if not math.isfinite(v):
            raise ParseError(f"non-finite value {tok!r}", line=lineno)
        values[k] = v
    return ScalarField(grid, values)


def write_pgm(field: ScalarField, path, lo: float, hi: float) -> None:
    """8-bit ASCII graymap, affine map [lo, hi] -> [0, 255], top row is y_max."""
    if not hi > lo:
        raise ContractError("graymap range must satisfy lo < hi")
    scaled = np.rint((np.clip(field.values, lo, hi) - lo) / (hi - lo) * 255.0).astype(int)
    rows = scaled[::-1]
    g = field.grid
    out = ["P2", f"{g.nx} {g.ny}", "255"]
    out.extend(" ".join(str(v) for v in row) for row in rows)
    Path(path).write_text("\n".join(out) + "\n")
