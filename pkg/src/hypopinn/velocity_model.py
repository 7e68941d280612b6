"""Spatial domain, regular grids and wave-speed models.

Coordinates are in km with ``x`` lateral and ``z`` depth (positive down,
``z = 0`` at the surface). Velocities are in km/s.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

# relative slack when testing whether a point lies inside a domain
_EDGE_TOL = 1e-12


class DomainError(ValueError):
    """A point or source lies outside the computational domain."""


class FieldFormatError(ValueError):
    """A grid field file could not be parsed."""

    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class Domain2D:
    x_min: float
    x_max: float
    z_min: float
    z_max: float

    def __post_init__(self):
        if not self.x_max > self.x_min:
            raise ValueError(f"x_max ({self.x_max}) must exceed x_min ({self.x_min})")
        if not self.z_max > self.z_min:
            raise ValueError(f"z_max ({self.z_max}) must exceed z_min ({self.z_min})")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def depth(self) -> float:
        return self.z_max - self.z_min

    def contains(self, x, z) -> np.ndarray:
        """Vectorised inside-test with a tiny tolerance at the edges."""
        tx = _EDGE_TOL * max(1.0, abs(self.x_min), abs(self.x_max))
        tz = _EDGE_TOL * max(1.0, abs(self.z_min), abs(self.z_max))
        x = np.asarray(x, dtype=float)
        z = np.asarray(z, dtype=float)
        return ((x >= self.x_min - tx) & (x <= self.x_max + tx)
                & (z >= self.z_min - tz) & (z <= self.z_max + tz))

    def check(self, x, z) -> None:
        inside = self.contains(x, z)
        if not np.all(inside):
            xs = np.broadcast_to(np.asarray(x, dtype=float), inside.shape)
            zs = np.broadcast_to(np.asarray(z, dtype=float), inside.shape)
            k = np.flatnonzero(~inside.ravel())[0]
            raise DomainError(
                f"point ({xs.ravel()[k]:g}, {zs.ravel()[k]:g}) outside domain "
                f"x=[{self.x_min:g}, {self.x_max:g}] z=[{self.z_min:g}, {self.z_max:g}]")


def _snap(u: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    # fractional node index; coordinates built as x_min + i*h land back on i
    r = np.rint(u)
    return np.where(np.abs(u - r) < tol, r, u)


@dataclass(frozen=True)
class Grid2D:
    """Regular node-centred grid; node ``(i, j)`` sits at ``(x_min + i*hx, z_min + j*hz)``."""

    domain: Domain2D
    nx: int
    nz: int

    def __post_init__(self):
        if self.nx < 2 or self.nz < 2:
            raise ValueError(f"grid needs at least 2 nodes per axis, got {self.nx}x{self.nz}")

    @classmethod
    def from_spacing(cls, x_min: float, z_min: float, nx: int, nz: int, h: float) -> "Grid2D":
        """Grid with equal spacing ``h`` along both axes."""
        return cls(Domain2D(x_min, x_min + (nx - 1) * h, z_min, z_min + (nz - 1) * h), nx, nz)

    @property
    def hx(self) -> float:
        return (self.domain.x_max - self.domain.x_min) / (self.nx - 1)

    @property
    def hz(self) -> float:
        return (self.domain.z_max - self.domain.z_min) / (self.nz - 1)

    @property
    def shape(self) -> tuple[int, int]:
        """Array shape of node values: rows are constant depth."""
        return (self.nz, self.nx)

    @property
    def size(self) -> int:
        return self.nx * self.nz

    @property
    def x(self) -> np.ndarray:
        return self.domain.x_min + np.arange(self.nx) * self.hx

    @property
    def z(self) -> np.ndarray:
        return self.domain.z_min + np.arange(self.nz) * self.hz

    def node(self, i: int, j: int) -> tuple[float, float]:
        return (self.domain.x_min + i * self.hx, self.domain.z_min + j * self.hz)

    def points(self) -> np.ndarray:
        """All node coordinates as an ``(nz*nx, 2)`` array in row-major (z-major) order."""
        zz, xx = np.meshgrid(self.z, self.x, indexing="ij")
        return np.column_stack([xx.ravel(), zz.ravel()])

    def refine(self, factor: int) -> "Grid2D":
        """Same domain with spacing divided by ``factor``."""
        return Grid2D(self.domain, (self.nx - 1) * factor + 1, (self.nz - 1) * factor + 1)

    def nearest_node(self, x: float, z: float) -> tuple[int, int]:
        i = int(np.clip(np.rint((x - self.domain.x_min) / self.hx), 0, self.nx - 1))
        j = int(np.clip(np.rint((z - self.domain.z_min) / self.hz), 0, self.nz - 1))
        return i, j

    def interpolate(self, values: np.ndarray, x, z) -> np.ndarray:
        """Bilinear interpolation of node ``values`` (shape ``(nz, nx)``)."""
        self.domain.check(x, z)
        x = np.asarray(x, dtype=float)
        z = np.asarray(z, dtype=float)
        u = _snap(np.clip((x - self.domain.x_min) / self.hx, 0.0, self.nx - 1))
        w = _snap(np.clip((z - self.domain.z_min) / self.hz, 0.0, self.nz - 1))
        i0 = np.minimum(np.floor(u).astype(int), self.nx - 2)
        j0 = np.minimum(np.floor(w).astype(int), self.nz - 2)
        fu = u - i0
        fw = w - j0
        v00 = values[j0, i0]
        v10 = values[j0, i0 + 1]
        v01 = values[j0 + 1, i0]
        v11 = values[j0 + 1, i0 + 1]
        out = (v00 * (1 - fu) * (1 - fw) + v10 * fu * (1 - fw)
               + v01 * (1 - fu) * fw + v11 * fu * fw)
        # exact node reproduction, independent of rounding in the weights
        on_node = (fu == 0.0) & (fw == 0.0)
        return np.where(on_node, v00, out)


class VelocityModel:
    """Base class; subclasses implement :meth:`_eval` on in-domain arrays."""

    domain: Domain2D

    def velocity(self, x, z) -> np.ndarray:
        self.domain.check(x, z)
        return self._eval(np.asarray(x, dtype=float), np.asarray(z, dtype=float))

    __call__ = velocity

    def _eval(self, x: np.ndarray, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sample(self, grid: Grid2D) -> "GriddedVelocity":
        """Evaluate on the nodes of ``grid`` and wrap as a gridded model."""
        pts = grid.points()
        vals = self.velocity(pts[:, 0], pts[:, 1]).reshape(grid.shape)
        return GriddedVelocity(grid, vals)


@dataclass(frozen=True)
class ConstantVelocity(VelocityModel):
    v: float
    domain: Domain2D

    def __post_init__(self):
        if not self.v > 0:
            raise ValueError(f"velocity must be positive, got {self.v}")

    def _eval(self, x, z):
        return np.full(np.broadcast(x, z).shape, float(self.v))


@dataclass(frozen=True)
class LinearGradientVelocity(VelocityModel):
    """``v(z) = v0 + g*z``; ``v0`` is the speed at ``z = 0``."""

    v0: float
    g: float
    domain: Domain2D

    def __post_init__(self):
        lo = min(self.v0 + self.g * self.domain.z_min, self.v0 + self.g * self.domain.z_max)
        if not lo > 0:
            raise ValueError("linear-gradient velocity is non-positive somewhere in the domain")

    def _eval(self, x, z):
        return np.broadcast_to(self.v0 + self.g * z, np.broadcast(x, z).shape).astype(float)


@dataclass(frozen=True, eq=False)
class GriddedVelocity(VelocityModel):
    grid: Grid2D
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise ValueError(f"values shape {vals.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(vals)) or not np.all(vals > 0):
            raise ValueError("gridded velocities must be finite and strictly positive")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def domain(self) -> Domain2D:  # type: ignore[override]
        return self.grid.domain

    def _eval(self, x, z):
        return self.grid.interpolate(self.values, x, z)

    def sample(self, grid: Grid2D) -> "GriddedVelocity":
        if grid == self.grid:
            return self
        return super().sample(grid)


def eval_velocity(model: VelocityModel, p: Sequence[float]) -> float:
    """Velocity at a single point ``p = (x, z)``."""
    return float(model.velocity(p[0], p[1]))


def build_layered(grid: Grid2D, layer_depths: Sequence[float],
                  layer_velocities: Sequence[float]) -> GriddedVelocity:
    """Horizontally layered model sampled on ``grid``.

    ``layer_depths`` are the interface depths (km), strictly increasing.
    A node at depth ``z`` takes the velocity of the deepest layer whose top
    interface is ``<= z``; nodes above the first interface take
    ``layer_velocities[0]``.
    """
    depths = np.asarray(layer_depths, dtype=float)
    vels = np.asarray(layer_velocities, dtype=float)
    if depths.ndim != 1 or vels.ndim != 1:
        raise ValueError("layer depths and velocities must be flat sequences")
    if len(vels) != len(depths) + 1:
        raise ValueError(
            f"need one more velocity than interfaces: got {len(depths)} depths, {len(vels)} velocities")
    if np.any(np.diff(depths) <= 0):
        raise ValueError(f"layer depths must be strictly increasing: {depths.tolist()}")
    if np.any(vels <= 0):
        raise ValueError("layer velocities must be positive")
    layer = np.searchsorted(depths, grid.z, side="right")
    column = vels[layer]
    return GriddedVelocity(grid, np.repeat(column[:, None], grid.nx, axis=1))


# --- grid field files -------------------------------------------------------

def format_field(grid: Grid2D, values: np.ndarray, comments: Sequence[str] = ()) -> str:
    values = np.asarray(values, dtype=float)
    if values.shape != grid.shape:
        raise ValueError(f"values shape {values.shape} does not match grid {grid.shape}")
    d = grid.domain
    lines = [f"# {c}" for c in comments]
    lines.append(f"{grid.nx} {grid.nz} {d.x_min!r} {d.x_max!r} {d.z_min!r} {d.z_max!r}")
    for row in values:
        lines.append(" ".join(f"{v:.17g}" for v in row))
    return "\n".join(lines) + "\n"


def save_field(path, grid: Grid2D, values: np.ndarray, comments: Sequence[str] = ()) -> None:
    """Write node values in the plain-text grid format.

    Optional ``comments`` are written as leading ``#`` lines.
    """
    Path(path).write_text(format_field(grid, values, comments))


def parse_field(text: str) -> tuple[Grid2D, np.ndarray, list[str]]:
    """Parse grid-format text; returns ``(grid, values, comments)``."""
    comments: list[str] = []
    header = None
    rows: list[list[float]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            comments.append(line[1:].strip())
            continue
        tokens = line.split()
        if header is None:
            if len(tokens) != 6:
                raise FieldFormatError(f"header needs 6 fields 'nx nz x_min x_max z_min z_max', got {len(tokens)}", lineno)
            try:
                nx, nz = int(tokens[0]), int(tokens[1])
                bounds = [float(t) for t in tokens[2:]]
                grid = Grid2D(Domain2D(*bounds), nx, nz)
            except ValueError as exc:
                raise FieldFormatError(f"bad header: {exc}", lineno) from None
            header = grid
            continue
        if len(tokens) != header.nx:
            raise FieldFormatError(f"expected {header.nx} values, got {len(tokens)}", lineno)
        if len(rows) == header.nz:
            raise FieldFormatError(f"more than nz={header.nz} rows", lineno)
        try:
            rows.append([float(t) for t in tokens])
        except ValueError as exc:
            raise FieldFormatError(str(exc), lineno) from None
    if header is None:
        raise FieldFormatError("empty file: missing header", 1)
    if len(rows) != header.nz:
        raise FieldFormatError(
            f"expected nz={header.nz} rows, found {len(rows)}", len(text.splitlines()) or 1)
    return header, np.array(rows, dtype=float), comments


def load_field(path) -> tuple[Grid2D, np.ndarray, list[str]]:
    return parse_field(Path(path).read_text())


# --- receivers --------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ReceiverSet:
    """Ordered receiver positions with optional observed traveltimes (s)."""

    x: np.ndarray
    z: np.ndarray
    times: np.ndarray | None = None

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        z = np.atleast_1d(np.asarray(self.z, dtype=float))
        if x.shape != z.shape or x.ndim != 1:
            raise ValueError("receiver x and z must be 1-D arrays of equal length")
        if len(x) < 1:
            raise ValueError("need at least one receiver")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)
        if self.times is not None:
            t = np.atleast_1d(np.asarray(self.times, dtype=float))
            if t.shape != x.shape:
                raise ValueError(f"{len(t)} times for {len(x)} receivers")
            object.__setattr__(self, "times", t)

    def __len__(self) -> int:
        return len(self.x)

    @property
    def points(self) -> np.ndarray:
        return np.column_stack([self.x, self.z])

    def with_times(self, times) -> "ReceiverSet":
        return ReceiverSet(self.x, self.z, times)


def surface_receivers(domain: Domain2D, n: int) -> ReceiverSet:
    """``n`` receivers evenly spaced along the top edge, both corners included."""
    if n < 1:
        raise ValueError("need at least one receiver")
    if n == 1:
        x = np.array([0.5 * (domain.x_min + domain.x_max)])
    else:
        x = domain.x_min + np.arange(n) * (domain.width / (n - 1))
    return ReceiverSet(x, np.full(n, domain.z_min))
