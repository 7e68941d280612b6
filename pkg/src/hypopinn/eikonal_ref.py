"""Reference traveltime solvers: closed forms and first-order Fast Marching."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .velocity_model import (ConstantVelocity, DomainError, FieldFormatError, Grid2D,
                             GriddedVelocity, LinearGradientVelocity, ReceiverSet,
                             VelocityModel, format_field, parse_field)


@dataclass(frozen=True, eq=False)
class TraveltimeField:
    """Traveltimes (s) on the nodes of ``grid``; ``values`` has shape ``(nz, nx)``."""

    grid: Grid2D
    values: np.ndarray = field(repr=False)
    source: tuple[float, float] | None = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise ValueError(f"values shape {vals.shape} does not match grid {self.grid.shape}")
        object.__setattr__(self, "values", vals)

    def interpolate(self, x, z) -> np.ndarray:
        return self.grid.interpolate(self.values, x, z)

    def save(self, path, comments: Sequence[str] = ()) -> None:
        comments = list(comments)
        if self.source is not None:
            comments.append(f"source {self.source[0]!r} {self.source[1]!r}")
        Path(path).write_text(format_field(self.grid, self.values, comments))

    @classmethod
    def load(cls, path) -> "TraveltimeField":
        grid, values, comments = parse_field(Path(path).read_text())
        source = None
        for c in comments:
            parts = c.split()
            if parts and parts[0] == "source":
                if len(parts) != 3:
                    raise FieldFormatError(f"bad source comment {c!r}")
                source = (float(parts[1]), float(parts[2]))
        return cls(grid, values, source)


def analytic_constant(v: float, source: Sequence[float], p) -> np.ndarray | float:
    """Straight-ray traveltime ``|p - source| / v``; ``p`` may be ``(2,)`` or ``(n, 2)``."""
    if not v > 0:
        raise ValueError("velocity must be positive")
    p = np.asarray(p, dtype=float)
    r = np.hypot(p[..., 0] - source[0], p[..., 1] - source[1])
    out = r / v
    return float(out) if out.ndim == 0 else out


def analytic_linear_gradient(v0: float, g: float, source: Sequence[float], p) -> np.ndarray | float:
    """First-arrival traveltime in ``v(z) = v0 + g*z``.

    Uses ``T = arccosh(1 + g^2 r^2 / (2 v(z_s) v(z_p))) / g`` written as
    ``log1p(y + sqrt(y (y + 2))) / g`` so that small gradients keep full
    precision. ``g == 0`` reduces to the constant-velocity result.
    """
    if g == 0:
        return analytic_constant(v0, source, p)
    p = np.asarray(p, dtype=float)
    vs = v0 + g * source[1]
    vp = v0 + g * p[..., 1]
    if vs <= 0 or np.any(vp <= 0):
        raise ValueError("velocity must be positive at source and receiver depths")
    r2 = (p[..., 0] - source[0]) ** 2 + (p[..., 1] - source[1]) ** 2
    y = np.maximum(g * g * r2 / (2.0 * vs * vp), 0.0)
    out = np.log1p(y + np.sqrt(y * (y + 2.0))) / abs(g)
    return float(out) if out.ndim == 0 else out


def analytic_field(model: VelocityModel, grid: Grid2D, source: Sequence[float]) -> TraveltimeField:
    """Closed-form field for constant or linear-gradient models."""
    model.domain.check(source[0], source[1])
    pts = grid.points()
    if isinstance(model, ConstantVelocity):
        vals = analytic_constant(model.v, source, pts)
    elif isinstance(model, LinearGradientVelocity):
        vals = analytic_linear_gradient(model.v0, model.g, source, pts)
    else:
        raise TypeError(f"no closed form for {type(model).__name__}")
    return TraveltimeField(grid, np.asarray(vals).reshape(grid.shape), tuple(map(float, source)))


_FAR, _TRIAL, _KNOWN = 0, 1, 2


def fmm_solve(model: GriddedVelocity, source: Sequence[float]) -> TraveltimeField:
    """First-order Fast Marching solution of the eikonal equation.

    The four corners of the cell containing ``source`` are seeded with the
    straight-ray time at the source velocity and frozen; the front then
    advances by a min-heap over tentative times with the upwind Godunov
    update. Raises :class:`RuntimeError` if accepted times ever decrease.
    """
    grid = model.grid
    sx, sz = float(source[0]), float(source[1])
    if not model.domain.contains(sx, sz):
        raise DomainError(f"source ({sx:g}, {sz:g}) outside domain")
    nx, nz = grid.nx, grid.nz
    hx, hz = grid.hx, grid.hz
    hx2, hz2 = hx * hx, hz * hz
    hxz = hx * hz
    slow = (1.0 / model.values).ravel().tolist()
    n = nx * nz
    inf = math.inf
    T = [inf] * n
    state = [_FAR] * n

    d = grid.domain
    i0 = min(max(int(math.floor((sx - d.x_min) / hx)), 0), nx - 2)
    j0 = min(max(int(math.floor((sz - d.z_min) / hz)), 0), nz - 2)
    v_src = float(model.velocity(sx, sz))
    seeds = []
    for j in (j0, j0 + 1):
        for i in (i0, i0 + 1):
            x, z = grid.node(i, j)
            k = j * nx + i
            T[k] = math.hypot(x - sx, z - sz) / v_src
            state[k] = _KNOWN
            seeds.append(k)

    heap: list[tuple[float, int]] = []

    def update(k: int) -> None:
        j, i = divmod(k, nx)
        a = inf
        if i > 0 and state[k - 1] == _KNOWN:
            a = T[k - 1]
        if i < nx - 1 and state[k + 1] == _KNOWN and T[k + 1] < a:
            a = T[k + 1]
        b = inf
        if j > 0 and state[k - nx] == _KNOWN:
            b = T[k - nx]
        if j < nz - 1 and state[k + nx] == _KNOWN and T[k + nx] < b:
            b = T[k + nx]
        s = slow[k]
        ta = a + hx * s
        tb = b + hz * s
        t = ta if ta < tb else tb
        if a < inf and b < inf:
            disc = s * s * (hx2 + hz2) - (a - b) * (a - b)
            if disc >= 0.0:
                t2 = (a * hz2 + b * hx2 + hxz * math.sqrt(disc)) / (hx2 + hz2)
                if t2 >= a and t2 >= b and t2 < t:
                    t = t2
        if t < T[k]:
            T[k] = t
            state[k] = _TRIAL
            heapq.heappush(heap, (t, k))

    def neighbours(k: int):
        j, i = divmod(k, nx)
        if i > 0:
            yield k - 1
        if i < nx - 1:
            yield k + 1
        if j > 0:
            yield k - nx
        if j < nz - 1:
            yield k + nx

    for k in seeds:
        for m in neighbours(k):
            if state[m] != _KNOWN:
                update(m)

    last = -inf
    pop = heapq.heappop
    while heap:
        t, k = pop(heap)
        if state[k] == _KNOWN or t > T[k]:
            continue
        if t < last - 1e-12 * max(1.0, abs(last)):
            raise RuntimeError(f"fast marching lost monotonicity at node {k}: {t} < {last}")
        last = t
        state[k] = _KNOWN
        for m in neighbours(k):
            if state[m] != _KNOWN:
                update(m)

    values = np.array(T, dtype=float).reshape(grid.shape)
    return TraveltimeField(grid, values, (sx, sz))


def reference_field(model: VelocityModel, grid: Grid2D, source: Sequence[float],
                    method: str = "fmm") -> TraveltimeField:
    """Traveltime field on ``grid`` from the chosen oracle (``"analytic"`` or ``"fmm"``)."""
    if method == "analytic":
        return analytic_field(model, grid, source)
    if method == "fmm":
        return fmm_solve(model.sample(grid), source)
    raise ValueError(f"unknown traveltime oracle {method!r}")


def sample_receivers(field: TraveltimeField, receivers: ReceiverSet) -> ReceiverSet:
    """Bilinearly interpolated traveltimes at the receiver positions."""
    times = field.interpolate(receivers.x, receivers.z)
    return receivers.with_times(np.asarray(times, dtype=float))
