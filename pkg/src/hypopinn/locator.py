"""Hypocenter extraction as the grid argmin of a traveltime field."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .eikonal_ref import TraveltimeField

CLOUD_COLUMNS = ("realization", "x_km", "z_km", "t_min_s", "negative_min_flag")


@dataclass(frozen=True)
class HypocenterEstimate:
    x: float
    z: float
    t_min: float
    index: tuple[int, int]  # (i, j) grid node
    negative_min: bool

    @property
    def location(self) -> tuple[float, float]:
        return (self.x, self.z)


def locate(field: TraveltimeField) -> HypocenterEstimate:
    """Node of the smallest traveltime; ties go to the lowest row-major index."""
    vals = field.values
    if vals.size == 0:
        raise ValueError("empty field")
    k = int(np.argmin(vals))
    j, i = divmod(k, field.grid.nx)
    x, z = field.grid.node(i, j)
    t = float(vals.flat[k])
    return HypocenterEstimate(x, z, t, (i, j), t < 0.0)


def locate_error(estimate: HypocenterEstimate | Sequence[float],
                 true_source: Sequence[float]) -> tuple[float, float, float]:
    """Signed ``(dx, dz)`` of estimate minus truth, and the Euclidean distance (km)."""
    ex, ez = estimate.location if isinstance(estimate, HypocenterEstimate) else estimate
    dx = float(ex) - float(true_source[0])
    dz = float(ez) - float(true_source[1])
    return dx, dz, math.hypot(dx, dz)


@dataclass(frozen=True)
class HypocenterCloud:
    estimates: tuple[HypocenterEstimate, ...]
    mean: np.ndarray
    std: np.ndarray
    cov: np.ndarray

    def __len__(self) -> int:
        return len(self.estimates)

    @property
    def locations(self) -> np.ndarray:
        return np.array([e.location for e in self.estimates])

    @property
    def negative_min_fraction(self) -> float:
        return float(np.mean([e.negative_min for e in self.estimates]))


def cloud_stats(estimates: Sequence[HypocenterEstimate]) -> HypocenterCloud:
    """Unbiased sample mean, std and 2x2 covariance of the locations."""
    if len(estimates) < 2:
        raise ValueError("need at least two estimates for cloud statistics")
    loc = np.array([e.location for e in estimates], dtype=float)
    cov = np.cov(loc, rowvar=False, ddof=1)
    return HypocenterCloud(tuple(estimates), loc.mean(axis=0), np.sqrt(np.diag(cov)), cov)


def write_cloud(path, cloud: HypocenterCloud | Sequence[HypocenterEstimate],
                comments: Sequence[str] = ()) -> None:
    estimates = cloud.estimates if isinstance(cloud, HypocenterCloud) else cloud
    with open(path, "w", newline="") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CLOUD_COLUMNS)
        for k, e in enumerate(estimates):
            w.writerow([k, f"{e.x:.17g}", f"{e.z:.17g}", f"{e.t_min:.17g}", int(e.negative_min)])


def read_cloud(path) -> list[tuple[float, float, float, bool]]:
    with open(path, newline="") as fh:
        rows = [line for line in fh if not line.startswith("#")]
    return [(float(r["x_km"]), float(r["z_km"]), float(r["t_min_s"]), r["negative_min_flag"] == "1")
            for r in csv.DictReader(rows)]
