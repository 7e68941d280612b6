"""Diagonal Laplace approximation over the network weights.

The curvature of the loss at the MAP weights is replaced by the diagonal of
the empirical Fisher: the mean, over all training examples (each collocation
point and each receiver), of the squared gradient of that example's
unaveraged loss term. The prior's exact curvature ``2*lambda`` and a small
damping are added before inverting.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .eikonal_ref import TraveltimeField
from .neural_core import NetworkParams, forward, per_example_grads
from .pinn import CollocationSet
from .velocity_model import Grid2D, ReceiverSet, VelocityModel

DEFAULT_DAMPING = 1e-6


@dataclass(frozen=True, eq=False)
class LaplacePosterior:
    theta_map: NetworkParams
    diag_variance: np.ndarray = field(repr=False)
    damping: float = DEFAULT_DAMPING
    prior_lambda: float = 0.0

    def __post_init__(self):
        var = np.array(self.diag_variance, dtype=float).ravel()
        if var.shape != self.theta_map.theta.shape:
            raise ValueError(f"{var.size} variances for {len(self.theta_map)} parameters")
        if not np.all(np.isfinite(var)) or np.any(var < 0):
            raise ValueError("posterior variances must be finite and non-negative")
        var.setflags(write=False)
        object.__setattr__(self, "diag_variance", var)

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.diag_variance)


def _pde_adjoints(slowness2: np.ndarray):
    def adj(T, Tx, Tz):
        r = Tx * Tx + Tz * Tz - slowness2
        zero = np.zeros_like(T)
        return r * r, zero, 4.0 * r * Tx, 4.0 * r * Tz
    return adj


def _data_adjoints(t_obs: np.ndarray):
    def adj(T, Tx, Tz):
        e = T - t_obs
        zero = np.zeros_like(T)
        return e * e, 2.0 * e, zero, zero
    return adj


def _sum_sq_grads(params, points, make_adj, per_point, chunk):
    out = np.zeros(len(params))
    for start in range(0, len(points), chunk):
        sl = slice(start, start + chunk)
        G = per_example_grads(params, points[sl], make_adj(per_point[sl]))
        out += np.einsum("np,np->p", G, G)
    return out


def diag_fisher(theta_map: NetworkParams, colloc: CollocationSet | np.ndarray,
                obs: ReceiverSet, model: VelocityModel, prior_lambda: float = 0.0,
                chunk: int = 1024) -> np.ndarray:
    """Empirical Fisher diagonal at ``theta_map``.

    Collocation examples contribute the gradient of ``r_i^2`` (eikonal
    residual squared), receivers the gradient of ``(T_k - T_obs_k)^2``. The
    prior is not part of the expectation; ``prior_lambda`` is accepted for
    signature symmetry and ignored here (see :func:`build_posterior`).
    """
    pts = colloc.points if isinstance(colloc, CollocationSet) else np.asarray(colloc, float)
    if obs.times is None:
        raise ValueError("observations need traveltimes")
    v = model.velocity(pts[:, 0], pts[:, 1])
    total = _sum_sq_grads(theta_map, pts, _pde_adjoints, 1.0 / (v * v), chunk)
    total += _sum_sq_grads(theta_map, obs.points, _data_adjoints, obs.times, chunk)
    return total / (len(pts) + len(obs))


def build_posterior(theta_map: NetworkParams, fisher_diag: np.ndarray,
                    damping: float = DEFAULT_DAMPING, prior_lambda: float = 0.0) -> LaplacePosterior:
    """Variance ``1 / (F_ii + 2*prior_lambda + damping)`` per parameter."""
    fisher_diag = np.asarray(fisher_diag, dtype=float)
    if damping < 0:
        raise ValueError("damping must be >= 0")
    if prior_lambda < 0:
        raise ValueError("prior_lambda must be >= 0")
    if not np.all(np.isfinite(fisher_diag)):
        raise ValueError("Fisher diagonal has non-finite entries")
    if np.any(fisher_diag < 0):
        raise ValueError("Fisher diagonal has negative entries")
    precision = fisher_diag + 2.0 * prior_lambda + damping
    if np.any(precision <= 0):
        raise ValueError("zero precision for some parameters; add damping or a prior")
    return LaplacePosterior(theta_map, 1.0 / precision, float(damping), float(prior_lambda))


def sample_params(posterior: LaplacePosterior, n: int, seed: int) -> list[NetworkParams]:
    """``n`` draws ``theta_map + sqrt(var) * z`` with standard normal ``z``."""
    if n < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    theta = posterior.theta_map.theta
    std = posterior.std
    spec = posterior.theta_map.spec
    return [NetworkParams(spec, theta + std * rng.standard_normal(theta.size)) for _ in range(n)]


def iter_ensemble(samples: Sequence[NetworkParams], grid: Grid2D) -> Iterator[TraveltimeField]:
    """Predicted field for each realisation, lazily."""
    pts = grid.points()
    for params in samples:
        yield TraveltimeField(grid, forward(params, pts).reshape(grid.shape))


def ensemble_predict(samples: Sequence[NetworkParams], grid: Grid2D) -> list[TraveltimeField]:
    if len(samples) == 0:
        raise ValueError("empty sample list")
    return list(iter_ensemble(samples, grid))
