"""Physics-informed loss and MAP training.

The loss is the mean squared eikonal residual over collocation points plus
the mean squared traveltime misfit at the receivers plus an L2 (Gaussian
prior) penalty on all network parameters. Training is full-batch Adam; the
parameters after the last epoch are the MAP estimate.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .neural_core import (Adam, InitScheme, NetworkParams, NetworkSpec, forward_with_input_grad,
                          grad_params, init_weights)
from .velocity_model import Domain2D, ReceiverSet, VelocityModel

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "pde_loss", "data_loss", "prior_loss", "total")


@dataclass(frozen=True, eq=False)
class CollocationSet:
    points: np.ndarray
    seed: int

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 3000
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    prior_lambda: float = 1e-6
    n_colloc: int = 2500
    init_scheme: InitScheme = InitScheme.KAIMING_NORMAL
    init_seed: int = 0
    colloc_seed: int = 0
    widths: tuple[int, ...] = NetworkSpec().widths

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.prior_lambda < 0:
            raise ValueError("prior_lambda must be >= 0")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if self.n_colloc < 1:
            raise ValueError("n_colloc must be >= 1")
        if isinstance(self.init_scheme, str):
            object.__setattr__(self, "init_scheme", InitScheme.parse(self.init_scheme))
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))

    @property
    def spec(self) -> NetworkSpec:
        return NetworkSpec(self.widths)


@dataclass(frozen=True)
class LossBreakdown:
    pde_loss: float
    data_loss: float
    prior_loss: float
    total: float

    @classmethod
    def from_terms(cls, pde: float, data: float, prior: float) -> "LossBreakdown":
        return cls(float(pde), float(data), float(prior), float(pde + data + prior))


class TrainingDiverged(FloatingPointError):
    """Non-finite loss during training; ``history`` holds the epochs completed."""

    def __init__(self, epoch: int, history: list[LossBreakdown], params: NetworkParams):
        super().__init__(f"loss became non-finite at epoch {epoch}")
        self.epoch = epoch
        self.history = history
        self.params = params


def sample_collocation(domain: Domain2D, n: int, seed: int) -> CollocationSet:
    """``n`` i.i.d. uniform points in the rectangle."""
    if n < 1:
        raise ValueError("need at least one collocation point")
    rng = np.random.default_rng(seed)
    x = rng.uniform(domain.x_min, domain.x_max, size=n)
    z = rng.uniform(domain.z_min, domain.z_max, size=n)
    return CollocationSet(np.column_stack([x, z]), seed)


def pde_residual(params: NetworkParams, p, model: VelocityModel):
    """``|grad T|^2 - 1/v^2`` at one point or a batch."""
    pts = np.asarray(p, dtype=float)
    batch = np.atleast_2d(pts)
    _, Tx, Tz = forward_with_input_grad(params, batch)
    v = model.velocity(batch[:, 0], batch[:, 1])
    r = Tx * Tx + Tz * Tz - 1.0 / (v * v)
    return float(r[0]) if pts.ndim == 1 else r


class PinnLoss:
    """Full loss over a fixed collocation set and receiver set.

    Evaluates the three terms and their gradient in one forward/reverse sweep.
    """

    def __init__(self, colloc: CollocationSet | np.ndarray, obs: ReceiverSet,
                 model: VelocityModel, prior_lambda: float):
        pts = colloc.points if isinstance(colloc, CollocationSet) else np.asarray(colloc, float)
        if len(pts) == 0:
            raise ValueError("empty collocation set")
        if obs.times is None or len(obs) == 0:
            raise ValueError("observations need traveltimes")
        if prior_lambda < 0:
            raise ValueError("prior_lambda must be >= 0")
        model.domain.check(pts[:, 0], pts[:, 1])
        self.n_colloc = len(pts)
        self.n_data = len(obs)
        self.points = np.vstack([pts, obs.points])
        v = model.velocity(pts[:, 0], pts[:, 1])
        self.slowness2 = 1.0 / (v * v)
        self.t_obs = obs.times.copy()
        self.prior_lambda = float(prior_lambda)

    def _terms(self, T, Tx, Tz):
        nI = self.n_colloc
        r = Tx[:nI] ** 2 + Tz[:nI] ** 2 - self.slowness2
        e = T[nI:] - self.t_obs
        return r, e

    def closure(self, T, Tx, Tz):
        """Network-output adjoints of the pde and data terms."""
        nI, nD = self.n_colloc, self.n_data
        r, e = self._terms(T, Tx, Tz)
        pde = np.mean(r * r)
        data = np.mean(e * e)
        gT = np.zeros_like(T)
        gTx = np.zeros_like(T)
        gTz = np.zeros_like(T)
        gT[nI:] = (2.0 / nD) * e
        c = (4.0 / nI) * r
        gTx[:nI] = c * Tx[:nI]
        gTz[:nI] = c * Tz[:nI]
        self._last = (pde, data)
        return pde + data, gT, gTx, gTz

    def breakdown(self, params: NetworkParams) -> LossBreakdown:
        T, Tx, Tz = forward_with_input_grad(params, self.points)
        r, e = self._terms(T, Tx, Tz)
        prior = self.prior_lambda * float(params.theta @ params.theta)
        return LossBreakdown.from_terms(np.mean(r * r), np.mean(e * e), prior)

    def value_and_grad(self, params: NetworkParams) -> tuple[LossBreakdown, np.ndarray]:
        _, grad = grad_params(params, self.points, self.closure)
        pde, data = self._last
        theta = params.theta
        prior = self.prior_lambda * float(theta @ theta)
        grad += 2.0 * self.prior_lambda * theta
        return LossBreakdown.from_terms(pde, data, prior), grad


def total_loss(params: NetworkParams, colloc: CollocationSet, obs: ReceiverSet,
               model: VelocityModel, prior_lambda: float) -> LossBreakdown:
    return PinnLoss(colloc, obs, model, prior_lambda).breakdown(params)


def train_map(config: TrainConfig, model: VelocityModel, obs: ReceiverSet, domain: Domain2D,
              colloc: CollocationSet | None = None, init: NetworkParams | None = None,
              ) -> tuple[NetworkParams, list[LossBreakdown]]:
    """Full-batch Adam for ``config.epochs`` steps from a seeded initialisation.

    ``history[k]`` is the loss at the parameters entering epoch ``k + 1``.
    Returns the parameters after the final step. Raises
    :class:`TrainingDiverged` on a non-finite loss.
    """
    if colloc is None:
        colloc = sample_collocation(domain, config.n_colloc, config.colloc_seed)
    params = init if init is not None else init_weights(config.spec, config.init_scheme,
                                                        config.init_seed)
    loss = PinnLoss(colloc, obs, model, config.prior_lambda)
    opt = Adam(len(params), lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps)
    history: list[LossBreakdown] = []
    for epoch in range(1, config.epochs + 1):
        lb, grad = loss.value_and_grad(params)
        if not (np.isfinite(lb.total) and np.all(np.isfinite(grad))):
            raise TrainingDiverged(epoch, history, params)
        history.append(lb)
        params = params.replace(opt.step(params.theta, grad))
        if epoch == 1 or epoch % 500 == 0:
            log.debug("epoch %d: total %.3e (pde %.3e, data %.3e)", epoch, lb.total,
                      lb.pde_loss, lb.data_loss)
    return params, history


def write_history(path, history: Sequence[LossBreakdown], comments: Sequence[str] = ()) -> None:
    with open(path, "w", newline="") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for k, lb in enumerate(history, start=1):
            w.writerow([k] + [f"{v:.17g}" for v in (lb.pde_loss, lb.data_loss, lb.prior_loss, lb.total)])


def read_history(path) -> list[LossBreakdown]:
    with open(path, newline="") as fh:
        rows = [line for line in fh if not line.startswith("#")]
    reader = csv.DictReader(rows)
    return [LossBreakdown(float(r["pde_loss"]), float(r["data_loss"]), float(r["prior_loss"]),
                          float(r["total"])) for r in reader]
