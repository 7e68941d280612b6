"""Fully connected Mish network with exact input and parameter derivatives.

The network maps ``(x, z)`` in km to a traveltime. Input derivatives are
propagated forward as two tangent channels alongside the activations (dual
numbers with a 2-vector infinitesimal part). Parameter gradients of any loss
built from ``T``, ``dT/dx`` and ``dT/dz`` are obtained by a hand-written
reverse sweep over that dual-valued computation, which needs the second
derivative of the activation.

All arithmetic is float64.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import _kernels

DEFAULT_WIDTHS = (2, 16, 16, 32, 16, 16, 1)

CHECKPOINT_HEADER = "hypopinn-params v1"


# --- activation -------------------------------------------------------------

def softplus(x):
    """``log(1 + exp(x))`` without overflow."""
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _elementwise(kernel, x):
    arr = np.ascontiguousarray(x, dtype=float)
    res = kernel(np.atleast_1d(arr))
    if isinstance(res, tuple):
        return tuple(r.reshape(arr.shape) if arr.ndim else float(r[0]) for r in res)
    return res.reshape(arr.shape) if arr.ndim else float(res[0])


def mish(x):
    """``x * tanh(softplus(x))``, elementwise."""
    return _elementwise(_kernels.mish_value, x)


def mish_d1(x):
    return _elementwise(_kernels.mish_derivs, x)[1]


def mish_d2(x):
    return _elementwise(_kernels.mish_derivs, x)[2]


# --- architecture and parameters ---------------------------------------------

@dataclass(frozen=True)
class NetworkSpec:
    """Layer widths including the 2-D input and the scalar output.

    Hidden layers use mish; the output layer is linear.
    """

    widths: tuple[int, ...] = DEFAULT_WIDTHS

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        if len(widths) < 2:
            raise ValueError("need at least an input and an output width")
        if widths[0] != 2 or widths[-1] != 1:
            raise ValueError(f"widths must start with 2 and end with 1, got {widths}")
        if min(widths) < 1:
            raise ValueError("all widths must be >= 1")
        object.__setattr__(self, "widths", widths)

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        return list(zip(self.widths[:-1], self.widths[1:]))

    @property
    def n_params(self) -> int:
        return sum(fi * fo + fo for fi, fo in self.layer_shapes)

    def slices(self) -> list[tuple[slice, slice]]:
        """Flat-vector slices of ``(W, b)`` for each layer, W stored row-major ``(fan_in, fan_out)``."""
        out = []
        k = 0
        for fi, fo in self.layer_shapes:
            w = slice(k, k + fi * fo)
            k += fi * fo
            b = slice(k, k + fo)
            k += fo
            out.append((w, b))
        return out


@dataclass(frozen=True, eq=False)
class NetworkParams:
    spec: NetworkSpec
    theta: np.ndarray = field(repr=False)

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float).ravel()
        if theta.size != self.spec.n_params:
            raise ValueError(f"spec {self.spec.widths} needs {self.spec.n_params} params, got {theta.size}")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    def __len__(self) -> int:
        return self.theta.size

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        out = []
        for (fi, fo), (ws, bs) in zip(self.spec.layer_shapes, self.spec.slices()):
            out.append((self.theta[ws].reshape(fi, fo), self.theta[bs]))
        return out

    def replace(self, theta: np.ndarray) -> "NetworkParams":
        return NetworkParams(self.spec, theta)


class InitScheme(str, enum.Enum):
    XAVIER_NORMAL = "xavier_normal"
    XAVIER_UNIFORM = "xavier_uniform"
    KAIMING_NORMAL = "kaiming_normal"
    KAIMING_UNIFORM = "kaiming_uniform"

    @classmethod
    def parse(cls, name: str) -> "InitScheme":
        key = name.strip().lower().replace("-", "_").replace(" ", "_")
        aliases = {"glorot_normal": "xavier_normal", "glorot_uniform": "xavier_uniform",
                   "he_normal": "kaiming_normal", "he_uniform": "kaiming_uniform"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown init scheme {name!r}; expected one of "
                             f"{[s.value for s in cls]}") from None


def init_std(scheme: InitScheme, fan_in: int, fan_out: int) -> float:
    """Target standard deviation of the weights of one layer."""
    if scheme in (InitScheme.XAVIER_NORMAL, InitScheme.XAVIER_UNIFORM):
        return float(np.sqrt(2.0 / (fan_in + fan_out)))
    return float(np.sqrt(2.0 / fan_in))


def init_weights(spec: NetworkSpec, scheme: InitScheme | str, seed: int) -> NetworkParams:
    """Random weights per ``scheme`` (uniform variants matched in variance), zero biases."""
    scheme = InitScheme.parse(scheme) if isinstance(scheme, str) else scheme
    rng = np.random.default_rng(seed)
    theta = np.zeros(spec.n_params)
    for (fi, fo), (ws, _) in zip(spec.layer_shapes, spec.slices()):
        std = init_std(scheme, fi, fo)
        if scheme in (InitScheme.XAVIER_NORMAL, InitScheme.KAIMING_NORMAL):
            w = rng.normal(0.0, std, size=(fi, fo))
        else:
            bound = np.sqrt(3.0) * std
            w = rng.uniform(-bound, bound, size=(fi, fo))
        theta[ws] = w.ravel()
    return NetworkParams(spec, theta)


# --- evaluation ----------------------------------------------------------------

def _as_points(p) -> tuple[np.ndarray, bool]:
    p = np.asarray(p, dtype=float)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    if p.shape[-1] != 2:
        raise ValueError(f"points must have 2 coordinates, got shape {p.shape}")
    return p, single


def forward(params: NetworkParams, p) -> np.ndarray | float:
    """Network output at one point ``(2,)`` or a batch ``(n, 2)``."""
    pts, single = _as_points(p)
    layers = params.layers()
    a = pts
    for W, b in layers[:-1]:
        a = _kernels.mish_value(a @ W + b)
    W, b = layers[-1]
    out = (a @ W + b)[:, 0]
    return float(out[0]) if single else out


@dataclass
class _Tape:
    # per layer: input activation, input tangents (2, n, fan_in)
    inputs: list[np.ndarray]
    tangents: list[np.ndarray]
    # per hidden layer: pre-activation tangents and mish derivatives
    dz: list[np.ndarray]
    d1: list[np.ndarray]
    d2: list[np.ndarray]


def _forward_dual(params: NetworkParams, pts: np.ndarray, record: bool):
    n = pts.shape[0]
    D = np.zeros((2, n, 2))
    D[0, :, 0] = 1.0
    D[1, :, 1] = 1.0
    a = pts
    tape = _Tape([], [], [], [], []) if record else None
    layers = params.layers()
    for W, b in layers[:-1]:
        if record:
            tape.inputs.append(a)
            tape.tangents.append(D)
        z = a @ W + b
        dz = D @ W
        # the kernel's value path matches mish(), so T agrees with forward() bit for bit
        a, D, d1, d2 = _kernels.hidden_forward(z, dz)
        if record:
            tape.dz.append(dz)
            tape.d1.append(d1)
            tape.d2.append(d2)
    W, b = layers[-1]
    if record:
        tape.inputs.append(a)
        tape.tangents.append(D)
    T = (a @ W + b)[:, 0]
    dT = (D @ W)[:, :, 0]
    return T, dT[0], dT[1], tape


def forward_with_input_grad(params: NetworkParams, p):
    """``(T, dT/dx, dT/dz)`` at one point or for a batch of points."""
    pts, single = _as_points(p)
    T, Tx, Tz, _ = _forward_dual(params, pts, record=False)
    if single:
        return float(T[0]), float(Tx[0]), float(Tz[0])
    return T, Tx, Tz


def _backward(params: NetworkParams, tape: _Tape, gT, gTx, gTz, per_example: bool) -> np.ndarray:
    """Reverse sweep; returns ``(P,)`` or, with ``per_example``, ``(n, P)``."""
    spec = params.spec
    layers = params.layers()
    n = gT.shape[0]
    g_a = gT[:, None]
    g_D = np.stack([gTx, gTz])[:, :, None]
    out = np.zeros((n, spec.n_params)) if per_example else np.zeros(spec.n_params)
    slices = spec.slices()
    for li in range(len(layers) - 1, -1, -1):
        W, _ = layers[li]
        a_in = tape.inputs[li]
        D_in = tape.tangents[li]
        ws, bs = slices[li]
        if per_example:
            gW = np.einsum("ni,nj->nij", a_in, g_a)
            gW += np.einsum("kni,knj->nij", D_in, g_D)
            out[:, ws] = gW.reshape(n, -1)
            out[:, bs] = g_a
        else:
            gW = a_in.T @ g_a + D_in[0].T @ g_D[0] + D_in[1].T @ g_D[1]
            out[ws] = gW.ravel()
            out[bs] = g_a.sum(axis=0)
        if li == 0:
            break
        # into the activation of the previous hidden layer
        g_act = g_a @ W.T
        g_Dact = g_D @ W.T
        h = li - 1
        d1, d2, dz = tape.d1[h], tape.d2[h], tape.dz[h]
        g_a, g_D = _kernels.hidden_backward(g_act, g_Dact, d1, d2, dz)
    return out


# closure(T, Tx, Tz) -> (loss, dL/dT, dL/dTx, dL/dTz)
LossClosure = Callable[[np.ndarray, np.ndarray, np.ndarray],
                       tuple[float, np.ndarray, np.ndarray, np.ndarray]]


def grad_params(params: NetworkParams, points, closure: LossClosure) -> tuple[float, np.ndarray]:
    """Loss value and its gradient with respect to every network parameter.

    ``closure`` receives the network output and its input gradient at
    ``points`` and returns the scalar loss together with its partial
    derivatives with respect to each of those three arrays.
    """
    pts, _ = _as_points(points)
    T, Tx, Tz, tape = _forward_dual(params, pts, record=True)
    loss, gT, gTx, gTz = closure(T, Tx, Tz)
    grad = _backward(params, tape, *(np.asarray(g, dtype=float) for g in (gT, gTx, gTz)),
                     per_example=False)
    return float(loss), grad


def per_example_grads(params: NetworkParams, points, adjoints: LossClosure) -> np.ndarray:
    """Row ``i`` is the parameter gradient of the ``i``-th per-point loss term.

    ``adjoints`` returns ``(values, dT, dTx, dTz)`` where every entry is a
    per-point array.
    """
    pts, _ = _as_points(points)
    T, Tx, Tz, tape = _forward_dual(params, pts, record=True)
    _, gT, gTx, gTz = adjoints(T, Tx, Tz)
    return _backward(params, tape, *(np.asarray(g, dtype=float) for g in (gT, gTx, gTz)),
                     per_example=True)


# --- optimiser -------------------------------------------------------------------

class Adam:
    """Adam with bias correction; moments live on the instance."""

    def __init__(self, n: int, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.step_count = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        """Return updated parameters; the input array is not modified."""
        grad = np.asarray(grad, dtype=float)
        if grad.shape != self.m.shape or np.shape(theta) != self.m.shape:
            raise ValueError(f"expected length {self.m.size}, got params {np.shape(theta)} "
                             f"and grad {grad.shape}")
        self.step_count += 1
        t = self.step_count
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** t)
        v_hat = self.v / (1.0 - self.beta2 ** t)
        return theta - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# --- checkpoints -----------------------------------------------------------------

def save_params(path, params: NetworkParams, variance: np.ndarray | None = None,
                comments: Sequence[str] = ()) -> None:
    """Write a checkpoint; with ``variance`` each line carries a second column."""
    lines = [CHECKPOINT_HEADER]
    lines += [f"# {c}" for c in comments]
    lines.append(" ".join(str(w) for w in params.spec.widths))
    if variance is None:
        lines += [f"{v:.17g}" for v in params.theta]
    else:
        variance = np.asarray(variance, dtype=float)
        if variance.shape != params.theta.shape:
            raise ValueError("variance length does not match parameter count")
        lines += [f"{v:.17g} {s:.17g}" for v, s in zip(params.theta, variance)]
    Path(path).write_text("\n".join(lines) + "\n")


class CheckpointError(ValueError):
    pass


def load_params(path) -> tuple[NetworkParams, np.ndarray | None, list[str]]:
    """Read a checkpoint written by :func:`save_params`.

    Returns ``(params, variance or None, comments)``.
    """
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != CHECKPOINT_HEADER:
        raise CheckpointError(f"{path}: line 1: expected header {CHECKPOINT_HEADER!r}")
    comments = []
    spec = None
    values: list[list[float]] = []
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            comments.append(line[1:].strip())
            continue
        try:
            if spec is None:
                spec = NetworkSpec(tuple(int(t) for t in line.split()))
                continue
            values.append([float(t) for t in line.split()])
        except ValueError as exc:
            raise CheckpointError(f"{path}: line {lineno}: {exc}") from None
        if len(values[-1]) not in (1, 2) or len(values[-1]) != len(values[0]):
            raise CheckpointError(f"{path}: line {lineno}: inconsistent column count")
    if spec is None:
        raise CheckpointError(f"{path}: missing widths line")
    arr = np.array(values, dtype=float).reshape(len(values), -1)
    if arr.shape[0] != spec.n_params:
        raise CheckpointError(f"{path}: expected {spec.n_params} parameters, found {arr.shape[0]}")
    variance = arr[:, 1].copy() if arr.shape[1] == 2 else None
    return NetworkParams(spec, arr[:, 0]), variance, comments
