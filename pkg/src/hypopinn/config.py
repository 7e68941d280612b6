"""Experiment configuration: flat ``section.key = value`` files (a TOML subset).

Sub-seeds are derived from the master seed by fixed offsets::

    init weights        seed + 1
    collocation points  seed + 2
    posterior sampling  seed + 3
    observation noise   seed + 4
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .neural_core import DEFAULT_WIDTHS, InitScheme
from .pinn import TrainConfig
from .velocity_model import (ConstantVelocity, Domain2D, Grid2D, LinearGradientVelocity,
                             VelocityModel, build_layered)

SEED_OFFSETS = {"init": 1, "colloc": 2, "sampling": 3, "noise": 4}

MODEL_KINDS = ("constant", "linear_gradient", "layered")
ORACLES = ("analytic", "fmm")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    kind: str
    v: float | None = None
    v0: float | None = None
    g: float | None = None
    layer_depths: tuple[float, ...] = ()
    layer_velocities: tuple[float, ...] = ()

    def build(self, grid: Grid2D) -> VelocityModel:
        if self.kind == "constant":
            return ConstantVelocity(self.v, grid.domain)
        if self.kind == "linear_gradient":
            return LinearGradientVelocity(self.v0, self.g, grid.domain)
        return build_layered(grid, self.layer_depths, self.layer_velocities)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    model: ModelConfig
    grid: Grid2D
    sources: tuple[tuple[float, float], ...]
    n_receivers: int
    oracle: str = "analytic"
    noise_std: float = 0.0
    train: TrainConfig = field(default_factory=TrainConfig)
    n_samples: int = 1000
    damping: float = 1e-6
    init_schemes: tuple[InitScheme, ...] = tuple(InitScheme)
    name: str = "experiment"

    def sub_seed(self, consumer: str) -> int:
        return self.seed + SEED_OFFSETS[consumer]

    def train_config(self, scheme: InitScheme | None = None) -> TrainConfig:
        """Training settings with the derived init and collocation seeds filled in."""
        cfg = replace(self.train, init_seed=self.sub_seed("init"),
                      colloc_seed=self.sub_seed("colloc"))
        if scheme is not None:
            cfg = replace(cfg, init_scheme=scheme)
        return cfg

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=int(seed))

    def velocity_model(self) -> VelocityModel:
        return self.model.build(self.grid)

    def to_text(self) -> str:
        """Fully resolved config; parsing it back gives an equal object."""
        d = self.grid.domain
        t = self.train
        m = self.model
        lines = [f"# resolved configuration (seed {self.seed})",
                 f"name = {_fmt(self.name)}",
                 f"seed = {self.seed}",
                 "",
                 f"model.kind = {_fmt(m.kind)}"]
        if m.kind == "constant":
            lines.append(f"model.v = {_fmt(m.v)}")
        elif m.kind == "linear_gradient":
            lines += [f"model.v0 = {_fmt(m.v0)}", f"model.g = {_fmt(m.g)}"]
        else:
            lines += [f"model.layer_depths = {_fmt(list(m.layer_depths))}",
                      f"model.layer_velocities = {_fmt(list(m.layer_velocities))}"]
        lines += ["",
                  f"grid.nx = {self.grid.nx}", f"grid.nz = {self.grid.nz}",
                  f"grid.x_min = {_fmt(d.x_min)}", f"grid.x_max = {_fmt(d.x_max)}",
                  f"grid.z_min = {_fmt(d.z_min)}", f"grid.z_max = {_fmt(d.z_max)}",
                  "",
                  f"sources.x = {_fmt([s[0] for s in self.sources])}",
                  f"sources.z = {_fmt([s[1] for s in self.sources])}",
                  "",
                  f"receivers.count = {self.n_receivers}",
                  'receivers.placement = "surface_even"',
                  "",
                  f"oracle.method = {_fmt(self.oracle)}",
                  f"observations.noise_std = {_fmt(self.noise_std)}",
                  "",
                  f"train.epochs = {t.epochs}",
                  f"train.lr = {_fmt(t.lr)}",
                  f"train.beta1 = {_fmt(t.beta1)}",
                  f"train.beta2 = {_fmt(t.beta2)}",
                  f"train.eps = {_fmt(t.eps)}",
                  f"train.prior_lambda = {_fmt(t.prior_lambda)}",
                  f"train.n_colloc = {t.n_colloc}",
                  f"train.init_scheme = {_fmt(t.init_scheme.value)}",
                  f"train.widths = {_fmt(list(t.widths))}",
                  "",
                  f"laplace.n_samples = {self.n_samples}",
                  f"laplace.damping = {_fmt(self.damping)}",
                  "",
                  f"init_study.schemes = {_fmt([s.value for s in self.init_schemes])}",
                  ]
        return "\n".join(lines) + "\n"


def _fmt(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        r = repr(v)
        return r if any(c in r for c in ".en") else r + ".0"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    raise TypeError(f"cannot format {v!r}")


class _Section:
    """Typed access to one table with key names in error messages."""

    def __init__(self, data: dict, name: str):
        if not isinstance(data, dict):
            raise ConfigError(f"'{name}' must be a section of dotted keys")
        self.data = data
        self.name = name
        self.used: set[str] = set()

    def _get(self, key, default, required):
        self.used.add(key)
        if key not in self.data:
            if required:
                raise ConfigError(f"missing required key '{self.name}.{key}'")
            return default
        return self.data[key]

    def number(self, key, default=None, required=False) -> float | None:
        v = self._get(key, default, required)
        if v is None:
            return None
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"'{self.name}.{key}' must be a number, got {v!r}")
        return float(v)

    def integer(self, key, default=None, required=False) -> int | None:
        v = self._get(key, default, required)
        if v is None:
            return None
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(f"'{self.name}.{key}' must be an integer, got {v!r}")
        return v

    def string(self, key, default=None, required=False) -> str | None:
        v = self._get(key, default, required)
        if v is not None and not isinstance(v, str):
            raise ConfigError(f"'{self.name}.{key}' must be a string, got {v!r}")
        return v

    def numbers(self, key, default=None, required=False) -> list[float] | None:
        v = self._get(key, default, required)
        if v is None:
            return None
        if not isinstance(v, list) or any(isinstance(x, bool) or not isinstance(x, (int, float)) for x in v):
            raise ConfigError(f"'{self.name}.{key}' must be a list of numbers, got {v!r}")
        return [float(x) for x in v]

    def strings(self, key, default=None) -> list[str] | None:
        v = self._get(key, default, False)
        if v is None:
            return None
        if not isinstance(v, list) or any(not isinstance(x, str) for x in v):
            raise ConfigError(f"'{self.name}.{key}' must be a list of strings, got {v!r}")
        return v

    def check_unknown(self):
        extra = sorted(set(self.data) - self.used)
        if extra:
            raise ConfigError(f"unknown key(s) in '{self.name}': {', '.join(extra)}")


def _section(root: dict, name: str, required: bool = True) -> _Section:
    if name not in root:
        if required:
            raise ConfigError(f"missing required section '{name}'")
        return _Section({}, name)
    return _Section(root[name], name)


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    try:
        return _from_dict(raw)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))


def _from_dict(raw: dict) -> ExperimentConfig:
    known = {"name", "seed", "model", "grid", "sources", "receivers", "oracle", "observations",
             "train", "laplace", "init_study"}
    extra = sorted(set(raw) - known)
    if extra:
        raise ConfigError(f"unknown top-level key(s): {', '.join(extra)}")
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"'seed' must be a non-negative integer, got {seed!r}")
    name = raw.get("name", "experiment")
    if not isinstance(name, str):
        raise ConfigError("'name' must be a string")

    ms = _section(raw, "model")
    kind = ms.string("kind", required=True)
    if kind not in MODEL_KINDS:
        raise ConfigError(f"'model.kind' must be one of {MODEL_KINDS}, got {kind!r}")
    if kind == "constant":
        model = ModelConfig(kind, v=ms.number("v", required=True))
    elif kind == "linear_gradient":
        model = ModelConfig(kind, v0=ms.number("v0", required=True), g=ms.number("g", required=True))
    else:
        model = ModelConfig(kind, layer_depths=tuple(ms.numbers("layer_depths", required=True)),
                            layer_velocities=tuple(ms.numbers("layer_velocities", required=True)))
    ms.check_unknown()

    gs = _section(raw, "grid")
    try:
        domain = Domain2D(gs.number("x_min", 0.0), gs.number("x_max", required=True),
                          gs.number("z_min", 0.0), gs.number("z_max", required=True))
        grid = Grid2D(domain, gs.integer("nx", required=True), gs.integer("nz", required=True))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid grid: {exc}") from None
    gs.check_unknown()

    ss = _section(raw, "sources")
    xs = ss.numbers("x", required=True)
    zs = ss.numbers("z", required=True)
    ss.check_unknown()
    if len(xs) != len(zs) or not xs:
        raise ConfigError("'sources.x' and 'sources.z' must be non-empty lists of equal length")
    sources = tuple(zip(xs, zs))
    for s in sources:
        if not domain.contains(*s):
            raise ConfigError(f"source {s} lies outside the grid domain")

    rs = _section(raw, "receivers")
    n_rec = rs.integer("count", required=True)
    placement = rs.string("placement", "surface_even")
    rs.check_unknown()
    if n_rec < 1:
        raise ConfigError("'receivers.count' must be >= 1")
    if placement != "surface_even":
        raise ConfigError(f"'receivers.placement' must be \"surface_even\", got {placement!r}")

    os_ = _section(raw, "oracle", required=False)
    oracle = os_.string("method", "analytic" if kind != "layered" else "fmm")
    os_.check_unknown()
    if oracle not in ORACLES:
        raise ConfigError(f"'oracle.method' must be one of {ORACLES}, got {oracle!r}")
    if oracle == "analytic" and kind == "layered":
        raise ConfigError("'oracle.method' = \"analytic\" needs a constant or linear_gradient model")

    obs = _section(raw, "observations", required=False)
    noise = obs.number("noise_std", 0.0)
    obs.check_unknown()
    if noise < 0:
        raise ConfigError("'observations.noise_std' must be >= 0")

    ts = _section(raw, "train", required=False)
    defaults = TrainConfig()
    try:
        try:
            scheme = InitScheme.parse(ts.string("init_scheme", defaults.init_scheme.value))
        except ValueError as exc:
            raise ConfigError(f"'train.init_scheme': {exc}") from None
        widths = ts.numbers("widths", list(DEFAULT_WIDTHS))
        if any(w != int(w) for w in widths):
            raise ConfigError("'train.widths' must be integers")
        train = TrainConfig(
            epochs=ts.integer("epochs", defaults.epochs),
            lr=ts.number("lr", defaults.lr),
            beta1=ts.number("beta1", defaults.beta1),
            beta2=ts.number("beta2", defaults.beta2),
            eps=ts.number("eps", defaults.eps),
            prior_lambda=ts.number("prior_lambda", defaults.prior_lambda),
            n_colloc=ts.integer("n_colloc", defaults.n_colloc),
            init_scheme=scheme,
            widths=tuple(int(w) for w in widths),
        )
        train.spec  # validates widths
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"invalid 'train' section: {exc}") from None
    ts.check_unknown()

    ls = _section(raw, "laplace", required=False)
    n_samples = ls.integer("n_samples", 1000)
    damping = ls.number("damping", 1e-6)
    ls.check_unknown()
    if n_samples < 2:
        raise ConfigError("'laplace.n_samples' must be >= 2")
    if damping < 0:
        raise ConfigError("'laplace.damping' must be >= 0")

    isec = _section(raw, "init_study", required=False)
    try:
        schemes = tuple(InitScheme.parse(s) for s in isec.strings("schemes", [s.value for s in InitScheme]))
    except ValueError as exc:
        raise ConfigError(f"'init_study.schemes': {exc}") from None
    isec.check_unknown()
    if not schemes:
        raise ConfigError("'init_study.schemes' must list at least one scheme")

    return ExperimentConfig(seed=seed, model=model, grid=grid, sources=sources, n_receivers=n_rec,
                            oracle=oracle, noise_std=noise, train=train, n_samples=n_samples,
                            damping=damping, init_schemes=schemes, name=name)


def bundled_config_path(name: str) -> Path:
    """Path of a config shipped with the package, e.g. ``experiment1.cfg``."""
    return Path(__file__).parent / "configs" / name
