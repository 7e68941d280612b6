"""Experiment driver: observations, MAP training, Laplace ensemble, artifacts.

Every stage writes into one directory per true source, named from the
source coordinates so that reordering the source list does not change any
per-source artifact. Layout under the output directory::

    config.echo.cfg
    source_x1.0000_z1.5000/
        observations.csv   oracle_field.txt   history.csv   theta_map.txt
        map_field.txt      posterior.txt      cloud.csv     summary.json
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ExperimentConfig
from .eikonal_ref import (TraveltimeField, analytic_constant, analytic_field,
                          analytic_linear_gradient, reference_field, sample_receivers)
from .laplace import build_posterior, diag_fisher, iter_ensemble, sample_params
from .locator import (HypocenterCloud, HypocenterEstimate, cloud_stats, locate, locate_error,
                      write_cloud)
from .neural_core import InitScheme, NetworkParams, forward, load_params, save_params
from .pinn import (CollocationSet, LossBreakdown, TrainingDiverged, sample_collocation, train_map,
                   write_history)
from .velocity_model import ReceiverSet, surface_receivers

log = logging.getLogger(__name__)

ECHO_NAME = "config.echo.cfg"
OBS_COLUMNS = ("receiver", "x_km", "z_km", "t_obs_s")
INIT_STUDY_COLUMNS = ("scheme", "source_x_km", "source_z_km", "pde_loss", "data_loss",
                      "prior_loss", "total", "map_x_km", "map_z_km", "dx_km", "dz_km",
                      "location_error_km", "negative_min_flag", "lowest_total_loss",
                      "lowest_location_error", "low_loss_not_best_location")


class NumericalFailure(RuntimeError):
    """Training or posterior construction produced non-finite numbers."""


@dataclass
class SourceResult:
    source: tuple[float, float]
    directory: Path
    observations: ReceiverSet
    theta_map: NetworkParams | None = None
    history: list[LossBreakdown] = field(default_factory=list)
    map_estimate: HypocenterEstimate | None = None
    cloud: HypocenterCloud | None = None
    summary: dict = field(default_factory=dict)


def source_dirname(source: Sequence[float]) -> str:
    return f"source_x{source[0]:.4f}_z{source[1]:.4f}"


def _seed_comments(cfg: ExperimentConfig, source=None) -> list[str]:
    out = [f"seed {cfg.seed}"]
    if source is not None:
        out.append(f"true_source {source[0]!r} {source[1]!r}")
    return out


def write_echo(cfg: ExperimentConfig, out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / ECHO_NAME
    path.write_text(cfg.to_text())
    return path


# -- observations -----------------------------------------------------------

def oracle_field(cfg: ExperimentConfig, source, grid=None) -> TraveltimeField:
    grid = cfg.grid if grid is None else grid
    model = cfg.velocity_model()
    if cfg.oracle == "fmm":
        return reference_field(model.sample(grid), grid, source, method="fmm")
    return reference_field(model, grid, source, method="analytic")


def synthesize_observations(cfg: ExperimentConfig, source,
                            fld: TraveltimeField | None = None) -> ReceiverSet:
    """Oracle traveltimes at the surface receivers, plus optional Gaussian noise.

    The analytic oracle is evaluated at the receivers directly; the FMM field
    is interpolated bilinearly.
    """
    rec = surface_receivers(cfg.grid.domain, cfg.n_receivers)
    if cfg.oracle == "analytic":
        m = cfg.model
        if m.kind == "constant":
            t = analytic_constant(m.v, source, rec.points)
        else:
            t = analytic_linear_gradient(m.v0, m.g, source, rec.points)
        obs = rec.with_times(t)
    else:
        fld = oracle_field(cfg, source) if fld is None else fld
        obs = sample_receivers(fld, rec)
    if cfg.noise_std > 0:
        rng = np.random.default_rng(cfg.sub_seed("noise"))
        obs = obs.with_times(obs.times + cfg.noise_std * rng.standard_normal(len(obs)))
    return obs


def write_observations(path, obs: ReceiverSet, comments: Sequence[str] = ()) -> None:
    with open(path, "w", newline="") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OBS_COLUMNS)
        for k in range(len(obs)):
            w.writerow([k, repr(float(obs.x[k])), repr(float(obs.z[k])), repr(float(obs.times[k]))])


def read_observations(path) -> ReceiverSet:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    return ReceiverSet([float(r["x_km"]) for r in rows], [float(r["z_km"]) for r in rows],
                       [float(r["t_obs_s"]) for r in rows])


def _has_closed_form(cfg: ExperimentConfig) -> bool:
    return cfg.model.kind in ("constant", "linear_gradient")


def _forward_source(cfg: ExperimentConfig, source, sdir: Path) -> tuple[ReceiverSet, dict]:
    comments = _seed_comments(cfg, source)
    fld = oracle_field(cfg, source)
    fld.save(sdir / "oracle_field.txt", comments=comments + [f"oracle {cfg.oracle}"])
    obs = synthesize_observations(cfg, source, fld)
    write_observations(sdir / "observations.csv", obs, comments)
    report = {}
    if cfg.oracle == "fmm":
        fine_grid = cfg.grid.refine(2)
        fine = oracle_field(cfg, source, fine_grid)
        fine.save(sdir / "oracle_field_refined2.txt", comments=comments + ["oracle fmm refined x2"])
        if _has_closed_form(cfg):
            model = cfg.velocity_model()
            err = float(np.max(np.abs(fld.values - analytic_field(model, cfg.grid, source).values)))
            err2 = float(np.max(np.abs(fine.values - analytic_field(model, fine_grid, source).values)))
            report = {"linf_h": err, "linf_h2": err2, "ratio": err / err2 if err2 > 0 else None}
            print(f"{source_dirname(source)}: L-inf vs analytic  h: {err:.6e}  h/2: {err2:.6e}")
    return obs, report


def _stage_observations(cfg, source, sdir: Path, stage_in: Path | None) -> ReceiverSet:
    if stage_in is not None:
        path = stage_in / source_dirname(source) / "observations.csv"
        if path.exists():
            obs = read_observations(path)
            write_observations(sdir / "observations.csv", obs, _seed_comments(cfg, source))
            return obs
    return _forward_source(cfg, source, sdir)[0]


# -- training ---------------------------------------------------------------

def collocation_for(cfg: ExperimentConfig) -> CollocationSet:
    return sample_collocation(cfg.grid.domain, cfg.train.n_colloc, cfg.sub_seed("colloc"))


def _train_source(cfg: ExperimentConfig, res: SourceResult, scheme: InitScheme | None = None,
                  sdir: Path | None = None) -> None:
    sdir = res.directory if sdir is None else sdir
    comments = _seed_comments(cfg, res.source)
    tcfg = cfg.train_config(scheme)
    try:
        params, history = train_map(tcfg, cfg.velocity_model(), res.observations, cfg.grid.domain,
                                    colloc=collocation_for(cfg))
    except TrainingDiverged as exc:
        write_history(sdir / "history.csv", exc.history, comments)
        save_params(sdir / "theta_last.txt", exc.params, comments=comments)
        raise NumericalFailure(f"{sdir.name}: {exc}") from exc
    write_history(sdir / "history.csv", history, comments)
    save_params(sdir / "theta_map.txt", params, comments=comments)
    res.theta_map, res.history = params, history
    _map_estimate(cfg, res, sdir)


def _map_estimate(cfg, res: SourceResult, sdir: Path) -> None:
    fld = TraveltimeField(cfg.grid, forward(res.theta_map, cfg.grid.points()).reshape(cfg.grid.shape))
    fld.save(sdir / "map_field.txt", comments=_seed_comments(cfg, res.source))
    res.map_estimate = locate(fld)


def _stage_params(cfg, res: SourceResult, stage_in: Path | None) -> None:
    if stage_in is not None:
        path = stage_in / res.directory.name / "theta_map.txt"
        if path.exists():
            params, _, _ = load_params(path)
            save_params(res.directory / "theta_map.txt", params, comments=_seed_comments(cfg, res.source))
            res.theta_map = params
            _map_estimate(cfg, res, res.directory)
            return
    _train_source(cfg, res)


# -- posterior --------------------------------------------------------------

def _laplace_source(cfg: ExperimentConfig, res: SourceResult) -> None:
    comments = _seed_comments(cfg, res.source)
    try:
        fisher = diag_fisher(res.theta_map, collocation_for(cfg), res.observations,
                             cfg.velocity_model())
        post = build_posterior(res.theta_map, fisher, cfg.damping, cfg.train.prior_lambda)
    except ValueError as exc:
        raise NumericalFailure(f"{res.directory.name}: {exc}") from exc
    save_params(res.directory / "posterior.txt", res.theta_map, variance=post.diag_variance,
                comments=comments + [f"damping {cfg.damping!r}"])
    samples = sample_params(post, cfg.n_samples, cfg.sub_seed("sampling"))
    estimates = [locate(f) for f in iter_ensemble(samples, cfg.grid)]
    res.cloud = cloud_stats(estimates)
    write_cloud(res.directory / "cloud.csv", res.cloud, comments)


# -- summaries --------------------------------------------------------------

def _summary(cfg: ExperimentConfig, res: SourceResult) -> dict:
    est = res.map_estimate
    dx, dz, dist = locate_error(est, res.source)
    out = {
        "seed": cfg.seed,
        "source": [res.source[0], res.source[1]],
        "map_location": [est.x, est.z],
        "map_t_min_s": est.t_min,
        "map_negative_min": est.negative_min,
        "location_error_km": {"dx": dx, "dz": dz, "euclidean": dist},
        "final_loss": None,
        "cloud_mean": None,
        "cloud_std": None,
        "cloud_cov": None,
        "cloud_size": 0,
        "negative_min_fraction": None,
        "depth_std_ge_lateral_std": None,
    }
    if res.history:
        lb = res.history[-1]
        out["final_loss"] = {"pde_loss": lb.pde_loss, "data_loss": lb.data_loss,
                             "prior_loss": lb.prior_loss, "total": lb.total}
    if res.cloud is not None:
        c = res.cloud
        out.update({
            "cloud_mean": [float(v) for v in c.mean],
            "cloud_std": [float(v) for v in c.std],
            "cloud_cov": [[float(v) for v in row] for row in c.cov],
            "cloud_size": len(c),
            "cloud_mean_error_km": dict(zip(("dx", "dz", "euclidean"),
                                            locate_error(tuple(c.mean), res.source))),
            "negative_min_fraction": c.negative_min_fraction,
            "depth_std_ge_lateral_std": bool(c.std[1] >= c.std[0]),
        })
    return out


def _write_summary(cfg, res: SourceResult) -> None:
    res.summary = _summary(cfg, res)
    with open(res.directory / "summary.json", "w") as fh:
        json.dump(res.summary, fh, indent=2)
        fh.write("\n")


# -- entry points -----------------------------------------------------------

def _prepare(cfg: ExperimentConfig, out_dir) -> Path:
    out = Path(out_dir)
    write_echo(cfg, out)
    return out


def _source_result(cfg, out: Path, source, stage_in) -> SourceResult:
    sdir = out / source_dirname(source)
    sdir.mkdir(parents=True, exist_ok=True)
    obs = _stage_observations(cfg, source, sdir, stage_in)
    return SourceResult(tuple(source), sdir, obs)


def run_forward(cfg: ExperimentConfig, out_dir) -> dict:
    """Oracle fields and receiver observations only. Returns refinement reports per source."""
    out = _prepare(cfg, out_dir)
    reports = {}
    for source in cfg.sources:
        sdir = out / source_dirname(source)
        sdir.mkdir(parents=True, exist_ok=True)
        reports[sdir.name] = _forward_source(cfg, source, sdir)[1]
    return reports


def run_train(cfg: ExperimentConfig, out_dir, stage_in=None) -> list[SourceResult]:
    out = _prepare(cfg, out_dir)
    stage_in = Path(stage_in) if stage_in else None
    results = []
    for source in cfg.sources:
        res = _source_result(cfg, out, source, stage_in)
        _train_source(cfg, res)
        _write_summary(cfg, res)
        results.append(res)
    return results


def run_laplace(cfg: ExperimentConfig, out_dir, stage_in=None) -> list[SourceResult]:
    """Posterior and cloud; MAP weights come from ``stage_in`` when present, else are trained."""
    out = _prepare(cfg, out_dir)
    stage_in = Path(stage_in) if stage_in else None
    results = []
    for source in cfg.sources:
        res = _source_result(cfg, out, source, stage_in)
        _stage_params(cfg, res, stage_in)
        _laplace_source(cfg, res)
        _write_summary(cfg, res)
        results.append(res)
    return results


def run_experiment(cfg: ExperimentConfig, out_dir, stage_in=None) -> list[SourceResult]:
    """Full pipeline per source: observations, MAP training, Laplace cloud, summary."""
    out = _prepare(cfg, out_dir)
    stage_in = Path(stage_in) if stage_in else None
    results = []
    for source in cfg.sources:
        res = _source_result(cfg, out, source, stage_in)
        _train_source(cfg, res)
        _laplace_source(cfg, res)
        _write_summary(cfg, res)
        log.info("%s: MAP %s, error %.3f km", res.directory.name, res.summary["map_location"],
                 res.summary["location_error_km"]["euclidean"])
        results.append(res)
    return results


def run_init_study(cfg: ExperimentConfig, out_dir, schemes: Sequence[InitScheme] | None = None,
                   stage_in=None) -> list[dict]:
    """One training per scheme and source with shared collocation and observations.

    Writes ``init_study.csv`` into each source directory and returns all rows.
    """
    schemes = list(cfg.init_schemes if schemes is None else schemes)
    if not schemes:
        raise ValueError("need at least one init scheme")
    out = _prepare(cfg, out_dir)
    stage_in = Path(stage_in) if stage_in else None
    rows = []
    for source in cfg.sources:
        base = _source_result(cfg, out, source, stage_in)
        src_rows = []
        for scheme in schemes:
            scheme = InitScheme.parse(scheme)
            sdir = base.directory / scheme.value
            sdir.mkdir(exist_ok=True)
            res = SourceResult(base.source, sdir, base.observations)
            _train_source(cfg, res, scheme, sdir)
            lb = res.history[-1]
            est = res.map_estimate
            dx, dz, dist = locate_error(est, source)
            src_rows.append({"scheme": scheme.value, "source_x_km": source[0], "source_z_km": source[1],
                             "pde_loss": lb.pde_loss, "data_loss": lb.data_loss,
                             "prior_loss": lb.prior_loss, "total": lb.total,
                             "map_x_km": est.x, "map_z_km": est.z, "dx_km": dx, "dz_km": dz,
                             "location_error_km": dist, "negative_min_flag": est.negative_min})
        best_loss = min(range(len(src_rows)), key=lambda k: src_rows[k]["total"])
        best_loc = min(range(len(src_rows)), key=lambda k: src_rows[k]["location_error_km"])
        for k, row in enumerate(src_rows):
            row["lowest_total_loss"] = k == best_loss
            row["lowest_location_error"] = k == best_loc
            row["low_loss_not_best_location"] = k == best_loss and k != best_loc
        _write_init_report(base.directory / "init_study.csv", src_rows, _seed_comments(cfg, source))
        rows.extend(src_rows)
    return rows


def _write_init_report(path, rows, comments) -> None:
    with open(path, "w", newline="") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(INIT_STUDY_COLUMNS)
        for row in rows:
            w.writerow([_cell(row[c]) for c in INIT_STUDY_COLUMNS])


def _cell(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return repr(v)
    return v
