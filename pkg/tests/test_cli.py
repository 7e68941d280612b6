import filecmp
import json
from pathlib import Path

import numpy as np
import pytest

from hypopinn.cli import main
from hypopinn.config import (ConfigError, bundled_config_path, load_config, parse_config)
from hypopinn.eikonal_ref import TraveltimeField, analytic_linear_gradient
from hypopinn.experiment import (ECHO_NAME, read_observations, run_experiment, run_forward,
                                 run_init_study, run_laplace, run_train, source_dirname)
from hypopinn.locator import read_cloud
from hypopinn.neural_core import load_params
from hypopinn.pinn import read_history

TINY = """
name = "tiny"
seed = 3
model.kind = "linear_gradient"
model.v0 = 2.0
model.g = 0.5
grid.nx = 11
grid.nz = 16
grid.x_max = 2.0
grid.z_max = 3.0
sources.x = [1.0, 0.6]
sources.z = [1.5, 2.0]
receivers.count = 5
train.epochs = 15
train.n_colloc = 30
train.widths = [2, 6, 6, 1]
laplace.n_samples = 12
"""


def _override(text, **over):
    lines = [ln for ln in text.splitlines() if ln.split("=")[0].strip() not in over]
    return "\n".join(lines + [f"{k} = {v}" for k, v in over.items()]) + "\n"


def _cfg(text=TINY, **over):
    return parse_config(_override(text, **over))


def _files(root: Path):
    return sorted(p.relative_to(root) for p in root.rglob("*") if p.is_file())


def _same_tree(a: Path, b: Path):
    assert _files(a) == _files(b)
    for rel in _files(a):
        assert filecmp.cmp(a / rel, b / rel, shallow=False), rel


# -- config -----------------------------------------------------------------

def test_bundled_configs_parse():
    c1 = load_config(bundled_config_path("experiment1.cfg"))
    assert (c1.grid.nx, c1.grid.nz, c1.n_receivers, c1.train.n_colloc) == (101, 151, 11, 2500)
    assert c1.sources == ((1.0, 1.5),) and c1.train.epochs == 3000 and c1.n_samples == 1000
    c2 = load_config(bundled_config_path("experiment2.cfg"))
    assert (c2.grid.nx, c2.grid.nz) == (246, 305)
    assert c2.grid.hx == pytest.approx(0.008) and c2.grid.hz == pytest.approx(0.008)
    assert c2.sources == ((1.0, 0.7), (1.1, 0.75), (0.9, 0.65))
    assert (c2.n_receivers, c2.train.n_colloc, c2.oracle) == (6, 5000, "fmm")


def test_echo_round_trip():
    for cfg in (_cfg(), load_config(bundled_config_path("experiment2.cfg"))):
        assert parse_config(cfg.to_text()) == cfg


def test_missing_model_section_names_key():
    text = "\n".join(line for line in TINY.splitlines() if not line.startswith("model."))
    with pytest.raises(ConfigError, match="'model'"):
        parse_config(text)


@pytest.mark.parametrize("extra,needle", [
    ('train.epochs = "many"', "train.epochs"),
    ("train.bogus = 1", "bogus"),
    ('oracle.method = "exact"', "oracle.method"),
    ("laplace.n_samples = 1", "laplace.n_samples"),
    ('train.init_scheme = "lecun"', "init_scheme"),
])
def test_bad_values_are_named(extra, needle):
    key, value = (t.strip() for t in extra.split("="))
    with pytest.raises(ConfigError, match=needle):
        _cfg(**{key: value})


def test_source_outside_domain_rejected():
    with pytest.raises(ConfigError, match="outside"):
        parse_config(TINY.replace("sources.z = [1.5, 2.0]", "sources.z = [1.5, 3.5]"))


def test_toml_syntax_error_is_config_error():
    with pytest.raises(ConfigError):
        parse_config(TINY + "\ngrid.nx = = 3\n")


def test_sub_seeds_have_fixed_offsets():
    cfg = _cfg()
    tc = cfg.train_config()
    assert (tc.init_seed, tc.colloc_seed) == (4, 5)
    assert cfg.sub_seed("sampling") == 6 and cfg.sub_seed("noise") == 7


# -- forward ----------------------------------------------------------------

def test_forward_analytic_matches_closed_form(tmp_path):
    cfg = _cfg()
    run_forward(cfg, tmp_path)
    fld = TraveltimeField.load(tmp_path / source_dirname((1.0, 1.5)) / "oracle_field.txt")
    pts = cfg.grid.points()
    expected = analytic_linear_gradient(2.0, 0.5, (1.0, 1.5), pts).reshape(cfg.grid.shape)
    np.testing.assert_array_equal(fld.values, expected)
    obs = read_observations(tmp_path / source_dirname((1.0, 1.5)) / "observations.csv")
    assert len(obs) == 5
    np.testing.assert_array_equal(obs.x, [0.0, 0.5, 1.0, 1.5, 2.0])
    np.testing.assert_allclose(obs.times, analytic_linear_gradient(2.0, 0.5, (1.0, 1.5), obs.points))


def test_forward_fmm_writes_refined_field_and_reports(tmp_path, capsys):
    cfg = _cfg(**{"oracle.method": '"fmm"'})
    reports = run_forward(cfg, tmp_path)
    sdir = tmp_path / source_dirname((1.0, 1.5))
    fine = TraveltimeField.load(sdir / "oracle_field_refined2.txt")
    assert fine.grid.shape == (31, 21)
    rep = reports[sdir.name]
    assert rep["linf_h2"] < rep["linf_h"]
    assert "L-inf" in capsys.readouterr().out


def test_layered_fmm_forward(tmp_path):
    text = TINY.replace('model.kind = "linear_gradient"\nmodel.v0 = 2.0\nmodel.g = 0.5',
                        'model.kind = "layered"\nmodel.layer_depths = [1.0]\n'
                        'model.layer_velocities = [2.0, 3.0]')
    cfg = parse_config(text)
    assert cfg.oracle == "fmm"
    run_forward(cfg, tmp_path)
    assert (tmp_path / source_dirname((0.6, 2.0)) / "oracle_field.txt").exists()


# -- pipeline ---------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    return out, run_experiment(_cfg(), out)


def test_experiment_artifacts(tiny_run):
    out, results = tiny_run
    assert (out / ECHO_NAME).exists()
    assert len(results) == 2
    for res in results:
        d = res.directory
        for name in ("observations.csv", "oracle_field.txt", "history.csv", "theta_map.txt",
                     "map_field.txt", "posterior.txt", "cloud.csv", "summary.json"):
            assert (d / name).exists(), name
        assert len(read_history(d / "history.csv")) == 15
        assert len(read_cloud(d / "cloud.csv")) == 12
        s = json.loads((d / "summary.json").read_text())
        for key in ("map_location", "location_error_km", "cloud_mean", "cloud_std", "final_loss",
                    "negative_min_fraction", "seed"):
            assert key in s
        assert s["seed"] == 3 and s["cloud_size"] == 12


def test_every_output_file_carries_seed(tiny_run):
    out, _ = tiny_run
    for rel in _files(out):
        text = (out / rel).read_text()
        if rel.suffix == ".json":
            assert json.loads(text)["seed"] == 3
        else:
            assert "seed 3" in text.splitlines()[0] or "seed 3" in text.splitlines()[1], rel


def test_rerun_is_bit_identical(tiny_run, tmp_path):
    out, _ = tiny_run
    run_experiment(_cfg(), tmp_path)
    _same_tree(out, tmp_path)


def test_echo_reproduces_artifacts(tiny_run, tmp_path):
    out, _ = tiny_run
    run_experiment(load_config(out / ECHO_NAME), tmp_path)
    _same_tree(out, tmp_path)


def test_source_order_does_not_matter(tiny_run, tmp_path):
    out, _ = tiny_run
    cfg = parse_config(TINY.replace("sources.x = [1.0, 0.6]", "sources.x = [0.6, 1.0]")
                       .replace("sources.z = [1.5, 2.0]", "sources.z = [2.0, 1.5]"))
    run_experiment(cfg, tmp_path)
    for src in ((1.0, 1.5), (0.6, 2.0)):
        name = source_dirname(src)
        for f in (out / name).iterdir():
            assert filecmp.cmp(f, tmp_path / name / f.name, shallow=False)


def test_seed_override_changes_weights(tiny_run, tmp_path):
    out, _ = tiny_run
    run_train(_cfg().with_seed(4), tmp_path)
    name = source_dirname((1.0, 1.5))
    a, _, _ = load_params(out / name / "theta_map.txt")
    b, _, _ = load_params(tmp_path / name / "theta_map.txt")
    assert not np.array_equal(a.theta, b.theta)


def test_staged_train_then_laplace_matches_full_run(tiny_run, tmp_path):
    out, _ = tiny_run
    run_train(_cfg(), tmp_path / "train")
    run_laplace(_cfg(), tmp_path / "lap", stage_in=tmp_path / "train")
    for src in ((1.0, 1.5), (0.6, 2.0)):
        name = source_dirname(src)
        for f in ("theta_map.txt", "cloud.csv", "posterior.txt"):
            assert filecmp.cmp(out / name / f, tmp_path / "lap" / name / f, shallow=False), f


def test_init_study_rows_and_consistency(tmp_path):
    cfg = _cfg(**{"sources.x": "[1.0]", "sources.z": "[1.5]"})
    rows = run_init_study(cfg, tmp_path / "all")
    assert [r["scheme"] for r in rows] == ["xavier_normal", "xavier_uniform", "kaiming_normal",
                                           "kaiming_uniform"]
    assert sum(r["lowest_total_loss"] for r in rows) == 1
    assert sum(r["lowest_location_error"] for r in rows) == 1
    report = (tmp_path / "all" / source_dirname((1.0, 1.5)) / "init_study.csv").read_text()
    assert "low_loss_not_best_location" in report.splitlines()[2]

    single = run_init_study(cfg, tmp_path / "one", schemes=["kaiming_normal"])
    assert len(single) == 1
    res = run_train(cfg, tmp_path / "train")[0]
    assert single[0]["total"] == res.history[-1].total
    assert [single[0]["map_x_km"], single[0]["map_z_km"]] == res.summary["map_location"]
    assert single[0]["total"] == rows[2]["total"]


# -- CLI --------------------------------------------------------------------

def _write(tmp_path, text):
    p = tmp_path / "c.cfg"
    p.write_text(text)
    return p


def test_cli_config_error_exit_1(tmp_path, capsys):
    assert main(["forward", "--config", str(_write(tmp_path, "seed = 1\n")), "--out",
                 str(tmp_path / "o")]) == 1
    assert "model" in capsys.readouterr().err
    assert main(["forward", "--config", str(tmp_path / "missing.cfg")]) == 1


def test_cli_numerical_failure_exit_2_keeps_partial(tmp_path):
    cfg = _write(tmp_path, _override(TINY, **{"train.lr": "1e300"}))
    with np.errstate(all="ignore"):
        code = main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert code == 2
    sdir = tmp_path / "o" / source_dirname((1.0, 1.5))
    assert (sdir / "history.csv").exists() and (sdir / "theta_last.txt").exists()
    assert (sdir / "observations.csv").exists()


def test_cli_experiment_with_seed(tmp_path, capsys):
    cfg = _write(tmp_path, TINY)
    assert main(["experiment", "--config", str(cfg), "--out", str(tmp_path / "o"), "--seed", "8"]) == 0
    s = json.loads((tmp_path / "o" / source_dirname((1.0, 1.5)) / "summary.json").read_text())
    assert s["seed"] == 8
    assert "error" in capsys.readouterr().out
    assert load_config(tmp_path / "o" / ECHO_NAME).seed == 8


def test_cli_bad_stage_dir(tmp_path):
    cfg = _write(tmp_path, TINY)
    assert main(["laplace", "--config", str(cfg), "--stage-in", str(tmp_path / "nope")]) == 1
