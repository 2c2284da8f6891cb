import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from ginolab.cli import EXIT_BOUND, EXIT_ERROR, EXIT_OK, EXIT_USAGE, run
from ginolab.diagnostics import clear_cache
from ginolab.io import load_checkpoint, read_field

TINY = """
data.n = 16
data.lambda_cut = 40
model.degree = 8
model.lambda_max = 40
train.steps = 20
train.batch = 4
train.eval_every = 10
train.eval_batch = 8
cnn.steps = 10
cnn.batch = 2
cnn.eval_every = 10
bounds.samples = 4
bounds.steps = 20
bounds.lambda_cut = 60
gen.count = 2
"""


@pytest.fixture
def tiny(tmp_path):
    clear_cache()
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY)
    yield path
    clear_cache()


def go(*argv, env=None):
    return run([str(a) for a in argv], environ=env or {})


def test_e1_writes_contract_files(tiny, tmp_path):
    out = tmp_path / "e1"
    assert go("e1", "--seed", 7, "--out", out, "--config", tiny) == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert {"rel_l2", "rel_energy", "mse", "experiment_id", "seed"} <= set(summary)
    assert summary["seed"] == 7
    assert (out / "metrics.csv").read_text().startswith("step,mse,rel_l2,rel_energy\n")
    assert json.loads((out / "config.json").read_text())["data.n"] == 16
    assert not (out / ".lock").exists()


def test_e3_rows_per_delta_and_model(tiny, tmp_path):
    out = tmp_path / "e3"
    assert go("e3", "--deltas", "0,0.1,0.2,0.3", "--out", out, "--config", tiny) == EXIT_OK
    rows = list(csv.DictReader((out / "metrics.csv").open()))
    assert len(rows) == 8
    assert sorted({(r["model"], float(r["delta"])) for r in rows}) == sorted(
        (m, d) for m in ("cnn", "gino") for d in (0.0, 0.1, 0.2, 0.3))


def test_bounds_exit_codes(tiny, tmp_path):
    assert go("bounds", "--out", tmp_path / "ok", "--config", tiny) == EXIT_OK
    out = tmp_path / "bad"
    assert go("bounds", "--out", out, "--config", tiny, "--set", "bounds.inject=1") == EXIT_BOUND
    summary = json.loads((out / "summary.json").read_text())
    assert summary["violations"] > 0


@pytest.mark.parametrize("argv", [
    ["e7"],
    [],
    ["e1", "--set", "train.nope=1"],
    ["e1", "--set", "train.steps"],
    ["e1", "--set", "train.steps=lots"],
    ["e1", "--seed", "x"],
    ["e1", "--config", "/nonexistent/ginolab.cfg"],
])
def test_usage_errors(tmp_path, capsys, argv):
    assert go(*argv, "--out", tmp_path / "u") == EXIT_USAGE if argv else go() == EXIT_USAGE
    assert "ginolab" in capsys.readouterr().err


def test_config_precedence(tiny, tmp_path):
    cfg = tmp_path / "seeded.cfg"
    cfg.write_text(tiny.read_text() + "seed = 3\n")

    def seed_of(*extra, env=None):
        out = tmp_path / f"p{len(list(tmp_path.iterdir()))}"
        assert go("gen-data", "--out", out, "--config", cfg, *extra, env=env) == EXIT_OK
        return json.loads((out / "config.json").read_text())["seed"]

    assert seed_of() == 3
    assert seed_of(env={"GINO_SEED": "5"}) == 5
    assert seed_of("--seed", 9, env={"GINO_SEED": "5"}) == 9
    assert seed_of("--set", "seed=11", env={"GINO_SEED": "5"}) == 11


def test_lock_is_exclusive(tiny, tmp_path):
    out = tmp_path / "locked"
    out.mkdir()
    (out / ".lock").write_text("123")
    assert go("gen-data", "--out", out, "--config", tiny) == EXIT_ERROR
    assert not (out / "summary.json").exists()


def test_gen_data_and_train(tiny, tmp_path):
    out = tmp_path / "gen"
    assert go("gen-data", "--out", out, "--config", tiny) == EXIT_OK
    fields = sorted((out / "data").iterdir())
    assert [p.name for p in fields] == ["forcing_0000.gfld", "forcing_0001.gfld",
                                        "solution_0000.gfld", "solution_0001.gfld"]
    f = read_field(fields[0])
    assert f.shape == (16, 16, 2) and np.isclose(np.sqrt(np.mean(f**2)), 1.0)
    out = tmp_path / "train"
    assert go("train", "--out", out, "--config", tiny) == EXIT_OK
    model = load_checkpoint(out / "checkpoint.txt")
    assert model.forward(f)[0].shape == f.shape


def test_plot_flag(tiny, tmp_path):
    out = tmp_path / "plotted"
    assert go("e1", "--out", out, "--config", tiny, "--plot") == EXIT_OK
    assert list((out / "plots").glob("*.png"))


def test_repeat_runs_are_byte_identical(tiny, tmp_path):
    for name in ("a", "b"):
        clear_cache()
        assert go("e1", "--out", tmp_path / name, "--config", tiny) == EXIT_OK
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "ginolab", "nope"], capture_output=True, text=True)
    assert proc.returncode == EXIT_USAGE and "usage" in proc.stderr
