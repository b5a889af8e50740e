import json
import subprocess
import sys

import pytest

from rhem.cli import run

HARNESS_STATS = ["--stat", "subrep(1,0)", "--stat", "subrep(2,0)", "--stat", "mean(x)", "--stat", "event_size"]


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    sim, des, tr, fit, cmp_, srf = (root / n for n in ("sim", "design", "tr", "fit", "cmp", "surf"))
    assert run(["simulate", "--model", "rg1", "--n", "600", "--actors", "10", "--seed", "3", "--out", str(sim)]) == 0
    assert run(["sample", "--log", str(sim / "events.log"), "--features", str(sim / "features.txt"),
                "--mode", "any", "--max-size", "3", "--seed", "1", "--harness", *HARNESS_STATS,
                "--out", str(des)]) == 0
    assert run(["transform", "--design", str(des / "design.tsv"), "--columns", "xbar_sq", "--out", str(tr)]) == 0
    spec = root / "model.spec"
    spec.write_text("log_subrep1 = le\nlog_subrep2 = le\nxbar_sq = nle(Q=6)\nsize = le\n")
    common = ["--design", str(tr / "design.tsv"), "--spec", str(spec), "--transforms", str(tr / "transforms.txt")]
    assert run(["fit", *common, "--out", str(fit)]) == 0
    assert run(["compare", *common, "--out", str(cmp_)]) == 0
    assert run(["surface", "--model", str(fit / "model.bin"), "--covariate", "xbar_sq", "--grid", "12",
                "--out", str(srf)]) == 0
    return root


def test_pipeline_outputs(pipeline):
    for sub, name in [("sim", "events.log"), ("sim", "truth.txt"), ("design", "design.tsv"),
                      ("tr", "transforms.txt"), ("fit", "model.bin"), ("fit", "summary.txt"),
                      ("cmp", "comparison.tsv"), ("surf", "surface.svg"), ("surf", "surface.tsv")]:
        assert (pipeline / sub / name).stat().st_size > 0
    header = (pipeline / "design" / "design.tsv").read_text().splitlines()[0].split("\t")
    assert {"log_subrep1", "xbar_sq", "size"} <= set(header)
    lines = (pipeline / "cmp" / "comparison.tsv").read_text().splitlines()
    assert lines[0] == "excluded\td_aic\td_loglik\td_deviance" and len(lines) == 5
    for row in lines[1:]:
        _, _, dl, dd = row.split("\t")
        assert abs(float(dd) + 2 * float(dl)) < 1e-6
    assert (pipeline / "surf" / "surface.svg").read_text().count('class="cell"') == 144


def test_manifests(pipeline):
    m = json.loads((pipeline / "design" / "manifest.json").read_text())
    assert m["command"] == "sample" and m["seeds"] == {"sampling": 1}
    assert set(m["outputs"]) == {"design.tsv"}
    assert all(len(h) == 64 for h in m["inputs"].values())
    assert {"rhem", "numpy", "scipy", "python"} <= set(m["versions"])
    fit = json.loads((pipeline / "fit" / "manifest.json").read_text())
    assert fit["params"]["criterion"] == "aic"


def test_usage_errors_exit_2(tmp_path, capsys):
    with pytest.raises(SystemExit) as e:
        run(["simulate", "--model", "rg1"])
    assert e.value.code == 2
    assert run(["sample", "--log", "x", "--seed", "1", "--out", str(tmp_path)]) == 2
    assert "at least one --stat" in capsys.readouterr().err


def test_runtime_errors_exit_1(tmp_path, capsys):
    bad = tmp_path / "bad.log"
    bad.write_text("2 | a |\n1 | b |\n")
    assert run(["sample", "--log", str(bad), "--stat", "subrep(1,0)", "--seed", "1", "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert err.startswith("rhem: error:") and "line 2" in err and len(err.strip().splitlines()) == 1


def test_replicate_small(tmp_path):
    conf = tmp_path / "study.conf"
    conf.write_text("model = rg1  # linear truth\nreps = 2\nn_events = 300\nn_actors = 8\ngrid = 6\n")
    out = tmp_path / "out"
    assert run(["replicate", "--config", str(conf), "--L", "4", "--Q", "4", "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["params"]["resolved"]["L"] == 4 and man["params"]["resolved"]["reps"] == 2
    assert "rep001/design.tsv" in man["outputs"] and "consensus_tvnle.svg" in man["outputs"]
    assert "nle_rmse_over_range" in json.loads((out / "metrics.json").read_text())
    conf.write_text("colour = blue\n")
    assert run(["replicate", "--config", str(conf), "--out", str(out)]) == 2


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "rhem.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("rhem ")
