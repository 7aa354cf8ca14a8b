import json

import numpy as np
import pytest

from cimmacro.cli import SUMMARY_SCHEMA, main

IDEAL = ["--set", "noise.sigma_edge=0", "--set", "noise.k_narrow=0",
         "--set", "noise.sigma_branch=0", "--set", "noise.sigma_sa=0"]
COMMON_KEYS = {"schema", "experiment", "seed", "config"}


def run(tmp_path, name, *args):
    out = tmp_path / name
    code = main([*args, "--output-dir", str(out)])
    return code, out


def summary(out):
    return json.loads((out / "summary.json").read_text())


def files(out):
    return {p.name: p.read_bytes() for p in sorted(out.iterdir())}


@pytest.mark.parametrize("args", [["simulate", "--cycles", "2"], ["sweep"], ["fom"],
                                  ["montecarlo", "--points", "500", "--skip-conv"]])
def test_experiments_deterministic_and_documented(tmp_path, args):
    c1, o1 = run(tmp_path, "a", *args)
    c2, o2 = run(tmp_path, "b", *args)
    assert c1 == c2 == 0
    assert files(o1) == files(o2)
    s = summary(o1)
    assert s["schema"] == 1
    assert set(s) - COMMON_KEYS <= set(SUMMARY_SCHEMA[args[0]])
    assert (o1 / "summary.txt").exists()


def test_seed_changes_output(tmp_path):
    _, o1 = run(tmp_path, "a", "simulate", "--cycles", "1", "--seed", "1")
    _, o2 = run(tmp_path, "b", "simulate", "--cycles", "1", "--seed", "2")
    assert files(o1)["outputs.csv"] != files(o2)["outputs.csv"]


def test_characterize_ideal_zero_dnl_inl(tmp_path):
    code, out = run(tmp_path, "c", "characterize", *IDEAL)
    assert code == 0
    for name, col in (("dnl.csv", 1), ("inl.csv", 2)):
        rows = (out / name).read_text().splitlines()[1:]
        assert rows and all(float(r.split(",")[col]) == 0.0 for r in rows)
    s = summary(out)
    assert s["step_ratio"] == 1.875 and s["max_abs_dnl"] == 0


def test_montecarlo_two_sigmas(tmp_path):
    code, out = run(tmp_path, "m", "montecarlo", "--points", "900", "--skip-conv")
    s = summary(out)
    assert code == 0 and s["points"] == 900
    assert s["sigma_both"] < s["sigma_baseline"]


def write(path, rows):
    path.write_text("\n".join(",".join(str(v) for v in r) for r in rows) + "\n")
    return path


def test_map_identity_column(tmp_path):
    m = write(tmp_path / "m.csv", np.eye(64, 1, k=-5, dtype=int))
    acts = write(tmp_path / "a.csv", [np.arange(64) % 16])
    code, out = run(tmp_path, "o", "map", "--matrix", str(m), "--acts", str(acts), *IDEAL)
    assert code == 0
    row = (out / "map.csv").read_text().splitlines()[1].split(",")
    assert int(row[2]) == 5 and abs(float(row[3]) - 5) <= 8


def test_map_range_error(tmp_path, capsys):
    m = write(tmp_path / "m.csv", [[1, 2], [3, 9]])
    code, out = run(tmp_path, "o", "map", "--matrix", str(m))
    err = json.loads(capsys.readouterr().err)
    assert code != 0
    assert err["error"]["type"] == "RangeError" and err["error"]["row"] == 2
    assert json.loads((out / "error.json").read_text()) == err


def test_map_empty(tmp_path, capsys):
    m = tmp_path / "m.csv"
    m.write_text("# header only\n")
    code, _ = run(tmp_path, "o", "map", "--matrix", str(m))
    assert code != 0 and json.loads(capsys.readouterr().err)["error"]["type"] == "NoWork"


def test_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[modes]\nboost = 3\n")
    assert run(tmp_path, "o", "fom", "--config", str(bad))[0] == 2
    assert "boost" in json.loads(capsys.readouterr().err)["error"]["message"]
    bad.write_text("[modes\n")
    assert run(tmp_path, "o", "fom", "--config", str(bad))[0] == 2
    assert json.loads(capsys.readouterr().err)["error"]["line"] == 1


def test_explain_config(capsys):
    assert main(["fom", "--explain-config"]) == 0
    text = capsys.readouterr().out
    assert "noise.k_narrow" in text and "fitted" in text


def test_config_file_used(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[modes]\nclock_hz = 100e6\n")
    _, out = run(tmp_path, "o", "fom", "--config", str(cfg))
    assert summary(out)["config"]["modes"]["clock_hz"] == 100e6
