import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from asymbif.cli import (
    EXIT_CHECK,
    EXIT_CONFIG,
    EXIT_HYPOTHESIS,
    EXIT_OK,
    EXIT_SEED,
    EXIT_SHORT,
    BranchFileError,
    load_branch,
    main,
    read_branch_csv,
)
from asymbif.problem import NonlinearitySpec, PotentialSpec, reference_problem

from conftest import constant_problem


def write_config(path, problem):
    path.write_text(json.dumps(problem.to_dict(), indent=2))
    return str(path)


@pytest.fixture(scope="module")
def ref_config(tmp_path_factory):
    return write_config(tmp_path_factory.mktemp("cfg") / "reference.json", reference_problem())


@pytest.fixture(scope="module")
def stored(tmp_path_factory, ref_config):
    out = tmp_path_factory.mktemp("run")
    assert main(["branch", "--config", ref_config, "--out", str(out), "--sign", "both"]) == EXIT_OK
    return out


def test_spectrum_reference(tmp_path, ref_config, capsys):
    assert main(["spectrum", "--config", ref_config, "--out", str(tmp_path)]) == EXIT_OK
    meta = json.loads((tmp_path / "eig_inf.json").read_text())
    assert (tmp_path / "eig_inf.csv").exists()
    assert meta["lambda"] > meta["lambda_star"]
    assert "config_hash" in meta
    assert "lambda_inf" in capsys.readouterr().out


def test_spectrum_constant_finf(tmp_path, capsys):
    cfg = write_config(tmp_path / "flat.json", constant_problem())
    assert main(["spectrum", "--config", cfg, "--out", str(tmp_path)]) == EXIT_HYPOTHESIS
    assert "(f6)" in capsys.readouterr().err


def test_spectrum_missing_config(tmp_path):
    assert main(["spectrum", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_bad_option_is_config_error(tmp_path, ref_config):
    assert main(["branch", "--config", ref_config, "--out", str(tmp_path), "--ds", "-1"]) == EXIT_CONFIG
    assert main(["branch", "--config", ref_config, "--out", str(tmp_path), "--epsilon-frac", "1.5"]) == EXIT_CONFIG


def test_branch_both_signs(stored):
    plus = read_branch_csv(stored / "branch_plus.csv")
    minus = read_branch_csv(stored / "branch_minus.csv")
    assert len(plus) == len(minus) >= 50
    np.testing.assert_allclose([r["lambda"] for r in minus], [r["lambda"] for r in plus], atol=1e-9, rtol=0)
    assert all(r["positive"] for r in plus) and not any(r["positive"] for r in minus)


def test_branch_outputs_and_manifests(stored):
    text = (stored / "branch_plus.csv").read_bytes()
    assert b"\r" not in text
    header = text.split(b"\n")[0].decode()
    assert header == "index,lambda,normX_v,normX_u,sup_u,residual,newton_iters,positive"
    man = json.loads((stored / "branch_plus.json").read_text())
    index = json.loads((stored / "manifest.json").read_text())
    h = index["config_hash"]
    assert man["config_hash"] == h
    assert json.loads((stored / man["files"]["verify"]).read_text())["config_hash"] == h
    assert json.loads((stored / "eig_inf.json").read_text())["config_hash"] == h
    for name in man["snapshots"].values():
        assert f'"config_hash": "{h}"' in (stored / name).read_text().split("\n")[0]
    assert str(len(read_branch_csv(stored / "branch_plus.csv")) - 1) in man["snapshots"]
    plot = (stored / man["files"]["bifurcation"]).read_text().split("\n")
    assert plot[0] == "lambda,sup_u,normX_u"
    assert len(man["files"]["decay"]) == 5


def test_float_format_is_17_digits(stored):
    rows = (stored / "branch_plus.csv").read_text().split("\n")[1:3]
    lam = rows[1].split(",")[1]
    assert float(lam) == float(format(float(lam), ".17g"))
    assert lam == format(float(lam), ".17g")


def test_lambda_floor_below_edge(tmp_path, ref_config, capsys):
    code = main(["branch", "--config", ref_config, "--out", str(tmp_path), "--lambda-floor", "0.5"])
    assert code == EXIT_CONFIG
    assert "admissible interval" in capsys.readouterr().err


def test_max_steps_guardrail(tmp_path, ref_config):
    assert main(["branch", "--config", ref_config, "--out", str(tmp_path), "--max-steps", "3"]) == EXIT_SHORT


def test_seed_failure_exit(tmp_path, ref_config):
    assert main(["branch", "--config", ref_config, "--out", str(tmp_path), "--seed-amplitude", "1"]) == EXIT_SEED


def test_branch_constant_finf_exit(tmp_path):
    cfg = write_config(tmp_path / "flat.json", constant_problem())
    assert main(["branch", "--config", cfg, "--out", str(tmp_path)]) == EXIT_HYPOTHESIS


def test_grid_overrides(tmp_path, ref_config):
    out = tmp_path / "o"
    assert main(["branch", "--config", ref_config, "--out", str(out), "--grid-m", "999",
                 "--domain-L", "15", "--ds", "2e-3"]) == EXIT_OK
    header = (out / "branch_plus_snapshots" / "point_00000.csv").read_text().split("\n")[0]
    assert '"m": 999' in header and '"L": 15.0' in header


def test_truncation_study(tmp_path, ref_config):
    out = tmp_path / "t"
    assert main(["branch", "--config", ref_config, "--out", str(out), "--truncations", "5,10,20"]) == EXIT_OK
    lines = (out / "truncation_study.csv").read_text().strip().split("\n")
    gaps = [float(line.split(",")[3]) for line in lines[1:]]
    assert gaps[0] > gaps[1] > gaps[2] == 0.0
    assert main(["branch", "--config", ref_config, "--out", str(out), "--truncations", "50"]) == EXIT_CONFIG


def test_verify_stored_branch(stored, ref_config):
    assert main(["verify", "--config", ref_config, str(stored / "branch_plus.csv")]) == EXIT_OK
    assert main(["verify", "--config", ref_config, str(stored / "branch_minus.csv")]) == EXIT_OK
    rep = json.loads((stored / "branch_plus_reverify.json").read_text())
    assert rep["passed"]


def test_verify_corrupted_residual(tmp_path, stored, ref_config, capsys):
    shutil.copy(stored / "branch_plus.csv", tmp_path / "b.csv")
    lines = (tmp_path / "b.csv").read_text().split("\n")
    fields = lines[4].split(",")
    fields[5] = "not-a-number"
    lines[4] = ",".join(fields)
    (tmp_path / "b.csv").write_text("\n".join(lines))
    assert main(["verify", "--config", ref_config, str(tmp_path / "b.csv")]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "row 5" in err and "residual" in err


def test_verify_other_problem(tmp_path, stored):
    weaker = NonlinearitySpec(f0=reference_problem().f0, finf=PotentialSpec.gaussian(1.0, [(0.3, 0.0, 1.0)]))
    cfg = write_config(tmp_path / "other.json", reference_problem().with_overrides(nonlinearity=weaker))
    code = main(["verify", "--config", cfg, "--out", str(tmp_path), str(stored / "branch_plus.csv")])
    assert code == EXIT_CHECK
    rep = json.loads((tmp_path / "branch_plus_reverify.json").read_text())
    assert rep["checks"]["lambda_range"]["status"] == "fail"


def test_load_branch_roundtrip(stored):
    b = load_branch(stored / "branch_plus.csv")
    man = json.loads((stored / "branch_plus.json").read_text())
    assert b.sign == 1 and len(b) == man["points"]
    assert sum(p.v is not None for p in b.points) == len(man["snapshots"])


@pytest.mark.parametrize("mutate,msg", [
    (lambda ls: ["index,lambda"] + ls[1:], "row 1"),
    (lambda ls: ls[:3] + [ls[3] + ",extra"] + ls[4:], "row 4"),
    (lambda ls: ls[:2] + [ls[2].replace("true", "yes")] + ls[3:], "row 3"),
    (lambda ls: ls[:2] + [ls[2].replace("1,", "9,", 1)] + ls[3:], "row 3"),
    (lambda ls: ls[:1], "no data rows"),
])
def test_branch_parser_errors(tmp_path, stored, mutate, msg):
    lines = (stored / "branch_plus.csv").read_text().rstrip("\n").split("\n")
    (tmp_path / "b.csv").write_text("\n".join(mutate(lines)) + "\n")
    with pytest.raises(BranchFileError, match=msg):
        read_branch_csv(tmp_path / "b.csv")


def test_determinism(tmp_path, ref_config):
    outs = [tmp_path / "a", tmp_path / "b"]
    for o in outs:
        assert main(["branch", "--config", ref_config, "--out", str(o)]) == EXIT_OK
    files = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*") if p.is_file())
    assert files
    for rel in files:
        assert (outs[0] / rel).read_bytes() == (outs[1] / rel).read_bytes(), rel
