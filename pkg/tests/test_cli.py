import csv
import json
import math
import os
import subprocess
import sys
from importlib import resources

import jsonschema
import numpy as np
import pytest
from referencing import Registry, Resource
from referencing.jsonschema import DRAFT202012

from alqmle.cli import MANIFEST_NAME, run
from alqmle.models import ARARCHFamily, DiagonalARCHFamily, VARFamily

SCHEMAS = resources.files("alqmle") / "schemas"
THETA = "0.5,0.1,-0.2,0.3,1,0.3,0.8"
VAR_ARGS = ["--family", "var1", "--p", "2", "--no-intercept"]


def _schema(name):
    return json.loads((SCHEMAS / name).read_text())


def _registry():
    names = [p.name for p in SCHEMAS.iterdir() if p.name.endswith(".schema.json")]
    return Registry().with_resources(
        (n, Resource.from_contents(_schema(n), default_specification=DRAFT202012)) for n in names)


def validate(instance, name):
    jsonschema.Draft202012Validator(_schema(name), registry=_registry()).validate(instance)


def validate_csv(path, fmt, p=None, params=None):
    spec = _schema("csv-formats.json")["formats"][fmt]
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    expected = []
    for col in spec["columns"]:
        if isinstance(col, str):
            expected.append(col)
        elif "pattern" in col:
            expected += [col["pattern"].format(k=k + 1) for k in range(p)]
        else:
            expected += list(params)
    assert rows[0] == expected
    types = spec.get("types", {})
    for row in rows[1:]:
        for name, cell in zip(rows[0], row):
            kind = types.get(name, "real")
            if kind == "integer":
                int(cell)
            elif kind == "boolean":
                assert cell in ("true", "false")
            else:
                float(cell)
    with open(path, "rb") as fh:
        assert b"\r" not in fh.read()
    return rows


@pytest.fixture
def out(tmp_path):
    return str(tmp_path)


def _manifest(out_dir):
    with open(os.path.join(out_dir, MANIFEST_NAME)) as fh:
        data = json.load(fh)
    validate(data, "run-manifest.schema.json")
    return data


def test_schemas_are_valid_and_layouts_current():
    for p in SCHEMAS.iterdir():
        if p.name.endswith(".schema.json"):
            jsonschema.Draft202012Validator.check_schema(_schema(p.name))
    layouts = _schema("family-layouts.json")["layouts"]
    current = [VARFamily(1).describe(), VARFamily(2, intercept=False).describe(),
               VARFamily(2).describe(), DiagonalARCHFamily(1).describe(),
               DiagonalARCHFamily(2).describe(), ARARCHFamily(1).describe()]
    assert layouts == json.loads(json.dumps(current))
    for layout in layouts:
        validate(layout, "family-layout.schema.json")


def test_bessel_table(out):
    assert run(["bessel-table", "--v", "0.5", "--u-min", "0.1", "--u-max", "10", "--points", "5",
                "--out-dir", out]) == 0
    rows = validate_csv(os.path.join(out, "bessel-table.csv"), "bessel-table")
    assert len(rows) == 6
    for row in rows[1:]:
        u = float(row[0])
        assert float(row[1]) == pytest.approx(math.sqrt(math.pi / (2 * u)) * math.exp(-u), rel=1e-13)
        assert row[3] == "nan"
    assert run(["bessel-table", "--v", "-1", "--u-min", "0.1", "--u-max", "1", "--points", "3",
                "--out-dir", out]) == 0
    rows = validate_csv(os.path.join(out, "bessel-table.csv"), "bessel-table")
    assert all(float(r[1]) <= float(r[3]) for r in rows[1:])
    assert _manifest(out)["config"]["v"] == -1.0


def test_simulate_is_byte_identical(out, tmp_path):
    args = ["simulate", *VAR_ARGS, "--theta", THETA, "--n", "40", "--seed", "7"]
    assert run(args + ["--out-dir", out, "--out", "a.csv"]) == 0
    assert run(args + ["--out-dir", out, "--out", "b.csv"]) == 0
    with open(os.path.join(out, "a.csv"), "rb") as a, open(os.path.join(out, "b.csv"), "rb") as b:
        assert a.read() == b.read()
    rows = validate_csv(os.path.join(out, "a.csv"), "series", p=2)
    assert [r[0] for r in rows[1:]] == [str(t) for t in range(1, 41)]
    assert run(["simulate", "--family", "none", "--p", "3", "--n", "5", "--out-dir", out,
                "--out", "z.csv"]) == 0
    validate_csv(os.path.join(out, "z.csv"), "innovations", p=3)


def test_simulate_refuses_outside_theta2(out, capsys):
    args = ["simulate", *VAR_ARGS, "--theta", "1.05,0,0,1.05,1,0,1", "--n", "5", "--out-dir", out]
    assert run(args) == 2
    assert "Theta(2)" in capsys.readouterr().err
    assert run(args + ["--force"]) == 0


def test_loglik_profile_and_grid(out):
    run(["simulate", *VAR_ARGS, "--theta", THETA, "--n", "60", "--out-dir", out])
    series = os.path.join(out, "series.csv")
    grid = os.path.join(out, "grid.csv")
    names = list(VARFamily(2, intercept=False).param_names)
    with open(grid, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        w.writerow(THETA.split(","))
        w.writerow([1.05, 0, 0, 1.05, 1, 0, 1])
    assert run(["loglik", *VAR_ARGS, "--series", series, "--grid", grid, "--out-dir", out]) == 0
    rows = validate_csv(os.path.join(out, "profile.csv"), "profile", params=names)
    assert [r[-1] for r in rows[1:]] == ["true", "false"]
    manifest = _manifest(out)
    assert set(manifest["inputs"]) == {"series", "grid"}


def test_estimate_result_schema(out):
    run(["simulate", "--family", "arch1", "--p", "1", "--theta", "1,0.3", "--n", "400",
         "--out-dir", out])
    box = os.path.join(out, "box.json")
    with open(box, "w") as fh:
        json.dump({"lower": [0.1, 0.0], "upper": [5.0, 0.9]}, fh)
    validate(json.load(open(box)), "box.schema.json")
    assert run(["estimate", "--family", "arch1", "--p", "1", "--series",
                os.path.join(out, "series.csv"), "--box", box, "--starts", "2", "--seed", "1",
                "--out-dir", out]) == 0
    result = json.load(open(os.path.join(out, "result.json")))
    validate(result, "estimation-result.schema.json")
    assert len(result["start_results"]) == 2 and result["box_violations"] == 0


def test_mc_consistency_determinism_and_replay(out, tmp_path):
    args = ["mc-consistency", "--family", "arch1", "--p", "1", "--theta0", "1,0.3",
            "--n", "150,600", "--reps", "4", "--seed", "3", "--starts", "2", "--max-evals", "300"]
    status = run(args + ["--out-dir", out])
    rows = validate_csv(os.path.join(out, "mc.csv"), "mc")
    assert len(rows) == 9
    summary = json.load(open(os.path.join(out, "mc.summary.json")))
    validate(summary, "mc-summary.schema.json")
    assert status == (0 if summary["verdict"] else 1)
    other = str(tmp_path / "threads")
    run(args + ["--out-dir", other, "--threads", "2"])
    replay = str(tmp_path / "replay")
    run(["mc-consistency", "--config", os.path.join(out, MANIFEST_NAME), "--out-dir", replay])
    for d in (other, replay):
        for name in ("mc.csv", "mc.summary.json"):
            with open(os.path.join(out, name), "rb") as a, open(os.path.join(d, name), "rb") as b:
                assert a.read() == b.read()
    assert _manifest(replay)["outputs"] == _manifest(out)["outputs"]


def test_truncation_decay(out):
    assert run(["truncation-decay", "--p", "2", "--no-intercept", "--theta", THETA,
                "--n", "100,1000,10000", "--seed", "3", "--out-dir", out]) == 0
    rows = validate_csv(os.path.join(out, "truncation-decay.csv"), "truncation-decay")
    means = [float(r[1]) for r in rows[1:]]
    assert means[0] > means[1] > means[2]
    assert all(float(r[1]) <= float(r[3]) for r in rows[1:])


def test_config_file_precedence(out, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"v": 0.5, "u_min": 1, "u_max": 2, "points": 4, "out": "file.csv"}))
    assert run(["bessel-table", "--config", str(cfg), "--points", "2", "--out-dir", out]) == 0
    rows = validate_csv(os.path.join(out, "file.csv"), "bessel-table")
    assert len(rows) == 3
    cfg.write_text(json.dumps({"bogus": 1}))
    assert run(["bessel-table", "--config", str(cfg), "--out-dir", out]) == 2


def test_usage_errors(out, capsys):
    assert run(["nope"]) == 2
    assert run(["bessel-table", "--v", "0.5", "--out-dir", out]) == 2
    assert run(["simulate", *VAR_ARGS, "--theta", "1,2", "--n", "5", "--out-dir", out]) == 2
    assert run(["mc-consistency", "--family", "arch1", "--p", "1", "--theta0", "1,0.3",
                "--n", "300,100", "--out-dir", out]) == 2
    assert run(["simulate", "--family", "none", "--p", "1", "--n", "2", "--seed", "-4",
                "--out-dir", out]) == 2


def test_numerical_failure_reports_json(out, capsys):
    run(["simulate", *VAR_ARGS, "--theta", THETA, "--n", "10", "--out-dir", out])
    status = run(["loglik", *VAR_ARGS, "--theta", "0.5,0.1,-0.2,0.3,1,0.3,0", "--series",
                  os.path.join(out, "series.csv"), "--out-dir", out])
    assert status == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    validate(err, "error.schema.json")
    assert err["error"] == "FactorizationError" and err["t"] == 1


def test_selfcheck_and_console_script(out):
    proc = subprocess.run(["alqmle", "selfcheck", "--out-dir", out], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stdout + proc.stderr
    assert proc.stdout.count("PASS") == 6
    validate(json.load(open(os.path.join(out, "selfcheck.json"))), "selfcheck.schema.json")
    proc = subprocess.run([sys.executable, "-m", "alqmle.cli", "--version"], capture_output=True,
                          text=True)
    assert proc.returncode == 0 and "alqmle" in proc.stdout
