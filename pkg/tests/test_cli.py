import json
import math

import jsonschema
import numpy as np
import pytest

from artifact.cli import (BREAKDOWN_SCHEMA, SWEEP_COLUMNS, UsageError, canonical_csv,
                          canonical_json, main, parse_config)
from artifact.resonances import ResonanceSet

from conftest import PAIR_Q1, PAIR_Q2

from test_resonances import CONSTANT_WELL_ROOTS

BOUNDS_ARGS = ["bounds", "--R", "100", "--a", "1", "--Q1", "1", "--p", "2", "--Dp", "1",
               "--delta", "0.1"]


def small_config(**over):
    raw = {
        "schema_version": 1, "a": 1.0, "n_grid": 100,
        "q1": PAIR_Q1, "q2": PAIR_Q2,
        "params": {"Q1": 1.0, "p": 2, "Dp": 1.0, "delta": 0.1},
        "R": [10], "eps": [0, 1e-7], "seeds": [0],
        "reconstruction": {"outer_iters": 5, "quad_points": 801},
        "forward": {"circle_radii": [2.0], "samples": 16, "real_segment": 4.0},
    }
    raw.update(over)
    return raw


def write_config(tmp_path, raw, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(raw))
    return str(path)


# -- serialization -------------------------------------------------------------------

def test_canonical_json_format():
    text = canonical_json({"b": 0.1, "a": [1, True, None], "c": 1 + 2j, "d": np.float64(1 / 3)})
    assert text == ('{"a": [1, true, null], "b": 0.10000000000000001, '
                    '"c": {"im": 2, "re": 1}, "d": 0.33333333333333331}\n')
    assert canonical_json({"x": math.inf}) == '{"x": Infinity}\n'


def test_canonical_json_roundtrips_floats():
    rng = np.random.default_rng(3)
    xs = rng.normal(size=50) * 10.0 ** rng.integers(-20, 20, size=50)
    assert json.loads(canonical_json(list(xs))) == list(xs)


def test_canonical_csv_format():
    rows = [{"a": 1.5, "b": True}, {"a": None, "b": "x,y"}]
    assert canonical_csv(rows, ["a", "b"]) == 'a,b\n1.5,true\n,"x,y"\n'


# -- config parsing ------------------------------------------------------------------

def test_parse_config_bundled():
    with open("configs/bump_pair.json") as fh:
        cfg = parse_config(json.load(fh))
    assert cfg.R == [10.0, 20.0, 40.0] and cfg.eps == [0.0, 1e-8, 1e-7]
    assert cfg.params.has_smoothness and cfg.q2 is not None


@pytest.mark.parametrize("patch", [
    {"schema_version": 2},
    {"R": []},
    {"eps": [-1.0]},
    {"q1": "gauss(1)"},
    {"q1": {"family": "bump", "params": [1.0]}},
    {"params": {"Q1": 1.0, "p": 1, "Dp": 1.0, "delta": 0.1}},
])
def test_parse_config_errors(patch):
    with pytest.raises(UsageError):
        parse_config(small_config(**patch))


def test_object_potential_form():
    cfg = parse_config(small_config(q1={"family": "constant", "params": [1.0]}))
    assert np.all(cfg.q1.values == 1.0)


# -- bounds and validate ---------------------------------------------------------------

def test_bounds_text_and_alpha(capsys):
    assert main(BOUNDS_ARGS) == 0
    out = capsys.readouterr().out
    assert "alpha_star" in out and "0.675" in out


def test_bounds_json_schema_and_zero_eps(capsys):
    assert main(BOUNDS_ARGS + ["--format", "json"]) == 0
    d = json.loads(capsys.readouterr().out)
    jsonschema.validate(d, BREAKDOWN_SCHEMA)
    assert d["values"]["alpha_star"] == pytest.approx(0.675, abs=1e-15)
    assert d["values"]["psi_R_eps"] == 0
    assert d["in_force"]


def test_bounds_csv_matches_json(capsys):
    main(BOUNDS_ARGS + ["--eps", "1e-6", "--format", "json"])
    d = json.loads(capsys.readouterr().out)
    main(BOUNDS_ARGS + ["--eps", "1e-6", "--format", "csv"])
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "name,value"
    got = {k: float(v) for k, v in (ln.split(",") for ln in lines[1:])}
    assert got == d["values"]


def test_bounds_usage_errors(capsys):
    assert main(["bounds", "--R", "100", "--a", "1"]) == 1
    assert main(BOUNDS_ARGS[:-2] + ["--delta", "1.5"]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["bounds"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["nonsense"])
    assert exc.value.code == 1


def test_validate_bundled(capsys):
    assert main(["validate", "--config", "configs/bump_pair.json"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "norm1_q1" in out


def test_validate_reports_failure(tmp_path, capsys):
    path = write_config(tmp_path, small_config(q2="constant(3)"))
    assert main(["validate", "--config", path]) == 2
    assert "FAIL" in capsys.readouterr().out


def test_missing_config_and_bad_threads(tmp_path):
    assert main(["forward"]) == 1
    assert main(["forward", "--config", str(tmp_path / "nope.json")]) == 1
    (tmp_path / "bad.json").write_text("{")
    assert main(["forward", "--config", str(tmp_path / "bad.json")]) == 1
    assert main(["sweep", "--config", "configs/bump_pair.json", "--threads", "0"]) == 1


# -- forward and resonances -----------------------------------------------------------

def test_forward_zero_potential(tmp_path):
    path = write_config(tmp_path, small_config(q1="zero", R=[8]))
    del_q2 = json.loads(open(path).read())
    del del_q2["q2"]
    path = write_config(tmp_path, del_q2)
    out = tmp_path / "out"
    assert main(["forward", "--config", path, "--out", str(out)]) == 0
    res = ResonanceSet.from_dict(json.loads((out / "q1_resonances.json").read_text()))
    assert res.zeros == () and res.n_origin == 0
    lines = (out / "q1_psi.csv").read_text().splitlines()
    assert lines[0] == "contour,z_re,z_im,psi_re,psi_im"
    assert len(lines) == 1 + 16 + 33
    # free Jost function is 1
    for ln in lines[1:]:
        _, _, _, re, im = ln.split(",")
        assert float(re) == pytest.approx(1.0, abs=1e-12) and abs(float(im)) < 1e-12


def test_forward_constant_well_and_determinism(tmp_path):
    raw = small_config(q1="constant(1)", R=[12])
    del raw["q2"]
    path = write_config(tmp_path, raw)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["forward", "--config", path, "--out", str(a)]) == 0
    assert main(["forward", "--config", path, "--out", str(b)]) == 0
    for name in ["q1_psi.csv", "q1_kernel.json", "q1_resonances.json"]:
        assert (a / name).read_bytes() == (b / name).read_bytes()
    got = ResonanceSet.from_dict(json.loads((a / "q1_resonances.json").read_text())).locations()
    assert len(got) == len(CONSTANT_WELL_ROOTS)
    for r in CONSTANT_WELL_ROOTS:
        assert np.min(np.abs(got - r)) < 1e-6


def test_find_resonances_csv(tmp_path):
    raw = small_config(q1="constant(1)", R=[7])
    del raw["q2"]
    out = tmp_path / "out"
    assert main(["find-resonances", "--config", write_config(tmp_path, raw), "--out", str(out),
                 "--format", "csv"]) == 0
    lines = (out / "q1_resonances_R7.csv").read_text().splitlines()
    assert lines[0] == "re,im,mult" and len(lines) == 1 + 4


def test_output_dir_not_writable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    raw = small_config(q1="zero", R=[5])
    del raw["q2"]
    rc = main(["find-resonances", "--config", write_config(tmp_path, raw),
               "--out", str(blocker / "sub")])
    assert rc == 2


# -- reconstruct and sweep --------------------------------------------------------------

def test_reconstruct_null_pair(tmp_path):
    path = write_config(tmp_path, small_config(q2=PAIR_Q1))
    out = tmp_path / "out"
    assert main(["reconstruct", "--config", path, "--out", str(out)]) == 0
    rows = (out / "reconstruction.csv").read_text().splitlines()
    assert rows[0].startswith("x,primitive_true,primitive_est")
    est = np.array([float(r.split(",")[2]) for r in rows[1:]])
    assert np.max(np.abs(est)) <= 1e-4


def test_reconstruct_from_resonance_file(tmp_path):
    raw = small_config()
    path = write_config(tmp_path, raw)
    out = tmp_path / "out"
    assert main(["find-resonances", "--config", path, "--out", str(out)]) == 0
    assert main(["reconstruct", "--config", path, "--out", str(out),
                 "--resonances", str(out / "q2_resonances_R10.json")]) == 0
    d = json.loads((out / "reconstruction.json").read_text())
    assert "seconds" not in d["diagnostics"]


@pytest.fixture(scope="module")
def sweeps(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("sweep")
    path = write_config(tmp, small_config())
    outs = {}
    for threads in (1, 4):
        outs[threads] = tmp / f"t{threads}"
        assert main(["sweep", "--config", path, "--out", str(outs[threads]),
                     "--threads", str(threads)]) == 0
    return outs


def test_sweep_byte_identical_across_threads(sweeps):
    for name in ["sweep.csv", "sweep_summary.json"]:
        assert (sweeps[1] / name).read_bytes() == (sweeps[4] / name).read_bytes()


def test_sweep_rows_complete(sweeps, capsys):
    lines = (sweeps[1] / "sweep.csv").read_text().splitlines()
    assert lines[0] == ",".join(SWEEP_COLUMNS)
    rows = [dict(zip(SWEEP_COLUMNS, ln.split(","))) for ln in lines[1:]]
    assert [(r["R"], r["eps"]) for r in rows] == [("10", "0"), ("10", "9.9999999999999995e-08")]
    for r in rows:
        assert r["status"] == "ok" and r["error"] == ""
        for col in ["eps_measured", "primitive_error", "theorem2_total"]:
            assert not math.isnan(float(r[col]))
        assert float(r["eps_measured"]) <= float(r["eps"])
        if float(r["eps"]) > 0:
            assert float(r["eps_measured"]) < float(r["eps"])
    # bound columns equal the bounds subcommand
    main(["bounds", "--config", write_config(sweeps[1], small_config()), "--R", "10",
          "--eps", "1e-7", "--format", "json"])
    d = json.loads(capsys.readouterr().out)
    assert float(rows[1]["theorem2_total"]) == d["values"]["total"]
    assert len(list((sweeps[1] / "rows").glob("row_*.json"))) == 2
    summary = json.loads((sweeps[1] / "sweep_summary.json").read_text())
    assert summary["n_rows"] == 2 and summary["n_failed"] == 0


def test_sweep_null_pair_within_budget(tmp_path):
    raw = small_config(q2=PAIR_Q1, eps=[0])
    out = tmp_path / "out"
    assert main(["sweep", "--config", write_config(tmp_path, raw), "--out", str(out)]) == 0
    header, row = (out / "sweep.csv").read_text().splitlines()
    r = dict(zip(header.split(","), row.split(",")))
    assert float(r["primitive_error"]) <= 1e-4


def test_sweep_failure_recorded_in_row(tmp_path):
    # q1 = 0 has no zeros, the bump has some: pairing fails, sweep still completes
    raw = small_config(q1="zero", q2="bump(0.5,0.5,0.3)", eps=[0])
    out = tmp_path / "out"
    assert main(["sweep", "--config", write_config(tmp_path, raw), "--out", str(out)]) == 0
    header, row = (out / "sweep.csv").read_text().splitlines()
    r = dict(zip(header.split(","), row.split(",")))
    assert r["status"] == "failed" and "PairingError" in r["error"]
