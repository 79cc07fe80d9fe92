import csv
import io
import json

import numpy as np
import pytest
from click.testing import CliRunner

from pkmdyn import build_delta
from pkmdyn.cli import (EXIT_SINGULAR, EXIT_VALIDATION, TrajectorySpec, _run, bench, invdyn_header, main,
                        parse_trajectory)
from pkmdyn.dynamics import inverse_dynamics
from pkmdyn.errors import SingularityError, ValidationError
from pkmdyn.models import delta_spec

runner = CliRunner(mix_stderr=False) if "mix_stderr" in CliRunner.__init__.__code__.co_varnames else CliRunner()


def read_csv(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


@pytest.fixture(scope="module")
def invdyn_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("invdyn")
    serial, par = d / "serial.csv", d / "parallel.csv"
    r1 = runner.invoke(main, ["invdyn", "--model", "delta_mpp3h", "--out", str(serial)])
    r2 = runner.invoke(main, ["invdyn", "--model", "delta_mpp3h", "--parallel", "--out", str(par)])
    assert r1.exit_code == 0 and r2.exit_code == 0
    return serial, par


def test_invdyn_rows_and_header(invdyn_files, delta):
    head, data = read_csv(invdyn_files[0])
    assert head == invdyn_header(delta)
    assert data.shape == (1001, len(head))
    assert np.allclose(data[:, 0], np.arange(1001) * 0.01)
    # traces periodic with period 10 s
    assert np.allclose(data[0, 1:], data[-1, 1:], atol=1e-9)


def test_invdyn_twelve_digits(invdyn_files):
    with open(invdyn_files[0]) as fh:
        fh.readline()
        row = fh.readline().strip().split(",")
    digits = [len(v.lstrip("-").split("e")[0].replace(".", "").lstrip("0")) for v in row]
    assert max(digits) <= 12


def test_parallel_output_byte_identical(invdyn_files):
    a, b = invdyn_files
    assert a.read_bytes() == b.read_bytes()


def test_zero_amplitude_gives_static_torque(tmp_path, delta):
    out = tmp_path / "u.csv"
    r = runner.invoke(main, ["invdyn", "--model", "delta_mpp3h", "--traj", "sinusoid:amp=0,0,0",
                             "--duration", "0.05", "--out", str(out)])
    assert r.exit_code == 0
    head, data = read_csv(out)
    u_cols = [i for i, h in enumerate(head) if h.startswith("u")]
    z = np.zeros(3)
    x0 = data[0, 1:4]
    static = inverse_dynamics(delta, x0, z, z).u
    assert np.allclose(data[:, u_cols], static, rtol=1e-11)


def test_invdyn_csv_trajectory(tmp_path, delta):
    traj = tmp_path / "traj.csv"
    t = np.arange(0, 0.21, 0.01)
    x = np.column_stack([0.01 * t, 0 * t, -0.94398 + 0 * t])
    np.savetxt(traj, np.column_stack([t, x]), delimiter=",", header="t,x1,x2,x3", comments="")
    out = tmp_path / "u.csv"
    r = runner.invoke(main, ["invdyn", "--model", "delta_mpp3h", "--traj", str(traj), "--out", str(out)])
    assert r.exit_code == 0, r.output
    _, data = read_csv(out)
    assert data.shape[0] == 21
    spec = parse_trajectory(str(traj), delta)
    _, V, A = spec.sample(0.1)
    assert np.allclose(V, [0.01, 0, 0]) and np.allclose(A, 0, atol=1e-12)


def test_exit_codes(tmp_path):
    r = runner.invoke(main, ["invdyn", "--model", str(tmp_path / "missing.json")])
    assert r.exit_code == EXIT_VALIDATION
    r = runner.invoke(main, ["invdyn", "--model", "delta_mpp3h", "--dt", "0"])
    assert r.exit_code == EXIT_VALIDATION
    r = runner.invoke(main, ["invdyn", "--model", "delta_mpp3h", "--traj", "sinusoid:bogus=1"])
    assert r.exit_code == EXIT_VALIDATION

    def sing():
        raise SingularityError("J_IK singular", t=1.25)

    with pytest.raises(SystemExit) as exc:
        _run(sing)
    assert exc.value.code == EXIT_SINGULAR


def test_unreachable_trajectory_fails(tmp_path):
    r = runner.invoke(main, ["invdyn", "--model", "delta_mpp3h", "--traj",
                             "sinusoid:amp=0,0,0;origin=0,0,-3", "--duration", "0.02"])
    assert r.exit_code == 4
    assert "at t = 0:" in (r.stderr if hasattr(r, "stderr") else r.output)


def test_check_shipped_models():
    for name in ("delta_mpp3h", "fourbar"):
        r = runner.invoke(main, ["check", "--model", name])
        assert r.exit_code == 0, r.output
        lines = r.output.strip().splitlines()
        assert all(line.startswith("PASS") for line in lines)
        assert any("oracle_equivalence" in line for line in lines)
    assert any("symmetry" in line for line in
               runner.invoke(main, ["check", "--model", "delta_mpp3h"]).output.splitlines())


def test_check_corrupted_axis(tmp_path):
    spec = delta_spec()
    spec["joints"][0]["axis"] = [0.0, -1.1, 0.0]
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(spec))
    r = runner.invoke(main, ["check", "--model", str(path)])
    assert r.exit_code == EXIT_VALIDATION
    msg = r.stderr if hasattr(r, "stderr") else r.output
    assert "joint 1" in msg and "unit vector" in msg


def test_simulate_rest_without_gravity(tmp_path):
    spec = delta_spec()
    spec["gravity"] = [0.0, 0.0, 0.0]
    model = tmp_path / "nograv.json"
    model.write_text(json.dumps(spec))
    u = tmp_path / "u.csv"
    u.write_text("t,u1,u2,u3\n0,0,0,0\n0.5,0,0,0\n1,0,0,0\n")
    out = tmp_path / "sim.csv"
    r = runner.invoke(main, ["simulate", "--model", str(model), "--traj", "sinusoid:amp=0,0,0",
                             "--u-source", str(u), "--dt", "1e-3", "--duration", "0.01", "--out", str(out)])
    assert r.exit_code == 0, r.output
    head, data = read_csv(out)
    assert data.shape[0] == 11
    assert np.ptp(data[:, 1:1 + 3 + 3 + 3], axis=0).max() == 0.0


def test_simulate_replays_invdyn(tmp_path):
    out = tmp_path / "sim.csv"
    r = runner.invoke(main, ["simulate", "--model", "delta_mpp3h", "--dt", "1e-3",
                             "--duration", "0.02", "--out", str(out)])
    assert r.exit_code == 0, r.output
    msg = r.stderr if hasattr(r, "stderr") else r.output
    assert "max tracking deviation" in msg
    head, data = read_csv(out)
    assert head[-2:] == ["loop_residual", "power_residual"]
    assert data[:, -2].max() < 1e-10


def test_bench_structure():
    pkm = build_delta()
    traj = TrajectorySpec("sinusoid", np.array([0.0, 0.0, -0.943981]), np.array([0.03, 0.04, 0.01]),
                          10.0, 0.5, 1.0)
    rep = bench(pkm, traj, evals=6, threads=3)
    labels = [lab for lab, _ in rep.rows]
    assert labels[0].startswith("Exp 1") and labels[1].startswith("Exp 2")
    assert labels[2].startswith("Exp 3 ") and "3 workers" in labels[2]
    assert [lab.split()[1] for lab in labels[3:6]] == ["3.1", "3.2", "3.3"]
    assert all(us > 0 for _, us in rep.rows)
    assert "hardware-dependent" in rep.text()


def test_bench_command_small():
    r = runner.invoke(main, ["bench", "--model", "fourbar", "--evals", "4", "--threads", "1"])
    assert r.exit_code == 0, r.output
    assert "Exp 3.1" in r.output and "1 workers" in r.output


def test_trajectory_validation(delta):
    with pytest.raises(ValidationError):
        parse_trajectory("sinusoid:amp=1,2", delta)
    with pytest.raises(ValidationError):
        TrajectorySpec("sinusoid", np.zeros(3), np.zeros(3), 0.0, 0.01, 1.0)
    spec = parse_trajectory("sinusoid:amp=0.1,0.2,0.3;T=4", delta)
    h = 1e-6
    for t in (0.3, 1.7):
        x1, V1, _ = spec.sample(t + h)
        x0, V0, _ = spec.sample(t - h)
        _, V, A = spec.sample(t)
        assert np.allclose((x1 - x0) / (2 * h), V, atol=1e-8)
        assert np.allclose((V1 - V0) / (2 * h), A, atol=1e-7)


def test_version():
    r = runner.invoke(main, ["--version"])
    assert r.exit_code == 0
