from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st

from muskat.coupler import run_march
from muskat.errors import OutputError, ScenarioError
from muskat.expressions import compile_expr
from muskat.fields import MixtureState, Bounds, velocity_from_function
from muskat.grid import build_grid
from muskat.scenario_io import (SnapshotEntry, format_scenario, load_preset, load_scenario, output_dir,
                                parse_scenario, preset_names, read_snapshot, resolve_scenario, validate,
                                write_report, write_snapshot, write_traces)
from muskat.diagnostics import Check
from muskat.transport import TraceRecord

DATA = Path(__file__).parent / "data"

MINIMAL = """# muskat-scenario v1
extent = 1, 1
nx = 4
ny = 4
T = 1
rho0 = 1
nu0 = 1
rho_bounds = 1, 1
nu_bounds = 1, 1
"""


def test_minimal_scenario_defaults():
    sc = parse_scenario(MINIMAL)
    assert sc.mode == "march" and sc.cfl == 0.5 and sc.rho_b == sc.rho0
    assert sc.bx(0, 0.3, 0.2) == 0


def test_missing_extent_names_key():
    with pytest.raises(ScenarioError) as exc:
        parse_scenario(MINIMAL.replace("extent = 1, 1\n", ""))
    assert exc.value.key == "extent" and "extent" in str(exc.value)


def test_piecewise_expression():
    sc = parse_scenario(MINIMAL.replace("rho0 = 1", "rho0 = 1 + 0.5*step(y-0.5)").replace(
        "rho_bounds = 1, 1", "rho_bounds = 1, 1.5"))
    x, y = sc.build_grid().cell_coords()
    rho = sc.initial_state().rho
    assert np.all(rho[y < 0.5] == 1.0) and np.all(rho[y > 0.5] == 1.5)


@pytest.mark.parametrize("text,line,col,frag", [
    (MINIMAL.replace("nx = 4", "nx = four"), 3, 6, "integer"),
    (MINIMAL.replace("T = 1", "T = 1\nbogus = 2"), 6, 1, "unknown key"),
    (MINIMAL.replace("T = 1", "T = 1\nT = 2"), 6, 1, "duplicate"),
    (MINIMAL.replace("rho0 = 1", "rho0 = 1 + q"), 6, 12, "unknown variable"),
    (MINIMAL.replace("T = 1", "T = 1\nmode = sprint"), 6, 8, "mode"),
    (MINIMAL.replace("T = 1", "T\n"), 5, 1, "key = value"),
])
def test_errors_have_line_and_column(text, line, col, frag):
    with pytest.raises(ScenarioError) as exc:
        parse_scenario(text)
    assert (exc.value.line, exc.value.column) == (line, col)
    assert frag in str(exc.value)


def test_header_required():
    with pytest.raises(ScenarioError):
        parse_scenario(MINIMAL.replace("# muskat-scenario v1\n", ""))


@pytest.mark.parametrize("bad", ["cfl = 1.5", "theta = 0", "nx = 0", "T = -1"])
def test_range_checks(bad):
    key = bad.split()[0]
    text = MINIMAL.replace(f"{key} = 4\n", "").replace(f"{key} = 1\n", "") + bad + "\n"
    with pytest.raises(ScenarioError):
        parse_scenario(text)


@pytest.mark.parametrize("name", preset_names())
def test_presets_round_trip_and_validate(name):
    sc = load_preset(name)
    again = parse_scenario(format_scenario(sc))
    assert again == sc
    assert format_scenario(again) == format_scenario(sc)
    assert validate(sc).ok


@given(st.floats(0.01, 100, allow_nan=False), st.floats(1e-3, 1, exclude_min=False), st.integers(2, 64))
def test_round_trip_property(T, cfl, n):
    sc = replace(parse_scenario(MINIMAL), T=T, cfl=cfl, nx=n, dt_max=T / 7, rho0=compile_expr("1 + 0*x^2"))
    assert parse_scenario(format_scenario(sc)) == sc


def test_validate_reg2_names_faces():
    sc = load_scenario(DATA / "reg2_violation.scn")
    rep = validate(sc)
    assert rep.labels() == ["reg2"]
    issue = rep.issues[0]
    left = [f.face_id for f in sc.build_grid().boundary_faces if f.side == "left"]
    assert sorted(issue.locations) == sorted(left)
    assert issue.magnitude == pytest.approx(0.5)


def test_validate_compatibility():
    ok = replace(parse_scenario(MINIMAL), bx=compile_expr("1"))
    assert validate(ok).ok
    bad = replace(parse_scenario(MINIMAL), bx=compile_expr("2*x - 1"), by=compile_expr("2*y - 1"))
    rep = validate(bad)
    assert rep.labels() == ["compatibility"]
    assert rep.issues[0].magnitude == pytest.approx(4.0)


def test_validate_is_deterministic():
    sc = load_scenario(DATA / "reg2_violation.scn")
    assert validate(sc) == validate(sc)


def test_time_dependent_data_sampled_over_horizon():
    sc = replace(parse_scenario(MINIMAL), bx=compile_expr("t"), rho_b=compile_expr("1 - t"))
    rep = validate(sc)
    assert len(rep.sample_times) == 11
    assert "reg2" in rep.labels()


def grid_state(n=2):
    g = build_grid((0, 0), (1, 1), n, n)
    rng = np.random.default_rng(7)
    st_ = MixtureState(rng.uniform(1, 2, (n, n)) / 3, rng.uniform(1, 2, (n, n)), Bounds(0.1, 2, 1, 2))
    vp = velocity_from_function(g, lambda t, x, y: (np.sin(x) / 7, np.cos(y) / 3), p=rng.standard_normal((n, n)))
    return g, SnapshotEntry(1 / 3, st_, vp)


def test_snapshot_rows_and_exact_round_trip(tmp_path):
    g, entry = grid_state()
    files = write_snapshot(entry, tmp_path / "s.csv", g)
    lines = files[0].read_text().splitlines()
    assert len(lines) == 1 + 4
    back = read_snapshot(files[0])
    assert np.array_equal(back["rho"], entry.state.rho)
    assert np.array_equal(back["nu"], entry.state.nu)
    assert np.array_equal(back["p"], entry.velocity.p)
    assert np.array_equal(read_snapshot(files[1])["u"], entry.velocity.u)


def test_empty_outputs_are_header_only(tmp_path):
    g, _ = grid_state()
    files = write_snapshot(None, tmp_path / "e.csv", g)
    assert all(len(f.read_text().splitlines()) == 1 for f in files)
    write_traces(TraceRecord(), tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text() == "time,face_id,value,weight\n"


def test_traces_and_report(tmp_path):
    traj = run_march(replace(load_preset("channel"), nx=8, ny=8, T=0.05), diagnose=False)
    write_traces(traj.rho_out, tmp_path / "o.csv")
    rows = (tmp_path / "o.csv").read_text().splitlines()
    assert len(rows) - 1 == sum(s.face_ids.size for s in traj.rho_out.steps)
    p = write_report(tmp_path / "r.txt", "x", [("run", "steps", 3)], [Check("a", 1.0, 0.5, hard=False)])
    assert p.read_text().endswith("RESULT: PASS\n")
    p = write_report(tmp_path / "r.txt", "x", [], [Check("a", 1.0, 0.5)])
    assert "a = 1 limit 0.5 FAIL" in p.read_text() and p.read_text().endswith("RESULT: FAIL\n")


def test_output_errors(tmp_path):
    g, entry = grid_state()
    with pytest.raises(OutputError):
        write_snapshot(entry, tmp_path / "missing" / "s.csv", g)
    with pytest.raises(OutputError):
        load_scenario(tmp_path / "nope.scn")


def test_resolve_and_env_override(monkeypatch, tmp_path):
    assert resolve_scenario("preset:channel") == load_preset("channel")
    with pytest.raises(ScenarioError):
        resolve_scenario("preset:nope")
    monkeypatch.setenv("MUSKAT_OUTPUT_DIR", str(tmp_path))
    assert output_dir("out") == tmp_path
    monkeypatch.delenv("MUSKAT_OUTPUT_DIR")
    assert output_dir("out") == Path("out")
