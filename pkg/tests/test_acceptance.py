"""Acceptance criteria, each at its stated tolerance; one PASS/FAIL line per criterion."""

import filecmp
import time
from dataclasses import replace

import numpy as np
import pytest

from muskat.brinkman import assemble, solve, solve_brinkman, solve_dense
from muskat.cli import main
from muskat.coupler import (Problem, interpolate_in_time, picard_map, run_march, schauder_solve,
                            space_time_distance)
from muskat.diagnostics import max_principle_excess, bounds_check
from muskat.grid import build_grid
from muskat.scenario_io import load_preset, preset_names
from muskat.studies import march_refinement_error, mms_convergence, ratios, refinement_level
from muskat.transport import mass_ledger, total_mass

pytestmark = pytest.mark.slow

TAU_SOLVE = 1e-9
TAU_DIV = 1e-8
SEED = 20240611


def fmt(values):
    return "[" + ", ".join(f"{v:.4g}" for v in values) + "]"


@pytest.fixture(scope="module")
def preset_runs():
    """Every shipped preset marched at its own resolution."""
    runs = {}
    for name in preset_names():
        pb = Problem.from_scenario(load_preset(name))
        runs[name] = (pb, run_march(pb))
    return runs


@pytest.fixture(scope="module")
def channel_transit():
    """Channel displacement on 64^2 for one transit time (unit length at unit mean speed)."""
    pb = Problem.from_scenario(replace(load_preset("channel"), nx=64, ny=64, T=1.0))
    return pb, run_march(pb)


def ci_suite(preset_runs, channel_transit):
    return [*((n, *r) for n, r in preset_runs.items()), ("channel_64_transit", *channel_transit)]


def test_brinkman_mms_convergence(criterion):
    t0 = time.perf_counter()
    rows = mms_convergence([32, 64, 128])
    elapsed = time.perf_counter() - t0
    rs = [r.ratio for r in rows[1:]]
    ok = all(r >= 3.4 for r in rs) and elapsed < 120
    detail = (f"errors {fmt([r.velocity_error for r in rows])}, ratios {fmt(rs)} (>= 3.4), "
              f"{elapsed:.1f}s (< 120s)")
    assert criterion(1, "MMS velocity convergence", ok, detail)


def test_divergence_residual(criterion, preset_runs, channel_transit):
    worst = {name: max(v.divergence_residual for v in traj.velocities)
             for name, _, traj in ci_suite(preset_runs, channel_transit)}
    top = max(worst.values())
    ok = top <= TAU_DIV
    assert criterion(2, "divergence residual", ok,
                     f"max |div v| {top:.3g} over {len(worst)} scenarios (<= {TAU_DIV:g})")


def test_iterative_matches_dense_oracle(criterion):
    rng = np.random.default_rng(SEED)
    g = build_grid((0, 0), (1, 1), 4, 4)
    errs = []
    for _ in range(5):
        mu, h = rng.uniform(0.2, 5, (4, 4)), rng.uniform(0, 5, (4, 4))
        f = (rng.standard_normal((5, 4)), rng.standard_normal((4, 5)))
        sys_ = assemble(g, mu, h, f, lambda t, x, y: (0 * x, 0 * y))
        a, b = solve(sys_), solve_dense(sys_)
        errs.append(max(np.max(np.abs(a.u - b.u)), np.max(np.abs(a.v - b.v)), np.max(np.abs(a.p - b.p))))
    ok = max(errs) <= 1e-10
    assert criterion(3, "dense oracle equivalence", ok, f"max-norm gaps {fmt(errs)} (<= 1e-10)")


def test_superposition(criterion):
    rng = np.random.default_rng(SEED + 1)
    n = 16
    g = build_grid((0, 0), (1, 1), n, n)
    mu, h = rng.uniform(0.5, 3, (n, n)), rng.uniform(0, 2, (n, n))

    def boundary(c):
        # zero-net-flux combinations of a channel profile and a rotation
        return lambda t, x, y: (c[0] * 6 * y * (1 - y) - c[1] * (y - 0.5), c[1] * (x - 0.5))

    gaps = []
    for _ in range(5):
        c1, c2 = rng.standard_normal(2), rng.standard_normal(2)
        f1 = (rng.standard_normal((n + 1, n)), rng.standard_normal((n, n + 1)))
        f2 = (rng.standard_normal((n + 1, n)), rng.standard_normal((n, n + 1)))
        a, b = rng.uniform(-2, 2, 2)
        s1 = solve_brinkman(g, mu, h, f1, boundary(c1))
        s2 = solve_brinkman(g, mu, h, f2, boundary(c2))
        s12 = solve_brinkman(g, mu, h, (a * f1[0] + b * f2[0], a * f1[1] + b * f2[1]), boundary(a * c1 + b * c2))
        ref_u, ref_v = a * s1.u + b * s2.u, a * s1.v + b * s2.v
        scale = max(np.max(np.abs(ref_u)), np.max(np.abs(ref_v)), 1.0)
        gaps.append(max(np.max(np.abs(s12.u - ref_u)), np.max(np.abs(s12.v - ref_v))) / scale)
    ok = max(gaps) <= 10 * TAU_SOLVE
    assert criterion(4, "superposition", ok, f"relative gaps {fmt(gaps)} (<= {10 * TAU_SOLVE:g})")


def test_maximum_principle(criterion, channel_transit):
    pb, traj = channel_transit
    excess = {w: max_principle_excess(traj, w, pb.tau_div) for w in ("rho", "nu")}
    viol = sum(len(bounds_check(s, pb.tau_mp)) for s in traj.states)
    ok = max(excess.values()) <= 0 and viol == 0
    lo, hi = min(s.rho.min() for s in traj.states), max(s.rho.max() for s in traj.states)
    detail = (f"{len(traj.times) - 1} steps, rho in [{lo:.15g}, {hi:.15g}], worst excess "
              f"rho {excess['rho']:.3g} nu {excess['nu']:.3g} (<= 0), bound violations {viol}")
    assert criterion(5, "maximum principle", ok, detail)


def test_mass_ledger(criterion, channel_transit):
    _, traj = channel_transit
    g = traj.grid
    out = {}
    for w, rec_out, rec_in in (("rho", traj.rho_out, traj.rho_in), ("nu", traj.nu_out, traj.nu_in)):
        first = getattr(traj.states[0], w)
        last = getattr(traj.states[-1], w)
        out[w] = (mass_ledger(first, last, rec_out, rec_in, g), 1e-10 * total_mass(g, first))
    ok = all(r <= lim for r, lim in out.values())
    detail = ", ".join(f"{w} {r:.3g} (<= {lim:.3g})" for w, (r, lim) in out.items())
    assert criterion(6, "mass ledger", ok, detail)


def test_renormalization_defect(criterion):
    sc = load_preset("smooth")
    defects = [refinement_level(sc, n, weak_form=False)[0].renormalization_defect for n in (32, 64, 128)]
    rs = ratios(defects)
    ok = all(1.5 <= r <= 2.5 for r in rs)
    assert criterion(7, "renormalization defect", ok, f"L1 defects {fmt(defects)}, ratios {fmt(rs)} (in [1.5, 2.5])")


def test_immiscibility(criterion):
    sc = load_preset("pure_constants")
    rows = [refinement_level(sc, n, weak_form=False)[0] for n in (32, 64, 128)]
    mixed = [r.mixed_area for r in rows]
    sym = [r.symmetric_difference for r in rows]
    rs = ratios(mixed)
    ok = all(r >= 1.3 for r in rs) and all(s <= m for s, m in zip(sym, mixed))
    detail = f"mixed areas {fmt(mixed)}, ratios {fmt(rs)} (>= 1.3), symmetric differences {fmt(sym)} (<= mixed)"
    assert criterion(8, "immiscibility", ok, detail)


def test_schauder_mode(criterion):
    sc = replace(load_preset("channel"), T=0.1)
    pb = Problem.from_scenario(sc)
    traj, hist = schauder_solve(pb, max_iter=20, keep_iterates=False)
    times = np.asarray(traj.times)
    march = run_march(pb, diagnose=False)
    mr, mn = interpolate_in_time(march, times)
    gap = space_time_distance(pb.grid, times, traj.rho_array(), traj.nu_array(), mr, mn)
    ref = march_refinement_error(sc, 32)
    again = picard_map(traj.rho_array(), traj.nu_array(), pb, times)
    moved = space_time_distance(pb.grid, times, again.rho_array(), again.nu_array(),
                                traj.rho_array(), traj.nu_array())
    ok = hist.converged and hist.k_final <= 20 and gap <= 10 * ref and moved <= hist.tol
    detail = (f"converged in {hist.k_final} iterations (d = {hist.distances[-1]:.3g} <= tol {hist.tol:.3g}), "
              f"march gap {gap:.3g} (<= 10 x {ref:.3g}), re-apply moves {moved:.3g} (<= tol)")
    assert criterion(9, "Schauder iteration", ok, detail)


def test_weak_form_residuals(criterion):
    sc = load_preset("channel")
    rows = [refinement_level(sc, n)[0] for n in (32, 64, 128)]
    series = {k: [getattr(r, k) for r in rows] for k in ("weak_rho", "weak_nu", "weak_momentum")}
    rs = {k: ratios(v) for k, v in series.items()}
    ok = all(r >= 1.5 for v in rs.values() for r in v)
    detail = "; ".join(f"{k} {fmt(series[k])} ratios {fmt(rs[k])}" for k in series) + " (>= 1.5)"
    assert criterion(10, "weak-form residuals", ok, detail)


def test_energy_identity(criterion, preset_runs, channel_transit):
    worst = {name: max((s.energy_residual for s in traj.summaries), default=0.0)
             for name, _, traj in ci_suite(preset_runs, channel_transit)}
    top = max(worst.values())
    ok = top <= 10 * TAU_SOLVE
    assert criterion(11, "energy identity", ok,
                     f"max per-step relative residual {top:.3g} over {len(worst)} scenarios (<= {10 * TAU_SOLVE:g})")


def _tree(root):
    return sorted(p.relative_to(root) for p in root.rglob("*") if p.is_file())


def test_determinism(criterion, tmp_path, monkeypatch):
    monkeypatch.delenv("MUSKAT_OUTPUT_DIR", raising=False)
    differing, counted = [], 0
    codes = {}
    for name in preset_names():
        a, b = tmp_path / name / "a", tmp_path / name / "b"
        codes[name] = (main(["run", f"preset:{name}", "--out", str(a)]),
                       main(["run", f"preset:{name}", "--out", str(b)]))
        files_a, files_b = _tree(a), _tree(b)
        if files_a != files_b:
            differing.append(f"{name}: file lists differ")
            continue
        for rel in files_a:
            counted += 1
            if not filecmp.cmp(a / rel, b / rel, shallow=False):
                differing.append(f"{name}/{rel}")
    ok = not differing and all(c == (0, 0) for c in codes.values())
    detail = f"{counted} files over {len(codes)} presets, {len(differing)} differing, exit codes {set(codes.values())}"
    assert criterion(12, "determinism", ok, detail)
