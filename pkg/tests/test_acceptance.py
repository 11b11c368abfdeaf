"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are also repeated in the terminal summary (see ``conftest.py``).
"""

import json
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from annulus_bubble_lab.ansatz import (
    assemble_ansatz,
    decay_fit,
    pde_residual_probe,
    probe_points,
    random_probes,
    symmetry_residual,
)
from annulus_bubble_lab.energy import compute_constants, critical_point, expansion_check
from annulus_bubble_lab.geometry import AnnulusGeometry
from annulus_bubble_lab.harmonics import projection_defect_fit
from annulus_bubble_lab.radial import find_r0, solve_u0
from annulus_bubble_lab.spectrum import degeneracy_sweep, nondegeneracy_certificate

from oracles import collocation_bvp_radial

QUICK = Path(__file__).resolve().parents[1] / "configs" / "quick.ini"
K_LIST = (8, 16, 32, 64)
RESULTS = []


def report(n, ok, detail, runtime):
    line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  ({runtime:.1f}s)  {detail}"
    RESULTS.append(line)
    print(line)
    return ok


@pytest.fixture(scope="module")
def geom():
    return AnnulusGeometry(1.0, 2.0, 3)


@pytest.fixture(scope="module")
def u0(geom):
    return solve_u0(geom)


@pytest.fixture(scope="module")
def consts(geom, u0):
    return compute_constants(geom, u0)


@pytest.fixture(scope="module")
def crit(consts, u0):
    return critical_point(consts, u0)


def test_c01_radial_against_collocation(geom):
    t = time.perf_counter()
    sol = solve_u0(geom)
    r0 = find_r0(sol)
    runtime = time.perf_counter() - t
    ref = collocation_bvp_radial(1.0, 2.0)
    r = np.linspace(1.0, 2.0, 5001)
    ur = ref.sol(r)[0]
    err = float(np.max(np.abs(sol(r) - ur)) / np.max(np.abs(ur)))
    ok = err < 1e-4 and sol.ode_residual < 1e-8 and runtime < 5
    assert report(1, ok, f"sup rel err {err:.2e}, ODE residual {sol.ode_residual:.2e}, "
                         f"r0 {r0.r0:.10f}", runtime)


def test_c02_nondegeneracy_certificate(u0, geom):
    t = time.perf_counter()
    rep = nondegeneracy_certificate(u0, geom, k_max=12)
    runtime = time.perf_counter() - t
    mu11 = rep.table[1][0]
    ok = (rep.certified and rep.sign_pattern_ok and rep.richardson_ok and mu11 < 0
          and runtime < 30)
    assert report(2, ok, f"margin {rep.margin:.4g} at {rep.argmin}, mu_11 {mu11:.4g}, "
                         f"cutoff {rep.cutoff_rule}", runtime)


def test_c03_degeneracy_sweep():
    t = time.perf_counter()
    res = degeneracy_sweep(np.linspace(0.05, 0.95, 19), N=3, k_range=(2, 3, 4), width=1e-4)
    runtime = time.perf_counter() - t
    parts, ok = [], runtime < 300
    for j, k in enumerate(res.k_range):
        cr = [c for c in res.crossings if c.k == k and c.width <= 1e-4]
        tail = res.mu[-5:, j]
        falling = bool(np.all(np.diff(tail) < 0))
        ok &= bool(cr) and falling
        where = f"R*={cr[0].R_star:.5f}" if cr else "no crossing"
        parts.append(f"k={k}: {where}, tail decreasing {falling}")
    assert report(3, ok, "; ".join(parts), runtime)


def test_c04_projection_defect_rate(geom):
    t = time.perf_counter()
    fit = projection_defect_fit(geom, (1.5, 0.0, 0.0), [25.0, 50.0, 100.0, 200.0, 400.0])
    runtime = time.perf_counter() - t
    ok = abs(fit.slope + 0.5) <= 0.05 and runtime < 120
    assert report(4, ok, f"exponent {fit.slope:.4f} (target -0.5)", runtime)


def test_c05_lk_decay(geom, u0, crit):
    t = time.perf_counter()
    fit = decay_fit(K_LIST, crit.ell0, crit.r_star, geom, u0)
    runtime = time.perf_counter() - t
    stab = float(np.max(fit.stability))
    ok = fit.passes and fit.sigma > 0 and stab < 0.05 and runtime < 600
    assert report(5, ok, f"slope {fit.slope:.4f} +- {fit.slope_stderr:.3f} (need <= -0.25), "
                         f"sigma {fit.sigma:.4f}, norms {np.round(fit.norms, 4).tolist()}, "
                         f"stability {stab:.2e}", runtime)


def test_c06_reduced_energy(geom, u0):
    t = time.perf_counter()
    c = compute_constants(geom, u0)
    cp = critical_point(c, u0)
    runtime = time.perf_counter() - t
    errA = abs(c.A - c.A_closed) / c.A_closed
    errB = abs(c.B - c.B_closed) / c.B_closed
    dr = abs(cp.r_star - find_r0(u0).r0)
    ok = (errA < 1e-8 and errB < 1e-8 and cp.grad_norm < 1e-6 and max(cp.hessian_eigs) < 0
          and dr < 1e-3 and runtime < 60)
    assert report(6, ok, f"A err {errA:.1e}, B err {errB:.1e}, |grad F| {cp.grad_norm:.1e}, "
                         f"Hessian eigs {np.round(cp.hessian_eigs, 2).tolist()}, "
                         f"ell0 {cp.ell0:.8f}, |r*-r0| {dr:.1e}", runtime)


def test_c07_expansion(geom, u0, consts, crit):
    t = time.perf_counter()
    rep = expansion_check(K_LIST, crit.ell0, crit.r_star, geom, u0, consts)
    runtime = time.perf_counter() - t
    errs = [r.rel_error for r in rep.rows]
    ok = rep.decreasing and rep.final_rel_error < 0.2 and runtime < 1200
    rows = ", ".join(f"k={r.k}: D={r.D:.4g} model={r.model:.4g}" for r in rep.rows)
    assert report(7, ok, f"rel errors {np.round(errs, 3).tolist()}; {rows}", runtime)


def test_c08_stencil_order(geom, u0, crit):
    t = time.perf_counter()
    ans = assemble_ansatz(8, crit.ell0, crit.r_star, geom, u0)
    rep = pde_residual_probe(ans, probe_points(ans, 200))
    runtime = time.perf_counter() - t
    ok = 3.6 <= rep.ratio <= 4.4
    assert report(8, ok, f"ratio {rep.ratio:.3f}, median pointwise {rep.median_ratio:.3f}",
                  runtime)


def test_c09_symmetry(geom, u0, crit):
    t = time.perf_counter()
    ans = assemble_ansatz(8, crit.ell0, crit.r_star, geom, u0)
    dev = symmetry_residual(ans, random_probes(ans, 100)).max_deviation
    bad = assemble_ansatz(8, crit.ell0, crit.r_star, geom, u0, perturb=(1e-3, 0.0, 0.0))
    dev_bad = symmetry_residual(bad, random_probes(bad, 100)).max_deviation
    runtime = time.perf_counter() - t
    ok = dev < 1e-8 and dev_bad > 1e-5
    assert report(9, ok, f"deviation {dev:.2e}, perturbed center {dev_bad:.2e}", runtime)


def test_c10_determinism(tmp_path):
    t = time.perf_counter()
    digests, codes = [], []
    for run, threads in enumerate((1, 1, 4)):
        out = tmp_path / f"run{run}"
        env = dict(os.environ)
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            env.pop(var, None)
        res = subprocess.run([sys.executable, "-m", "annulus_bubble_lab.cli", "all",
                              "--config", str(QUICK), "--out", str(out),
                              "--threads", str(threads)],
                             capture_output=True, text=True, env=env, timeout=900)
        codes.append(res.returncode)
        digests.append((out / "manifest.json").read_bytes())
        man = json.loads(digests[-1])
    runtime = time.perf_counter() - t
    same = digests[0] == digests[1] == digests[2]
    stages = [s["name"] for s in man["stages"]]
    ok = same and codes[0] in (0, 4) and len(set(codes)) == 1 and len(stages) == 6
    assert report(10, ok, f"manifests identical {same}, exit codes {codes}, "
                          f"{len(man['files'])} files hashed", runtime)
