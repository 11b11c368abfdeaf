import numpy as np
import pytest
from numpy.testing import assert_allclose

from annulus_bubble_lab.ansatz import assemble_ansatz
from annulus_bubble_lab.energy import (
    QuadConfig,
    _grad_hess,
    ansatz_energy,
    beta_moment,
    compute_constants,
    critical_point,
    fd_gradient_hessian,
    interaction_model,
    landscape,
    pair_sum_constant,
    radial_moment,
    reduced_F,
)
from annulus_bubble_lab.errors import ConfigError, QuadratureError
from annulus_bubble_lab.geometry import AnnulusGeometry
from annulus_bubble_lab.radial import find_r0, radial_energy

ELL, R = 0.3728296885, np.sqrt(2.0)


@pytest.fixture(scope="module")
def consts(geom, u0):
    return compute_constants(geom, u0)


def test_constants_closed_forms(consts):
    # ∫U^6 over R^3 equals the Sobolev constant power S^{3/2} = 3√3π²/4
    assert_allclose(consts.A, np.sqrt(3) * np.pi**2 / 4, rtol=1e-10)
    assert_allclose(consts.A, consts.A_closed, rtol=1e-8)
    assert_allclose(consts.B, consts.B_closed, rtol=1e-8)
    assert consts.C_rule == "exact_pair_sum" and consts.k_ref == 64


@pytest.mark.parametrize("N", [4, 5])
def test_constants_higher_dimension(N):
    c = compute_constants(AnnulusGeometry(1.0, 2.0, N))
    assert c.C_rule == "zeta_limit"
    assert_allclose(c.A, c.A_closed, rtol=1e-8)


def test_radial_moment_beta():
    for N, s in ((3, 3.0), (3, 2.5), (5, 4.0)):
        assert_allclose(radial_moment(N, s)[0], beta_moment(N, s), rtol=1e-10)


def test_pair_sum():
    assert_allclose(pair_sum_constant(3, 2), 0.25, rtol=1e-15)
    # N=3 sum grows like log k
    s = [pair_sum_constant(3, k) for k in (64, 128, 256)]
    assert_allclose(np.diff(s), np.log(2) / np.pi, rtol=2e-3)


def test_reduced_F_limits(consts, u0):
    # F -> 0 as ℓ -> ∞ and F -> -∞ as ℓ -> 0
    assert 0 < reduced_F(1e8, R, consts, u0) < 1e-2
    assert reduced_F(1e-4, R, consts, u0) < -1e5
    assert_allclose(reduced_F(ELL, R, consts, u0), 28.149, rtol=1e-4)


def test_gradient_hessian_vs_fd(consts, u0):
    g, H = _grad_hess(0.6, 1.3, consts, u0)
    g_fd, H_fd = fd_gradient_hessian(0.6, 1.3, consts, u0)
    assert_allclose(g, g_fd, rtol=1e-6, atol=1e-6)
    assert_allclose(H, H_fd, rtol=1e-4, atol=1e-4 * np.abs(H).max())


def test_critical_point(consts, u0):
    cp = critical_point(consts, u0)
    assert cp.grad_norm < 1e-6
    assert max(cp.hessian_eigs) < 0
    assert abs(cp.r_star - find_r0(u0).r0) < 1e-3
    assert cp.matches == "stationarity"
    assert_allclose(cp.ell_star, cp.ell_stationary, rtol=1e-6)
    assert_allclose(cp.ell0, 0.3728296885, rtol=1e-6)


def test_landscape_write(consts, u0, tmp_path):
    land = landscape(consts, u0, n_ell=11, n_r=9)
    assert land.F.shape == (11, 9)
    land.write(tmp_path / "f.dat")
    lines = (tmp_path / "f.dat").read_text().splitlines()
    assert lines[0] == "ell r F" and len(lines) == 1 + 99
    assert len(lines[1].split()) == 3


def test_no_bubbles_is_radial_energy(u0):
    rep = ansatz_energy(u0)
    assert rep.energy == radial_energy(u0) and rep.delta == 0.0


def test_interaction_model_signs(consts, u0):
    inter, coup = interaction_model(consts, u0, 8, ELL, R)
    assert inter < 0 < coup


@pytest.fixture(scope="module")
def energy8(geom, u0):
    ans = assemble_ansatz(8, ELL, R, geom, u0)
    return ans, ansatz_energy(ans)


def test_energy_quadrature_consistent(energy8, u0):
    ans, rep = energy8
    assert rep.error_estimate < 1e-6 * abs(rep.energy)
    assert_allclose(rep.energy, radial_energy(u0) + rep.delta, rtol=1e-14)
    # ∫|∇U*|² equals ∫(u0^p - ΣU^p)U* since U* vanishes on ∂Ω
    assert_allclose(rep.dirichlet, rep.dirichlet_by_parts, rtol=1e-5)


def test_folded_cell_matches_full_sector(energy8):
    ans, rep = energy8
    full = ansatz_energy(ans, phi0=0.3)
    assert_allclose(full.delta, rep.delta, rtol=1e-6, atol=1e-7)


def test_energy_rejects_asymmetric(geom, u0):
    bad = assemble_ansatz(8, ELL, R, geom, u0, perturb=(1e-3, 0, 0))
    with pytest.raises(ConfigError):
        ansatz_energy(bad, QuadConfig())


def test_unprojected_needs_refinement(geom, u0):
    un = assemble_ansatz(8, ELL, R, geom, u0, projected=False)
    with pytest.raises(QuadratureError, match="above tolerance"):
        ansatz_energy(un, retries=0)
