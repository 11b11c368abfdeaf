import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from annulus_bubble_lab.bubbles import Bubble, bubble_value
from annulus_bubble_lab.errors import ConfigError, TruncationError
from annulus_bubble_lab.geometry import AnnulusGeometry, PolygonConfig, polygon_centers
from annulus_bubble_lab.harmonics import (
    defect_samples,
    harmonic_coeffs,
    legendre_column,
    projected_bubble,
    projection_defect,
    projection_defect_fit,
    sh_transform,
    sphere_quadrature,
)
from oracles import fd_laplacian, zonal_harmonic_extension


@pytest.fixture(scope="module")
def pb50(geom):
    return projected_bubble(Bubble((1.5, 0.0, 0.0), 50.0), geom, 48)


def random_interior(n, seed, a=1.0, b=2.0):
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1)[:, None]
    return d * rng.uniform(a, b, (n, 1))


def test_legendre_orthonormal():
    x, w, _ = sphere_quadrature(30)
    s = np.sqrt(1 - x**2)
    for m in (0, 1, 5, 17):
        P = legendre_column(30, m, x, s)
        assert_allclose((P * w) @ P.T, np.eye(31 - m), atol=1e-13)


def test_legendre_divided_matches():
    x = np.linspace(-0.95, 0.95, 9)
    s = np.sqrt(1 - x**2)
    for m in (1, 3):
        assert_allclose(legendre_column(12, m, x, s, divided=True) * s,
                        legendre_column(12, m, x, s), rtol=1e-13, atol=1e-15)


def test_transform_recovers_single_harmonic():
    L = 8
    x, w, phi = sphere_quadrature(L)
    s = np.sqrt(1 - x**2)
    P = legendre_column(L, 3, x, s)[5 - 3]
    vals = P[:, None] * np.sin(3 * phi)[None, :] / np.sqrt(np.pi)
    cos_c, sin_c = sh_transform(vals, L, x, w)
    expected = np.zeros_like(sin_c)
    expected[5, 3] = 1.0
    assert_allclose(sin_c, expected, atol=1e-13)
    assert np.abs(cos_c).max() < 1e-13


def test_centered_bubble_is_radial(geom):
    lam = 3.0
    hc = harmonic_coeffs(Bubble((0.0, 0.0, 0.0), lam), geom, 12, require_interior=False)
    Ua = bubble_value([0, 0, 0], lam, [1.0, 0, 0])
    Ub = bubble_value([0, 0, 0], lam, [2.0, 0, 0])
    # h = α + β/ρ with h(1) = Ua, h(2) = Ub
    beta = 2 * (Ua - Ub)
    alpha = Ua - beta
    al, be = hc.alpha[0][0, 0], hc.beta[0][0, 0]
    y00 = 1 / np.sqrt(4 * np.pi)
    assert_allclose([al * y00, be * y00], [alpha, beta], rtol=1e-12)
    rest = np.abs(hc.A_cos).copy()
    rest[0, 0] = 0.0
    assert rest.max() < 1e-12 * abs(hc.A_cos[0, 0])


def test_center_checks(geom):
    with pytest.raises(ConfigError):
        harmonic_coeffs(Bubble((0.0, 0.0, 0.0), 3.0), geom)
    with pytest.raises(ConfigError):
        harmonic_coeffs(Bubble((1.5, 0.0, 0.0, 0.0), 3.0), AnnulusGeometry(1, 2, 4))


def test_axis_center_has_no_sine_terms(pb50):
    hc = pb50.correction
    assert np.abs(hc.A_sin).max() == 0.0 or np.abs(hc.A_sin).max() < 1e-15
    assert np.abs(hc.B_sin).max() < 1e-15


def test_boundary_residual_and_2x2_consistency(pb50):
    hc = pb50.correction
    assert hc.boundary_residual < 1e-6
    assert hc.system_residual() < 1e-14


def test_truncation_convergence(geom):
    bub = Bubble((1.5, 0.0, 0.0), 10.0)  # λ·dist = 5
    r12 = harmonic_coeffs(bub, geom, 12, boundary_tol=None).boundary_residual
    r24 = harmonic_coeffs(bub, geom, 24, boundary_tol=None).boundary_residual
    assert r24 * 4 <= r12


def test_truncation_error_raised(geom):
    with pytest.raises(TruncationError):
        harmonic_coeffs(Bubble((1.5, 0.0, 0.0), 200.0), geom, 8)


def test_matches_zonal_oracle(geom):
    center = (1.2, 0.6, 0.5)
    lam = 12.0
    pb = projected_bubble(Bubble(center, lam), geom, 48)
    ref = zonal_harmonic_extension(center, lam, 1.0, 2.0)
    y = random_interior(200, 5)
    assert_allclose(pb.correction_value(y), ref(y), atol=1e-9)


def test_rotated_copy_matches_direct(geom):
    ang = 2 * np.pi / 7
    xi = 1.5 * np.array([np.cos(ang), np.sin(ang), 0.0])
    pb = projected_bubble(Bubble(xi, 20.0), geom)
    assert pb.angle == pytest.approx(ang)
    direct = harmonic_coeffs(Bubble(xi, 20.0), geom)
    y = random_interior(100, 6)
    assert_allclose(pb.correction_value(y), direct.evaluate(y), atol=1e-12)


def test_gradient_matches_fd(pb50):
    y = random_interior(60, 7, 1.05, 1.95)
    y[0] = [0.0, 0.0, 1.5]  # polar axis
    pr = pb50.rotated(0.4)
    _, g = pr.eval(y)
    h = 1e-6
    fd = np.array([(pr.value(y + h * e) - pr.value(y - h * e)) / (2 * h) for e in np.eye(3)]).T
    assert_allclose(g, fd, rtol=1e-6, atol=1e-6 * np.abs(g).max())


def test_boundary_condition(pb50):
    u = random_interior(500, 8)
    u /= np.linalg.norm(u, axis=1)[:, None]
    assert np.abs(pb50.value(np.vstack([u, 2 * u]))).max() < 1e-6


def test_interior_positivity_and_maximum_principle(pb50):
    y = random_interior(1000, 9)
    assert np.all(pb50.value(y) > 0)
    h = pb50.correction_value(y)
    assert h.min() >= -1e-9
    sup_bdry = bubble_value(pb50.bubble.xi, 50.0, [1.0, 0, 0])
    assert h.max() <= sup_bdry + 1e-9


def test_projected_laplacian_near_center(pb50):
    rng = np.random.default_rng(10)
    y = np.array([1.5, 0, 0]) + rng.normal(size=(20, 3)) * 0.02
    f = pb50.value
    U = bubble_value(pb50.bubble.xi, 50.0, y)
    lap = -fd_laplacian(f, y, 2e-4)
    assert_allclose(lap, U**5, rtol=1e-4)


def test_defect_equals_boundary_sup(pb50, geom):
    rep = projection_defect(pb50, defect_samples(geom, (1.5, 0, 0)))
    sup_bdry = bubble_value((1.5, 0, 0), 50.0, [1.0, 0, 0])
    assert_allclose(rep.sup_h, sup_bdry, rtol=1e-6)
    assert abs(np.linalg.norm(rep.argmax) - 1.0) < 1e-12 or abs(np.linalg.norm(rep.argmax) - 2.0) < 1e-12
    assert rep.min_h >= -1e-9


def test_defect_rate(geom):
    fit = projection_defect_fit(geom, (1.5, 0, 0), [25, 50, 100, 200])
    assert abs(fit.slope + 0.5) < 0.05


def test_polygon_sum_rotation_invariant(geom):
    cfg = PolygonConfig(k=6, r=1.5, ell=1.0, geometry=geom)
    centers = polygon_centers(cfg)
    base = projected_bubble(Bubble(centers[-1], cfg.lam), geom)
    y = random_interior(50, 11)
    direct = sum(base.rotated(np.arctan2(c[1], c[0])).correction_value(y) for c in centers)
    fast = base.correction.evaluate(y, m_stride=6, factor=6)
    assert_allclose(fast, direct, atol=1e-10)
    R = np.array([[np.cos(np.pi / 3), -np.sin(np.pi / 3), 0], [np.sin(np.pi / 3), np.cos(np.pi / 3), 0], [0, 0, 1]])
    assert_allclose(base.correction.evaluate(y @ R.T, m_stride=6, factor=6), fast, atol=1e-10)


def test_json_dump(pb50, tmp_path):
    path = tmp_path / "coef.json"
    pb50.correction.dump_json(path)
    data = json.loads(path.read_text())
    assert data["L_max"] == 48
    assert np.asarray(data["A_cos"]).shape == (49, 49)
