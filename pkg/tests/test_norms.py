import numpy as np
import pytest
from numpy.testing import assert_allclose

from annulus_bubble_lab.bubbles import bubble_value
from annulus_bubble_lab.errors import ConfigError, NumericalError
from annulus_bubble_lab.geometry import PolygonConfig, polygon_centers
from annulus_bubble_lab.norms import (
    NormSampleSet,
    norm_weight,
    weight_tail_sum,
    weighted_norm,
)

XI = np.array([[1.5, 0.0, 0.0]])


def single_samples(geom, lam, density=1):
    return NormSampleSet.build(geom, XI, lam, density=density)


def test_samples_inside_and_near_centers(geom):
    cfg = PolygonConfig(k=8, r=1.5, ell=1.0, geometry=geom)
    s = NormSampleSet.build(geom, polygon_centers(cfg), cfg.lam)
    rr = np.linalg.norm(s.points, axis=1)
    assert np.all((rr > 1) & (rr < 2))
    assert np.all(s.count_near(10 / cfg.lam) >= 200)


def test_zero_field(geom):
    rep = weighted_norm(lambda y: np.zeros(len(y)), XI, 30.0, "star", single_samples(geom, 30.0))
    assert rep.value == 0.0
    assert rep.tau == 0.5


def test_single_bubble_star(geom):
    lam = 40.0
    s = single_samples(geom, lam)
    f = lambda y: bubble_value(XI[0], lam, y)
    rep = weighted_norm(f, XI, lam, "star", s)
    # at the center weight⁻¹ λ^{-1/2} U = C_3
    c3 = 3**0.25
    at_center = f(XI) / norm_weight(XI, XI, lam, "star")
    assert_allclose(at_center, c3, rtol=1e-14)
    nearest = s.points[[np.argmin(np.linalg.norm(s.points - XI, axis=1))]]
    v_near = weighted_norm(f, XI, lam, "star", nearest).value
    assert c3 / 2 <= v_near <= c3 + 1e-12
    # (1+t)/sqrt(1+t²) peaks at t=1, so the sup is √2·C_3
    assert_allclose(rep.value, np.sqrt(2) * c3, rtol=1e-3)
    assert rep.value <= np.sqrt(2) * c3 + 1e-12


def test_starstar_scale_invariant(geom):
    vals = []
    for lam in (25.0, 50.0, 100.0):
        f = lambda y, lam=lam: bubble_value(XI[0], lam, y) ** 5
        vals.append(weighted_norm(f, XI, lam, "starstar", single_samples(geom, lam)).value)
    assert max(vals) / min(vals) < 1.05


def test_homogeneous_and_monotone(geom):
    lam = 30.0
    s1 = single_samples(geom, lam)
    s2 = single_samples(geom, lam, density=2)
    f = lambda y: np.sin(3 * y[:, 0]) * bubble_value(XI[0], lam, y)
    v = weighted_norm(f, XI, lam, "star", s1).value
    assert_allclose(weighted_norm(lambda y: -2.5 * f(y), XI, lam, "star", s1).value, 2.5 * v,
                    rtol=1e-14)
    union = np.vstack([s1.points, s2.points])
    assert weighted_norm(f, XI, lam, "star", union).value >= v


def test_precomputed_values_and_errors(geom):
    s = single_samples(geom, 20.0)
    vals = np.ones(len(s))
    assert weighted_norm(vals, XI, 20.0, "star", s).value > 0
    vals[3] = np.nan
    with pytest.raises(NumericalError, match="sample point"):
        weighted_norm(vals, XI, 20.0, "star", s)
    vals[3] = 1.0
    with pytest.raises(ConfigError):
        weighted_norm(vals, XI, 20.0, "sup", s)
    with pytest.raises(ConfigError):
        weighted_norm(vals, np.empty((0, 3)), 20.0, "star", s)


def test_tail_sum_k2(geom):
    cfg = PolygonConfig(k=2, r=1.5, ell=1.0, geometry=geom)
    assert_allclose(weight_tail_sum(polygon_centers(cfg), cfg.lam), (2 * 1.5 * cfg.lam) ** -0.5,
                    rtol=1e-14)


def test_tail_sum_tau_zero_limit(geom):
    cfg = PolygonConfig(k=9, r=1.5, ell=1.0, geometry=geom)
    assert_allclose(weight_tail_sum(polygon_centers(cfg), cfg.lam, tau=1e-12), 8, rtol=1e-9)


def test_tail_sum_bounded_in_k(geom):
    vals = []
    for k in (8, 16, 32, 64):
        cfg = PolygonConfig(k=k, r=1.5, ell=0.5, geometry=geom)
        vals.append(weight_tail_sum(polygon_centers(cfg), cfg.lam))
    assert max(vals) / min(vals) < 3
