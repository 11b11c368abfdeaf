"""Projected bubbles on a 3D annulus via a harmonic correction.

``PU = U - h`` where ``h`` is harmonic in the annulus and equals ``U`` on both
boundary spheres.  ``h`` is expanded in solid real spherical harmonics

    h(ρ, θ, φ) = Σ_{l,m} [A_lm (ρ/b)^l + B_lm (a/ρ)^{l+1}] Y_lm(θ, φ),

i.e. the basis ``ρ^l Y_lm`` and ``ρ^{-(l+1)} Y_lm`` rescaled so the 2×2
boundary systems stay well conditioned for large ``l``.  The ``Y_lm`` are
orthonormal on the unit sphere and built from fully normalised associated
Legendre functions.
"""

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import roots_legendre

from .bubbles import Bubble, bubble_eval, bubble_value
from .errors import ConfigError, TruncationError
from .geometry import AnnulusGeometry

L_MAX = 48
BOUNDARY_TOL = 1e-6
CHUNK = 20000


def _seed(m: int) -> float:
    """``P̃_m^m(θ) / sin^m θ`` for the normalisation ``∫ P̃² dx = 1``."""
    c = 1 / np.sqrt(2.0)
    for i in range(1, m + 1):
        c *= np.sqrt((2 * i + 1) / (2 * i))
    return c


def legendre_column(L: int, m: int, x, s, divided: bool = False) -> np.ndarray:
    """``P̃_l^m(x)`` for ``l = m..L`` (rows), no Condon–Shortley phase.

    With ``divided=True`` returns ``P̃_l^m / sin θ`` (``m >= 1``), computed by
    the same three-term recurrence from a seed ``∝ sin^{m-1} θ`` so it stays
    finite on the polar axis.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty((L - m + 1,) + x.shape)
    if divided:
        if m < 1:
            raise ValueError("divided column needs m >= 1")
        out[0] = _seed(m) * s ** (m - 1)
    else:
        out[0] = _seed(m) * s**m
    if L > m:
        out[1] = np.sqrt(2 * m + 3) * x * out[0]
    for l in range(m + 2, L + 1):
        a = np.sqrt((4 * l * l - 1) / (l * l - m * m))
        b = np.sqrt(((l - 1) ** 2 - m * m) / (4 * (l - 1) ** 2 - 1))
        out[l - m] = a * (x * out[l - m - 1] - b * out[l - m - 2])
    return out


def _norm_m(m: int) -> float:
    return 1 / np.sqrt(2 * np.pi) if m == 0 else 1 / np.sqrt(np.pi)


def sphere_quadrature(L: int):
    """Gauss–Legendre in ``cos θ`` times uniform azimuth, exact to degree ``2L``."""
    n = 2 * L
    x, w = roots_legendre(n)
    phi = 2 * np.pi * np.arange(n) / n
    return x, w, phi


def sh_transform(values: np.ndarray, L: int, x, w):
    """Real spherical-harmonic coefficients of samples on the quadrature grid.

    ``values`` has shape ``(n_theta, n_phi)``.  Returns ``(cos_coef, sin_coef)``,
    each ``(L+1, L+1)`` indexed ``[l, m]``.
    """
    n_phi = values.shape[1]
    F = np.fft.rfft(values, axis=1) * (2 * np.pi / n_phi)
    s = np.sqrt(1 - x**2)
    cos_c = np.zeros((L + 1, L + 1))
    sin_c = np.zeros((L + 1, L + 1))
    for m in range(L + 1):
        P = legendre_column(L, m, x, s)
        cos_c[m:, m] = _norm_m(m) * (P * w) @ F[:, m].real
        if m > 0:
            sin_c[m:, m] = -_norm_m(m) * (P * w) @ F[:, m].imag
    return cos_c, sin_c


def _spherical(y):
    y = np.atleast_2d(np.asarray(y, dtype=float))
    rho = np.linalg.norm(y, axis=1)
    cyl = np.hypot(y[:, 0], y[:, 1])
    x = y[:, 2] / rho
    s = cyl / rho
    phi = np.arctan2(y[:, 1], y[:, 0])
    return rho, x, s, phi


@dataclass
class HarmonicCorrection:
    """Coefficients of the harmonic extension of a bubble's boundary values."""

    a: float
    b: float
    L_max: int
    A_cos: np.ndarray = field(repr=False)
    A_sin: np.ndarray = field(repr=False)
    B_cos: np.ndarray = field(repr=False)
    B_sin: np.ndarray = field(repr=False)
    data_inner: tuple = field(default=None, repr=False)
    data_outer: tuple = field(default=None, repr=False)
    residual_inner: float = float("nan")
    residual_outer: float = float("nan")

    @property
    def alpha(self) -> tuple:
        """(cos, sin) coefficients of ``ρ^l Y_lm`` in the unscaled basis."""
        l = np.arange(self.L_max + 1)[:, None]
        return self.A_cos / self.b**l, self.A_sin / self.b**l

    @property
    def beta(self) -> tuple:
        """(cos, sin) coefficients of ``ρ^{-(l+1)} Y_lm`` in the unscaled basis."""
        l = np.arange(self.L_max + 1)[:, None]
        return self.B_cos * self.a ** (l + 1), self.B_sin * self.a ** (l + 1)

    @property
    def boundary_residual(self) -> float:
        return max(self.residual_inner, self.residual_outer)

    def system_residual(self) -> float:
        """Max defect of the per-mode 2×2 boundary systems."""
        q = self.a / self.b
        l = np.arange(self.L_max + 1)[:, None]
        worst = 0.0
        for A, B, (ca, cb) in (
            (self.A_cos, self.B_cos, (self.data_inner[0], self.data_outer[0])),
            (self.A_sin, self.B_sin, (self.data_inner[1], self.data_outer[1])),
        ):
            r_in = A * q**l + B - ca
            r_out = A + B * q ** (l + 1) - cb
            scale = max(np.abs(ca).max(), np.abs(cb).max(), 1e-300)
            worst = max(worst, np.abs(r_in).max() / scale, np.abs(r_out).max() / scale)
        return float(worst)

    def evaluate(self, y, gradient: bool = False, m_stride: int = 1, factor: float = 1.0):
        """``h`` (and ``∇h``) at Cartesian points ``y`` of shape ``(n, 3)``.

        Only orders ``m`` divisible by ``m_stride`` are summed and the result
        is multiplied by ``factor``; ``m_stride = factor = k`` gives the sum of
        the ``k`` copies of ``h`` rotated about the x3-axis by ``2πj/k``.
        """
        y = np.atleast_2d(np.asarray(y, dtype=float))
        n = len(y)
        val = np.empty(n)
        grad = np.empty((n, 3)) if gradient else None
        for lo in range(0, n, CHUNK):
            sl = slice(lo, min(lo + CHUNK, n))
            v, g = self._evaluate_chunk(y[sl], gradient, m_stride)
            val[sl] = v
            if gradient:
                grad[sl] = g
        val *= factor
        if gradient:
            grad *= factor
            return val, grad
        return val

    def _evaluate_chunk(self, y, gradient, m_stride):
        L = self.L_max
        rho, x, s, phi = _spherical(y)
        l = np.arange(L + 1)[:, None]
        pa = (rho[None, :] / self.b) ** l
        pb = (self.a / rho[None, :]) ** (l + 1)
        val = np.zeros(len(y))
        d_rho = np.zeros(len(y))
        d_th = np.zeros(len(y))
        d_ph = np.zeros(len(y))
        p1 = legendre_column(L, 1, x, s) if gradient and L >= 1 else None
        for m in range(0, L + 1, m_stride):
            ls = l[m:]
            P = legendre_column(L, m, x, s)
            cm, sm = np.cos(m * phi), np.sin(m * phi)
            Rc = self.A_cos[m:, m, None] * pa[m:] + self.B_cos[m:, m, None] * pb[m:]
            Rs = self.A_sin[m:, m, None] * pa[m:] + self.B_sin[m:, m, None] * pb[m:]
            nm = _norm_m(m)
            radial = Rc * cm + Rs * sm
            val += nm * np.sum(radial * P, axis=0)
            if not gradient:
                continue
            dRc = (self.A_cos[m:, m, None] * ls * pa[m:]
                   - self.B_cos[m:, m, None] * (ls + 1) * pb[m:]) / rho
            dRs = (self.A_sin[m:, m, None] * ls * pa[m:]
                   - self.B_sin[m:, m, None] * (ls + 1) * pb[m:]) / rho
            d_rho += nm * np.sum((dRc * cm + dRs * sm) * P, axis=0)
            if m == 0:
                dP = np.zeros_like(P)
                dP[1:] = -np.sqrt(ls[1:] * (ls[1:] + 1)) * p1
            else:
                Q = legendre_column(L, m, x, s, divided=True)
                dP = ls * x * Q
                c = np.sqrt((2 * ls[1:] + 1) / (2 * ls[1:] - 1) * (ls[1:] ** 2 - m * m))
                dP[1:] -= c * Q[:-1]
                d_ph += nm * m * np.sum((Rs * cm - Rc * sm) * Q, axis=0) / rho
            d_th += nm * np.sum(radial * dP, axis=0) / rho
        if not gradient:
            return val, None
        cp, sp_ = np.cos(phi), np.sin(phi)
        e_rho = np.column_stack([s * cp, s * sp_, x])
        e_th = np.column_stack([x * cp, x * sp_, -s])
        e_ph = np.column_stack([-sp_, cp, np.zeros_like(cp)])
        g = d_rho[:, None] * e_rho + d_th[:, None] * e_th + d_ph[:, None] * e_ph
        return val, g

    def to_dict(self) -> dict:
        return {
            "a": self.a, "b": self.b, "L_max": self.L_max,
            "basis": "A (rho/b)^l Y_lm + B (a/rho)^(l+1) Y_lm, orthonormal real Y_lm",
            "A_cos": self.A_cos.tolist(), "A_sin": self.A_sin.tolist(),
            "B_cos": self.B_cos.tolist(), "B_sin": self.B_sin.tolist(),
            "boundary_residual": self.boundary_residual,
        }

    def dump_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)


def _boundary_probe(radius: float, center: np.ndarray, n: int = 1200) -> np.ndarray:
    """Fibonacci points on a sphere plus the points nearest/farthest from ``center``."""
    i = np.arange(n) + 0.5
    z = 1 - 2 * i / n
    t = np.pi * (1 + 5**0.5) * i
    pts = np.column_stack([np.sqrt(1 - z * z) * np.cos(t), np.sqrt(1 - z * z) * np.sin(t), z])
    c = np.linalg.norm(center)
    if c > 0:
        pts = np.vstack([pts, center / c, -center / c])
    return radius * pts


def harmonic_coeffs(bub: Bubble, geom: AnnulusGeometry, L_max: int = L_MAX,
                    boundary_tol: Optional[float] = BOUNDARY_TOL,
                    require_interior: bool = True) -> HarmonicCorrection:
    """Solve for the harmonic extension of ``U|∂Ω``.

    ``boundary_tol=None`` skips the truncation check.  With
    ``require_interior=False`` any center off the two boundary spheres is
    accepted (e.g. ``ξ = 0``, whose extension is purely radial).
    """
    if geom.N != 3:
        raise ConfigError(f"projected bubbles are implemented for N=3 only, got N={geom.N}")
    if bub.N != 3:
        raise ConfigError("bubble center must be a point of R^3")
    xi = bub.xi
    rc = np.linalg.norm(xi)
    if require_interior and not geom.a < rc < geom.b:
        raise ConfigError("bubble center must lie strictly inside the annulus")
    if rc in (geom.a, geom.b):
        raise ConfigError("bubble center lies on the boundary")
    x, w, phi = sphere_quadrature(L_max)
    s = np.sqrt(1 - x**2)
    unit = np.stack([s[:, None] * np.cos(phi)[None, :], s[:, None] * np.sin(phi)[None, :],
                     np.broadcast_to(x[:, None], (len(x), len(phi)))], axis=-1)
    data = []
    for radius in (geom.a, geom.b):
        vals = bubble_value(xi, bub.lam, radius * unit)
        data.append(sh_transform(vals, L_max, x, w))
    (ca_c, ca_s), (cb_c, cb_s) = data
    q = geom.a / geom.b
    l = np.arange(L_max + 1)[:, None]
    det = q ** (2 * l + 1) - 1

    def solve(ca, cb):
        return (ca * q ** (l + 1) - cb) / det, (cb * q**l - ca) / det

    A_cos, B_cos = solve(ca_c, cb_c)
    A_sin, B_sin = solve(ca_s, cb_s)
    mask = np.tril(np.ones((L_max + 1, L_max + 1), dtype=bool))
    A_sin[:, 0] = B_sin[:, 0] = 0.0
    for arr in (A_cos, B_cos, A_sin, B_sin):
        arr[~mask] = 0.0
    hc = HarmonicCorrection(geom.a, geom.b, L_max, A_cos, A_sin, B_cos, B_sin,
                            data_inner=(ca_c, ca_s), data_outer=(cb_c, cb_s))
    for radius, attr in ((geom.a, "residual_inner"), (geom.b, "residual_outer")):
        pts = _boundary_probe(radius, xi)
        setattr(hc, attr, float(np.max(np.abs(bubble_value(xi, bub.lam, pts) - hc.evaluate(pts)))))
    if boundary_tol is not None and hc.boundary_residual > boundary_tol:
        raise TruncationError(
            f"boundary residual {hc.boundary_residual:.2e} exceeds {boundary_tol:.1e} "
            f"at L_max={L_max}", stage="harmonics")
    return hc


def _rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass
class ProjectedBubble:
    """``PU`` for one bubble.

    ``correction`` is stored for the center rotated by ``-angle`` about the
    x3-axis, so copies of one computation serve a whole polygon.
    """

    bubble: Bubble
    correction: HarmonicCorrection
    geometry: AnnulusGeometry
    angle: float = 0.0

    @property
    def L_max(self) -> int:
        return self.correction.L_max

    def rotated(self, angle: float) -> "ProjectedBubble":
        R = _rot_z(angle)
        bub = Bubble(R @ self.bubble.xi, self.bubble.lam)
        return ProjectedBubble(bub, self.correction, self.geometry, self.angle + angle)

    def correction_value(self, y, gradient=False):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        if self.angle == 0.0:
            return self.correction.evaluate(y, gradient)
        R = _rot_z(self.angle)
        out = self.correction.evaluate(y @ R, gradient)  # rows: R^T y
        if gradient:
            return out[0], out[1] @ R.T
        return out

    def value(self, y) -> np.ndarray:
        y = np.atleast_2d(np.asarray(y, dtype=float))
        return bubble_value(self.bubble.xi, self.bubble.lam, y) - self.correction_value(y)

    def eval(self, y):
        """``(PU, ∇PU)`` at points ``y``."""
        y = np.atleast_2d(np.asarray(y, dtype=float))
        u, gu, _ = bubble_eval(self.bubble, y)
        h, gh = self.correction_value(y, gradient=True)
        return u - h, gu - gh


def projected_bubble(bub: Bubble, geom: AnnulusGeometry, L_max: int = L_MAX,
                     check: bool = True) -> ProjectedBubble:
    """Build ``PU`` for a bubble, reusing the x1-axis computation by rotation
    when the center lies in the (x1, x2)-plane."""
    xi = bub.xi
    if xi[2] == 0.0 and np.hypot(xi[0], xi[1]) > 0:
        angle = float(np.arctan2(xi[1], xi[0]))
        base = Bubble((np.hypot(xi[0], xi[1]), 0.0, 0.0), bub.lam)
    else:
        angle, base = 0.0, bub
    hc = harmonic_coeffs(base, geom, L_max, boundary_tol=BOUNDARY_TOL if check else None)
    return ProjectedBubble(bub, hc, geom, angle)


def projected_bubble_eval(pb: ProjectedBubble, y):
    return pb.eval(y)


@dataclass
class DefectReport:
    sup_h: float
    argmax: np.ndarray
    min_h: float


def projection_defect(pb: ProjectedBubble, sample_pts) -> DefectReport:
    """``sup (U - PU) = sup h`` over the given samples."""
    pts = np.atleast_2d(np.asarray(sample_pts, dtype=float))
    h = pb.correction_value(pts)
    i = int(np.argmax(h))
    return DefectReport(sup_h=float(h[i]), argmax=pts[i], min_h=float(np.min(h)))


def defect_samples(geom: AnnulusGeometry, center, n_radial: int = 400, n_probe: int = 1200):
    """Boundary probes on both spheres plus the radial segment through ``center``."""
    center = np.asarray(center, dtype=float)
    u = center / np.linalg.norm(center)
    seg = np.linspace(geom.a, geom.b, n_radial)[:, None] * u
    return np.vstack([_boundary_probe(geom.a, center, n_probe),
                      _boundary_probe(geom.b, center, n_probe), seg])


@dataclass
class DefectFit:
    lams: np.ndarray
    sup_h: np.ndarray
    slope: float
    intercept: float


def projection_defect_fit(geom: AnnulusGeometry, center, lams, L_max: int = L_MAX) -> DefectFit:
    """Least-squares slope of ``log sup h`` against ``log λ``."""
    lams = np.asarray(lams, dtype=float)
    sups = []
    for lam in lams:
        pb = projected_bubble(Bubble(center, lam), geom, L_max)
        sups.append(projection_defect(pb, defect_samples(geom, center)).sup_h)
    sups = np.array(sups)
    slope, intercept = np.polyfit(np.log(lams), np.log(sups), 1)
    return DefectFit(lams=lams, sup_h=sups, slope=float(slope), intercept=float(intercept))
