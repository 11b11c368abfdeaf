"""The sign-changing ansatz ``U* = u0 - Σ_j PU_j`` on a polygon, its error term
``l_k`` and the associated diagnostics."""

import csv
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .bubbles import Bubble, bubble_constant
from .errors import ConfigError
from .geometry import AnnulusGeometry, PolygonConfig, SymmetryProbe, polygon_centers, symmetry_orbit
from .harmonics import L_MAX, ProjectedBubble, harmonic_coeffs, projected_bubble
from .norms import NormSampleSet, weighted_norm
from .radial import RadialSolution, odd_power

log = logging.getLogger(__name__)

QUALITY_GATE = 5.0
CHUNK = 20000


@dataclass
class Ansatz:
    """``U* = u0 - Σ_j PU_j`` (bubbles subtracted).

    ``base`` is the projected bubble on the positive x1-axis; the others are
    its rotations.  ``with_u0=False`` and ``projected=False`` are test hooks
    that drop ``u0`` and the harmonic corrections respectively.
    """

    config: PolygonConfig
    radial: RadialSolution = field(repr=False)
    bubbles: list = field(repr=False)
    base: ProjectedBubble = field(repr=False)
    symmetric: bool = True
    with_u0: bool = True
    projected: bool = True

    @property
    def k(self) -> int:
        return self.config.k

    @property
    def lam(self) -> float:
        return self.config.lam

    @property
    def centers(self) -> np.ndarray:
        return np.array([pb.bubble.xi for pb in self.bubbles])

    @property
    def geometry(self) -> AnnulusGeometry:
        return self.config.geometry

    def _correction(self, y, gradient):
        if not self.projected:
            z = np.zeros(len(y))
            return (z, np.zeros_like(y)) if gradient else z
        if self.symmetric:
            return self.base.correction.evaluate(y, gradient, m_stride=self.k, factor=self.k)
        parts = [pb.correction_value(y, gradient) for pb in self.bubbles]
        if gradient:
            return sum(p[0] for p in parts), sum(p[1] for p in parts)
        return sum(parts)

    def bubble_sums(self, y, gradient: bool = False):
        """``Σ U_j`` and ``Σ U_j^p`` (plus ``Σ ∇U_j``) of the free bubbles."""
        y = np.atleast_2d(np.asarray(y, dtype=float))
        N = y.shape[1]
        cn = bubble_constant(N) * self.lam ** ((N - 2) / 2)
        p = self.geometry.p
        s = np.zeros(len(y))
        sp = np.zeros(len(y))
        g = np.zeros_like(y) if gradient else None
        for c in self.centers:
            d = y - c
            q = 1 + self.lam**2 * np.einsum("ij,ij->i", d, d)
            u = cn * q ** (-(N - 2) / 2)
            s += u
            sp += u**p
            if gradient:
                g -= ((N - 2) * self.lam**2 * u / q)[:, None] * d
        return (s, sp, g) if gradient else (s, sp)

    def _u0(self, y, gradient):
        rho = np.linalg.norm(y, axis=1)
        if not self.with_u0:
            z = np.zeros(len(y))
            return (z, np.zeros_like(y)) if gradient else z
        if gradient:
            return self.radial(rho), (self.radial(rho, 1) / rho)[:, None] * y
        return self.radial(rho)

    def value(self, y) -> np.ndarray:
        y = np.atleast_2d(np.asarray(y, dtype=float))
        out = np.empty(len(y))
        for lo in range(0, len(y), CHUNK):
            z = y[lo:lo + CHUNK]
            out[lo:lo + CHUNK] = self._u0(z, False) - self.bubble_sums(z)[0] + self._correction(z, False)
        return out

    __call__ = value

    def eval(self, y):
        """``(U*, ∇U*)`` at points ``y``."""
        y = np.atleast_2d(np.asarray(y, dtype=float))
        val = np.empty(len(y))
        grad = np.empty_like(y)
        for lo in range(0, len(y), CHUNK):
            z = y[lo:lo + CHUNK]
            u, gu = self._u0(z, True)
            s, _, gs = self.bubble_sums(z, gradient=True)
            h, gh = self._correction(z, True)
            val[lo:lo + CHUNK] = u - s + h
            grad[lo:lo + CHUNK] = gu - gs + gh
        return val, grad


def assemble_ansatz(k: int, ell: float, r: float, geom: AnnulusGeometry, radial: RadialSolution,
                    L_max: int = L_MAX, gate: float = QUALITY_GATE,
                    perturb: Optional[Sequence[float]] = None, with_u0: bool = True,
                    projected: bool = True) -> Ansatz:
    """Build ``U*`` for ``k`` bubbles of scale ``λ = ℓk²`` on the polygon of radius ``r``.

    ``perturb`` shifts the first center (test hook for the symmetry check);
    that bubble then gets its own harmonic correction.
    """
    if geom.N != 3:
        raise ConfigError("the ansatz is implemented for N=3 only")
    cfg = PolygonConfig(k=k, r=r, ell=ell, geometry=geom)
    dist = min(r - geom.a, geom.b - r)
    if cfg.lam * dist < gate:
        raise ConfigError(
            f"configuration rejected: λ·dist(ξ, ∂Ω) = {cfg.lam * dist:.3g} < {gate}")
    centers = polygon_centers(cfg)
    base = projected_bubble(Bubble(centers[-1], cfg.lam), geom, L_max)
    bubbles = [base.rotated(2 * np.pi * j / k) for j in range(1, k)] + [base]
    symmetric = True
    if perturb is not None:
        xi = centers[0] + np.asarray(perturb, dtype=float)
        bub = Bubble(xi, cfg.lam)
        bubbles[0] = ProjectedBubble(bub, harmonic_coeffs(bub, geom, L_max), geom)
        symmetric = False
    return Ansatz(config=cfg, radial=radial, bubbles=bubbles, base=base, symmetric=symmetric,
                  with_u0=with_u0, projected=projected)


@dataclass
class SymmetryReport:
    max_deviation: float
    worst_base: np.ndarray
    n_probes: int


def symmetry_residual(ans: Ansatz, probes: Sequence[SymmetryProbe]) -> SymmetryReport:
    """Largest ``(max - min) / (1 + sup|U*|)`` of ``U*`` over each orbit."""
    worst, where = 0.0, None
    for pr in probes:
        v = ans.value(pr.orbit)
        dev = (v.max() - v.min()) / (1 + np.abs(v).max())
        if dev > worst or where is None:
            worst, where = float(dev), pr.base
    return SymmetryReport(max_deviation=worst, worst_base=where, n_probes=len(probes))


def random_probes(ans: Ansatz, n: int, seed: int = 0) -> list:
    """Symmetry orbits of ``n`` random interior points."""
    rng = np.random.default_rng(seed)
    geom = ans.geometry
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1)[:, None]
    rho = rng.uniform(geom.a, geom.b, n)
    return [symmetry_orbit(rho[i] * d[i], ans.config) for i in range(n)]


def lk_residual(ans: Ansatz, y) -> np.ndarray:
    """``l_k = |U*|^{p-1} U* - u0^p + Σ_j U_j^p`` pointwise."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    p = ans.geometry.p
    out = np.empty(len(y))
    for lo in range(0, len(y), CHUNK):
        z = y[lo:lo + CHUNK]
        u = ans._u0(z, False)
        s, sp = ans.bubble_sums(z)
        ustar = u - s + ans._correction(z, False)
        out[lo:lo + CHUNK] = odd_power(ustar, p) - odd_power(u, p) + sp
    return out


@dataclass
class DecayFit:
    k: np.ndarray
    lam: np.ndarray
    norms: np.ndarray
    argmax: np.ndarray = field(repr=False)
    slope: float
    slope_stderr: float
    target: float
    sigma: float
    stability: Optional[np.ndarray] = None
    monotone: bool = True

    @property
    def passes(self) -> bool:
        return self.slope <= self.target

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "lam", "lk_norm", "argmax_x1", "argmax_x2", "argmax_x3",
                        "density_change", "slope", "slope_stderr", "sigma"])
            for i in range(len(self.k)):
                chg = "" if self.stability is None else repr(float(self.stability[i]))
                w.writerow([int(self.k[i]), repr(float(self.lam[i])), repr(float(self.norms[i])),
                            *(repr(float(v)) for v in self.argmax[i]), chg,
                            repr(self.slope), repr(self.slope_stderr), repr(self.sigma)])


def lk_norm(ans: Ansatz, density: int = 1, seed: int = 0):
    samples = NormSampleSet.build(ans.geometry, ans.centers, ans.lam, density=density, seed=seed)
    vals = lk_residual(ans, samples.points)
    return weighted_norm(vals, ans.centers, ans.lam, "starstar", samples)


def ordered_map(fn, items, workers: int = 1) -> list:
    """``[fn(x) for x in items]``, optionally on a thread pool; order is preserved."""
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def decay_fit(k_list: Sequence[int], ell: float, r: float, geom: AnnulusGeometry,
              radial: RadialSolution, density: int = 1, check_stability: bool = True,
              L_max: int = L_MAX, projected: bool = True, workers: int = 1) -> DecayFit:
    """Least-squares slope of ``log ‖l_k‖_**`` against ``log λ``, ``λ = ℓk²``.

    ``σ = -slope - (N-2)/4`` is the margin beyond the target rate.  With
    ``check_stability`` each norm is recomputed at twice the sample density
    and the relative change is recorded.
    """
    k_list = sorted(int(k) for k in k_list)
    if len(k_list) < 2:
        raise ConfigError("decay fit needs at least two k values")

    def one(k):
        ans = assemble_ansatz(k, ell, r, geom, radial, L_max=L_max, projected=projected)
        rep = lk_norm(ans, density)
        chg = None
        if check_stability:
            fine = lk_norm(ans, 2 * density, seed=1)
            chg = abs(fine.value - rep.value) / rep.value
        log.info("k=%d λ=%.4g ‖l_k‖_**=%.6g", k, ans.lam, rep.value)
        return ans.lam, rep, chg

    out = ordered_map(one, k_list, workers)
    lams = np.array([o[0] for o in out])
    norms = np.array([o[1].value for o in out])
    arg = [o[1].argmax for o in out]
    stab = [o[2] for o in out]
    X = np.log(lams)
    coef, cov = np.polyfit(X, np.log(norms), 1, cov=True) if len(k_list) > 2 else (
        np.polyfit(X, np.log(norms), 1), np.zeros((2, 2)))
    target = -(geom.N - 2) / 4
    monotone = bool(np.all(np.diff(norms) < 0))
    if not monotone:
        warnings.warn("‖l_k‖_** is not monotone in k; decay fit may be unreliable")
    return DecayFit(k=np.array(k_list), lam=lams, norms=norms, argmax=np.array(arg),
                    slope=float(coef[0]), slope_stderr=float(np.sqrt(cov[0, 0])),
                    target=target, sigma=float(-coef[0] + target),
                    stability=np.array(stab) if check_stability else None, monotone=monotone)


@dataclass
class StencilReport:
    h: np.ndarray = field(repr=False)
    residual_h: np.ndarray = field(repr=False)
    residual_h2: np.ndarray = field(repr=False)
    ratio: float
    median_ratio: float


def _stencil_laplacian(f, y, h):
    total = -6 * f(y)
    for i in range(3):
        e = np.zeros((1, 3))
        e[0, i] = 1.0
        total += f(y + h[:, None] * e) + f(y - h[:, None] * e)
    return total / h**2


def stencil_steps(ans: Ansatz, y, rel: float = 0.1) -> np.ndarray:
    """Per-point step ``rel·(dist to nearest center + 1/λ)`` capped at a third of
    the distance to ``∂Ω``."""
    y = np.atleast_2d(y)
    geom = ans.geometry
    rho = np.linalg.norm(y, axis=1)
    dc = np.min(np.linalg.norm(y[:, None, :] - ans.centers[None], axis=-1), axis=1)
    db = np.minimum(rho - geom.a, geom.b - rho)
    return np.minimum(rel * (dc + 1 / ans.lam), db / 3)


def pde_residual_probe(ans: Ansatz, y, h=None) -> StencilReport:
    """Residual of ``-Δ_h U* = u0^p - Σ U_j^p`` at steps ``h`` and ``h/2``.

    ``ratio`` is the quotient of the Euclidean norms of the two residual
    vectors; second-order consistency gives a value near 4.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    h = stencil_steps(ans, y) if h is None else np.broadcast_to(np.asarray(h, float), (len(y),))
    rho = np.linalg.norm(y, axis=1)
    geom = ans.geometry
    if np.any(rho - 2 * h <= geom.a) or np.any(rho + 2 * h >= geom.b):
        raise ConfigError("stencil leaves the annulus; move samples inward or reduce h")
    p = geom.p
    target = ans._u0(y, False) ** p - ans.bubble_sums(y)[1]
    res = [-_stencil_laplacian(ans.value, y, hh) - target for hh in (h, h / 2)]
    ratio = float(np.linalg.norm(res[0]) / np.linalg.norm(res[1]))
    pointwise = np.abs(res[0]) / np.maximum(np.abs(res[1]), np.finfo(float).tiny)
    return StencilReport(h=h, residual_h=res[0], residual_h2=res[1], ratio=ratio,
                         median_ratio=float(np.median(pointwise)))


def probe_points(ans: Ansatz, n: int = 200, seed: int = 0) -> np.ndarray:
    """Half near the bubble centers (within a few ``1/λ``), half in the bulk."""
    rng = np.random.default_rng(seed)
    geom = ans.geometry
    near_n = n // 2
    idx = rng.integers(0, ans.k, near_n)
    near = ans.centers[idx] + rng.normal(size=(near_n, 3)) * (2.0 / ans.lam)
    d = rng.normal(size=(n - near_n, 3))
    d /= np.linalg.norm(d, axis=1)[:, None]
    width = geom.b - geom.a
    rho = rng.uniform(geom.a + 0.05 * width, geom.b - 0.05 * width, n - near_n)
    return np.vstack([near, rho[:, None] * d])


def field_slice(ans: Ansatz, n: int = 201):
    """``(x1, x2, U*, l_k)`` on the equatorial plane, points inside the annulus only."""
    b = ans.geometry.b
    g = np.linspace(-b, b, n)
    X1, X2 = np.meshgrid(g, g, indexing="ij")
    pts = np.column_stack([X1.ravel(), X2.ravel(), np.zeros(X1.size)])
    rr = np.linalg.norm(pts, axis=1)
    pts = pts[(rr > ans.geometry.a) & (rr < b)]
    return np.column_stack([pts[:, 0], pts[:, 1], ans.value(pts), lk_residual(ans, pts)])


def write_slice(path, data: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x1", "x2", "ustar", "lk"])
        for row in data:
            w.writerow([repr(float(v)) for v in row])
