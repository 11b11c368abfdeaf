"""Annulus geometry, polygon configurations and the discrete symmetry group."""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gamma

from .errors import ConfigError

DEFAULT_ETA = 1e-2
ORBIT_TOL = 1e-12


@dataclass(frozen=True)
class AnnulusGeometry:
    """The annulus ``a < |x| < b`` in ``R^N``."""

    a: float
    b: float
    N: int = 3

    def __post_init__(self):
        if not (np.isfinite(self.a) and np.isfinite(self.b)):
            raise ConfigError("annulus radii must be finite")
        if not 0 < self.a < self.b:
            raise ConfigError(f"annulus requires 0 < a < b, got a={self.a}, b={self.b}")
        if int(self.N) != self.N or self.N < 3:
            raise ConfigError(f"dimension N must be an integer >= 3, got {self.N}")

    @property
    def p(self) -> float:
        return (self.N + 2) / (self.N - 2)

    @property
    def crit(self) -> float:
        """Critical Sobolev exponent 2* = 2N/(N-2)."""
        return 2 * self.N / (self.N - 2)

    @property
    def sphere_area(self) -> float:
        """Area of the unit sphere S^{N-1}."""
        return 2 * np.pi ** (self.N / 2) / gamma(self.N / 2)

    def scaled(self, t: float) -> "AnnulusGeometry":
        """The annulus (a/t, b/t)."""
        return AnnulusGeometry(self.a / t, self.b / t, self.N)

    def contains(self, y, closed=True, tol=1e-12) -> np.ndarray:
        rho = np.linalg.norm(np.atleast_2d(y), axis=-1)
        if closed:
            return (rho >= self.a - tol) & (rho <= self.b + tol)
        return (rho > self.a) & (rho < self.b)


@dataclass(frozen=True)
class PolygonConfig:
    """k bubble centers on a regular polygon of radius r, concentration ell*k^2."""

    k: int
    r: float
    ell: float
    geometry: AnnulusGeometry
    eta: float = DEFAULT_ETA

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ConfigError(f"k must be a positive integer, got {self.k}")
        if not self.geometry.a < self.r < self.geometry.b:
            raise ConfigError(
                f"polygon radius r={self.r} must lie in ({self.geometry.a}, {self.geometry.b})"
            )
        if not 0 < self.eta < 1:
            raise ConfigError("eta must lie in (0, 1)")
        if not self.eta <= self.ell <= 1 / self.eta:
            raise ConfigError(f"ell={self.ell} outside [{self.eta}, {1 / self.eta}]")

    @property
    def lam(self) -> float:
        return self.ell * self.k**2

    @property
    def N(self) -> int:
        return self.geometry.N


def polygon_centers(cfg: PolygonConfig) -> np.ndarray:
    """Vertices ``r (cos(2 pi j/k), sin(2 pi j/k), 0, ..., 0)``, j = 1..k.

    Returned as a ``(k, N)`` array; row ``j-1`` holds vertex ``j`` so the last
    row is the vertex on the positive x1-axis.
    """
    j = np.arange(1, cfg.k + 1)
    ang = 2 * np.pi * j / cfg.k
    pts = np.zeros((cfg.k, cfg.N))
    pts[:, 0] = cfg.r * np.cos(ang)
    pts[:, 1] = cfg.r * np.sin(ang)
    # exact vertex on the x1-axis, cos(2 pi) rounds to 1 anyway
    pts[-1] = 0.0
    pts[-1, 0] = cfg.r
    return pts


def rotation_xy(angle: float, N: int) -> np.ndarray:
    """Rotation by ``angle`` in the (x1, x2)-plane of R^N."""
    R = np.eye(N)
    c, s = np.cos(angle), np.sin(angle)
    R[0, 0], R[0, 1], R[1, 0], R[1, 1] = c, -s, s, c
    return R


@dataclass
class SymmetryProbe:
    base: np.ndarray
    orbit: np.ndarray = field(repr=False)
    k: int = 1

    @property
    def size(self) -> int:
        return len(self.orbit)


def _dedupe(points: np.ndarray, tol: float) -> np.ndarray:
    keep = []
    for p in points:
        if not any(np.max(np.abs(p - q)) <= tol for q in keep):
            keep.append(p)
    return np.array(keep)


def symmetry_orbit(y, cfg: PolygonConfig, tol: float = ORBIT_TOL) -> SymmetryProbe:
    """Orbit of ``y`` under rotations by 2 pi/k in (x1, x2) and flips of x2..xN.

    The group is generated by these maps; every element is a rotation by
    ``2 pi j/k`` composed with a subset of coordinate flips, so enumerating
    ``k * 2^(N-1)`` products and removing duplicates gives the full orbit.
    """
    y = np.asarray(y, dtype=float)
    geom = cfg.geometry
    N = geom.N
    if y.shape != (N,):
        raise ConfigError(f"point must have shape ({N},)")
    rho = np.linalg.norm(y)
    if rho < geom.a - 1e-12 or rho > geom.b + 1e-12:
        raise ConfigError(f"|y|={rho} outside [{geom.a}, {geom.b}]")
    flips = np.array(np.meshgrid(*[[1.0, -1.0]] * (N - 1), indexing="ij")).reshape(N - 1, -1).T
    pts = []
    for j in range(cfg.k):
        R = rotation_xy(2 * np.pi * j / cfg.k, N)
        for f in flips:
            s = np.concatenate(([1.0], f))
            pts.append(R @ (s * y))
    # sorted before deduplication so the orbit order is deterministic
    pts = np.array(pts)
    orbit = _dedupe(pts[np.lexsort(pts.T[::-1])], tol)
    return SymmetryProbe(base=y, orbit=orbit, k=cfg.k)


def group_generators(k: int, N: int) -> list:
    """Matrices of the generators: one rotation and N-1 coordinate flips."""
    gens = [rotation_xy(2 * np.pi / k, N)]
    for i in range(1, N):
        F = np.eye(N)
        F[i, i] = -1.0
        gens.append(F)
    return gens
