"""Bubble-adapted weighted sup-norms evaluated on structured sample sets.

For centers ``ξ_j`` and scale ``λ`` the weights are

    w_*(y)  = λ^{(N-2)/2} Σ_j (1 + λ|y - ξ_j|)^{-((N-2)/2 + τ)}
    w_**(y) = λ^{(N+2)/2} Σ_j (1 + λ|y - ξ_j|)^{-((N+2)/2 + τ)}

and ``‖f‖ = sup |f| / w``.  The supremum is taken over sample points of the
annulus only.
"""

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
from scipy.stats import qmc

from .errors import ConfigError, NumericalError
from .geometry import AnnulusGeometry

TAU = 0.5
KINDS = ("star", "starstar")


def fibonacci_sphere(n: int, twist: float = 0.0) -> np.ndarray:
    i = np.arange(n) + 0.5
    z = 1 - 2 * i / n
    t = np.pi * (1 + 5**0.5) * i + twist
    s = np.sqrt(1 - z * z)
    return np.column_stack([s * np.cos(t), s * np.sin(t), z])


@dataclass
class NormSampleSet:
    """Sample points inside the annulus, sorted lexicographically."""

    points: np.ndarray = field(repr=False)
    centers: np.ndarray = field(repr=False)
    lam: float
    density: int

    def __len__(self):
        return len(self.points)

    def count_near(self, radius: float) -> np.ndarray:
        """Number of samples within ``radius`` of each center."""
        d = np.linalg.norm(self.points[:, None, :] - self.centers[None, :, :], axis=-1)
        return np.sum(d < radius, axis=0)

    @classmethod
    def build(cls, geom: AnnulusGeometry, centers, lam: float, density: int = 1,
              n_dirs: int = 48, n_background: int = 4096, seed: int = 0) -> "NormSampleSet":
        """Dyadic shells around every center plus scrambled-Sobol background.

        Shell radii run from ``2^{-3}/λ`` up to the annulus width with ratio
        ``2^{1/density}``; each shell carries ``n_dirs·density`` directions.
        The background has ``n_background·density`` points.
        """
        if density < 1:
            raise ConfigError("sample density must be >= 1")
        centers = np.atleast_2d(np.asarray(centers, dtype=float))
        width = geom.b - geom.a
        n_shell = int(np.ceil(density * np.log2(8 * lam * width))) + 1
        radii = 2.0 ** (-3 + np.arange(n_shell) / density) / lam
        pts = [centers]
        for i, rad in enumerate(radii):
            dirs = fibonacci_sphere(n_dirs * density, twist=2.399963 * i)
            pts.append((centers[:, None, :] + rad * dirs[None, :, :]).reshape(-1, geom.N))
        sob = qmc.Sobol(d=3, scramble=True, seed=seed).random(n_background * density)
        rho = (geom.a**3 + sob[:, 0] * (geom.b**3 - geom.a**3)) ** (1 / 3)
        ct = 2 * sob[:, 1] - 1
        ph = 2 * np.pi * sob[:, 2]
        st = np.sqrt(1 - ct * ct)
        pts.append(rho[:, None] * np.column_stack([st * np.cos(ph), st * np.sin(ph), ct]))
        pts = np.vstack(pts)
        rr = np.linalg.norm(pts, axis=1)
        pts = pts[(rr > geom.a) & (rr < geom.b)]
        pts = pts[np.lexsort(pts.T[::-1])]
        return cls(points=pts, centers=centers, lam=float(lam), density=density)


@dataclass
class WeightedNormReport:
    kind: str
    value: float
    argmax: np.ndarray
    tau: float


def norm_weight(y, centers, lam: float, kind: str, tau: float = TAU) -> np.ndarray:
    y = np.atleast_2d(np.asarray(y, dtype=float))
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    N = y.shape[1]
    if kind == "star":
        e, s = (N - 2) / 2, (N - 2) / 2
    elif kind == "starstar":
        e, s = (N + 2) / 2, (N + 2) / 2
    else:
        raise ConfigError(f"norm kind must be one of {KINDS}, got {kind!r}")
    w = np.zeros(len(y))
    for c in centers:
        w += (1 + lam * np.linalg.norm(y - c, axis=1)) ** (-(e + tau))
    return lam**s * w


def weighted_norm(f: Union[Callable, np.ndarray], centers, lam: float, kind: str,
                  samples: Union[NormSampleSet, np.ndarray], tau: float = TAU,
                  chunk: int = 50000) -> WeightedNormReport:
    """``sup |f| / w`` over the samples; ``f`` is a callable or precomputed values.

    Ties go to the lexicographically first point (sample sets are stored sorted).
    """
    if not lam > 0:
        raise ConfigError("λ must be positive")
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    if centers.size == 0:
        raise ConfigError("at least one center is required")
    pts = samples.points if isinstance(samples, NormSampleSet) else np.atleast_2d(samples)
    if callable(f):
        vals = np.empty(len(pts))
        for lo in range(0, len(pts), chunk):
            vals[lo:lo + chunk] = f(pts[lo:lo + chunk])
    else:
        vals = np.asarray(f, dtype=float)
    bad = np.flatnonzero(~np.isfinite(vals))
    if bad.size:
        raise NumericalError(f"non-finite field value at sample point {pts[bad[0]].tolist()}",
                             stage="weighted_norms")
    ratio = np.abs(vals) / norm_weight(pts, centers, lam, kind, tau)
    i = int(np.argmax(ratio))
    return WeightedNormReport(kind=kind, value=float(ratio[i]), argmax=pts[i], tau=tau)


def weight_tail_sum(centers, lam: float, tau: float = TAU) -> float:
    """``Σ_{j>=2} (λ|ξ_j - ξ_1|)^{-τ}`` with ``ξ_1`` the first row of ``centers``."""
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    d = np.linalg.norm(centers[1:] - centers[0], axis=1)
    return float(np.sum((lam * d) ** (-tau)))
