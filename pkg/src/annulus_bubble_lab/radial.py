"""Positive radial solution of -Δu = u^p on the annulus, by shooting.

The radial profile satisfies ``u'' + (N-1)/r u' + |u|^{p-1} u = 0`` with
``u(a) = u(b) = 0``.  Starting from ``(u, u') = (0, s)`` at ``r = a`` the slope
``s`` is bisected between a shot that stays positive up to ``b`` and one that
crosses zero before ``b``.
"""

import csv
import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import BPoly
from scipy.optimize import brentq, minimize_scalar
from scipy.special import roots_legendre

from .errors import ConfigError, IntegrationFailure, NoSolutionError
from .geometry import AnnulusGeometry

RTOL = 1e-12
ATOL = 1e-14
GRID_SIZE = 1001


class ShotClass(enum.Enum):
    CROSSES_ZERO_BEFORE_B = "crosses_zero_before_b"
    POSITIVE_AT_B = "positive_at_b"
    HITS_ZERO_AT_B = "hits_zero_at_b"


@dataclass
class RadialShot:
    slope: float
    classification: ShotClass
    trace: np.ndarray = field(repr=False)  # columns r, u, u'
    r_end: float
    u_end: float


def odd_power(u, p):
    """``|u|^{p-1} u``, real for negative ``u`` and any real ``p``."""
    return np.sign(u) * np.abs(u) ** p


def _rhs(geom: AnnulusGeometry, nonlinear: bool):
    n1, p = geom.N - 1, geom.p

    def f(r, y):
        u, du = y
        forcing = odd_power(u, p) if nonlinear else 0.0
        return [du, -n1 / r * du - forcing]

    return f


def shoot(
    geom: AnnulusGeometry,
    s: float,
    rtol: float = RTOL,
    atol: float = ATOL,
    zero_tol: float = 1e-10,
    nonlinear: bool = True,
    through: bool = False,
) -> RadialShot:
    """Integrate the radial ODE from ``(u, u')(a) = (0, s)``.

    Integration stops at the first zero crossing, or at ``b``.  With
    ``through=True`` it continues past crossings (used for the continuous
    shooting function).  ``nonlinear=False`` drops the ``u^p`` term.
    """
    if not s > 0:
        raise ConfigError(f"shooting slope must be positive, got {s}")

    def crossing(r, y):
        return y[0]

    crossing.terminal = not through
    crossing.direction = -1

    sol = solve_ivp(
        _rhs(geom, nonlinear),
        (geom.a, geom.b),
        [0.0, s],
        method="DOP853",
        rtol=rtol,
        atol=atol,
        events=crossing,
    )
    if sol.status == -1:
        raise IntegrationFailure(f"shooting with s={s} failed: {sol.message}", stage="radial")
    trace = np.column_stack([sol.t, sol.y[0], sol.y[1]])
    r_end, u_end = sol.t[-1], sol.y[0, -1]
    hit_early = sol.status == 1 and not through
    if hit_early and geom.b - r_end > 1e-12 * geom.b:
        cls = ShotClass.CROSSES_ZERO_BEFORE_B
    elif abs(u_end) <= zero_tol or hit_early:
        cls = ShotClass.HITS_ZERO_AT_B
    elif u_end > 0:
        cls = ShotClass.POSITIVE_AT_B
    else:
        cls = ShotClass.CROSSES_ZERO_BEFORE_B
    return RadialShot(slope=s, classification=cls, trace=trace, r_end=r_end, u_end=u_end)


@dataclass
class RadialSolution:
    """Sampled positive radial solution with a C² quintic Hermite interpolant."""

    geometry: AnnulusGeometry
    r: np.ndarray = field(repr=False)
    u: np.ndarray = field(repr=False)
    du: np.ndarray = field(repr=False)
    d2u: np.ndarray = field(repr=False)
    slope: float = 0.0
    ode_residual: float = float("nan")
    boundary_value: float = 0.0

    def __post_init__(self):
        yi = np.column_stack([self.u, self.du, self.d2u])
        self._interp = BPoly.from_derivatives(self.r, yi)
        self._d1 = self._interp.derivative(1)
        self._d2 = self._interp.derivative(2)

    def __call__(self, r, nu: int = 0):
        """Evaluate ``u0`` (``nu=0``), ``u0'`` or ``u0''`` at radii ``r``.

        Outside ``[a, b]`` the profile is extended by zero.
        """
        r = np.asarray(r, dtype=float)
        f = (self._interp, self._d1, self._d2)[nu]
        inside = (r >= self.geometry.a) & (r <= self.geometry.b)
        out = np.where(inside, f(np.clip(r, self.geometry.a, self.geometry.b)), 0.0)
        return out

    @property
    def max_u(self) -> float:
        i = int(np.argmax(self.u))
        lo, hi = self.r[max(i - 1, 0)], self.r[min(i + 1, len(self.r) - 1)]
        res = minimize_scalar(lambda x: -self(x), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-13})
        return float(-res.fun)

    def scaled(self, t: float) -> "RadialSolution":
        """The rescaled solution ``t^{(N-2)/2} u0(t r)`` on ``(a/t, b/t)``."""
        c = t ** ((self.geometry.N - 2) / 2)
        return RadialSolution(
            geometry=self.geometry.scaled(t),
            r=self.r / t,
            u=c * self.u,
            du=c * t * self.du,
            d2u=c * t * t * self.d2u,
            slope=c * t * self.slope,
            ode_residual=self.ode_residual,
            boundary_value=c * self.boundary_value,
        )

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["r", "u", "du"])
            for row in zip(self.r, self.u, self.du):
                w.writerow([repr(float(v)) for v in row])


def _bracket_slope(geom, s0=1.0, m_max=60):
    """Geometric sweep ``s = s0 * 2^m`` for a (positive, crossing) pair."""
    first = shoot(geom, s0)
    if first.classification is ShotClass.HITS_ZERO_AT_B:
        return s0, s0
    going_up = first.classification is ShotClass.POSITIVE_AT_B
    prev = s0
    for m in range(1, m_max):
        s = s0 * 2.0 ** (m if going_up else -m)
        cls = shoot(geom, s).classification
        if cls is ShotClass.HITS_ZERO_AT_B:
            return s, s
        if going_up and cls is ShotClass.CROSSES_ZERO_BEFORE_B:
            return prev, s
        if not going_up and cls is ShotClass.POSITIVE_AT_B:
            return s, prev
        prev = s
    raise NoSolutionError(
        f"no slope bracket found in [{s0 * 2.0**-m_max}, {s0 * 2.0**m_max}]", stage="radial"
    )


def ode_residual(sol: "RadialSolution") -> float:
    """Scaled residual ``max |u'' + (N-1)/r u' + u^p| / (1 + max |u|^p)``.

    Evaluated from the interpolant at cell midpoints, where neither the
    stored nodal values nor the right-hand side were imposed.
    """
    geom = sol.geometry
    mid = 0.5 * (sol.r[1:] + sol.r[:-1])
    u, du, d2u = sol(mid), sol(mid, 1), sol(mid, 2)
    res = d2u + (geom.N - 1) / mid * du + odd_power(u, geom.p)
    return float(np.max(np.abs(res)) / (1 + np.max(np.abs(sol.u)) ** geom.p))


def solve_u0(
    geom: AnnulusGeometry,
    tol: float = 1e-10,
    grid_size: int = GRID_SIZE,
    max_iter: int = 200,
    s0: float = 1.0,
) -> RadialSolution:
    """Unique positive radial solution by bisection on the shooting slope.

    Bisection on the shot classification narrows the bracket to a relative
    width of 1e-6; inside it ``u(b; s)`` is continuous and monotone, and Brent's
    method finishes the solve.  ``s0`` seeds the geometric bracket sweep.
    """
    if not tol > 0:
        raise ConfigError("tolerance must be positive")
    lo, hi = _bracket_slope(geom, s0=s0)
    s = lo
    for _ in range(max_iter):
        if hi - lo <= 1e-6 * hi:
            break
        s = 0.5 * (lo + hi)
        shot = shoot(geom, s, zero_tol=tol)
        if shot.classification is ShotClass.HITS_ZERO_AT_B:
            lo = hi = s
            break
        if shot.classification is ShotClass.POSITIVE_AT_B:
            lo = s
        else:
            hi = s
    else:
        raise NoSolutionError("bisection did not converge", stage="radial")
    if hi > lo:
        def end_value(x):
            return shoot(geom, x, through=True).u_end

        f_lo, f_hi = end_value(lo), end_value(hi)
        if f_lo * f_hi < 0:
            s = brentq(end_value, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
        else:
            s = lo if abs(f_lo) < abs(f_hi) else hi

    sol = solve_ivp(
        _rhs(geom, True), (geom.a, geom.b), [0.0, s], method="DOP853",
        rtol=RTOL, atol=ATOL, dense_output=True,
    )
    if sol.status != 0:
        raise IntegrationFailure(sol.message, stage="radial")
    # each integrator step split into max(8, step/h) cells: the grid is at
    # least as fine as the uniform one and follows concentrated profiles
    h = (geom.b - geom.a) / (grid_size - 1)
    pieces = [
        np.linspace(t0, t1, max(8, int(np.ceil((t1 - t0) / h))), endpoint=False)
        for t0, t1 in zip(sol.t[:-1], sol.t[1:])
    ]
    r = np.concatenate(pieces + [[geom.b]])
    u, du = sol.sol(r)
    u_b = float(u[-1])
    if abs(u_b) > tol * max(1.0, s):
        raise NoSolutionError(f"|u(b)| = {abs(u_b):.3e} above tolerance {tol}", stage="radial")
    u[0] = 0.0
    u[-1] = 0.0
    if np.any(u[1:-1] <= 0):
        raise NoSolutionError("shooting solution is not positive inside the annulus", stage="radial")
    d2u = -(geom.N - 1) / r * du - odd_power(u, geom.p)
    out = RadialSolution(geom, r, u, du, d2u, slope=float(s), boundary_value=u_b)
    out.ode_residual = ode_residual(out)
    return out


@dataclass
class R0Result:
    r0: float
    m0: float
    flat: bool = False


def find_r0(sol: RadialSolution, geom: Optional[AnnulusGeometry] = None,
            plateau_tol: float = 1e-13) -> R0Result:
    """Maximiser of ``g(r) = r^{(N-2)/2} u0(r)`` on ``[a, b]``."""
    geom = geom or sol.geometry
    e = (geom.N - 2) / 2

    def g(x):
        return x**e * sol(x)

    vals = sol.r**e * sol.u
    i = int(np.argmax(vals))
    top = np.flatnonzero(vals >= vals[i] - plateau_tol * max(vals[i], 1.0))
    if top[-1] - top[0] > 2:
        mid = 0.5 * (sol.r[top[0]] + sol.r[top[-1]])
        return R0Result(r0=float(mid), m0=float(g(mid)), flat=True)
    lo, hi = sol.r[max(i - 1, 0)], sol.r[min(i + 1, len(sol.r) - 1)]
    res = minimize_scalar(lambda x: -g(x), bracket=(lo, sol.r[i], hi), method="golden",
                          tol=1e-12)
    r0 = float(np.clip(res.x, lo, hi))
    return R0Result(r0=r0, m0=float(g(r0)))


def radial_integrals(sol: RadialSolution, order: int = 12, panels: int = 400):
    """``(∫|∇u0|², ∫u0^{2*})`` over the annulus by composite Gauss–Legendre."""
    geom = sol.geometry
    x, w = roots_legendre(order)
    edges = np.linspace(geom.a, geom.b, panels + 1)
    half = 0.5 * np.diff(edges)
    mids = 0.5 * (edges[1:] + edges[:-1])
    rr = (mids[:, None] + half[:, None] * x[None, :]).ravel()
    ww = (half[:, None] * w[None, :]).ravel() * rr ** (geom.N - 1)
    du = sol(rr, 1)
    u = sol(rr)
    dirichlet = geom.sphere_area * np.sum(ww * du**2)
    potential = geom.sphere_area * np.sum(ww * np.abs(u) ** geom.crit)
    return float(dirichlet), float(potential)


def radial_energy(sol: RadialSolution, geom: Optional[AnnulusGeometry] = None) -> float:
    """``I(u0) = ½∫|∇u0|² − (1/2*)∫u0^{2*}``."""
    geom = geom or sol.geometry
    dirichlet, potential = radial_integrals(sol)
    return 0.5 * dirichlet - potential / geom.crit
