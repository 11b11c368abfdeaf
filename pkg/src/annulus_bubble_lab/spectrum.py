"""Spherical-harmonic mode spectra of the linearisation around u0.

For mode ``k`` the radial eigenvalue problem is

    -(r^{N-1} φ')' - r^{N-1} (p u0^{p-1} - λ_k / r²) φ = μ r^{N-1} φ,
    φ(a) = φ(b) = 0,

with ``λ_k = k(k + N - 2)``.  It is discretised with second-order central
differences in self-adjoint form, which gives a symmetric tridiagonal pencil
with a diagonal mass matrix.
"""

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh_tridiagonal

from .errors import ConfigError, NumericalError
from .geometry import AnnulusGeometry
from .radial import RadialSolution, solve_u0

log = logging.getLogger(__name__)

DEFAULT_M = 2000
RICHARDSON_TOL = 1e-4


def sphere_eigenvalue(k: int, N: int) -> int:
    return k * (k + N - 2)


@dataclass
class ModeOperator:
    r: np.ndarray
    stiffness: sp.csr_matrix
    mass: np.ndarray


def assemble_mode_operator(sol: Optional[RadialSolution], geom: AnnulusGeometry, k: int,
                           M: int = DEFAULT_M) -> ModeOperator:
    """Stiffness matrix and lumped mass on ``M`` interior nodes.

    ``sol=None`` drops the ``p u0^{p-1}`` potential (pure Laplacian test).
    """
    N = geom.N
    h = (geom.b - geom.a) / (M + 1)
    r = geom.a + h * np.arange(1, M + 1)
    w = r ** (N - 1)
    w_half = (geom.a + h * (np.arange(0, M + 1) + 0.5)) ** (N - 1)
    pot = np.zeros(M) if sol is None else geom.p * np.maximum(sol(r), 0.0) ** (geom.p - 1)
    diag = (w_half[:-1] + w_half[1:]) / h**2 - w * (pot - sphere_eigenvalue(k, N) / r**2)
    off = -w_half[1:-1] / h**2
    A = sp.diags([off, diag, off], [-1, 0, 1], format="csr")
    return ModeOperator(r=r, stiffness=A, mass=w)


def _tridiagonal_eigs(op: ModeOperator, n_eigs: int, vectors=False):
    s = 1 / np.sqrt(op.mass)
    d = op.stiffness.diagonal() * s * s
    e = op.stiffness.diagonal(1) * s[:-1] * s[1:]
    try:
        out = eigh_tridiagonal(d, e, eigvals_only=not vectors, select="i",
                               select_range=(0, n_eigs - 1))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigensolve failed: {exc}", stage="spectrum") from exc
    if vectors:
        vals, vecs = out
        return vals, vecs * s[:, None]
    return out, None


@dataclass
class ModeSpectrum:
    k: int
    sphere_eigenvalue: int
    eigenvalues: np.ndarray
    M: int
    refined: Optional[np.ndarray] = None
    richardson_change: Optional[np.ndarray] = None
    eigenvectors: Optional[np.ndarray] = field(default=None, repr=False)
    r: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def richardson_ok(self) -> bool:
        return self.richardson_change is None or bool(np.all(self.richardson_change < RICHARDSON_TOL))

    @property
    def extrapolated(self) -> np.ndarray:
        """Second-order Richardson extrapolation from M and 2M."""
        if self.refined is None:
            return self.eigenvalues
        return (4 * self.refined - self.eigenvalues) / 3


def mode_eigenvalues(sol: Optional[RadialSolution], geom: AnnulusGeometry, k: int,
                     n_eigs: int = 3, M: int = DEFAULT_M, richardson: bool = True,
                     vectors: bool = False, strict: bool = False) -> ModeSpectrum:
    """Lowest ``n_eigs`` eigenvalues of mode ``k``.

    The Richardson check re-solves on ``2M`` nodes; the change of each
    eigenvalue relative to ``max(|μ|, 1)`` must stay below 1e-4 (the unit
    floor keeps eigenvalues that sit near zero from failing spuriously).
    With ``strict=True`` a failed check raises.
    """
    if k < 0 or int(k) != k:
        raise ConfigError(f"mode index must be a non-negative integer, got {k}")
    if n_eigs < 1:
        raise ConfigError("n_eigs must be >= 1")
    op = assemble_mode_operator(sol, geom, k, M)
    vals, vecs = _tridiagonal_eigs(op, n_eigs, vectors)
    spec = ModeSpectrum(k=k, sphere_eigenvalue=sphere_eigenvalue(k, geom.N), eigenvalues=vals,
                        M=M, eigenvectors=vecs, r=op.r if vectors else None)
    if richardson:
        fine, _ = _tridiagonal_eigs(assemble_mode_operator(sol, geom, k, 2 * M), n_eigs)
        spec.refined = fine
        spec.richardson_change = np.abs(fine - vals) / np.maximum(np.abs(vals), 1.0)
        if strict and not spec.richardson_ok:
            raise NumericalError(
                f"mode {k}: Richardson change {spec.richardson_change.max():.2e} exceeds "
                f"{RICHARDSON_TOL}; increase M", stage="spectrum")
    return spec


def node_count(vec: np.ndarray, tol: float = 1e-10) -> int:
    v = vec[np.abs(vec) > tol * np.abs(vec).max()]
    return int(np.count_nonzero(np.diff(np.sign(v))))


@dataclass
class NondegeneracyReport:
    margin: float
    argmin: tuple
    certified: bool
    k_max: int
    k_domination: int
    cutoff_rule: str
    sign_pattern_ok: bool
    richardson_ok: bool
    near_degenerate: list
    table: dict = field(repr=False)

    def to_dict(self):
        d = asdict(self)
        d["table"] = {str(k): [float(x) for x in v] for k, v in self.table.items()}
        return d


def domination_mode(sol: RadialSolution, geom: AnnulusGeometry) -> int:
    """Smallest ``k`` with ``λ_k / b² > max p u0^{p-1}``."""
    bound = geom.p * sol.max_u ** (geom.p - 1) * geom.b**2
    k = 0
    while sphere_eigenvalue(k, geom.N) <= bound:
        k += 1
    return k


def nondegeneracy_certificate(sol: RadialSolution, geom: Optional[AnnulusGeometry] = None,
                              k_max: Optional[int] = None, n_eigs: int = 3,
                              margin_tol: float = 1e-3, M: int = DEFAULT_M) -> NondegeneracyReport:
    """Minimum of ``|μ_{k,i}|`` over ``0 <= k <= k_max``, ``i <= n_eigs``.

    Modes above ``k_max`` are covered in one of two ways: ``k_max`` reaches
    the potential-domination mode (all eigenvalues positive outright), or
    ``μ_{k_max,1} > margin_tol`` and the eigenvalues are nondecreasing in
    ``k`` since ``λ_k / r²`` only grows.
    """
    geom = geom or sol.geometry
    k_dom = domination_mode(sol, geom)
    if k_max is None:
        k_max = k_dom
    table = {}
    rich_ok = True
    for k in range(k_max + 1):
        spec = mode_eigenvalues(sol, geom, k, n_eigs=n_eigs, M=M)
        table[k] = spec.eigenvalues
        rich_ok &= spec.richardson_ok
    flat = [(abs(v), k, i + 1) for k, vals in table.items() for i, v in enumerate(vals)]
    margin, k_arg, i_arg = min(flat)
    near = [(k, i) for m, k, i in flat if m <= margin_tol]
    signs_ok = True
    if k_max >= 1:
        signs_ok &= bool(table[1][0] < 0)
    for k in range(1, k_max + 1):
        signs_ok &= bool(np.all(table[k][1:] > 0))
    if k_max >= k_dom:
        rule = "potential_domination"
    elif table[k_max][0] > margin_tol:
        rule = "monotonicity"
    else:
        rule = "incomplete"
    certified = margin > margin_tol and rule != "incomplete"
    if near:
        log.warning("near-degenerate modes (k, i): %s", near)
    return NondegeneracyReport(margin=float(margin), argmin=(k_arg, i_arg), certified=certified,
                               k_max=k_max, k_domination=k_dom, cutoff_rule=rule,
                               sign_pattern_ok=signs_ok, richardson_ok=rich_ok,
                               near_degenerate=near, table=table)


@dataclass
class DegeneracyCrossing:
    k: int
    R_lo: float
    R_hi: float
    R_star: float
    mu_lo: float
    mu_hi: float

    @property
    def width(self) -> float:
        return self.R_hi - self.R_lo


@dataclass
class SweepResult:
    R: np.ndarray
    k_range: tuple
    mu: np.ndarray  # shape (len(R), len(k_range)); NaN where the radial solve failed
    crossings: list
    skipped: list

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("R," + ",".join(f"mu_{k}_1" for k in self.k_range) + "\n")
            for R, row in zip(self.R, self.mu):
                fh.write(repr(float(R)) + "," + ",".join(repr(float(v)) for v in row) + "\n")

    def crossings_json(self) -> str:
        return json.dumps([asdict(c) | {"width": c.width} for c in self.crossings], indent=2)


def first_mode_value(R: float, N: int, k: int, M: int, cache: dict) -> float:
    sol = cache.get(R)
    if sol is None:
        sol = solve_u0(AnnulusGeometry(R, 1.0, N))
        cache[R] = sol
    return float(mode_eigenvalues(sol, sol.geometry, k, n_eigs=1, M=M, richardson=False)
                 .eigenvalues[0])


def degeneracy_sweep(R_grid: Sequence[float], N: int = 3, k_range: Sequence[int] = (2, 3, 4),
                     M: int = DEFAULT_M, width: float = 1e-4) -> SweepResult:
    """Sign changes of ``μ_{k,1}(R)`` on annuli ``(R, 1)``.

    Each bracket is bisected on the sign of ``μ_{k,1}`` until narrower than
    ``width``.  Grid points whose radial solve fails are skipped.
    """
    R_grid = np.sort(np.asarray(R_grid, dtype=float))
    if R_grid.size == 0 or R_grid[0] <= 0 or R_grid[-1] >= 1:
        raise ConfigError("R grid must lie in (0, 1)")
    k_range = tuple(int(k) for k in k_range)
    mu = np.full((len(R_grid), len(k_range)), np.nan)
    cache, skipped = {}, []
    for i, R in enumerate(R_grid):
        try:
            sol = solve_u0(AnnulusGeometry(float(R), 1.0, N))
        except NumericalError as exc:
            warnings.warn(f"radial solve failed at R={R}: {exc}; skipped")
            skipped.append(float(R))
            continue
        cache[float(R)] = sol
        for j, k in enumerate(k_range):
            mu[i, j] = mode_eigenvalues(sol, sol.geometry, k, n_eigs=1, M=M,
                                        richardson=False).eigenvalues[0]
    crossings = []
    for j, k in enumerate(k_range):
        ok = np.flatnonzero(np.isfinite(mu[:, j]))
        for i0, i1 in zip(ok[:-1], ok[1:]):
            m0, m1 = mu[i0, j], mu[i1, j]
            if m0 * m1 >= 0:
                continue
            lo, hi = float(R_grid[i0]), float(R_grid[i1])
            while hi - lo > width:
                mid = 0.5 * (lo + hi)
                mm = first_mode_value(mid, N, k, M, cache)
                if mm * m0 > 0:
                    lo, m0 = mid, mm
                else:
                    hi, m1 = mid, mm
            # linear interpolation inside the final bracket
            R_star = lo - m0 * (hi - lo) / (m1 - m0)
            crossings.append(DegeneracyCrossing(k=k, R_lo=lo, R_hi=hi, R_star=R_star,
                                                mu_lo=float(m0), mu_hi=float(m1)))
    return SweepResult(R=R_grid, k_range=k_range, mu=mu, crossings=crossings, skipped=skipped)
