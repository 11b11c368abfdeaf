"""Aubin–Talenti bubbles ``U_{ξ,λ}`` and their parameter derivatives."""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DerivativeUnreliable


def bubble_constant(N: int) -> float:
    """``C_N = (N(N-2))^{(N-2)/4}``, the constant making ``-ΔU = U^{(N+2)/(N-2)}``."""
    if N < 3:
        raise ConfigError("bubbles need N >= 3")
    return (N * (N - 2)) ** ((N - 2) / 4)


def far_field_coefficient(N: int) -> float:
    """``c∞`` with ``U_{0,1}(y) ~ c∞ |y|^{2-N}`` as ``|y| → ∞``; equals ``C_N``."""
    return bubble_constant(N)


@dataclass(frozen=True)
class Bubble:
    center: tuple
    lam: float

    def __post_init__(self):
        if not self.lam > 0:
            raise ConfigError(f"bubble scale must be positive, got {self.lam}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def N(self) -> int:
        return len(self.center)

    @property
    def xi(self) -> np.ndarray:
        return np.asarray(self.center)


def bubble_value(center, lam, y) -> np.ndarray:
    """``U_{ξ,λ}(y)`` for points ``y`` of shape ``(..., N)``."""
    y = np.asarray(y, dtype=float)
    N = y.shape[-1]
    d2 = np.sum((y - np.asarray(center)) ** 2, axis=-1)
    return bubble_constant(N) * lam ** ((N - 2) / 2) * (1 + lam**2 * d2) ** (-(N - 2) / 2)


def bubble_eval(bub: Bubble, y):
    """Value, gradient and Laplacian (``-U^p``) of the bubble at ``y``."""
    y = np.asarray(y, dtype=float)
    N = bub.N
    diff = y - bub.xi
    q = 1 + bub.lam**2 * np.sum(diff**2, axis=-1)
    C = bubble_constant(N)
    val = C * bub.lam ** ((N - 2) / 2) * q ** (-(N - 2) / 2)
    grad = -(N - 2) * C * bub.lam ** ((N + 2) / 2) * q[..., None] ** (-N / 2) * diff
    lap = -val ** ((N + 2) / (N - 2))
    return val, grad, lap


def bubble_dlam(bub: Bubble, y) -> np.ndarray:
    """Closed-form ``∂U/∂λ`` of the free bubble."""
    y = np.asarray(y, dtype=float)
    N = bub.N
    d2 = np.sum((y - bub.xi) ** 2, axis=-1)
    val = bubble_value(bub.center, bub.lam, y)
    return val * (N - 2) / 2 * (1 / bub.lam - 2 * bub.lam * d2 / (1 + bub.lam**2 * d2))


def bubble_param_derivs(pb, which: str, y, rel_tol: float = 1e-3):
    """``Z = ∂PU/∂λ`` or ``∂PU/∂r`` by central differences of the projected bubble.

    ``r`` moves the center radially.  The derivative is recomputed with half
    the step and the two must agree to ``rel_tol`` (relative to the larger
    magnitude over the points), otherwise :class:`DerivativeUnreliable`.
    """
    from .harmonics import projected_bubble

    geom = pb.geometry
    xi = pb.bubble.xi
    r = np.linalg.norm(xi)
    if which in ("lam", "λ", "lambda"):
        step = 1e-4 * pb.bubble.lam

        def build(t):
            return projected_bubble(Bubble(xi, pb.bubble.lam + t), geom, pb.L_max,
                                    check=False)
    elif which == "r":
        step = 1e-5 * (geom.b - geom.a)

        def build(t):
            return projected_bubble(Bubble(xi * (r + t) / r, pb.bubble.lam), geom, pb.L_max,
                                    check=False)
    else:
        raise ConfigError(f"unknown derivative direction {which!r}")

    def central(h):
        return (build(h).value(y) - build(-h).value(y)) / (2 * h)

    d1, d2 = central(step), central(step / 2)
    scale = max(np.max(np.abs(d2)), np.finfo(float).tiny)
    if np.max(np.abs(d1 - d2)) > rel_tol * scale:
        raise DerivativeUnreliable(
            f"step halving changed ∂PU/∂{which} by {np.max(np.abs(d1 - d2)) / scale:.2e}",
            stage="bubbles")
    return d2
