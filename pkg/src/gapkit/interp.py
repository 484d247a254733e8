"""Strip geometry and closed-form distance bounds between l_p spaces.

The strip U = {0 < Re z < 1} carries the couple (l_p spaces realized by
complex interpolation with theta = 1/p).  The map

    phi_theta(z) = sin(pi (z - theta) / 2) / sin(pi (z + theta) / 2)

sends U conformally onto the unit disk with phi_theta(theta) = 0, so the
pseudo-hyperbolic distance of two real points 1/p, 1/q is
|phi_{1/p}(1/q)| and the Kadets bound is twice that.  Complex points are
handled by the vertical translation z -> z - i Im(xi), an automorphism of U.

The lower estimate ``2^(1/p-1) - 2^(1/q-1)`` is the same number as
``(2^(1/p) - 2^(1/q)) / 2``.

Complex arithmetic is written with real sin/cos/sinh/cosh so that every
exported quantity is a real float.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .spaces import INF, as_exponent

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StripPoint:
    re: float
    im: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.re < 1.0) or not math.isfinite(self.im):
            raise ValueError(f"point ({self.re}, {self.im}) is outside the open strip 0 < Re z < 1")

    @classmethod
    def of(cls, z) -> "StripPoint":
        if isinstance(z, StripPoint):
            return z
        if isinstance(z, tuple):
            return cls(float(z[0]), float(z[1]))
        z = complex(z)
        return cls(z.real, z.imag)


def _csin(x: float, y: float):
    """sin(x + iy) as (re, im)."""
    return math.sin(x) * math.cosh(y), math.cos(x) * math.sinh(y)


def _cdiv(a, b):
    den = b[0] * b[0] + b[1] * b[1]
    return (a[0] * b[0] + a[1] * b[1]) / den, (a[1] * b[0] - a[0] * b[1]) / den


def conformal_strip_to_disk(theta: float, z) -> tuple[float, float]:
    """``phi_theta(z)`` as (re, im); zero at ``z = theta``, modulus < 1 on the strip."""
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0, 1)")
    z = StripPoint.of(z)
    h = math.pi / 2
    num = _csin(h * (z.re - theta), h * z.im)
    den = _csin(h * (z.re + theta), h * z.im)
    return _cdiv(num, den)


def pseudo_hyperbolic_strip(xi, eta) -> float:
    """Pseudo-hyperbolic distance on the strip."""
    xi, eta = StripPoint.of(xi), StripPoint.of(eta)
    w = conformal_strip_to_disk(xi.re, StripPoint(eta.re, eta.im - xi.im))
    return math.hypot(*w)


def _finite_exponent(p, name):
    p = as_exponent(p)
    if p is INF or not p > 1.0:
        raise ValueError(f"{name} must be a finite exponent > 1, got {p}")
    return float(p)


def kadets_upper_lp(p, q) -> float:
    """``2 sin(pi |1/p - 1/q| / 2) / sin(pi (1/p + 1/q) / 2)`` for 1 < p, q < inf."""
    a = 1.0 / _finite_exponent(p, "p")
    b = 1.0 / _finite_exponent(q, "q")
    return 2.0 * math.sin(math.pi * abs(a - b) / 2) / math.sin(math.pi * (a + b) / 2)


def _inv(p) -> float:
    p = as_exponent(p)
    if p is INF:
        return 0.0
    if p < 1.0:
        raise ValueError(f"exponent must be >= 1, got {p}")
    return 1.0 / p


def kadets_lower_lp(p, q) -> float:
    """``2^(1/p - 1) - 2^(1/q - 1)`` for p <= q (swapped otherwise)."""
    a, b = _inv(p), _inv(q)
    if a < b:
        log.info("kadets_lower_lp: p > q, arguments swapped")
        a, b = b, a
    return 2.0 ** (a - 1.0) - 2.0 ** (b - 1.0)


def gh_upper_l1_lp(p) -> float:
    """``2 (2^p - 2)``: the two-point distortion bound of the Mazur map l_p -> l_1."""
    p = as_exponent(p)
    if p is INF or p < 1.0:
        raise ValueError("p must be finite and >= 1")
    return 2.0 * (2.0 ** p - 2.0)


# ---------------------------------------------------------------------------
# scalar inequality behind the l_p -> l_1 distortion bound


def mazur_scalar_residual(a, b, p):
    """``(lhs, rhs)`` of ``| |a-b|^p - |s(a) - s(b)| | <= (2^(p-1) - 1)(|a|^p + |b|^p)``.

    Here ``s(t) = sgn(t) |t|^p``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    s = lambda t: np.sign(t) * np.abs(t) ** p  # noqa: E731
    lhs = np.abs(np.abs(a - b) ** p - np.abs(s(a) - s(b)))
    rhs = (2.0 ** (p - 1.0) - 1.0) * (np.abs(a) ** p + np.abs(b) ** p)
    return lhs, rhs


@dataclass
class ScalarCheckReport:
    p: float
    grid_step: float
    points: int
    worst_slack: float  # min of rhs - lhs over the grid
    worst_at: tuple
    violations: int  # slack < -1e-12

    @property
    def ok(self) -> bool:
        return self.violations == 0


def mazur_scalar_defect_check(p: float, grid_step: float = 1e-3, tol: float = 1e-12) -> ScalarCheckReport:
    """Scan the scalar inequality on a grid of ``[-1, 1]^2``."""
    if not p > 1.0:
        raise ValueError("p must be > 1")
    if not 0.0 < grid_step <= 1e-2:
        raise ValueError("grid_step must lie in (0, 1e-2]")
    n = int(round(2.0 / grid_step))
    g = np.linspace(-1.0, 1.0, n + 1)
    worst, at, bad = math.inf, (0.0, 0.0), 0
    for lo in range(0, len(g), 256):
        A = g[lo:lo + 256, None]
        lhs, rhs = mazur_scalar_residual(A, g[None, :], p)
        slack = rhs - lhs
        bad += int((slack < -tol).sum())
        i, j = np.unravel_index(np.argmin(slack), slack.shape)
        if slack[i, j] < worst:
            worst, at = float(slack[i, j]), (float(g[lo + i]), float(g[j]))
    return ScalarCheckReport(float(p), grid_step, len(g) ** 2, worst, at, bad)
