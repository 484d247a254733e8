"""Certified brackets for the gap between two subspaces.

The gap is the Hausdorff distance between unit balls,

    Lambda(E, F) = max( sup_{x in B_E} d(x, B_F), sup_{y in B_F} d(y, B_E) ).

``x -> d(x, B_F)`` is convex, even and 1-Lipschitz, so its supremum over
B_E is attained on S_E and a delta-net of S_E (up to sign) certifies an
upper bound of max-over-net + delta.  Lower bounds come from evaluating
the net and from multistart ascent on the sphere.

Only 2-D Euclidean lines have a closed form used as an oracle (the sine of
the angle between them); everything else is checked by brute force.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .nets import NET_CAP, certified_sphere_net
from .solvers import solve_dist_to_unit_ball
from .spaces import Dual, GapkitError, Subspace, annihilator, is_banach, norm_eval, norm_subgradient

ASCENT_ITERS = 30
CERTIFY_MAX_DIM = 4


@dataclass
class GapBracket:
    lower: float
    upper: float
    lower_method: str  # "net" | "multistart"
    upper_method: str  # "net" | "trivial"
    net_delta: float  # covering radius actually certified (0 if no net)
    delta: float = 0.0  # requested mesh
    seed: int = 0
    converged: bool = True
    flags: list = field(default_factory=list)

    def contains(self, value: float, tol: float = 0.0) -> bool:
        return self.lower - tol <= value <= self.upper + tol


def _derive_seed(seed: int, E: Subspace, F: Subspace) -> int:
    h = hashlib.sha256()
    h.update(int(seed).to_bytes(8, "little", signed=False))
    h.update(np.ascontiguousarray(E.basis).tobytes())
    h.update(np.ascontiguousarray(F.basis).tobytes())
    return int.from_bytes(h.digest()[:8], "little")


class _Dist:
    """``x -> d(x, B_F)`` with a running convergence flag."""

    def __init__(self, ambient, F):
        self.ambient, self.F = ambient, F
        self.converged = True
        self.calls = 0

    def solve(self, x):
        sol = solve_dist_to_unit_ball(self.ambient, x, self.F)
        self.converged &= sol.converged
        self.calls += 1
        return sol

    def __call__(self, x) -> float:
        return self.solve(x).value


def _point(ambient, Q, c):
    x = Q @ c
    return x / norm_eval(ambient, x)


def _value_grad(f, ambient, Q, c):
    """Value and a coefficient-space ascent direction of ``c -> d(Qc/||Qc||, B_F)``.

    The distance is convex in x with subgradient s = grad ||.|| at the optimal
    residual; the chain rule through the normalization gives the direction.
    """
    y = Q @ c
    n = norm_eval(ambient, y)
    x = y / n
    sol = f.solve(x)
    s = norm_subgradient(ambient, x - sol.point)
    gn = norm_subgradient(ambient, y)
    return sol.value, (Q.T @ s - float(s @ x) * (Q.T @ gn)) / n


def _ascend(f, ambient, Q, c, iters=ASCENT_ITERS):
    """Projected ascent of ``c -> f(Qc / ||Qc||)`` on the coefficient sphere."""
    c = c / np.linalg.norm(c)
    val, g = _value_grad(f, ambient, Q, c)
    eta = 0.5
    for _ in range(iters):
        g = g - (g @ c) * c
        gn = np.linalg.norm(g)
        if gn < 1e-9:
            break
        for _ in range(8):
            trial = c + eta * g / gn
            trial /= np.linalg.norm(trial)
            tv, tg = _value_grad(f, ambient, Q, trial)
            if tv > val:
                c, val, g = trial, tv, tg
                eta = min(1.0, eta * 1.5)
                break
            eta /= 2
        else:
            break
    return val


def directed_gap(ambient, E: Subspace, F: Subspace, delta: float = 0.05, budget: int = 8,
                 seed: int = 0, net_cap: int = NET_CAP, certify: bool = True) -> GapBracket:
    """Bracket ``sup_{x in S_E} d(x, B_F)``.

    With ``certify`` (and dim E <= 4) the upper end is max-over-net + radius
    for a certified net of radius <= delta; otherwise it is the trivial 1.
    The lower end is the best of the net values and ``budget`` ascents
    started from random points (the best net points are used first).
    """
    if E.parent != ambient or F.parent != ambient:
        raise ValueError("E and F must be subspaces of the ambient space")
    if not 0.0 < delta <= 0.5:
        raise ValueError("delta must lie in (0, 0.5]")
    if not is_banach(ambient):
        raise GapkitError("the gap needs a Banach ambient space")
    f = _Dist(ambient, F)
    flags = []
    sub_seed = _derive_seed(seed, E, F)
    rng = np.random.default_rng(sub_seed)
    Q = E.orthonormal
    net_best, net_vals, net_pts = -math.inf, None, None
    upper, upper_method, radius = 1.0, "trivial", 0.0

    if certify and E.dim <= CERTIFY_MAX_DIM:
        net = certified_sphere_net(E, delta, cap=net_cap)
        if net.capped:
            flags.append(f"net for dim {E.dim} at delta {delta:g} exceeds cap {net_cap}")
        else:
            net_pts = net.points
            net_vals = np.array([f(x) for x in net_pts])
            net_best = float(net_vals.max())
            radius = net.radius
            upper, upper_method = min(1.0, net_best + radius), "net"
    elif certify:
        flags.append(f"dim {E.dim} > {CERTIFY_MAX_DIM}: trivial upper bound")

    lower, lower_method = net_best, "net"
    if E.dim > 1:
        starts = []
        if net_vals is not None:
            top = np.argsort(-net_vals, kind="stable")[: max(1, budget // 2)]
            starts = [Q.T @ net_pts[i] for i in top]
        while len(starts) < budget:
            starts.append(rng.standard_normal(E.dim))
        for c0 in starts[:budget]:
            v = _ascend(f, ambient, Q, c0)
            if v > lower:
                lower, lower_method = v, "multistart"
    elif net_vals is None:
        lower, lower_method = f(_point(ambient, Q, np.ones(1))), "multistart"

    if lower > 1.0 + 1e-6:
        raise GapkitError(f"directed gap lower end {lower:.9g} exceeds 1; solver failure")
    lower = min(max(lower, 0.0), 1.0)
    upper = max(upper, lower)
    if not f.converged:
        flags.append("inner solver did not reach tolerance")
    return GapBracket(lower, upper, lower_method, upper_method, radius, delta, seed, f.converged, flags)


def _combine(a: GapBracket, b: GapBracket) -> GapBracket:
    lo = a if a.lower >= b.lower else b
    up = a if a.upper >= b.upper else b
    return GapBracket(lo.lower, up.upper, lo.lower_method, up.upper_method,
                      max(a.net_delta, b.net_delta), a.delta, a.seed,
                      a.converged and b.converged, a.flags + [x for x in b.flags if x not in a.flags])


def gap(ambient, E: Subspace, F: Subspace, delta: float = 0.05, budget: int = 8, seed: int = 0,
        net_cap: int = NET_CAP, certify: bool = True) -> GapBracket:
    """Bracket for the gap: componentwise max of the two directed brackets."""
    ef = directed_gap(ambient, E, F, delta, budget, seed, net_cap, certify)
    fe = directed_gap(ambient, F, E, delta, budget, seed, net_cap, certify)
    # order-independent merge so that gap(E, F) == gap(F, E)
    first, second = sorted((ef, fe), key=lambda b: (b.lower, b.upper))
    return _combine(second, first)


@dataclass
class DualGapReport:
    lhs_lower: float  # lower end for the gap between annihilators
    rhs_upper: float  # upper end for the gap between E and F
    satisfied: bool
    tol: float
    primal: GapBracket
    dual: GapBracket


def dual_gap_check(ambient, E: Subspace, F: Subspace, delta: float = 0.05, budget: int = 8,
                   seed: int = 0, tol: float = 1e-6) -> DualGapReport:
    """One-sided check of ``Lambda(E^perp, F^perp) <= 2 Lambda(E, F)``."""
    primal = gap(ambient, E, F, delta, budget, seed)
    D = Dual(ambient)
    dual = gap(D, annihilator(ambient, E), annihilator(ambient, F), delta, budget, seed, certify=False)
    ok = dual.lower <= 2.0 * primal.upper + tol
    return DualGapReport(dual.lower, primal.upper, ok, tol, primal, dual)


# ---------------------------------------------------------------------------
# helpers for experiments


def euclidean_line_gap(u, v) -> float:
    """Sine of the angle between two lines of a Euclidean space."""
    u = np.asarray(u, dtype=float) / np.linalg.norm(u)
    v = np.asarray(v, dtype=float) / np.linalg.norm(v)
    c = min(1.0, abs(float(u @ v)))
    return math.sqrt(max(0.0, 1.0 - c * c))


def near_subspace(E: Subspace, scale: float, rng: np.random.Generator, label: str = "") -> Subspace:
    """A subspace obtained by a random perturbation of E's basis of relative size ``scale``."""
    B = E.orthonormal
    P = rng.standard_normal(B.shape)
    P /= np.linalg.norm(P, axis=0, keepdims=True)
    return Subspace(E.parent, B + scale * P, label=label)


def random_pair(ambient, k: int, rng: np.random.Generator, log_scale=(-3.0, 0.0)):
    """Random k-dim E and a perturbation F at a log-uniform relative scale."""
    from .spaces import dim

    E = Subspace(ambient, rng.standard_normal((dim(ambient), k)), label="E")
    scale = 10.0 ** rng.uniform(*log_scale)
    return E, near_subspace(E, scale, rng, label="F")
