"""Convex residual problems: quotient norms, distance to a unit ball, lifts.

Every routine minimizes ``||x - B y||`` over coefficients ``y`` (optionally
with ``||B y|| <= 1``).  Backends, by space:

* Euclidean (p = 2, plain or weighted): closed form (projection, radial clip).
* p in {1, inf}: enumeration of the basic solutions of the underlying linear
  program when that is cheap, otherwise a linear program (HiGHS).
* 1 < p < inf: SLSQP on p-th powers, started from the Euclidean solution.
* anything else: exact-penalty subgradient method with multistart, then a
  derivative-free polish.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import linprog, minimize

from .spaces import (
    INF,
    Lp,
    QuasiLr,
    Subspace,
    UnsupportedSpaceError,
    WeightedLp,
    as_vector,
    dim,
    norm_eval,
    norm_subgradient,
    norms,
    simplify,
    DimensionError,
)

SOLVER_TOL = 1e-8
SUBGRADIENT_ITERS = 5000
SUBGRADIENT_RESTARTS = 5
ENUMERATION_CAP = 20000


class ConvergenceWarning(UserWarning):
    """An inner convex solve did not meet its tolerance."""


@dataclass
class Solution:
    value: float
    point: np.ndarray  # B @ coeffs, in ambient coordinates
    coeffs: np.ndarray
    converged: bool
    method: str


def _warn(sol: Solution, what: str) -> None:
    if not sol.converged:
        warnings.warn(
            f"{what}: {sol.method} did not reach tolerance {SOLVER_TOL:g}; "
            f"returning estimate {sol.value:.10g}",
            ConvergenceWarning,
            stacklevel=3,
        )


def _basis_of(F, n: int) -> np.ndarray:
    B = F.basis if isinstance(F, Subspace) else np.asarray(F, dtype=float)
    if B.ndim == 1:
        B = B.reshape(-1, 1)
    if B.shape[0] != n:
        raise DimensionError(f"basis has {B.shape[0]} rows, ambient dimension is {n}")
    return B


def _weights(space) -> np.ndarray | None:
    if isinstance(space, WeightedLp):
        return np.asarray(space.weights)
    return None


def _finish(space, x, B, y, ball, method, converged) -> Solution:
    """Make the point feasible and evaluate the objective exactly."""
    y = np.asarray(y, dtype=float)
    w = B @ y
    if ball:
        nw = norm_eval(space, w)
        if nw > 1.0:
            y = y / nw
            w = B @ y
    return Solution(norm_eval(space, x - w), w, y, bool(converged), method)


# -- Euclidean ---------------------------------------------------------------


def _euclid(space, x, B, ball) -> Solution:
    wts = _weights(space)
    xs, Bs = (x, B) if wts is None else (wts * x, wts[:, None] * B)
    y, *_ = np.linalg.lstsq(Bs, xs, rcond=None)
    return _finish(space, x, B, y, ball, "euclidean-closed-form", True)


# -- polyhedral --------------------------------------------------------------


@lru_cache(maxsize=64)
def _l1_vertices(key: bytes, n: int, k: int):
    B = np.frombuffer(key, dtype=float).reshape(n, k)
    return _nonsingular_subsets(B, k)


def l1_regression(B: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Exact minimizers of ``||x - B y||_1`` for each row x of X.

    An optimal basic solution interpolates k coordinates exactly, so the
    minimum over all nonsingular k-row subsets is the global minimum.
    """
    B = np.ascontiguousarray(B, dtype=float)
    n, k = B.shape
    rows, invs = _l1_vertices(B.tobytes(), n, k)
    X = np.atleast_2d(X)
    # candidate coefficients: (m, subsets, k)
    Y = np.einsum("sij,msj->msi", invs, X[:, rows])
    R = X[:, None, :] - np.einsum("nk,msk->msn", B, Y)
    obj = np.abs(R).sum(axis=-1)
    best = np.argmin(obj, axis=1)
    return Y[np.arange(X.shape[0]), best]


def _nonsingular_subsets(H: np.ndarray, size: int):
    rows, invs = [], []
    for S in itertools.combinations(range(len(H)), size):
        M = H[list(S)]
        if abs(np.linalg.det(M)) > 1e-12 * max(1.0, np.abs(M).max() ** size):
            rows.append(S)
            invs.append(np.linalg.inv(M))
    return np.array(rows, dtype=int).reshape(-1, size), np.array(invs).reshape(-1, size, size)


def _ball_facets(B: np.ndarray) -> np.ndarray:
    """Facet normals g of {y : ||B y||_1 <= 1} = {y : g.y <= 1}.

    The set is the polar of the zonotope B^T [-1, 1]^n, so its facets are
    the zonotope's vertices.
    """
    n, k = B.shape
    S = np.array(list(itertools.product((-1.0, 1.0), repeat=n)))
    Z = np.unique(np.round(S @ B, 12), axis=0)
    if k == 1:
        return np.array([[Z.max()], [Z.min()]])
    from scipy.spatial import ConvexHull

    return Z[ConvexHull(Z).vertices]


@lru_cache(maxsize=64)
def _l1_ball_systems(key: bytes, n: int, k: int):
    B = np.frombuffer(key, dtype=float).reshape(n, k)
    G = _ball_facets(B)
    rows, invs = _nonsingular_subsets(np.vstack([B, G]), k)
    return G, rows, invs


@lru_cache(maxsize=64)
def _linf_systems(key: bytes, n: int, k: int, ball: bool):
    B = np.frombuffer(key, dtype=float).reshape(n, k)
    one = np.ones((n, 1))
    blocks = [np.hstack([-B, -one]), np.hstack([B, -one])]
    if ball:
        blocks += [np.hstack([B, 0 * one]), np.hstack([-B, 0 * one])]
    A = np.vstack(blocks)
    rows, invs = _nonsingular_subsets(A, k + 1)
    return A, rows, invs


def _enum_size(n: int, k: int, p, ball: bool) -> int:
    if p == 1.0:
        if not ball:
            return math.comb(n, k)
        if n > 12:
            return ENUMERATION_CAP + 1
        cells = 2 * sum(math.comb(n - 1, i) for i in range(k))
        return math.comb(n + cells, k)
    return math.comb((4 if ball else 2) * n, k + 1)


def _l1_ball_enum(Bs, xs):
    n, k = Bs.shape
    G, rows, invs = _l1_ball_systems(np.ascontiguousarray(Bs).tobytes(), n, k)
    rhs = np.r_[xs, np.ones(len(G))]
    Y = np.einsum("sij,sj->si", invs, rhs[rows])
    ok = (Y @ G.T <= 1.0 + 1e-9).all(axis=1)
    if not ok.any():
        return None
    Y = Y[ok]
    obj = np.abs(xs[None, :] - Y @ Bs.T).sum(axis=1)
    return Y[int(np.argmin(obj))]


def _linf_enum(Bs, xs, ball):
    n, k = Bs.shape
    A, rows, invs = _linf_systems(np.ascontiguousarray(Bs).tobytes(), n, k, ball)
    rhs = np.r_[-xs, xs] if not ball else np.r_[-xs, xs, np.ones(2 * n)]
    Z = np.einsum("sij,sj->si", invs, rhs[rows])
    scale = 1.0 + float(np.abs(xs).max())
    ok = (Z @ A.T <= rhs[None, :] + 1e-9 * scale).all(axis=1)
    if not ok.any():
        return None
    Z = Z[ok]
    return Z[int(np.argmin(Z[:, -1])), :k]


def _polyhedral(space, x, B, ball) -> Solution:
    wts = _weights(space)
    xs, Bs = (x, B) if wts is None else (wts * x, wts[:, None] * B)
    n, k = Bs.shape
    p = space.p
    if _enum_size(n, k, p, ball) <= ENUMERATION_CAP:
        if p == 1.0 and not ball:
            y = l1_regression(Bs, xs[None, :])[0]
        elif p == 1.0:
            y = _l1_ball_enum(Bs, xs)
        else:
            y = _linf_enum(Bs, xs, ball)
        if y is not None:
            return _finish(space, x, B, y, ball, "vertex-enumeration", True)
    I = np.eye(n)
    if p == 1.0:
        nt = n if ball else 0
        c = np.r_[np.zeros(k), np.ones(n), np.zeros(nt)]
        blocks = [
            np.hstack([-Bs, -I, np.zeros((n, nt))]),
            np.hstack([Bs, -I, np.zeros((n, nt))]),
        ]
        rhs = [-xs, xs]
        if ball:
            blocks += [
                np.hstack([Bs, np.zeros((n, n)), -I]),
                np.hstack([-Bs, np.zeros((n, n)), -I]),
                np.r_[np.zeros(k + n), np.ones(n)][None, :],
            ]
            rhs += [np.zeros(n), np.zeros(n), [1.0]]
        bounds = [(None, None)] * k + [(0, None)] * (n + nt)
    else:  # p = inf
        c = np.r_[np.zeros(k), 1.0]
        ones = np.ones((n, 1))
        blocks = [np.hstack([-Bs, -ones]), np.hstack([Bs, -ones])]
        rhs = [-xs, xs]
        if ball:
            blocks += [np.hstack([Bs, 0 * ones]), np.hstack([-Bs, 0 * ones])]
            rhs += [np.ones(n), np.ones(n)]
        bounds = [(None, None)] * k + [(0, None)]
    res = linprog(c, A_ub=np.vstack(blocks), b_ub=np.concatenate(rhs), bounds=bounds, method="highs")
    if res.status != 0 or res.x is None:
        return _finish(space, x, B, np.zeros(k), ball, "linprog", False)
    return _finish(space, x, B, res.x[:k], ball, "linprog", True)


# -- smooth l_p --------------------------------------------------------------


def _smooth(space, x, B, ball) -> Solution:
    wts = _weights(space)
    xs, Bs = (x, B) if wts is None else (wts * x, wts[:, None] * B)
    p = float(space.p)
    k = B.shape[1]
    scale = float(norms(Lp(len(xs), p), xs[None, :])[0])
    if scale == 0.0:
        return _finish(space, x, B, np.zeros(k), ball, "slsqp", True)
    xn = xs / scale
    rho_p = scale ** (-p)  # ball radius^p after rescaling

    def f(y):
        r = xn - Bs @ y
        return float(np.sum(np.abs(r) ** p))

    def g(y):
        r = xn - Bs @ y
        return -Bs.T @ (p * np.sign(r) * np.abs(r) ** (p - 1.0))

    cons = []
    if ball:
        cons = [
            {
                "type": "ineq",
                "fun": lambda y: rho_p - float(np.sum(np.abs(Bs @ y) ** p)),
                "jac": lambda y: -Bs.T @ (p * np.sign(Bs @ y) * np.abs(Bs @ y) ** (p - 1.0)),
            }
        ]
    y0, *_ = np.linalg.lstsq(Bs, xn, rcond=None)
    if ball:
        r0 = float(np.sum(np.abs(Bs @ y0) ** p)) ** (1.0 / p)
        limit = rho_p ** (1.0 / p)
        if r0 > limit:
            y0 = y0 * (limit / r0)
    best = None
    # at ftol 1e-15 the line search can stall at the optimum (status 8); 1e-12 is the fallback
    for ftol, start in ((1e-15, y0), (1e-15, np.zeros(k)), (1e-12, None)):
        if start is None:
            start = best.coeffs / scale
        res = minimize(
            f, start, jac=g, constraints=cons, method="SLSQP",
            options={"ftol": ftol, "maxiter": 500},
        )
        sol = _finish(space, x, B, res.x * scale, ball, "slsqp", res.success)
        if best is None or sol.value < best.value or (sol.converged and sol.value <= best.value + 1e-12):
            best = sol
        if res.success:
            break
    return best


# -- generic: exact penalty + subgradient ------------------------------------


def _generic(space, x, B, ball, seed=0) -> Solution:
    k = B.shape[1]

    def obj(y):
        w = B @ y
        val = norm_eval(space, x - w)
        if ball:
            val += max(0.0, norm_eval(space, w) - 1.0)
        return val

    def subgrad(y):
        w = B @ y
        g = -B.T @ norm_subgradient(space, x - w)
        if ball and norm_eval(space, w) > 1.0:
            g = g + B.T @ norm_subgradient(space, w)
        return g

    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x51ED]))
    y_ls, *_ = np.linalg.lstsq(B, x, rcond=None)
    starts = [np.zeros(k), y_ls] + [
        rng.standard_normal(k) * (np.linalg.norm(y_ls) + 1.0)
        for _ in range(SUBGRADIENT_RESTARTS - 2)
    ]
    col = max(float(np.max(norms(space, B.T))), 1e-12)
    step0 = (norm_eval(space, x) + 1.0) / col
    finals = []
    for y in starts:
        y = y.astype(float)
        best_y, best_v = y.copy(), obj(y)
        avg, wsum = np.zeros(k), 0.0
        stall = 0
        for t in range(SUBGRADIENT_ITERS):
            g = subgrad(y)
            gn = np.linalg.norm(g)
            if gn == 0.0:
                break
            a = step0 / math.sqrt(t + 1.0)
            y = y - a * g / gn
            avg += a * y
            wsum += a
            for cand in (y, avg / wsum):
                v = obj(cand)
                if v < best_v - 1e-14 * (1.0 + best_v):
                    best_v, best_y, stall = v, cand.copy(), 0
            stall += 1
            if stall > 500:
                break
        res = minimize(obj, best_y, method="Nelder-Mead",
                       options={"xatol": 1e-11, "fatol": 1e-13, "maxiter": 4000 * k})
        if res.fun < best_v:
            best_y, best_v = res.x, float(res.fun)
        finals.append((best_v, best_y))
    vals = [v for v, _ in finals]
    v_min = min(vals)
    spread = max(vals) - v_min
    y = finals[vals.index(v_min)][1]
    sol = _finish(space, x, B, y, ball, "subgradient", spread <= SOLVER_TOL * (1.0 + v_min))
    return sol


# -- dispatch ----------------------------------------------------------------


def residual_min(space, x, F, ball: bool = False, seed: int = 0) -> Solution:
    """Minimize ``||x - B y||`` over y (subject to ``||B y|| <= 1`` if ``ball``)."""
    from .znorm import AtomicGauge, gauge_residual_min

    n = dim(space)
    x = as_vector(x, n)
    B = _basis_of(F, n)
    space = simplify(space)
    if isinstance(space, QuasiLr):
        raise UnsupportedSpaceError("residual problems need a convex (Banach) norm")
    if isinstance(space, AtomicGauge):
        return gauge_residual_min(space, x, B, ball)
    if isinstance(space, (Lp, WeightedLp)):
        if space.p is INF or space.p == 1.0:
            return _polyhedral(space, x, B, ball)
        if space.p == 2.0:
            return _euclid(space, x, B, ball)
        return _smooth(space, x, B, ball)
    return _generic(space, x, B, ball, seed)


def solve_quotient(parent, kernel: Subspace, v) -> Solution:
    if kernel.parent != parent:
        raise ValueError("kernel must be a subspace of parent")
    return residual_min(parent, v, kernel, ball=False)


def quotient_norm_eval(parent, kernel: Subspace, v) -> float:
    """``min_{e in kernel} ||v - e||`` (v given in parent coordinates)."""
    sol = solve_quotient(parent, kernel, v)
    _warn(sol, "quotient_norm_eval")
    return sol.value


def solve_dist_to_unit_ball(ambient, x, F) -> Solution:
    if isinstance(F, Subspace) and F.parent != ambient:
        raise ValueError("F must be a subspace of the ambient space")
    return residual_min(ambient, x, F, ball=True)


def dist_to_unit_ball(ambient, x, F) -> float:
    """``d(x, B_F) = min { ||x - w|| : w in F, ||w|| <= 1 }``."""
    sol = solve_dist_to_unit_ball(ambient, x, F)
    _warn(sol, "dist_to_unit_ball")
    return sol.value


def _canonical_sign(w: np.ndarray) -> float:
    nz = np.flatnonzero(w)
    return 1.0 if nz.size == 0 or w[nz[0]] > 0 else -1.0


def lift_from_quotient(parent, kernel: Subspace, coset_rep, theta: float,
                       return_flag: bool = False):
    """A near-minimal representative of ``coset_rep + kernel``.

    Homogeneous and odd by construction: the coset is reduced to its
    chart coordinates, normalized to a canonical unit representative, lifted
    by an exact quotient-norm solve, and rescaled.
    """
    if not theta > 1.0:
        raise ValueError("theta must be > 1")
    v = as_vector(coset_rep, dim(parent))
    C = kernel.complement
    w = C.T @ v
    s = float(np.linalg.norm(w))
    if s == 0.0:
        z = np.zeros_like(v)
        return (z, True) if return_flag else z
    sign = _canonical_sign(w)
    w_hat = (sign / s) * w
    sol = solve_quotient(parent, kernel, C @ w_hat)
    z_hat = C @ w_hat - sol.point
    ok = sol.converged and norm_eval(parent, z_hat) <= theta * sol.value + 1e-12
    if not ok:
        warnings.warn("lift_from_quotient: factor theta not certified", ConvergenceWarning, stacklevel=2)
    z = (sign * s) * z_hat
    return (z, ok) if return_flag else z
