"""Homogeneous couplings between normed spaces and their defects.

A coupling is a pair of odd, positively homogeneous, norm-nonexpansive maps
``Phi: X -> Y`` and ``Psi: Y -> X``.  For finite families x_1..x_m in X and
y_1..y_n in Y put

    u = sum x_i - sum Psi(y_j),     v = sum Phi(x_i) - sum y_j .

The defects compare ``||u||_X`` with ``||v||_Y``:

* delta:      |‖u‖ - ‖v‖| / (sum ‖x_i‖ + sum ‖y_j‖)
* delta_r(r): (|‖u‖^r - ‖v‖^r| / (sum ‖x_i‖^r + sum ‖y_j‖^r))^(1/r)
* d_small:    ½ |‖u‖ - ‖v‖| for families with m + n = 2 inside the unit balls,
              i.e. the two-point distortion of the union of the two graphs.

The suprema are over unbounded families, so every estimate returned here is
a lower bound.  Flipping the sign in front of the Psi / y sums gives the same
supremum because the maps are odd.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .solvers import lift_from_quotient
from .spaces import (
    GapkitError,
    Lp,
    Quotient,
    Subspace,
    as_exponent,
    as_vector,
    dim,
    format_space,
    load_subspace,
    norm_eval,
    norms,
    parse_space,
    INF,
    _split_top,
)

LOG_RADIUS = (math.log(0.1), math.log(10.0))
ASCENT_ROUNDS = 200
ASCENT_PATIENCE = 20
ASCENT_SCALE = 0.3


class InvalidCouplingError(GapkitError, ValueError):
    """A map failed the homogeneity, oddness or nonexpansiveness check."""


class MatchingError(GapkitError, RuntimeError):
    """A cell center found no partner within 2 sigma."""


def _rng(*key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


# ---------------------------------------------------------------------------
# map recipes


class MapRecipe:
    """An evaluable map between coordinate spaces."""

    support: np.ndarray | None = None  # unit rays the map is defined on (None: everywhere)

    def __call__(self, x) -> np.ndarray:
        return self.rows(np.asarray(x, dtype=float)[None, :])[0]

    def rows(self, X: np.ndarray) -> np.ndarray:
        return np.array([self(x) for x in X])


@dataclass(frozen=True)
class Identity(MapRecipe):
    def rows(self, X):
        return np.array(X, dtype=float, copy=True)

    def spec(self):
        return "identity"


@dataclass(frozen=True)
class Zero(MapRecipe):
    out_dim: int

    def rows(self, X):
        return np.zeros((len(X), self.out_dim))

    def spec(self):
        return "zero"


@dataclass(frozen=True)
class Scale(MapRecipe):
    c: float

    def __post_init__(self):
        if not 0.0 < self.c <= 1.0:
            raise ValueError("scale factor must lie in (0, 1]")

    def rows(self, X):
        return self.c * np.asarray(X, dtype=float)

    def spec(self):
        return f"scale:{self.c!r}"


@dataclass(frozen=True)
class Mazur(MapRecipe):
    """Homogeneous Mazur map l_p -> l_q: x = ‖x‖_p xi, xi -> sgn(xi) |xi|^(p/q)."""

    p_from: float
    p_to: float

    def __post_init__(self):
        for p in (self.p_from, self.p_to):
            p = as_exponent(p)
            if p is INF:
                raise ValueError("Mazur maps need finite exponents")
        object.__setattr__(self, "p_from", float(self.p_from))
        object.__setattr__(self, "p_to", float(self.p_to))

    def rows(self, X):
        X = np.asarray(X, dtype=float)
        if self.p_from == self.p_to:
            return X.copy()
        n = norms(Lp(X.shape[1], self.p_from), X)
        safe = np.where(n > 0, n, 1.0)[:, None]
        xi = X / safe
        return safe * np.sign(xi) * np.abs(xi) ** (self.p_from / self.p_to)

    def spec(self):
        return f"mazur:{self.p_from:g}:{self.p_to:g}"


@dataclass(frozen=True, eq=False)
class QuotientLift(MapRecipe):
    """``x -> theta^-1 q_F(lift_E(x))`` from Z/E to Z/F (chart coordinates)."""

    Z: object
    E: Subspace
    F: Subspace
    theta: float

    def __post_init__(self):
        if not self.theta > 1.0:
            raise ValueError("theta must be > 1")

    def __call__(self, w):
        z = lift_from_quotient(self.Z, self.E, self.E.complement @ np.asarray(w, dtype=float), self.theta)
        return self.F.complement.T @ z / self.theta

    def rows(self, X):
        out = np.empty((len(X), self.F.complement.shape[1]))
        for i, x in enumerate(X):
            out[i] = self(x)
        return out


@dataclass(frozen=True, eq=False)
class PartitionBijection(MapRecipe):
    """Odd homogeneous bijection between finitely many rays.

    Row i of ``src`` (a unit vector of ``space_from``) is sent to row i of
    ``dst``; other inputs must lie on one of the rays ``±src[i]``.
    """

    space_from: object
    src: np.ndarray
    dst: np.ndarray
    tol: float = 1e-9

    @property
    def support(self):
        return self.src

    def inverse(self, space_to) -> "PartitionBijection":
        return PartitionBijection(space_to, self.dst, self.src, self.tol)

    def rows(self, X):
        X = np.asarray(X, dtype=float)
        out = np.zeros((len(X), self.dst.shape[1]))
        n = norms(self.space_from, X)
        live = n > 0
        if not live.any():
            return out
        U = X[live] / n[live, None]
        G = U @ self.src.T
        scale = np.linalg.norm(U, axis=1)[:, None] * np.linalg.norm(self.src, axis=1)[None, :]
        i = np.argmax(np.abs(G) / scale, axis=1)
        k = np.arange(len(U))
        sign = np.where(G[k, i] >= 0, 1.0, -1.0)
        # direct differences: the Gram identity loses half the digits here
        d = np.linalg.norm(U - sign[:, None] * self.src[i], axis=1)
        if np.any(d > self.tol * (1.0 + np.linalg.norm(self.src[i], axis=1))):
            raise ValueError("input is not on a ray of the bijection table")
        out[live] = (sign * n[live])[:, None] * self.dst[i]
        return out


@dataclass(frozen=True)
class Composite(MapRecipe):
    maps: tuple

    def rows(self, X):
        for m in self.maps:
            X = m.rows(X)
        return X


# ---------------------------------------------------------------------------
# couplings and families


@dataclass(eq=False)
class Coupling:
    domain: object
    codomain: object
    phi: MapRecipe
    psi: MapRecipe
    name: str = ""
    _validated: bool = field(default=False, repr=False)

    def phi_rows(self, X) -> np.ndarray:
        return self.phi.rows(np.atleast_2d(np.asarray(X, dtype=float)).reshape(-1, dim(self.domain)))

    def psi_rows(self, Y) -> np.ndarray:
        return self.psi.rows(np.atleast_2d(np.asarray(Y, dtype=float)).reshape(-1, dim(self.codomain)))

    def validate(self, samples: int = 32, seed: int = 0, tol: float = 1e-9) -> None:
        """Sample homogeneity, oddness and nonexpansiveness of both maps."""
        if self._validated:
            return
        rng = _rng(seed, 991)
        for space, other, f, sup in ((self.domain, self.codomain, self.phi_rows, self.phi.support),
                                     (self.codomain, self.domain, self.psi_rows, self.psi.support)):
            V = _draw_units(space, rng, samples, sup)
            lam = np.exp(rng.uniform(*LOG_RADIUS, size=samples))
            FV, FL, FN = f(V), f(V * lam[:, None]), f(-V)
            nv, nf = norms(space, V), norms(other, FV)
            scale = 1.0 + np.abs(FV).max()
            if np.abs(FL - lam[:, None] * FV).max() > tol * scale * lam.max():
                raise InvalidCouplingError(f"{self.name or 'map'} is not positively homogeneous")
            if np.abs(FN + FV).max() > tol * scale:
                raise InvalidCouplingError(f"{self.name or 'map'} is not odd")
            if np.any(nf > nv * (1.0 + 1e-7) + 1e-12):
                raise InvalidCouplingError(f"{self.name or 'map'} is not norm-nonexpansive")
        self._validated = True


def _draw_units(space, rng, m, support=None):
    if support is not None:
        idx = rng.integers(len(support), size=m)
        sgn = np.where(rng.random(m) < 0.5, -1.0, 1.0)
        return support[idx] * sgn[:, None]
    G = rng.standard_normal((m, dim(space)))
    return G / norms(space, G)[:, None]


@dataclass
class Family:
    xs: np.ndarray  # (m, dim X)
    ys: np.ndarray  # (n, dim Y)

    @property
    def size(self) -> int:
        return len(self.xs) + len(self.ys)


def _sums(c: Coupling, xs, ys, phix=None, psiy=None):
    nx, ny = dim(c.domain), dim(c.codomain)
    xs = np.asarray(xs, dtype=float).reshape(-1, nx)
    ys = np.asarray(ys, dtype=float).reshape(-1, ny)
    if phix is None:
        phix = c.phi_rows(xs) if len(xs) else np.zeros((0, ny))
    if psiy is None:
        psiy = c.psi_rows(ys) if len(ys) else np.zeros((0, nx))
    u = xs.sum(axis=0) - psiy.sum(axis=0)
    v = phix.sum(axis=0) - ys.sum(axis=0)
    return u, v


def family_defect(c: Coupling, fam: Family, kind: str = "delta", r: float | None = None) -> float:
    """The defect ratio of one family."""
    u, v = _sums(c, fam.xs, fam.ys)
    nu, nv = norm_eval(c.domain, u), norm_eval(c.codomain, v)
    nxs = norms(c.domain, fam.xs) if len(fam.xs) else np.zeros(0)
    nys = norms(c.codomain, fam.ys) if len(fam.ys) else np.zeros(0)
    return _ratio(kind, nu, nv, nxs, nys, r)


def _ratio(kind, nu, nv, nxs, nys, r):
    if kind == "d_small":
        return 0.5 * abs(nu - nv)
    if kind == "delta":
        den = float(nxs.sum() + nys.sum())
        return abs(nu - nv) / den if den > 0 else 0.0
    den = float((nxs ** r).sum() + (nys ** r).sum())
    return (abs(nu ** r - nv ** r) / den) ** (1.0 / r) if den > 0 else 0.0


@dataclass
class DefectEstimate:
    value: float
    kind: str
    budget: int
    samples: int
    seed: int
    witness: Family
    r: float | None = None

    def recompute(self, c: Coupling) -> float:
        return family_defect(c, self.witness, "delta_r" if self.r is not None else self.kind, self.r)


def kind_tag(kind, r=None) -> str:
    return f"delta_r({r:g})" if kind == "delta_r" else kind


# -- family pools -------------------------------------------------------------


def _family_pool(c: Coupling, s: int, samples: int, seed: int):
    """``samples`` random families of exactly ``s`` vectors.

    Every array comes from its own stream keyed by (seed, s), so the pool is
    prefix-stable in ``samples`` and identical across budgets.
    """
    nx, ny = dim(c.domain), dim(c.codomain)
    mask = _rng(seed, 1, s, 0).random((samples, s)) < 0.5
    rad = np.exp(_rng(seed, 1, s, 3).uniform(*LOG_RADIUS, size=(samples, s)))
    X = _draw_units(c.domain, _rng(seed, 1, s, 1), samples * s, c.phi.support).reshape(samples, s, nx)
    Y = _draw_units(c.codomain, _rng(seed, 1, s, 2), samples * s, c.psi.support).reshape(samples, s, ny)
    return mask, X * rad[..., None], Y * rad[..., None], rad


def _pool_ratios(c, kind, r, mask, X, Y, rad):
    samples, s, nx = X.shape
    ny = Y.shape[2]
    PX = c.phi_rows(X.reshape(-1, nx)).reshape(samples, s, ny)
    QY = c.psi_rows(Y.reshape(-1, ny)).reshape(samples, s, nx)
    m = mask[..., None]
    u = np.where(m, X, -QY).sum(axis=1)
    v = np.where(m, PX, -Y).sum(axis=1)
    nu, nv = norms(c.domain, u), norms(c.codomain, v)
    if kind == "delta":
        return np.abs(nu - nv) / rad.sum(axis=1)
    return (np.abs(nu ** r - nv ** r) / (rad ** r).sum(axis=1)) ** (1.0 / r)


def _records(values: np.ndarray) -> list:
    """Indices where the running maximum strictly increases."""
    out, best = [], -np.inf
    for i, v in enumerate(values):
        if v > best:
            out.append(i)
            best = v
    return out


def _split(mask_row, X_row, Y_row):
    return Family(X_row[mask_row].copy(), Y_row[~mask_row].copy())


class _Ascent:
    """Coordinate-wise random local ascent on one family."""

    def __init__(self, c, kind, r, fam, rng, in_ball=False, rounds=ASCENT_ROUNDS):
        self.c, self.kind, self.r, self.rng = c, kind, r, rng
        self.in_ball = in_ball
        self.rounds = rounds
        self.xs, self.ys = fam.xs.copy(), fam.ys.copy()
        self.px = c.phi_rows(self.xs) if len(self.xs) else np.zeros((0, dim(c.codomain)))
        self.qy = c.psi_rows(self.ys) if len(self.ys) else np.zeros((0, dim(c.domain)))
        self.nx = norms(c.domain, self.xs) if len(self.xs) else np.zeros(0)
        self.ny = norms(c.codomain, self.ys) if len(self.ys) else np.zeros(0)
        self.value = self._value(self.xs, self.ys, self.px, self.qy, self.nx, self.ny)

    def _value(self, xs, ys, px, qy, nx, ny):
        u, v = _sums(self.c, xs, ys, px, qy)
        return _ratio(self.kind, norm_eval(self.c.domain, u), norm_eval(self.c.codomain, v), nx, ny, self.r)

    def _propose(self, vec, space, support, t):
        nv = norm_eval(space, vec)
        if support is not None:
            base = _draw_units(space, self.rng, 1, support)[0]
            new = base * nv * math.exp(t * self.rng.standard_normal())
        else:
            g = self.rng.standard_normal(vec.shape)
            new = vec + t * max(nv, 1e-12) * g / norm_eval(space, g)
        if self.in_ball:
            nn = norm_eval(space, new)
            if nn > 1.0:
                new = new / nn
        return new

    def run(self) -> Family:
        m, n = len(self.xs), len(self.ys)
        t, fails = ASCENT_SCALE, 0
        for _ in range(self.rounds):
            j = int(self.rng.integers(m + n))
            xs, ys, px, qy = self.xs.copy(), self.ys.copy(), self.px.copy(), self.qy.copy()
            nx, ny = self.nx.copy(), self.ny.copy()
            if j < m:
                xs[j] = self._propose(xs[j], self.c.domain, self.c.phi.support, t)
                px[j] = self.c.phi_rows(xs[j])[0]
                nx[j] = norm_eval(self.c.domain, xs[j])
            else:
                k = j - m
                ys[k] = self._propose(ys[k], self.c.codomain, self.c.psi.support, t)
                qy[k] = self.c.psi_rows(ys[k])[0]
                ny[k] = norm_eval(self.c.codomain, ys[k])
            val = self._value(xs, ys, px, qy, nx, ny)
            if val > self.value:
                self.xs, self.ys, self.px, self.qy, self.nx, self.ny = xs, ys, px, qy, nx, ny
                self.value, fails = val, 0
            else:
                fails += 1
                if fails >= ASCENT_PATIENCE:
                    t, fails = t / 2, 0
        return Family(self.xs, self.ys)


def _estimate(c, kind, r, budget, samples, seed, rounds) -> DefectEstimate:
    c.validate(seed=seed)
    if budget < 2:
        raise ValueError("budget must be >= 2")
    if samples < 1:
        raise ValueError("samples must be >= 1")
    best, witness = -np.inf, None
    ratio_kind = "delta" if kind == "delta" else "delta_r"
    for s in range(1, budget + 1):
        mask, X, Y, rad = _family_pool(c, s, samples, seed)
        vals = _pool_ratios(c, ratio_kind, r, mask, X, Y, rad)
        for i in _records(vals):
            fam = _split(mask[i], X[i], Y[i])
            asc = _Ascent(c, ratio_kind, r, fam, _rng(seed, 2, s, i), rounds=rounds)
            start = family_defect(c, fam, ratio_kind, r)
            if start > best:
                best, witness = start, fam
            fam = asc.run()
            val = family_defect(c, fam, ratio_kind, r)
            if val > best:
                best, witness = val, fam
    return DefectEstimate(float(max(best, 0.0)), kind_tag(kind, r), budget, samples, seed, witness, r)


def delta_estimate(c: Coupling, budget: int = 5, samples: int = 2000, seed: int = 0,
                   rounds: int = ASCENT_ROUNDS) -> DefectEstimate:
    """Sampled lower bound for the Kadets defect of ``c``.

    For every family size 1..budget a pool of ``samples`` random families is
    scored; each family that sets a new running maximum in its pool is then
    improved by local ascent.  The pools do not depend on ``budget`` and are
    prefix-stable in ``samples``, so the value is monotone in both.
    """
    return _estimate(c, "delta", None, budget, samples, seed, rounds)


def delta_r_estimate(c: Coupling, r: float, budget: int = 5, samples: int = 2000, seed: int = 0,
                     rounds: int = ASCENT_ROUNDS) -> DefectEstimate:
    if not 0.0 < r < 1.0:
        raise ValueError("r must lie in (0, 1)")
    return _estimate(c, "delta_r", r, budget, samples, seed, rounds)


# -- two-point distortion -----------------------------------------------------


_PAIRS = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))


def graph_pair_family(kinds, pts) -> tuple:
    """Turn two graph elements into an m + n = 2 family.

    ``kinds[i]`` is 'x' for (a, Phi a) or 'y' for (Psi b, b); ``pts[i]`` is a
    or b.  The family's (u, v) are the two differences a1 - a2, b1 - b2.
    """
    (k1, k2), (p1, p2) = kinds, pts
    if k1 == "x" and k2 == "x":
        return [p1, -p2], []
    if k1 == "y" and k2 == "y":
        return [], [-p1, p2]
    if k1 == "x":
        return [p1], [p2]
    return [p2], [p1]


def _ball_points(space, rng, m, support):
    U = _draw_units(space, rng, m, support)
    on_sphere = rng.random(m) < 0.5
    t = np.where(on_sphere, 1.0, rng.random(m) ** (1.0 / dim(space)))
    return U * t[:, None]


def _d_pool(c, samples, seed):
    A = _ball_points(c.domain, _rng(seed, 3, 1), 2 * samples, c.phi.support).reshape(samples, 2, -1)
    B = _ball_points(c.codomain, _rng(seed, 3, 2), 2 * samples, c.psi.support).reshape(samples, 2, -1)
    nx, ny = A.shape[2], B.shape[2]
    PA = c.phi_rows(A.reshape(-1, nx)).reshape(samples, 2, ny)
    QB = c.psi_rows(B.reshape(-1, ny)).reshape(samples, 2, nx)
    left = np.concatenate([A, QB], axis=1)  # graph elements 0,1 from X, 2,3 from Y
    right = np.concatenate([PA, B], axis=1)
    vals = np.empty((samples, len(_PAIRS)))
    for k, (i, j) in enumerate(_PAIRS):
        vals[:, k] = 0.5 * np.abs(norms(c.domain, left[:, i] - left[:, j])
                                  - norms(c.codomain, right[:, i] - right[:, j]))
    return A, B, vals


def _pair_family(A_row, B_row, pair):
    kinds = ["x", "x", "y", "y"]
    pts = [A_row[0], A_row[1], B_row[0], B_row[1]]
    i, j = pair
    xs, ys = graph_pair_family((kinds[i], kinds[j]), (pts[i], pts[j]))
    nxd, nyd = len(A_row[0]), len(B_row[0])
    return Family(np.array(xs).reshape(-1, nxd), np.array(ys).reshape(-1, nyd))


def d_small_estimate(c: Coupling, samples: int = 10_000, seed: int = 0,
                     rounds: int = ASCENT_ROUNDS) -> DefectEstimate:
    """Sampled lower bound for the two-point distortion of the ball restrictions.

    Each sample draws a1, a2 in B_X and b1, b2 in B_Y (half of them on the
    spheres), forms the graph elements (a, Phi a), (Psi b, b) and scores all
    six pairs.  Record samples are improved by local ascent inside the balls.
    """
    c.validate(seed=seed)
    A, B, vals = _d_pool(c, samples, seed)
    per = vals.max(axis=1)
    best, witness = -np.inf, None
    for i in _records(per):
        fam = _pair_family(A[i], B[i], _PAIRS[int(np.argmax(vals[i]))])
        start = family_defect(c, fam, "d_small")
        if start > best:
            best, witness = start, fam
        fam = _Ascent(c, "d_small", None, fam, _rng(seed, 4, i), in_ball=True, rounds=rounds).run()
        val = family_defect(c, fam, "d_small")
        if val > best:
            best, witness = val, fam
    return DefectEstimate(float(max(best, 0.0)), "d_small", 2, samples, seed, witness)


@dataclass
class StructuralReport:
    families: int
    d_max: float
    delta_max: float  # max delta ratio over the same families
    worst_d_minus_delta: float  # must be <= 1e-12
    r: float | None = None
    worst_thm36_slack: float | None = None  # D - 2^(2/r-1) max(delta_r) ; must be <= 1e-12

    @property
    def ok(self) -> bool:
        good = self.worst_d_minus_delta <= 1e-12
        if self.worst_thm36_slack is not None:
            good = good and self.worst_thm36_slack <= 1e-12
        return good


def _augmented(c, fam):
    """The families with one extra vector making u = 0 (resp. v = 0)."""
    u, v = _sums(c, fam.xs, fam.ys)
    fx = Family(np.vstack([fam.xs, -u[None, :]]), fam.ys)
    fy = Family(fam.xs, np.vstack([fam.ys, v[None, :]]))
    return fx, fy


def structural_check(c: Coupling, samples: int = 2000, seed: int = 0, r: float | None = None) -> StructuralReport:
    """Per-family consistency on the two-point pool used by ``d_small_estimate``.

    * every m + n = 2 unit-ball family has D <= delta ratio (D families are
      delta families with denominators <= 2);
    * with ``r``: D <= 2^(2/r - 1) max(delta_r(F_X), delta_r(F_Y)), where
      F_X, F_Y append the vector that cancels u (resp. v).
    """
    c.validate(seed=seed)
    A, B, vals = _d_pool(c, samples, seed)
    if r is None:
        # a pair family's u, v are the graph differences scored by the pool,
        # and its delta denominator is the sum of the two point norms
        pn = np.concatenate([norms(c.domain, A.reshape(-1, A.shape[2])).reshape(samples, 2),
                             norms(c.codomain, B.reshape(-1, B.shape[2])).reshape(samples, 2)], axis=1)
        den = np.stack([pn[:, i] + pn[:, j] for i, j in _PAIRS], axis=1)
        dl = np.divide(2.0 * vals, den, out=np.zeros_like(vals), where=den > 0)
        return StructuralReport(samples * len(_PAIRS), float(vals.max()), float(dl.max()),
                                float((vals - dl).max()))
    d_max = delta_max = -np.inf
    worst = worst36 = -np.inf
    for i in range(samples):
        for pair in _PAIRS:
            fam = _pair_family(A[i], B[i], pair)
            d = family_defect(c, fam, "d_small")
            dl = family_defect(c, fam, "delta")
            d_max, delta_max = max(d_max, d), max(delta_max, dl)
            worst = max(worst, d - dl)
            if r is not None:
                fx, fy = _augmented(c, fam)
                s = max(family_defect(c, fx, "delta_r", r), family_defect(c, fy, "delta_r", r))
                worst36 = max(worst36, d - 2.0 ** (2.0 / r - 1.0) * s)
    return StructuralReport(samples * len(_PAIRS), float(d_max), float(delta_max), float(worst),
                            r, float(worst36) if r is not None else None)


# ---------------------------------------------------------------------------
# constructions


def identity_coupling(space) -> Coupling:
    return Coupling(space, space, Identity(), Identity(), "identity")


def zero_coupling(X, Y) -> Coupling:
    return Coupling(X, Y, Zero(dim(Y)), Zero(dim(X)), "zero")


def scale_coupling(space, c: float) -> Coupling:
    return Coupling(space, space, Scale(c), Scale(c), f"scale:{c:g}")


def mazur_coupling(n: int, p, q) -> Coupling:
    """Mazur maps between ``Lp(n, p)`` and ``Lp(n, q)`` (norm preserving, mutually inverse)."""
    p, q = float(as_exponent(p)), float(as_exponent(q))
    return Coupling(Lp(n, p), Lp(n, q), Mazur(p, q), Mazur(q, p), f"mazur:{p:g}:{q:g}")


def quotient_coupling(Z, E: Subspace, F: Subspace, theta: float) -> Coupling:
    """Coupling between Z/E and Z/F built from near-minimal lifts."""
    if E.parent != Z or F.parent != Z:
        raise ValueError("E and F must be subspaces of Z")
    return Coupling(Quotient(Z, E), Quotient(Z, F), QuotientLift(Z, E, F, theta),
                    QuotientLift(Z, F, E, theta), f"quotlift:{theta:g}")


# -- the norm-preserving bijection --------------------------------------------


@dataclass
class OmegaResult:
    coupling: Coupling
    centers_x: np.ndarray
    centers_y: np.ndarray
    rays: int  # rays in the table (up to sign)
    dropped: int  # sampled rays left unmatched by cell truncation
    worst_defect: float  # max family ratio seen in the post-check
    bound: float  # 14 sigma

    @property
    def ok(self) -> bool:
        return self.worst_defect <= self.bound


def _canon(G):
    s = np.where(G[:, :1] < 0, -1.0, 1.0)
    return G * s


def _nearest_center(space, P, C):
    """Index of the nearest center up to sign (lowest index on ties) and the sign."""
    best = np.full(len(P), np.inf)
    idx = np.zeros(len(P), dtype=int)
    sgn = np.ones(len(P))
    for i, c in enumerate(C):
        dp, dm = norms(space, P - c), norms(space, P + c)
        d = np.minimum(dp, dm)
        better = d < best
        best = np.where(better, d, best)
        idx = np.where(better, i, idx)
        sgn = np.where(better, np.where(dp <= dm, 1.0, -1.0), sgn)
    return idx, sgn


def build_omega(Z, X: Subspace, Y: Subspace, sigma: float, sphere_samples: int = 2000,
                seed: int = 0, check_families: int = 2000, check_budget: int = 5) -> OmegaResult:
    """Norm-preserving odd bijection between sampled rays of S_X and S_Y.

    Rays of both spheres come from the same Gaussian coefficient draws, with
    antipodes collapsed.  Greedy 4 sigma-separated centers (up to sign) are
    picked in S_X, matched to S_Y, both ray sets are split into nearest-center
    cells, each cell pair is truncated to equal size and paired in order.
    """
    from .solvers import solve_dist_to_unit_ball

    if not 0.0 < sigma < 1.0 / 6.0:
        raise ValueError("sigma must lie in (0, 1/6)")
    if X.parent != Z or Y.parent != Z or X.dim != Y.dim:
        raise ValueError("X and Y must be subspaces of Z of equal dimension")
    G = _canon(_rng(seed, 5).standard_normal((sphere_samples, X.dim)))
    RX = G @ X.orthonormal.T
    RY = G @ Y.orthonormal.T
    RX /= norms(Z, RX)[:, None]
    RY /= norms(Z, RY)[:, None]

    centers = []
    for x in RX:
        if not centers or min(min(norm_eval(Z, x - c), norm_eval(Z, x + c)) for c in centers) > 4 * sigma:
            centers.append(x)
    CX = np.array(centers)
    CY = np.empty_like(CX)
    for i, x in enumerate(CX):
        w = solve_dist_to_unit_ball(Z, x, Y).point
        nw = norm_eval(Z, w)
        if nw > 0:
            CY[i] = w / nw
        if nw == 0 or norm_eval(Z, x - CY[i]) >= 2 * sigma:
            raise MatchingError(f"center {i} has no partner within 2 sigma; the gap bound is violated")

    ix, sx = _nearest_center(Z, RX, CX)
    iy, sy = _nearest_center(Z, RY, CY)
    src, dst = [], []
    for i in range(len(CX)):
        a = np.flatnonzero(ix == i)
        b = np.flatnonzero(iy == i)
        k = min(len(a), len(b))
        src.append(RX[a[:k]] * sx[a[:k], None])
        dst.append(RY[b[:k]] * sy[b[:k], None])
    src, dst = np.vstack(src), np.vstack(dst)
    phi = PartitionBijection(Z, src, dst)
    c = Coupling(Z, Z, phi, phi.inverse(Z), "omega")
    worst = omega_family_check(c, check_families, check_budget, seed)
    return OmegaResult(c, CX, CY, len(src), sphere_samples - len(src), worst, 14 * sigma)


def omega_family_check(c: Coupling, families: int, budget: int, seed: int) -> float:
    """Max of |‖sum Omega x_i‖ - ‖sum x_i‖| / sum ‖x_i‖ over random ray families."""
    worst = 0.0
    rng = _rng(seed, 6)
    for _ in range(families):
        s = int(rng.integers(1, budget + 1))
        U = _draw_units(c.domain, rng, s, c.phi.support)
        X = U * np.exp(rng.uniform(*LOG_RADIUS, size=s))[:, None]
        num = abs(norm_eval(c.codomain, c.phi_rows(X).sum(axis=0)) - norm_eval(c.domain, X.sum(axis=0)))
        worst = max(worst, num / float(norms(c.domain, X).sum()))
    return worst


# -- near-inverse checks -------------------------------------------------------


@dataclass
class NearInverseReport:
    sigma: float
    roundtrip: float  # max ‖y - Phi Psi y‖ / ‖y‖          (<= 2 sigma)
    shrink: float  # max 1 - ‖Phi x‖ / ‖x‖                    (<= sigma)
    zero_sum: float  # max ‖sum Phi x_k‖ / sum ‖x_k‖, sum x_k = 0  (<= sigma)
    pairwise: float  # max |‖x - Psi y‖ - ‖y - Phi x‖| / (‖x‖ + ‖y‖)  (<= 6 sigma)

    def checks(self) -> dict:
        s, eps = self.sigma, 1e-9
        return {
            "roundtrip": self.roundtrip <= 2 * s + eps,
            "shrink": self.shrink <= s + eps,
            "zero_sum": self.zero_sum <= s + eps,
            "pairwise": self.pairwise <= 6 * s + eps,
        }

    @property
    def ok(self) -> bool:
        return all(self.checks().values())


def check_near_inverse(c: Coupling, sigma: float, samples: int = 1000, seed: int = 0) -> NearInverseReport:
    """Report the worst ratios of the near-inverse consequences of a defect bound sigma."""
    rng = _rng(seed, 7)
    X = _draw_units(c.domain, rng, samples, c.phi.support) * np.exp(rng.uniform(*LOG_RADIUS, size=samples))[:, None]
    Y = _draw_units(c.codomain, rng, samples, c.psi.support) * np.exp(rng.uniform(*LOG_RADIUS, size=samples))[:, None]
    nx, ny = norms(c.domain, X), norms(c.codomain, Y)
    PX, QY = c.phi_rows(X), c.psi_rows(Y)
    roundtrip = norms(c.codomain, Y - c.phi_rows(QY)) / ny
    shrink = 1.0 - norms(c.codomain, PX) / nx
    pairwise = np.abs(norms(c.domain, X - QY) - norms(c.codomain, Y - PX)) / (nx + ny)
    zero_sum = 0.0
    if c.phi.support is None:
        X2 = _draw_units(c.domain, rng, samples, None) * np.exp(rng.uniform(*LOG_RADIUS, size=samples))[:, None]
        X3 = -(X + X2)
        num = norms(c.codomain, PX + c.phi_rows(X2) + c.phi_rows(X3))
        den = nx + norms(c.domain, X2) + norms(c.domain, X3)
        zero_sum = float((num / den).max())
    return NearInverseReport(float(sigma), float(roundtrip.max()), float(shrink.max()), zero_sum,
                             float(pairwise.max()))


# ---------------------------------------------------------------------------
# serialization


def parse_coupling(text: str, space=None, n: int | None = None, base_dir=None) -> Coupling:
    """``mazur:1.5:3``, ``scale:0.9``, ``identity``, ``zero``, ``quotlift(lp:6:1;E.csv;F.csv;1.01)``.

    ``space`` (or ``n`` for Mazur maps) supplies the domain where the recipe
    does not name one.
    """
    import os

    s = text.strip()
    if s.startswith("quotlift(") and s.endswith(")"):
        parts = _split_top(s[9:-1], ";")
        if len(parts) != 4:
            raise ValueError(f"quotlift needs 'Z; E.csv; F.csv; theta': {text!r}")
        Z = parse_space(parts[0], base_dir)
        res = (lambda p: os.path.join(base_dir, p.strip()) if base_dir and not os.path.isabs(p.strip())
               else p.strip())
        return quotient_coupling(Z, load_subspace(Z, res(parts[1])), load_subspace(Z, res(parts[2])),
                                 float(parts[3]))
    kind, *args = s.split(":")
    if kind == "mazur" and len(args) == 2:
        if n is None:
            n = dim(space) if space is not None else None
        if n is None:
            raise ValueError("mazur coupling needs a dimension")
        return mazur_coupling(n, args[0], args[1])
    if space is None:
        if n is None:
            raise ValueError(f"coupling {text!r} needs a space")
        space = Lp(n, 2.0)
    if kind == "identity" and not args:
        return identity_coupling(space)
    if kind == "zero" and not args:
        return zero_coupling(space, space)
    if kind == "scale" and len(args) == 1:
        return scale_coupling(space, float(args[0]))
    raise ValueError(f"unrecognized coupling {text!r}")


def write_family_csv(path, fam: Family) -> None:
    """One row per vector: ``side,c1,c2,...``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        width = max(fam.xs.shape[1], fam.ys.shape[1])
        w.writerow(["side"] + [f"c{i + 1}" for i in range(width)])
        for side, M in (("x", fam.xs), ("y", fam.ys)):
            for row in M:
                w.writerow([side] + [repr(float(t)) for t in row])
