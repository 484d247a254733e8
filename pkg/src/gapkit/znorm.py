"""Twisted norms on X (+) Y built from a coupling.

Given a coupling (Phi, Psi) and a constant sigma, the norm

    ||(u, v)||_Z = inf  ||x_0||_X + ||y_0||_Y + sigma * (sum ||x_i|| + sum ||y_j||)

over decompositions u = x_0 + sum x_i + sum Psi(y_j), v = y_0 + sum Phi(x_i) + sum y_j
contains X and Y isometrically as soon as sigma dominates the coupling
defect, and puts them at gap <= sigma.  With finitely many graph atoms
``(a_i, b_i)`` (unit x with (x, Phi x), unit y with (Psi y, y)) and
homogeneity, this becomes

    ||(u, v)|| = min_lam ||u - A^T lam||_X + ||v - B^T lam||_Y + sigma ||lam||_1 ,

a convex program in ``lam``.  Signed coefficients make the atom set
symmetric.  Finitely many atoms can only over-estimate the norm.
"""
from __future__ import annotations

import csv
import io
import warnings
import weakref
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

from .spaces import (
    INF,
    BlockSum,
    Dual,
    GapkitError,
    Lp,
    UnsupportedSpaceError,
    WeightedLp,
    as_vector,
    dim,
    dual_norm_eval,
    format_space,
    norm_eval,
    norms,
    parse_space,
    simplify,
)

PRUNE = 1e-12
CERT_TOL = 1e-7
_SOLVER = "CLARABEL"
_SOLVER_OPTS = dict(tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10, tol_ktratio=1e-8)


class GaugeBuildError(GapkitError, ValueError):
    """sigma is too small for the coupling."""


@dataclass(frozen=True, eq=False)
class AtomicGauge:
    """Finite-atom twisted norm on ``block_x (+) block_y``.

    Rows ``[0, count_x)`` of the atom matrices come from the X side, the rest
    from the Y side; the first ``tests_x`` (resp. ``tests_y``) rows of each
    side are caller-supplied test directions.
    """

    block_x: object
    block_y: object
    sigma: float
    atoms_x: np.ndarray
    atoms_y: np.ndarray
    count_x: int = 0
    tests_x: int = 0
    tests_y: int = 0
    label: str = field(default="", compare=False)

    def __post_init__(self):
        ax = np.array(self.atoms_x, dtype=float).reshape(-1, dim(self.block_x))
        ay = np.array(self.atoms_y, dtype=float).reshape(-1, dim(self.block_y))
        if len(ax) != len(ay):
            raise ValueError("atom matrices must have the same number of rows")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        for a in (ax, ay):
            a.setflags(write=False)
        object.__setattr__(self, "atoms_x", ax)
        object.__setattr__(self, "atoms_y", ay)

    @property
    def dim_x(self) -> int:
        return dim(self.block_x)

    @property
    def dim_y(self) -> int:
        return dim(self.block_y)

    @property
    def dim(self) -> int:
        return self.dim_x + self.dim_y

    @property
    def size(self) -> int:
        return len(self.atoms_x)

    def test_rows(self) -> np.ndarray:
        cx = self.count_x
        return np.r_[np.arange(self.tests_x), cx + np.arange(self.tests_y)].astype(int)

    def y_block(self) -> np.ndarray:
        """Basis of the embedded Y block inside Z coordinates."""
        return np.vstack([np.zeros((self.dim_x, self.dim_y)), np.eye(self.dim_y)])

    def x_block(self) -> np.ndarray:
        return np.vstack([np.eye(self.dim_x), np.zeros((self.dim_y, self.dim_x))])


# ---------------------------------------------------------------------------
# convex model


def cvx_norm(space, expr):
    """A cvxpy expression for ``||expr||`` in a closed-form Banach space."""
    space = simplify(space)
    if isinstance(space, Lp):
        return _cvx_lp(expr, space.p)
    if isinstance(space, WeightedLp):
        return _cvx_lp(cp.multiply(np.asarray(space.weights), expr), space.p)
    if isinstance(space, BlockSum):
        off = space.offsets
        parts = [cvx_norm(b, expr[off[i]:off[i + 1]]) for i, b in enumerate(space.blocks)]
        return _cvx_lp(cp.hstack(parts), space.outer_p)
    raise UnsupportedSpaceError(f"no convex model for {format_space(space)}")


def _cvx_lp(expr, p):
    if p is INF:
        return cp.norm_inf(expr)
    if p == 1.0:
        return cp.norm1(expr)
    if p == 2.0:
        return cp.norm2(expr)
    return cp.pnorm(expr, p)


class _Model:
    def __init__(self, g: AtomicGauge):
        self.u = cp.Parameter(g.dim_x)
        self.v = cp.Parameter(g.dim_y)
        self.lam = cp.Variable(g.size)
        obj = (cvx_norm(g.block_x, self.u - g.atoms_x.T @ self.lam)
               + cvx_norm(g.block_y, self.v - g.atoms_y.T @ self.lam)
               + g.sigma * cp.norm1(self.lam))
        self.problem = cp.Problem(cp.Minimize(obj))
        # compile once so every real solve takes the cached parametric path;
        # the compiling solve rounds differently, which made values depend on call history
        self.u.value, self.v.value = np.zeros(g.dim_x), np.zeros(g.dim_y)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            try:
                self.problem.solve(solver=_SOLVER)
            except cp.error.SolverError:
                pass


_models: "weakref.WeakKeyDictionary[AtomicGauge, _Model]" = weakref.WeakKeyDictionary()


def _model(g: AtomicGauge) -> _Model:
    m = _models.get(g)
    if m is None:
        m = _models[g] = _Model(g)
    return m


def _objective(g, u, v, lam) -> float:
    return (norm_eval(g.block_x, u - g.atoms_x.T @ lam)
            + norm_eval(g.block_y, v - g.atoms_y.T @ lam)
            + g.sigma * float(np.abs(lam).sum()))


def znorm_solve(g: AtomicGauge, u, v):
    """Return ``(value, lam, converged)``.

    The value is the exact objective at the (pruned) solver coefficients,
    so it is always an upper bound for the gauge.  ``converged`` means the
    solver reported optimality or, failing that, the dual bound of
    ``certified_lower`` is within ``CERT_TOL`` relative.
    """
    u = as_vector(u, g.dim_x)
    v = as_vector(v, g.dim_y)
    trivial = norm_eval(g.block_x, u) + norm_eval(g.block_y, v)
    if trivial == 0.0:
        return 0.0, np.zeros(g.size), True
    # scale-free solve: the gauge is homogeneous
    s = max(float(np.abs(u).max()), float(np.abs(v).max()))
    m = _model(g)
    m.u.value, m.v.value = u / s, v / s
    value, lam, ok = trivial, np.zeros(g.size), False
    # tight tolerances first; the solver defaults as a fallback
    for opts in (_SOLVER_OPTS, {}):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", UserWarning)
                m.problem.solve(solver=_SOLVER, **opts)
            status = m.problem.status
        except cp.error.SolverError:
            status = "error"
        if m.lam.value is not None:
            cand = np.where(np.abs(m.lam.value) < PRUNE, 0.0, m.lam.value) * s
            cv = _objective(g, u, v, cand)
            if cv < value:
                value, lam = cv, cand
        if status == cp.OPTIMAL:
            ok = True
            break
    if not ok and value > 0:
        ok = value - certified_lower(g, u, v) <= CERT_TOL * value
    return value, lam, ok


def certified_lower(g: AtomicGauge, u, v) -> float:
    """Duality lower bound ``<f, (u, v)> / ||f||_*`` with f from the dual program.

    The dual norm is evaluated exactly, so the bound is rigorous whatever
    the accuracy of the dual solve.
    """
    fu, fv = cp.Variable(g.dim_x), cp.Variable(g.dim_y)
    cons = [cvx_norm(Dual(g.block_x), fu) <= 1, cvx_norm(Dual(g.block_y), fv) <= 1,
            cp.abs(g.atoms_x @ fu + g.atoms_y @ fv) <= g.sigma]
    prob = cp.Problem(cp.Maximize(u @ fu + v @ fv), cons)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            prob.solve(solver=_SOLVER)
    except cp.error.SolverError:
        return 0.0
    if fu.value is None:
        return 0.0
    f = np.r_[fu.value, fv.value]
    dn = gauge_dual_norm(g, f)
    return max(0.0, float(f @ np.r_[u, v]) / dn) if dn > 0 else 0.0


def znorm_eval(g: AtomicGauge, u, v) -> float:
    """``||(u, v)||_Z``; bounded by ``max(||u||, ||v||)``-ish below and ``||u|| + ||v||`` above."""
    from .solvers import ConvergenceWarning

    value, _, ok = znorm_solve(g, u, v)
    if not ok:
        warnings.warn(f"znorm_eval: solver status not optimal; estimate {value:.10g}",
                      ConvergenceWarning, stacklevel=2)
    return value


def gauge_dual_norm(g: AtomicGauge, f) -> float:
    """Support function of the unit ball: max over the block duals and atoms / sigma."""
    f = as_vector(f, g.dim)
    fu, fv = f[: g.dim_x], f[g.dim_x:]
    pairing = np.abs(g.atoms_x @ fu + g.atoms_y @ fv)
    best = pairing.max() / g.sigma if g.size else 0.0
    return float(max(dual_norm_eval(g.block_x, fu), dual_norm_eval(g.block_y, fv), best))


def gauge_residual_min(g: AtomicGauge, x, B, ball: bool = False):
    """``min_y ||x - B y||_Z`` (optionally with ``||B y||_Z <= 1``) as one convex program."""
    from .solvers import Solution

    nx = g.dim_x
    y = cp.Variable(B.shape[1])
    lam = cp.Variable(g.size)
    r = x - B @ y
    obj = (cvx_norm(g.block_x, r[:nx] - g.atoms_x.T @ lam)
           + cvx_norm(g.block_y, r[nx:] - g.atoms_y.T @ lam)
           + g.sigma * cp.norm1(lam))
    cons = []
    if ball:
        mu = cp.Variable(g.size)
        w = B @ y
        cons.append(cvx_norm(g.block_x, w[:nx] - g.atoms_x.T @ mu)
                    + cvx_norm(g.block_y, w[nx:] - g.atoms_y.T @ mu)
                    + g.sigma * cp.norm1(mu) <= 1)
    prob = cp.Problem(cp.Minimize(obj), cons)
    for opts in (_SOLVER_OPTS, {}):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", UserWarning)
                prob.solve(solver=_SOLVER, **opts)
        except cp.error.SolverError:
            continue
        if prob.status == cp.OPTIMAL:
            break
    if y.value is None:
        z = np.zeros(B.shape[1])
        return Solution(znorm_eval(g, x[:nx], x[nx:]), B @ z, z, False, "cvxpy-gauge")
    coeffs = np.asarray(y.value, dtype=float)
    w = B @ coeffs
    if ball:
        nw = znorm_eval(g, w[:nx], w[nx:])
        if nw > 1.0:
            coeffs, w = coeffs / nw, w / nw
    r = x - w
    value = znorm_eval(g, r[:nx], r[nx:])
    return Solution(value, w, coeffs, prob.status == cp.OPTIMAL, "cvxpy-gauge")


# ---------------------------------------------------------------------------
# construction and checks


def _unit_rows(space, rng, m, n):
    G = rng.standard_normal((m, n))
    return G / norms(space, G)[:, None]


def _normalized(space, T):
    T = np.atleast_2d(np.asarray(T, dtype=float))
    if len(T) == 0:
        return T.reshape(0, dim(space))
    return T / norms(space, T)[:, None]


def build_znorm(c, sigma: float, atom_count: int, seed: int = 0, test_x=None, test_y=None,
                check_budget: int = 3, check_samples: int = 200, label: str = "") -> AtomicGauge:
    """Sample graph atoms of the coupling ``c`` and build the gauge.

    ``atom_count`` is split evenly between the two sides; caller-supplied
    test directions are included first and count towards it.  Atom streams
    are prefix-stable in ``atom_count``, so a larger build contains every
    atom of a smaller build with the same seed and tests.

    A quick sampled defect estimate is compared with ``sigma``; a smaller
    sigma does not give a norm extending both blocks and is rejected.
    """
    from .couplings import delta_estimate

    if check_samples > 0:
        est = delta_estimate(c, budget=check_budget, samples=check_samples, seed=seed)
        if est.value > sigma + 1e-9:
            raise GaugeBuildError(
                f"sigma = {sigma:.6g} is below the sampled defect {est.value:.6g}"
            )
    X, Y = c.domain, c.codomain
    tx = _normalized(X, test_x if test_x is not None else np.empty((0, dim(X))))
    ty = _normalized(Y, test_y if test_y is not None else np.empty((0, dim(Y))))
    half = atom_count // 2
    nx = max(half - len(tx), 0)
    ny = max(atom_count - half - len(ty), 0)
    ss = np.random.SeedSequence(int(seed))
    rx, ry = (np.random.default_rng(s) for s in ss.spawn(2))
    ux = np.vstack([tx, _unit_rows(X, rx, nx, dim(X))])
    uy = np.vstack([ty, _unit_rows(Y, ry, ny, dim(Y))])
    ax = np.vstack([ux, c.psi_rows(uy)])
    ay = np.vstack([c.phi_rows(ux), uy])
    return AtomicGauge(X, Y, float(sigma), ax, ay, count_x=len(ux), tests_x=len(tx),
                       tests_y=len(ty), label=label)


def with_atoms(g: AtomicGauge, rows) -> AtomicGauge:
    """Gauge restricted to a subset of its atoms (keeps the side split)."""
    rows = np.asarray(rows, dtype=int)
    return AtomicGauge(g.block_x, g.block_y, g.sigma, g.atoms_x[rows], g.atoms_y[rows],
                       count_x=int((rows < g.count_x).sum()), label=g.label)


@dataclass
class EmbeddedGapReport:
    worst: float  # max over tests of ||(a, b)||_Z - sigma
    count: int
    sigma: float

    @property
    def ok(self) -> bool:
        return self.worst <= 1e-6


def verify_embedded_gap(g: AtomicGauge, test_points=None) -> EmbeddedGapReport:
    """Check ``||(x, Phi x)||_Z <= sigma`` on graph pairs.

    ``test_points`` is a sequence of ``(u, v)`` pairs; by default the test
    atoms recorded at build time are used.  For a unit x this is the
    statement ``d((x, 0), B_Y) <= sigma`` inside Z.
    """
    if test_points is None:
        rows = g.test_rows()
        test_points = list(zip(g.atoms_x[rows], g.atoms_y[rows]))
    worst = -np.inf
    for u, v in test_points:
        worst = max(worst, znorm_eval(g, u, v) - g.sigma)
    return EmbeddedGapReport(float(worst) if test_points else 0.0, len(test_points), g.sigma)


# ---------------------------------------------------------------------------
# portable format: '#' header lines then a CSV atom matrix


def save_gauge(g: AtomicGauge, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("# gapkit-gauge 1\n")
        fh.write(f"# block_x={format_space(g.block_x)}\n")
        fh.write(f"# block_y={format_space(g.block_y)}\n")
        fh.write(f"# sigma={g.sigma!r}\n")
        fh.write(f"# count_x={g.count_x} tests_x={g.tests_x} tests_y={g.tests_y}\n")
        if g.label:
            fh.write(f"# label={g.label}\n")
        w = csv.writer(fh)
        w.writerow([f"a{i + 1}" for i in range(g.dim_x)] + [f"b{i + 1}" for i in range(g.dim_y)])
        for a, b in zip(g.atoms_x, g.atoms_y):
            w.writerow([repr(float(t)) for t in np.r_[a, b]])


def load_gauge(path) -> AtomicGauge:
    meta, body = {}, []
    with open(path) as fh:
        for line in fh:
            if line.startswith("# label="):
                meta["label"] = line[len("# label="):].rstrip("\n")
            elif line.startswith("#"):
                for item in line[1:].split():
                    key, eq, val = item.partition("=")
                    if eq:
                        meta[key] = val
            else:
                body.append(line)
    try:
        X = parse_space(meta["block_x"])
        Y = parse_space(meta["block_y"])
        rows = list(csv.reader(io.StringIO("".join(body))))[1:]
        A = np.array([[float(t) for t in r] for r in rows if r]).reshape(-1, dim(X) + dim(Y))
        return AtomicGauge(X, Y, float(meta["sigma"]), A[:, : dim(X)], A[:, dim(X):],
                           count_x=int(meta.get("count_x", len(A))),
                           tests_x=int(meta.get("tests_x", 0)), tests_y=int(meta.get("tests_y", 0)),
                           label=meta.get("label", ""))
    except KeyError as exc:
        raise GapkitError(f"{path}: gauge header lacks {exc}") from None
