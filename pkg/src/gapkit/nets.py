"""Separated sets and nets on spheres and balls.

Two kinds of nets are produced here:

* greedy random nets (``greedy_separated``, ``greedy_net``) whose defining
  property is re-checked afterwards on independent randomness;
* certified sphere nets of a subspace (``certified_sphere_net``) whose
  covering radius is guaranteed by a deterministic argument.  These back
  the upper end of gap brackets.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .spaces import Subspace, dim, norms

DEFAULT_REJECTIONS = 10_000
VERIFY_BATCH = 10_000
NET_CAP = 2_000_000


@dataclass
class NetReport:
    points: np.ndarray
    radius: float
    kind: str  # "separated" | "covering"
    target: str  # "sphere" | "ball"
    seed: int
    verified: bool = True
    worst: float = 0.0  # min pairwise distance (separated) / max miss distance (covering)
    flags: list = field(default_factory=list)

    @property
    def size(self) -> int:
        return len(self.points)


def _frame(region):
    """(norm space, basis in ambient coords, coefficient dimension)."""
    if isinstance(region, Subspace):
        return region.parent, region.orthonormal, region.dim
    n = dim(region)
    return region, None, n


class _Sampler:
    """Stream of random points of a sphere or ball, in ambient coordinates."""

    def __init__(self, region, target, rng):
        if target not in ("sphere", "ball"):
            raise ValueError("target must be 'sphere' or 'ball'")
        self.space, self.Q, self.k = _frame(region)
        self.target = target
        self.rng = rng

    def draw(self, m: int) -> np.ndarray:
        G = self.rng.standard_normal((m, self.k))
        V = G if self.Q is None else G @ self.Q.T
        V = V / norms(self.space, V)[:, None]
        if self.target == "ball":
            V = V * (self.rng.random(m) ** (1.0 / self.k))[:, None]
        return V


def _dists(space, P: np.ndarray, x: np.ndarray) -> np.ndarray:
    if len(P) == 0:
        return np.empty(0)
    return norms(space, P - x)


def pairwise_min(space, P: np.ndarray) -> float:
    best = math.inf
    for i in range(len(P) - 1):
        best = min(best, float(_dists(space, P[i + 1:], P[i]).min()))
    return best


def cover_miss(space, P: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Distance from each row of X to its nearest point of P."""
    out = np.empty(len(X))
    for i, x in enumerate(X):
        out[i] = _dists(space, P, x).min()
    return out


def _seq(seed, tag):
    return np.random.default_rng(np.random.SeedSequence([int(seed), tag]))


def greedy_separated(region, radius: float, target: str = "sphere",
                     candidate_budget: int = DEFAULT_REJECTIONS, seed: int = 0,
                     batch: int = 512) -> NetReport:
    """Greedy maximal ``radius``-separated set (pairwise distances > radius).

    Stops after ``candidate_budget`` consecutive rejected candidates.  A
    maximal separated set is also a ``radius``-covering of the region.
    """
    if not 0.0 < radius <= 2.0:
        raise ValueError("radius must lie in (0, 2]")
    sampler = _Sampler(region, target, _seq(seed, 1))
    space = sampler.space
    acc = []
    rejected = 0
    while rejected < candidate_budget:
        for x in sampler.draw(batch):
            P = np.array(acc) if acc else np.empty((0, len(x)))
            if len(acc) == 0 or _dists(space, P, x).min() > radius:
                acc.append(x)
                rejected = 0
            else:
                rejected += 1
                if rejected >= candidate_budget:
                    break
    P = np.array(acc)
    worst = pairwise_min(space, P) if len(P) > 1 else math.inf
    rep = NetReport(P, radius, "separated", target, seed, worst > radius, worst)
    if not rep.verified:
        rep.flags.append("separation check failed")
    return rep


def greedy_net(region, radius: float, target: str = "ball",
               candidate_budget: int = DEFAULT_REJECTIONS, seed: int = 0,
               batch: int = 512) -> NetReport:
    """Greedy covering: add every drawn point farther than ``radius`` from the net.

    Stops after ``candidate_budget`` consecutive covered draws, then checks
    the covering on a fresh batch; on failure the misses are added and one
    more fresh batch is checked before the report is flagged.
    """
    if not 0.0 < radius:
        raise ValueError("radius must be positive")
    sampler = _Sampler(region, target, _seq(seed, 2))
    space = sampler.space
    acc = []
    covered = 0
    while covered < candidate_budget:
        for x in sampler.draw(batch):
            if acc and _dists(space, np.array(acc), x).min() <= radius:
                covered += 1
                if covered >= candidate_budget:
                    break
            else:
                acc.append(x)
                covered = 0
    P = np.array(acc)
    rep = NetReport(P, radius, "covering", target, seed)
    for attempt in range(2):
        fresh = _Sampler(region, target, _seq(seed, 3 + attempt)).draw(VERIFY_BATCH)
        miss = cover_miss(space, P, fresh)
        rep.worst = float(miss.max())
        if rep.worst <= radius:
            break
        if attempt == 0:
            P = np.vstack([P, fresh[miss > radius]])
            rep.points = P
            rep.flags.append(f"enlarged by {int((miss > radius).sum())} points")
    rep.verified = rep.worst <= radius
    if not rep.verified:
        rep.flags.append("covering check failed")
    return rep


# ---------------------------------------------------------------------------
# certified nets


@dataclass
class CertifiedNet:
    points: np.ndarray  # unit vectors of the subspace, ambient coordinates
    radius: float  # every point of the sphere (up to sign) is this close to a net point
    method: str
    capped: bool = False
    requested: float = 0.0

    @property
    def size(self) -> int:
        return len(self.points)


def _unit(space, V):
    return V / norms(space, V)[:, None]


def _arc_net(space, Q, delta, cap, symmetric):
    span = math.pi if symmetric else 2 * math.pi
    t = np.linspace(0.0, span, 9)
    while True:
        U = _unit(space, np.column_stack([np.cos(t), np.sin(t)]) @ Q.T)
        chords = norms(space, np.diff(U, axis=0))
        bad = chords > delta
        if not bad.any():
            break
        if len(t) + int(bad.sum()) > cap:
            return None
        mids = 0.5 * (t[:-1][bad] + t[1:][bad])
        t = np.sort(np.concatenate([t, mids]))
    # monotonicity of chords along the unit circle of a normed plane:
    # every arc point is within its interval's chord of the left endpoint
    radius = float(chords.max()) if len(chords) else 0.0
    if symmetric:
        U = U[:-1]  # t = pi is the antipode of t = 0
    return U, radius


def _face_net(space, Q, delta, cap, symmetric):
    k = Q.shape[1]
    colnorm = norms(space, Q.T)
    L = float(colnorm.sum())
    # coarse estimate of min ||Q c|| on the cube surface to size the grid
    m_est = float(norms(space, (_cube_points(k, 8, symmetric)) @ Q.T).min())
    N = max(2, math.ceil(2.0 * L / (delta * m_est)))
    for _ in range(40):
        count = (k if symmetric else 2 * k) * (N + 1) ** (k - 1)
        if count > cap:
            return None
        C = _cube_points(k, N, symmetric)
        V = C @ Q.T
        nv = norms(space, V)
        h = 2.0 / N
        radius = float(h * L / nv.min())
        if radius <= delta:
            return V / nv[:, None], radius
        N = math.ceil(N * max(1.1, radius / delta))
    return None


def _cube_points(k, N, symmetric):
    grid = np.linspace(-1.0, 1.0, N + 1)
    mesh = np.array(np.meshgrid(*([grid] * (k - 1)), indexing="ij")).reshape(k - 1, -1).T
    faces = []
    for j in range(k):
        for s in ((1.0,) if symmetric else (1.0, -1.0)):
            F = np.insert(mesh, j, s, axis=1)
            faces.append(F)
    return np.vstack(faces)


def certified_sphere_net(E: Subspace, delta: float, cap: int = NET_CAP,
                         symmetric: bool = True) -> CertifiedNet:
    """A net of the unit sphere of E with a guaranteed covering radius <= delta.

    With ``symmetric`` the net covers the sphere up to sign, which suffices
    for even functions such as ``x -> d(x, B_F)``.

    * dim 1: the unit vector itself (radius 0).
    * dim 2: adaptive bisection of the unit circle until consecutive chords
      are <= delta; in a normed plane the distance from a point of the unit
      circle grows monotonically along the arc, so chords bound the radius.
    * dim >= 3: grid on the faces of the coefficient cube, normalized; the
      radius is bounded by ``h * sum_j ||q_j|| / min ||Q g||``.

    Returns a net with ``capped=True`` and no points if more than ``cap``
    points would be needed.
    """
    space, Q = E.parent, E.orthonormal
    k = E.dim
    if k == 1:
        u = _unit(space, Q.T)
        pts = u if symmetric else np.vstack([u, -u])
        return CertifiedNet(pts, 0.0, "exact", requested=delta)
    out = _arc_net(space, Q, delta, cap, symmetric) if k == 2 else _face_net(space, Q, delta, cap, symmetric)
    if out is None:
        return CertifiedNet(np.empty((0, dim(space))), math.inf, "capped", True, delta)
    pts, radius = out
    return CertifiedNet(pts, radius, "arc-bisection" if k == 2 else "cube-faces", requested=delta)


def write_points_csv(path, points) -> None:
    P = np.atleast_2d(points)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(P.shape[1])])
        for row in P:
            w.writerow([repr(float(x)) for x in row])
