"""Finite-dimensional real normed spaces.

A space is an immutable descriptor; vectors are plain 1-D numpy arrays in the
descriptor's representation coordinates.  Closed-form norms live here, the
convex subproblems (quotient norms, distance to a unit ball) live in
:mod:`gapkit.solvers`.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence, Union

import numpy as np
from scipy.linalg import null_space

RANK_TOL = 1e-10


class GapkitError(Exception):
    """Base class for toolkit errors."""


class DimensionError(GapkitError, ValueError):
    pass


class UnsupportedSpaceError(GapkitError, ValueError):
    pass


class DescriptorSyntaxError(GapkitError, ValueError):
    pass


class _Infinity:
    """Sentinel for the exponent p = infinity (never used in arithmetic)."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "inf"

    def __reduce__(self):
        return (_Infinity, ())


INF = _Infinity()
Exponent = Union[float, _Infinity]


def as_exponent(p) -> Exponent:
    if p is INF:
        return INF
    if isinstance(p, str):
        if p.strip().lower() in ("inf", "infinity"):
            return INF
        p = float(p)
    p = float(p)
    if math.isinf(p) and p > 0:
        return INF
    if math.isnan(p):
        raise ValueError("exponent is NaN")
    return p


def conjugate(p: Exponent) -> Exponent:
    """Hoelder conjugate: 1 <-> inf, otherwise p/(p-1)."""
    if p is INF:
        return 1.0
    if p == 1.0:
        return INF
    return p / (p - 1.0)


def exponent_str(p: Exponent) -> str:
    if p is INF:
        return "inf"
    return format(p, "g") if float(p).is_integer() else repr(float(p))


def _check_banach_exponent(p: Exponent) -> None:
    if p is not INF and not p >= 1.0:
        raise ValueError(f"exponent must be >= 1, got {p}")


# ---------------------------------------------------------------------------
# descriptors


@dataclass(frozen=True)
class Lp:
    dim: int
    p: Exponent

    def __post_init__(self):
        object.__setattr__(self, "p", as_exponent(self.p))
        _check_banach_exponent(self.p)
        if int(self.dim) < 1:
            raise ValueError("dim must be positive")
        object.__setattr__(self, "dim", int(self.dim))


@dataclass(frozen=True)
class WeightedLp:
    """Norm ``||(w_1 v_1, ..., w_n v_n)||_p`` with positive weights."""

    dim: int
    p: Exponent
    weights: tuple

    def __post_init__(self):
        object.__setattr__(self, "p", as_exponent(self.p))
        _check_banach_exponent(self.p)
        w = tuple(float(x) for x in self.weights)
        if len(w) != int(self.dim):
            raise ValueError("need one weight per coordinate")
        if not all(x > 0 and math.isfinite(x) for x in w):
            raise ValueError("weights must be positive and finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "dim", int(self.dim))


@dataclass(frozen=True)
class QuasiLr:
    """The r-norm ``(sum |v_i|^r)^(1/r)`` for 0 < r < 1."""

    dim: int
    r: float

    def __post_init__(self):
        if not 0.0 < float(self.r) < 1.0:
            raise ValueError("QuasiLr needs 0 < r < 1")
        object.__setattr__(self, "r", float(self.r))
        object.__setattr__(self, "dim", int(self.dim))


@dataclass(frozen=True)
class BlockSum:
    """l_p-sum of finitely many blocks (the space l_p(E_n))."""

    outer_p: Exponent
    blocks: tuple

    def __post_init__(self):
        object.__setattr__(self, "outer_p", as_exponent(self.outer_p))
        _check_banach_exponent(self.outer_p)
        blocks = tuple(self.blocks)
        if not blocks:
            raise ValueError("BlockSum needs at least one block")
        for b in blocks:
            if isinstance(b, QuasiLr):
                raise UnsupportedSpaceError("QuasiLr blocks are not supported")
        object.__setattr__(self, "blocks", blocks)

    @cached_property
    def offsets(self) -> np.ndarray:
        return np.cumsum([0] + [dim(b) for b in self.blocks])


@dataclass(frozen=True, eq=False)
class Subspace:
    """Span of the columns of ``basis`` inside ``parent``."""

    parent: object
    basis: np.ndarray
    full: bool = False
    label: str = field(default="", compare=False)

    def __post_init__(self):
        B = np.array(self.basis, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        if B.shape[0] != dim(self.parent):
            raise DimensionError(
                f"basis has {B.shape[0]} rows, parent dimension is {dim(self.parent)}"
            )
        if not np.all(np.isfinite(B)):
            raise ValueError("basis has non-finite entries")
        sv = np.linalg.svd(B, compute_uv=False)
        if B.shape[1] == 0 or sv[-1] <= RANK_TOL * max(1.0, sv[0]):
            where = f" ({self.label})" if self.label else ""
            raise ValueError(f"basis{where} is rank deficient")
        if B.shape[1] >= B.shape[0] and not self.full:
            raise ValueError("subspace must be proper unless full=True")
        B.setflags(write=False)
        object.__setattr__(self, "basis", B)

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @cached_property
    def orthonormal(self) -> np.ndarray:
        """Euclidean-orthonormal basis of the same span."""
        q, _ = np.linalg.qr(self.basis)
        q.setflags(write=False)
        return q

    @cached_property
    def complement(self) -> np.ndarray:
        """Euclidean-orthonormal basis of the coordinate annihilator."""
        c = null_space(self.basis.T)
        c.setflags(write=False)
        return c

    def contains(self, v, tol=1e-9) -> bool:
        v = np.asarray(v, dtype=float)
        r = v - self.orthonormal @ (self.orthonormal.T @ v)
        return float(np.linalg.norm(r)) <= tol * max(1.0, float(np.linalg.norm(v)))


@dataclass(frozen=True, eq=False)
class Quotient:
    """``parent / kernel``; vectors are coordinates w.r.t. ``kernel.complement``."""

    parent: object
    kernel: Subspace

    def __post_init__(self):
        if self.kernel.parent != self.parent:
            raise ValueError("kernel must be a subspace of the parent")

    @property
    def chart(self) -> np.ndarray:
        return self.kernel.complement

    def lift_coords(self, w) -> np.ndarray:
        """A coset representative in parent coordinates."""
        return self.chart @ np.asarray(w, dtype=float)

    def project(self, z) -> np.ndarray:
        """Quotient map: parent vector -> quotient coordinates."""
        return self.chart.T @ np.asarray(z, dtype=float)


@dataclass(frozen=True)
class Dual:
    inner: object

    def __post_init__(self):
        if isinstance(self.inner, QuasiLr):
            raise UnsupportedSpaceError("the dual of an r-normed space is degenerate")


Space = Union[Lp, WeightedLp, QuasiLr, BlockSum, Quotient, Dual]


def _is_gauge(space) -> bool:
    from .znorm import AtomicGauge

    return isinstance(space, AtomicGauge)


def dim(space) -> int:
    """Representation dimension."""
    if isinstance(space, (Lp, WeightedLp, QuasiLr)):
        return space.dim
    if isinstance(space, BlockSum):
        return int(space.offsets[-1])
    if isinstance(space, Quotient):
        return dim(space.parent) - space.kernel.dim
    if isinstance(space, Dual):
        return dim(space.inner)
    if _is_gauge(space):
        return space.dim
    raise TypeError(f"not a space descriptor: {space!r}")


def is_banach(space) -> bool:
    if isinstance(space, QuasiLr):
        return False
    if isinstance(space, Quotient):
        return is_banach(space.parent)
    return True


def simplify(space):
    """Rewrite duals of closed-form spaces into closed-form spaces."""
    if isinstance(space, Dual):
        inner = space.inner
        if isinstance(inner, Dual):
            return simplify(inner.inner)
        if isinstance(inner, Lp):
            return Lp(inner.dim, conjugate(inner.p))
        if isinstance(inner, WeightedLp):
            return WeightedLp(inner.dim, conjugate(inner.p), tuple(1.0 / w for w in inner.weights))
        if isinstance(inner, BlockSum):
            return BlockSum(conjugate(inner.outer_p), tuple(simplify(Dual(b)) for b in inner.blocks))
    return space


# ---------------------------------------------------------------------------
# vectors and norms


def as_vector(v, n: int | None = None) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size < 1:
        raise DimensionError("vector must be a non-empty 1-D array")
    if n is not None and v.size != n:
        raise DimensionError(f"vector has length {v.size}, space dimension is {n}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector has non-finite entries")
    return v


def _lp_rows(V: np.ndarray, p: Exponent) -> np.ndarray:
    A = np.abs(V)
    if p is INF:
        return A.max(axis=-1)
    if p == 1.0:
        return A.sum(axis=-1)
    if p == 2.0:
        return np.sqrt(np.einsum("...i,...i->...", V, V))
    m = A.max(axis=-1)
    safe = np.where(m > 0, m, 1.0)
    return m * np.sum((A / safe[..., None]) ** p, axis=-1) ** (1.0 / p)


def _outer(values: np.ndarray, p: Exponent) -> np.ndarray:
    return _lp_rows(values, p)


def norms(space, V) -> np.ndarray:
    """Row-wise norms of a 2-D array of vectors (vectorized where closed form)."""
    V = np.atleast_2d(np.asarray(V, dtype=float))
    if V.shape[-1] != dim(space):
        raise DimensionError(f"vectors have length {V.shape[-1]}, space dimension is {dim(space)}")
    space = simplify(space)
    if isinstance(space, Lp):
        return _lp_rows(V, space.p)
    if isinstance(space, WeightedLp):
        return _lp_rows(V * np.asarray(space.weights), space.p)
    if isinstance(space, QuasiLr):
        A = np.abs(V)
        m = A.max(axis=-1)
        safe = np.where(m > 0, m, 1.0)
        return m * np.sum((A / safe[..., None]) ** space.r, axis=-1) ** (1.0 / space.r)
    if isinstance(space, BlockSum):
        off = space.offsets
        inner = np.stack(
            [norms(b, V[:, off[i]:off[i + 1]]) for i, b in enumerate(space.blocks)], axis=-1
        )
        return _outer(inner, space.outer_p)
    return np.array([norm_eval(space, row) for row in V])


def norm_eval(space, v) -> float:
    """The norm (or r-norm) of ``v`` in ``space``."""
    v = as_vector(v, dim(space))
    space = simplify(space)
    if isinstance(space, Quotient):
        from .solvers import quotient_norm_eval

        return quotient_norm_eval(space.parent, space.kernel, space.lift_coords(v))
    if isinstance(space, Dual):
        return dual_norm_eval(space.inner, v)
    if _is_gauge(space):
        from .znorm import znorm_eval

        return znorm_eval(space, v[: space.dim_x], v[space.dim_x:])
    return float(norms(space, v[None, :])[0])


def dual_norm_eval(space, f) -> float:
    """``sup { <f, v> : ||v|| <= 1 }``."""
    f = as_vector(f, dim(space))
    space = simplify(space)
    if isinstance(space, QuasiLr):
        raise UnsupportedSpaceError("dual norm of an r-normed space is degenerate")
    if isinstance(space, Lp):
        return float(_lp_rows(f, conjugate(space.p)))
    if isinstance(space, WeightedLp):
        return float(_lp_rows(f / np.asarray(space.weights), conjugate(space.p)))
    if isinstance(space, BlockSum):
        off = space.offsets
        inner = np.array(
            [dual_norm_eval(b, f[off[i]:off[i + 1]]) for i, b in enumerate(space.blocks)]
        )
        return float(_lp_rows(inner, conjugate(space.outer_p)))
    if isinstance(space, Quotient):
        # (Z/E)* is the annihilator of E with the parent's dual norm
        return dual_norm_eval(space.parent, space.chart @ f)
    if isinstance(space, Dual):
        return norm_eval(space.inner, f)
    if _is_gauge(space):
        from .znorm import gauge_dual_norm

        return gauge_dual_norm(space, f)
    raise TypeError(f"not a space descriptor: {space!r}")


def norm_subgradient(space, v) -> np.ndarray:
    """A functional g with <g, v> = ||v|| and dual norm <= 1."""
    v = as_vector(v, dim(space))
    space = simplify(space)
    nv = norm_eval(space, v)
    if nv == 0.0:
        return np.zeros_like(v)
    if isinstance(space, Lp):
        return _lp_subgradient(v, space.p, nv)
    if isinstance(space, WeightedLp):
        w = np.asarray(space.weights)
        return w * _lp_subgradient(w * v, space.p, nv)
    if isinstance(space, BlockSum):
        off = space.offsets
        parts = [v[off[i]:off[i + 1]] for i in range(len(space.blocks))]
        inner = np.array([norm_eval(b, x) for b, x in zip(space.blocks, parts)])
        outer = _lp_subgradient(inner, space.outer_p, nv)
        return np.concatenate(
            [c * norm_subgradient(b, x) for c, b, x in zip(outer, space.blocks, parts)]
        )
    # generic: central differences of the (Lipschitz) norm
    h = 1e-7 * max(1.0, float(np.max(np.abs(v))))
    g = np.empty_like(v)
    for i in range(v.size):
        e = np.zeros_like(v)
        e[i] = h
        g[i] = (norm_eval(space, v + e) - norm_eval(space, v - e)) / (2 * h)
    return g


def _lp_subgradient(v, p: Exponent, nv: float) -> np.ndarray:
    if p is INF:
        g = np.zeros_like(v)
        i = int(np.argmax(np.abs(v)))
        g[i] = np.sign(v[i])
        return g
    if p == 1.0:
        return np.sign(v)
    return np.sign(v) * (np.abs(v) / nv) ** (p - 1.0)


def normalize(space, v) -> np.ndarray:
    n = norm_eval(space, v)
    if n == 0.0:
        raise ValueError("cannot normalize the zero vector")
    return np.asarray(v, dtype=float) / n


def annihilator(ambient, E: Subspace) -> Subspace:
    """``E^perp`` as a subspace of ``Dual(ambient)``."""
    if E.parent != ambient:
        raise ValueError("E must be a subspace of the ambient space")
    return Subspace(Dual(ambient), E.complement, label=f"ann({E.label})" if E.label else "")


# ---------------------------------------------------------------------------
# serialization


def read_basis_csv(path) -> np.ndarray:
    """Read basis columns from CSV with a header row ``b1,b2,...``."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    if len(rows) < 2:
        raise ValueError(f"{path}: need a header row and at least one data row")
    header = [h.strip() for h in rows[0]]
    if header != [f"b{i + 1}" for i in range(len(header))]:
        raise ValueError(f"{path}: header must be b1,b2,...")
    try:
        data = np.array([[float(x) for x in r] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None
    if data.shape[1] != len(header):
        raise ValueError(f"{path}: ragged rows")
    return data


def write_basis_csv(path, basis) -> None:
    B = np.atleast_2d(np.asarray(basis, dtype=float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"b{i + 1}" for i in range(B.shape[1])])
        for row in B:
            w.writerow([repr(float(x)) for x in row])


def load_subspace(parent, path) -> Subspace:
    try:
        return Subspace(parent, read_basis_csv(path), label=str(path))
    except ValueError as exc:
        msg = str(exc)
        if str(path) not in msg:
            msg = f"{path}: {msg}"
        raise ValueError(msg) from None


def format_space(space) -> str:
    if isinstance(space, Lp):
        return f"lp:{space.dim}:{exponent_str(space.p)}"
    if isinstance(space, WeightedLp):
        w = ",".join(repr(x) for x in space.weights)
        return f"wlp:{space.dim}:{exponent_str(space.p)}:{w}"
    if isinstance(space, QuasiLr):
        return f"qlr:{space.dim}:{space.r!r}"
    if isinstance(space, BlockSum):
        inner = ",".join(format_space(b) for b in space.blocks)
        return f"block:{exponent_str(space.outer_p)}[{inner}]"
    if isinstance(space, Quotient):
        return f"quot({format_space(space.parent)}; {space.kernel.label or '<inline>'})"
    if isinstance(space, Dual):
        return f"dual({format_space(space.inner)})"
    if _is_gauge(space):
        return f"gauge({space.label or '<inline>'})"
    raise TypeError(f"not a space descriptor: {space!r}")


def _split_top(s: str, sep: str) -> list:
    """Split on ``sep`` outside brackets/parentheses."""
    parts, depth, cur = [], 0, []
    for ch in s:
        if ch in "([":
            depth += 1
        elif ch in ")]":
            depth -= 1
            if depth < 0:
                raise DescriptorSyntaxError(f"unbalanced brackets in {s!r}")
        if ch == sep and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    if depth != 0:
        raise DescriptorSyntaxError(f"unbalanced brackets in {s!r}")
    parts.append("".join(cur))
    return parts


def parse_space(text: str, base_dir: str | os.PathLike | None = None):
    """Parse the compact descriptor grammar.

    ``lp:4:2``, ``lp:4:inf``, ``wlp:3:2:1,2,3``, ``qlr:2:0.5``,
    ``block:2[lp:3:2,lp:4:2]``, ``dual(lp:3:1.5)``, ``quot(lp:6:1; K.csv)``,
    ``gauge(g.csv)``.  File names resolve against ``base_dir``.
    """
    s = text.strip()

    def resolve(name):
        name = name.strip()
        if base_dir is not None and not os.path.isabs(name):
            return os.path.join(base_dir, name)
        return name

    try:
        if s.startswith("dual(") and s.endswith(")"):
            return Dual(parse_space(s[5:-1], base_dir))
        if s.startswith("quot(") and s.endswith(")"):
            parts = _split_top(s[5:-1], ";")
            if len(parts) != 2:
                raise DescriptorSyntaxError(f"quot needs 'parent; kernel.csv': {text!r}")
            parent = parse_space(parts[0], base_dir)
            return Quotient(parent, load_subspace(parent, resolve(parts[1])))
        if s.startswith("gauge(") and s.endswith(")"):
            from .znorm import load_gauge

            return load_gauge(resolve(s[6:-1]))
        if s.startswith("block:"):
            head, _, rest = s[6:].partition("[")
            if not rest.endswith("]"):
                raise DescriptorSyntaxError(f"block needs [..]: {text!r}")
            blocks = [parse_space(b, base_dir) for b in _split_top(rest[:-1], ",")]
            return BlockSum(as_exponent(head), tuple(blocks))
        kind, *args = s.split(":")
        if kind == "lp" and len(args) == 2:
            return Lp(int(args[0]), as_exponent(args[1]))
        if kind == "wlp" and len(args) == 3:
            return WeightedLp(int(args[0]), as_exponent(args[1]), tuple(float(x) for x in args[2].split(",")))
        if kind == "qlr" and len(args) == 2:
            return QuasiLr(int(args[0]), float(args[1]))
    except DescriptorSyntaxError:
        raise
    except (TypeError, ValueError) as exc:
        raise DescriptorSyntaxError(f"bad descriptor {text!r}: {exc}") from None
    raise DescriptorSyntaxError(f"unrecognized descriptor {text!r}")


def basis_matrix(vectors: Sequence[Sequence[float]]) -> np.ndarray:
    """Stack basis vectors as columns."""
    return np.array(vectors, dtype=float).T
