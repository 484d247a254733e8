import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gapkit.solvers import (
    ConvergenceWarning,
    dist_to_unit_ball,
    lift_from_quotient,
    quotient_norm_eval,
    solve_dist_to_unit_ball,
)
from gapkit.spaces import (
    INF,
    BlockSum,
    DescriptorSyntaxError,
    DimensionError,
    Dual,
    Lp,
    QuasiLr,
    Quotient,
    Subspace,
    UnsupportedSpaceError,
    WeightedLp,
    annihilator,
    conjugate,
    dim,
    dual_norm_eval,
    format_space,
    load_subspace,
    norm_eval,
    norm_subgradient,
    norms,
    parse_space,
    read_basis_csv,
    write_basis_csv,
)

from oracles import grid_dist_to_ball


# -- norm examples ------------------------------------------------------------


def test_norm_examples():
    assert norm_eval(Lp(3, 2), [3, 4, 0]) == pytest.approx(5.0, abs=1e-15)
    assert norm_eval(Lp(2, 1), [1, -1]) == 2.0
    assert norm_eval(QuasiLr(2, 0.5), [1, 1]) == pytest.approx(4.0, abs=1e-12)
    assert norm_eval(Lp(3, INF), [1, -7, 2]) == 7.0


def test_weighted_and_block_norms():
    assert norm_eval(WeightedLp(2, 1, (2.0, 3.0)), [1, -1]) == pytest.approx(5.0)
    B = BlockSum(2, (Lp(2, 1), Lp(1, 2)))
    # inner norms 3 and 4 -> l_2 of (3, 4)
    assert norm_eval(B, [1, -2, 4]) == pytest.approx(5.0)


def test_dimension_and_finiteness_errors():
    with pytest.raises(DimensionError):
        norm_eval(Lp(3, 2), [1, 2])
    with pytest.raises(ValueError):
        norm_eval(Lp(2, 2), [1, np.nan])


def test_invalid_exponents():
    with pytest.raises(ValueError):
        Lp(3, 0.5)
    with pytest.raises(ValueError):
        QuasiLr(3, 1.5)


# -- dual norms ---------------------------------------------------------------


def test_dual_norm_examples():
    assert dual_norm_eval(Lp(2, 1), [3, -5]) == 5.0
    assert dual_norm_eval(Lp(2, 2), [3, 4]) == pytest.approx(5.0)
    assert dual_norm_eval(Lp(2, 1.5), [1, 1]) == pytest.approx(2 ** (1 / 3), abs=1e-12)


def test_dual_norm_l15_grid_oracle():
    # maximize <f, v> over the unit circle of l_1.5 by a dense angular scan
    t = np.linspace(0, 2 * np.pi, 200_001)
    V = np.column_stack([np.cos(t), np.sin(t)])
    V /= norms(Lp(2, 1.5), V)[:, None]
    best = float((V @ np.array([1.0, 1.0])).max())
    assert dual_norm_eval(Lp(2, 1.5), [1, 1]) == pytest.approx(best, abs=1e-8)


@pytest.mark.parametrize("p", [1.0, 1.5, 2.0, 3.0, INF])
def test_dual_is_conjugate_lp(rng, p):
    for _ in range(50):
        f = rng.standard_normal(5)
        assert dual_norm_eval(Lp(5, p), f) == pytest.approx(norm_eval(Lp(5, conjugate(p)), f), rel=1e-9)


def test_double_dual(rng):
    for p in (1.0, 1.7, INF):
        v = rng.standard_normal(4)
        assert norm_eval(Dual(Dual(Lp(4, p))), v) == pytest.approx(norm_eval(Lp(4, p), v), rel=1e-12)


def test_quasi_dual_unsupported():
    with pytest.raises(UnsupportedSpaceError):
        dual_norm_eval(QuasiLr(2, 0.5), [1, 1])


@pytest.mark.parametrize("space", [Lp(4, 1.0), Lp(4, 3.0), Lp(4, INF), WeightedLp(4, 2, (1, 2, 3, 4)),
                                   BlockSum(1, (Lp(2, 2), Lp(2, INF)))])
def test_subgradient_is_norming_functional(rng, space):
    for _ in range(20):
        v = rng.standard_normal(4)
        g = norm_subgradient(space, v)
        assert g @ v == pytest.approx(norm_eval(space, v), rel=1e-9)
        assert dual_norm_eval(space, g) <= 1 + 1e-9


# -- norm axioms (property based) --------------------------------------------

vec4 = arrays(np.float64, 4, elements=st.floats(-100, 100, allow_nan=False, allow_subnormal=False))
SPACES = [Lp(4, 1.0), Lp(4, 1.3), Lp(4, 2.0), Lp(4, 4.0), Lp(4, INF), WeightedLp(4, 1.5, (0.5, 1, 2, 4)),
          BlockSum(INF, (Lp(2, 1), Lp(2, 3)))]


@settings(max_examples=200, deadline=None)
@given(u=vec4, v=vec4, lam=st.floats(-50, 50, allow_nan=False), idx=st.integers(0, len(SPACES) - 1))
def test_norm_axioms(u, v, lam, idx):
    S = SPACES[idx]
    nu = norm_eval(S, u)
    assert norm_eval(S, lam * u) == pytest.approx(abs(lam) * nu, rel=1e-12, abs=1e-12)
    assert norm_eval(S, u + v) <= nu + norm_eval(S, v) + 1e-9


@settings(max_examples=200, deadline=None)
@given(u=vec4, v=vec4, r=st.sampled_from([0.3, 0.5, 0.9]))
def test_r_triangle(u, v, r):
    S = QuasiLr(4, r)
    assert norm_eval(S, u + v) ** r <= norm_eval(S, u) ** r + norm_eval(S, v) ** r + 1e-9


# -- subspaces, quotients, distances -----------------------------------------


def test_subspace_validation():
    with pytest.raises(ValueError, match="rank deficient"):
        Subspace(Lp(3, 2), [[1, 2], [2, 4], [3, 6]])
    with pytest.raises(ValueError, match="proper"):
        Subspace(Lp(2, 2), np.eye(2))
    assert Subspace(Lp(2, 2), np.eye(2), full=True).dim == 2


def test_quotient_examples():
    K = Subspace(Lp(2, 1), [[1], [-1]])
    assert quotient_norm_eval(Lp(2, 1), K, [1, 0]) == pytest.approx(1.0, abs=1e-9)
    assert quotient_norm_eval(Lp(2, 1), K, [3, -3]) == pytest.approx(0.0, abs=1e-9)
    K2 = Subspace(Lp(2, 2), [[1], [0]])
    assert quotient_norm_eval(Lp(2, 2), K2, [3, 4]) == pytest.approx(4.0, abs=1e-9)


def test_quotient_scan_oracle():
    # min_t |1 - t| + |t| over a fine scan
    t = np.linspace(-2, 2, 40_001)
    assert quotient_norm_eval(Lp(2, 1), Subspace(Lp(2, 1), [[1], [-1]]), [1, 0]) == pytest.approx(
        float((np.abs(1 - t) + np.abs(t)).min()), abs=1e-9)


@pytest.mark.parametrize("p", [1.0, 1.5, 2.0, 4.0, INF])
def test_quotient_properties(rng, p):
    Z = Lp(5, p)
    K = Subspace(Z, rng.standard_normal((5, 2)))
    for _ in range(10):
        v = rng.standard_normal(5)
        q = quotient_norm_eval(Z, K, v)
        assert q <= norm_eval(Z, v) + 1e-9
        assert q > 1e-6
        assert quotient_norm_eval(Z, K, K.basis @ rng.standard_normal(2)) == pytest.approx(0.0, abs=1e-7)


def test_quotient_space_dim_and_dual(rng):
    Z = Lp(4, 1.0)
    K = Subspace(Z, rng.standard_normal((4, 1)))
    Q = Quotient(Z, K)
    assert dim(Q) == 3
    # duality pairing: <f, w> <= ||f||_* ||w|| on the quotient
    for _ in range(10):
        f, w = rng.standard_normal(3), rng.standard_normal(3)
        assert f @ w <= dual_norm_eval(Q, f) * norm_eval(Q, w) + 1e-8


def test_dist_examples():
    Z2 = Lp(2, 2)
    assert dist_to_unit_ball(Z2, [1, 0], Subspace(Z2, [[0], [1]])) == pytest.approx(1.0, abs=1e-9)
    c, s = math.cos(math.pi / 6), math.sin(math.pi / 6)
    assert dist_to_unit_ball(Z2, [c, s], Subspace(Z2, [[1], [0]])) == pytest.approx(0.5, abs=1e-9)
    Zi = Lp(2, INF)
    assert dist_to_unit_ball(Zi, [1, 0], Subspace(Zi, [[1], [1]])) == pytest.approx(0.5, abs=1e-9)


def test_dist_grid_scan_example():
    t = np.linspace(-1, 1, 20_001)
    assert dist_to_unit_ball(Lp(2, 2), [1, 0], Subspace(Lp(2, 2), [[0], [1]])) == pytest.approx(
        float(np.sqrt(1 + t ** 2).min()), abs=1e-9)
    assert dist_to_unit_ball(Lp(2, INF), [1, 0], Subspace(Lp(2, INF), [[1], [1]])) == pytest.approx(
        float(np.maximum(np.abs(1 - t), np.abs(t)).min()), abs=1e-4)


@pytest.mark.parametrize("p", [1.0, 1.5, 2.0, 3.0, INF])
@pytest.mark.parametrize("k", [1, 2])
def test_dist_brute_force_oracle(rng, p, k):
    Z = Lp(4, p)
    for _ in range(3):
        F = Subspace(Z, rng.standard_normal((4, k)))
        x = rng.standard_normal(4)
        x *= rng.uniform(0.3, 2.0) / norm_eval(Z, x)
        val = dist_to_unit_ball(Z, x, F)
        ref, step = grid_dist_to_ball(Z, x, F.orthonormal, steps=2001 if k == 1 else 301)
        assert 0.0 <= val <= norm_eval(Z, x) + 1e-9
        assert val <= ref + 1e-7  # the solver can only beat a feasible grid point
        assert ref - val <= 2 * step


def test_dist_solution_feasible(rng):
    Z = Lp(5, 1.0)
    F = Subspace(Z, rng.standard_normal((5, 2)))
    x = 3 * rng.standard_normal(5)
    sol = solve_dist_to_unit_ball(Z, x, F)
    assert norm_eval(Z, sol.point) <= 1 + 1e-9
    assert F.contains(sol.point)
    assert norm_eval(Z, x - sol.point) == pytest.approx(sol.value, rel=1e-12)


def test_lift_examples():
    Z = Lp(2, 1)
    K = Subspace(Z, [[1], [-1]])
    z = lift_from_quotient(Z, K, [1, 0], 1.01)
    assert norm_eval(Z, z) <= 1.01 + 1e-12
    # z is congruent to (1, 0) modulo the kernel: z - (1,0) is a multiple of (1,-1)
    assert K.contains(z - np.array([1.0, 0.0]))
    assert np.array_equal(lift_from_quotient(Z, K, [2, 0], 1.01), 2 * z)
    assert np.allclose(lift_from_quotient(Z, K, [1, -1], 1.01), 0.0)
    with pytest.raises(ValueError):
        lift_from_quotient(Z, K, [1, 0], 1.0)


def test_lift_odd_and_homogeneous(rng):
    Z = Lp(6, 1.0)
    K = Subspace(Z, rng.standard_normal((6, 2)))
    for _ in range(5):
        v = rng.standard_normal(6)
        z = lift_from_quotient(Z, K, v, 1.01)
        assert np.allclose(lift_from_quotient(Z, K, -v, 1.01), -z, atol=1e-12)
        assert np.allclose(lift_from_quotient(Z, K, 3.5 * v, 1.01), 3.5 * z, rtol=1e-12, atol=1e-12)
        # the lift depends on the coset only
        e = K.basis @ rng.standard_normal(2)
        assert np.allclose(lift_from_quotient(Z, K, v + e, 1.01), z, atol=1e-9)


def test_annihilator(rng):
    Z = Lp(2, 3)
    A = annihilator(Z, Subspace(Z, [[1], [0]]))
    assert A.parent == Dual(Z)
    assert abs(A.basis[0, 0]) < 1e-12
    B = annihilator(Z, Subspace(Z, [[1], [1]]))
    b = B.basis[:, 0]
    assert b[0] == pytest.approx(-b[1])
    for _ in range(10):
        n = int(rng.integers(2, 7))
        k = int(rng.integers(1, n))
        E = Subspace(Lp(n, 2), rng.standard_normal((n, k)))
        P = annihilator(Lp(n, 2), E)
        assert P.dim + E.dim == n
        assert np.abs(P.basis.T @ E.basis).max() < 1e-10
        # independent rank check: E together with the annihilator's basis spans R^n
        assert np.linalg.matrix_rank(np.hstack([E.basis, P.basis])) == n


# -- serialization ------------------------------------------------------------


@pytest.mark.parametrize("text", ["lp:4:2", "lp:4:inf", "lp:3:1.5", "dual(lp:3:1.5)", "block:2[lp:3:2,lp:4:2]",
                                  "qlr:2:0.5", "wlp:3:2:1.0,2.0,3.0", "dual(block:inf[lp:2:1,dual(lp:2:3)])"])
def test_descriptor_roundtrip(text):
    S = parse_space(text)
    assert parse_space(format_space(S)) == S


def test_descriptor_errors():
    for bad in ["lp:4", "lq:4:2", "block:2[lp:3:2", "lp:x:2", "lp:3:0.5"]:
        with pytest.raises(DescriptorSyntaxError):
            parse_space(bad)


def test_quotient_descriptor(tmp_path):
    write_basis_csv(tmp_path / "K.csv", [[1], [1], [0], [0], [0], [0]])
    Q = parse_space("quot(lp:6:1; K.csv)", base_dir=tmp_path)
    assert isinstance(Q, Quotient) and dim(Q) == 5


def test_basis_csv_roundtrip(tmp_path, rng):
    B = rng.standard_normal((5, 2))
    write_basis_csv(tmp_path / "b.csv", B)
    assert (tmp_path / "b.csv").read_text().splitlines()[0] == "b1,b2"
    assert np.array_equal(read_basis_csv(tmp_path / "b.csv"), B)


def test_rank_deficient_file_named(tmp_path):
    write_basis_csv(tmp_path / "bad.csv", [[1, 2], [2, 4], [3, 6]])
    with pytest.raises(ValueError, match="bad.csv"):
        load_subspace(Lp(3, 2), tmp_path / "bad.csv")


def test_convergence_warning_type():
    assert issubclass(ConvergenceWarning, UserWarning)
