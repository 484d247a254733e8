import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gapkit.interp import (
    StripPoint,
    conformal_strip_to_disk,
    gh_upper_l1_lp,
    kadets_lower_lp,
    kadets_upper_lp,
    mazur_scalar_defect_check,
    mazur_scalar_residual,
    pseudo_hyperbolic_strip,
)
from gapkit.spaces import INF

GRID = [1.25, 1.5, 2.0, 3.0, 4.0]


def test_strip_map_examples():
    assert conformal_strip_to_disk(0.3, 0.3) == (0.0, 0.0)
    re, im = conformal_strip_to_disk(0.25, 0.75)
    assert re == pytest.approx(math.sin(math.pi / 4), abs=1e-12) and im == 0.0


def test_strip_map_matches_complex_sine():
    for z in (0.2 + 0.7j, 0.9 - 2.0j, 0.5 + 0.0j):
        ref = np.sin(np.pi * (z - 0.4) / 2) / np.sin(np.pi * (z + 0.4) / 2)
        re, im = conformal_strip_to_disk(0.4, z)
        assert (re, im) == pytest.approx((ref.real, ref.imag), abs=1e-12)


def test_strip_map_into_disk():
    xs = np.linspace(0.005, 0.995, 100)
    ys = np.linspace(-5, 5, 100)
    for theta in (0.1, 0.5, 0.8):
        worst = max(math.hypot(*conformal_strip_to_disk(theta, (x, y))) for x in xs for y in ys)
        assert worst < 1.0


def test_strip_domain_errors():
    with pytest.raises(ValueError):
        StripPoint(1.0)
    with pytest.raises(ValueError):
        conformal_strip_to_disk(0.0, 0.5)


def test_pseudo_hyperbolic_examples():
    assert pseudo_hyperbolic_strip(0.25, 0.75) == pytest.approx(math.sin(math.pi / 4), abs=1e-12)
    assert pseudo_hyperbolic_strip(0.3 + 1j, 0.3 + 1j) == 0.0
    # vertical translations are automorphisms
    assert pseudo_hyperbolic_strip(0.2 + 3j, 0.6 + 4j) == pytest.approx(pseudo_hyperbolic_strip(0.2, 0.6 + 1j), abs=1e-12)


pts = st.tuples(st.floats(0.01, 0.99), st.floats(-3, 3))


@settings(max_examples=200, deadline=None)
@given(a=pts, b=pts, c=pts)
def test_pseudo_hyperbolic_metric(a, b, c):
    hab = pseudo_hyperbolic_strip(a, b)
    assert hab == pytest.approx(pseudo_hyperbolic_strip(b, a), abs=1e-12)
    assert 0.0 <= hab < 1.0 + 1e-15
    assert hab <= pseudo_hyperbolic_strip(a, c) + pseudo_hyperbolic_strip(c, b) + 1e-9


def test_kadets_upper_examples():
    assert kadets_upper_lp(3, 3) == 0.0
    assert kadets_upper_lp(2, 4) == pytest.approx(2 * math.tan(math.pi / 8), abs=1e-9)
    assert kadets_upper_lp(2, 4) == pytest.approx(0.828427, abs=1e-6)
    for bad in ((1, 2), (2, INF), (0.5, 2)):
        with pytest.raises(ValueError):
            kadets_upper_lp(*bad)


@pytest.mark.parametrize("p,q", list(itertools.product(GRID, GRID)))
def test_upper_is_twice_pseudo_hyperbolic(p, q):
    assert kadets_upper_lp(p, q) == pytest.approx(2 * pseudo_hyperbolic_strip(1 / p, 1 / q), abs=1e-12)
    assert kadets_lower_lp(p, q) <= kadets_upper_lp(p, q) + 1e-12


def test_upper_continuity_and_triangle():
    assert kadets_upper_lp(2, 2 + 1e-9) < 1e-8
    for p, q, s in itertools.combinations(GRID, 3):
        assert kadets_upper_lp(p, s) <= kadets_upper_lp(p, q) + kadets_upper_lp(q, s) + 1e-9


def test_kadets_lower_examples(caplog):
    assert kadets_lower_lp(2, 2) == 0.0
    assert kadets_lower_lp(1, INF) == 0.5
    assert kadets_lower_lp(2, 4) == pytest.approx(2 ** -0.5 - 2 ** -0.75, abs=1e-15)
    assert kadets_lower_lp(2, 4) == pytest.approx(0.1125, abs=1e-5)
    with caplog.at_level("INFO"):
        assert kadets_lower_lp(4, 2) == kadets_lower_lp(2, 4)
    assert "swapped" in caplog.text


def test_lower_two_forms_agree():
    for p, q in itertools.product(GRID + [1.0], GRID + [INF]):
        a = 0.0 if q is INF else 1 / q
        half_form = abs(2 ** (1 / p) - 2 ** a) / 2
        assert kadets_lower_lp(p, q) == pytest.approx(half_form, abs=1e-15)


def test_gh_bound():
    assert gh_upper_l1_lp(1) == 0.0
    assert gh_upper_l1_lp(1.1) == pytest.approx(0.287094, abs=1e-6)
    vals = [gh_upper_l1_lp(p) for p in np.linspace(1, 2, 21)]
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_scalar_inequality_examples():
    lhs, rhs = mazur_scalar_residual(0.3, 0.3, 1.7)
    assert lhs == 0.0
    lhs, rhs = mazur_scalar_residual(1.0, -1.0, 2.0)
    assert (lhs, rhs) == (2.0, 2.0)
    # the inner absolute value matters: at a = 0, b = 1 the signed difference is -1
    lhs, rhs = mazur_scalar_residual(0.0, 1.0, 2.0)
    assert lhs == 0.0


@pytest.mark.parametrize("p", [1.1, 1.5, 2.0])
def test_scalar_grid_scan(p):
    rep = mazur_scalar_defect_check(p, grid_step=1e-3)
    assert rep.ok and rep.points == 2001 ** 2
    assert rep.worst_slack >= -1e-12


def test_scalar_check_arguments():
    with pytest.raises(ValueError):
        mazur_scalar_defect_check(1.5, grid_step=0.1)
    with pytest.raises(ValueError):
        mazur_scalar_defect_check(1.0)
