import math

import numpy as np
import pytest

from gapkit.nets import (
    certified_sphere_net,
    cover_miss,
    greedy_net,
    greedy_separated,
    pairwise_min,
    write_points_csv,
)
from gapkit.spaces import INF, Lp, Subspace, norms


def test_radius_two_gives_one_point():
    assert greedy_separated(Lp(3, 2), 2.0, candidate_budget=500).size == 1
    assert greedy_net(Lp(3, 2), 2.0, candidate_budget=500).size == 1


@pytest.mark.parametrize("d", [1, 2, 3])
def test_separated_sets_respect_volume_bound(d):
    for seed in range(3):
        rep = greedy_separated(Lp(d, 2), 0.5, target="ball", seed=seed, candidate_budget=2000)
        assert rep.verified
        assert rep.size <= 5 ** d
        assert pairwise_min(Lp(d, 2), rep.points) > 0.5


@pytest.mark.parametrize("d", [1, 2, 3])
def test_nets_respect_lower_bound(d):
    rep = greedy_net(Lp(d, 2), 0.75, seed=1, candidate_budget=2000)
    assert rep.verified
    assert rep.size >= (4 / 3) ** d
    # independent covering check on fresh points
    X = np.random.default_rng(99).uniform(-1, 1, (20000, d))
    X = X[np.linalg.norm(X, axis=1) <= 1]
    assert cover_miss(Lp(d, 2), rep.points, X).max() <= 0.75 + 0.02


def test_circle_net_size_window():
    rep = greedy_net(Lp(2, 2), 0.1, target="sphere", seed=0, candidate_budget=2000)
    assert 2 * math.pi / 0.2 - 5 <= rep.size <= 2 * math.pi / 0.1
    assert np.allclose(np.linalg.norm(rep.points, axis=1), 1.0)


def test_size_monotone_in_radius():
    sizes = {r: np.median([greedy_separated(Lp(2, 2), r, seed=s, candidate_budget=1000).size for s in range(5)])
             for r in (0.2, 0.4, 0.8)}
    assert sizes[0.2] >= sizes[0.4] >= sizes[0.8]


def test_determinism():
    a = greedy_net(Lp(2, 1), 0.3, seed=4, candidate_budget=500)
    b = greedy_net(Lp(2, 1), 0.3, seed=4, candidate_budget=500)
    assert np.array_equal(a.points, b.points)


def test_subspace_region_stays_in_subspace(rng):
    E = Subspace(Lp(4, 1.5), rng.standard_normal((4, 2)))
    rep = greedy_separated(E, 0.5, seed=2, candidate_budget=500)
    assert all(E.contains(x) for x in rep.points)
    assert np.allclose(norms(Lp(4, 1.5), rep.points), 1.0)


def test_argument_validation():
    with pytest.raises(ValueError):
        greedy_separated(Lp(2, 2), 3.0)
    with pytest.raises(ValueError):
        greedy_net(Lp(2, 2), 0.5, target="cube")


@pytest.mark.parametrize("p", [1.0, 1.5, 2.0, INF])
@pytest.mark.parametrize("k", [1, 2, 3])
def test_certified_net_radius(rng, p, k):
    Z = Lp(4, p)
    E = Subspace(Z, rng.standard_normal((4, k)))
    net = certified_sphere_net(E, 0.1)
    assert net.radius <= 0.1 and not net.capped
    assert np.allclose(norms(Z, net.points), 1.0)
    # independent check: random sphere points are within the radius of the net, up to sign
    X = rng.standard_normal((3000, k)) @ E.orthonormal.T
    X /= norms(Z, X)[:, None]
    miss = np.minimum(cover_miss(Z, net.points, X), cover_miss(Z, net.points, -X))
    assert miss.max() <= net.radius + 1e-12


def test_certified_net_cap(rng):
    E = Subspace(Lp(5, 2), rng.standard_normal((5, 4)))
    net = certified_sphere_net(E, 0.01, cap=1000)
    assert net.capped and net.size == 0 and net.radius == math.inf


def test_write_points_csv(tmp_path):
    write_points_csv(tmp_path / "p.csv", np.array([[1.0, 0.5]]))
    assert (tmp_path / "p.csv").read_text().splitlines() == ["x1,x2", "1.0,0.5"]
