"""Named verification suites.

Each suite runs one family of checks of the toolkit against the closed-form
bounds it is meant to respect and returns a list of ``Check`` rows.  The
command line ``verify`` subcommand prints them; the acceptance tests use
their own independent oracles.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .couplings import (
    build_omega,
    d_small_estimate,
    delta_estimate,
    mazur_coupling,
    quotient_coupling,
    structural_check,
)
from .gap import dual_gap_check, gap, random_pair
from .interp import (
    gh_upper_l1_lp,
    kadets_lower_lp,
    kadets_upper_lp,
    mazur_scalar_defect_check,
    pseudo_hyperbolic_strip,
)
from .nets import greedy_net, greedy_separated
from .spaces import Lp, Subspace, norm_eval
from .znorm import build_znorm, verify_embedded_gap, znorm_eval


@dataclass
class Check:
    suite: str
    name: str
    value: float
    relation: str  # "<=" or ">="
    bound: float

    @property
    def passed(self) -> bool:
        if self.relation == "<=":
            return bool(self.value <= self.bound)
        return bool(self.value >= self.bound)


def thread_cap() -> int:
    """Worker count: ``GAPKIT_THREADS`` if set, else the CPU count."""
    env = os.environ.get("GAPKIT_THREADS", "").strip()
    cpus = os.cpu_count() or 1
    if env:
        try:
            return max(1, min(int(env), cpus))
        except ValueError:
            raise ValueError(f"GAPKIT_THREADS must be an integer, got {env!r}") from None
    return cpus


def parallel_map(fn, items) -> list:
    """Ordered map over a process pool capped by ``thread_cap()``."""
    items = list(items)
    workers = min(thread_cap(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def _rng(*key):
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


# ---------------------------------------------------------------------------
# suites


def closed_forms() -> list:
    s = "closed-forms"
    return [
        Check(s, "kadets_upper(2,4) - 2 tan(pi/8)", abs(kadets_upper_lp(2, 4) - 2 * math.tan(math.pi / 8)), "<=", 1e-9),
        Check(s, "kadets_lower(1,inf) - 0.5", abs(kadets_lower_lp(1, math.inf) - 0.5), "<=", 0.0),
        Check(s, "gh_upper(1)", abs(gh_upper_l1_lp(1)), "<=", 0.0),
        Check(s, "h(0.25,0.75) - sin(pi/4)", abs(pseudo_hyperbolic_strip(0.25, 0.75) - math.sin(math.pi / 4)), "<=", 1e-12),
    ]


def mazur_scalar(ps=(1.1, 1.5, 2.0), grid_step: float = 1e-3) -> list:
    out = []
    for p in ps:
        rep = mazur_scalar_defect_check(float(p), grid_step)
        out.append(Check("mazur-scalar", f"p={p:g} worst slack", rep.worst_slack, ">=", -1e-12))
        out.append(Check("mazur-scalar", f"p={p:g} violations", rep.violations, "<=", 0))
    return out


def mazur_two_point(ps=(1.1, 1.25, 1.5), n: int = 16, samples: int = 10_000, seed: int = 0) -> list:
    """Sampled two-point distortion of the Mazur maps l_p^n <-> l_1^n."""
    out = []
    for p in ps:
        est = d_small_estimate(mazur_coupling(n, p, 1.0), samples=samples, seed=seed)
        out.append(Check("mazur-d", f"p={p:g} D", est.value, "<=", gh_upper_l1_lp(p) + 1e-9))
    return out


def _dual_trial(job):
    p, dim, delta, budget, seed, t = job
    Z = Lp(dim, p)
    rng = _rng(seed, 101, int(round(1000 * p)), t)
    k = int(rng.integers(1, 3))
    E, F = random_pair(Z, k, rng)
    rep = dual_gap_check(Z, E, F, delta=delta, budget=budget, seed=t)
    return rep.lhs_lower - 2.0 * rep.rhs_upper


def dual_gap(trials: int = 50, seed: int = 1, ps=(1.0, 2.0, 3.0), dim: int = 5, delta: float = 0.05,
             budget: int = 4, tol: float = 1e-3) -> list:
    out = []
    for p in ps:
        margins = parallel_map(_dual_trial, [(float(p), dim, delta, budget, seed, t) for t in range(trials)])
        worst = max(margins)
        out.append(Check("dual-gap", f"p={p:g} max lower(dual) - 2 upper(primal)", worst, "<=", tol))
        out.append(Check("dual-gap", f"p={p:g} failures of {trials}", sum(m > tol for m in margins), "<=", 0))
    return out


def znorm_suite(p: float = 1.5, q: float = 2.0, n: int = 4, atoms: int = 2000, tests: int = 100,
                probes: int = 100, seed: int = 0) -> list:
    s = "znorm"
    c = mazur_coupling(n, p, q)
    sigma = kadets_upper_lp(p, q)
    rng = _rng(seed, 11)
    tx = rng.standard_normal((tests // 2, n))
    ty = rng.standard_normal((tests - tests // 2, n))
    g = build_znorm(c, sigma, atoms, seed=seed, test_x=tx, test_y=ty)
    pr = _rng(seed, 12)
    ex = ey = 0.0
    for _ in range(probes):
        u = pr.standard_normal(n)
        ex = max(ex, abs(znorm_eval(g, u, np.zeros(n)) - norm_eval(c.domain, u)) / norm_eval(c.domain, u))
        v = pr.standard_normal(n)
        ey = max(ey, abs(znorm_eval(g, np.zeros(n), v) - norm_eval(c.codomain, v)) / norm_eval(c.codomain, v))
    worst = verify_embedded_gap(g).worst
    small = build_znorm(c, sigma, atoms // 2, seed=seed, test_x=tx, test_y=ty, check_samples=0)
    mono = -math.inf
    for _ in range(20):
        u, v = pr.standard_normal(n), pr.standard_normal(n)
        mono = max(mono, znorm_eval(g, u, v) - znorm_eval(small, u, v))
    return [
        Check(s, "X block relative error", ex, "<=", 1e-4),
        Check(s, "Y block relative error", ey, "<=", 1e-4),
        Check(s, "embedded gap worst slack", worst, "<=", 1e-6),
        Check(s, "nested builds: larger minus smaller", mono, "<=", 1e-7),
    ]


def _quotient_trial(job):
    n, k, theta, delta, samples, seed, t = job
    Z = Lp(n, 1.0)
    rng = _rng(seed, 202, t)
    E, F = random_pair(Z, k, rng)
    b = gap(Z, E, F, delta=delta, seed=t)
    est = delta_estimate(quotient_coupling(Z, E, F, theta), budget=5, samples=samples, seed=t, rounds=50)
    return est.value - (2.0 * b.upper + (1.0 - theta ** -2))


def quotient_budget(trials: int = 20, seed: int = 0, n: int = 6, k: int = 2, theta: float = 1.01,
                    delta: float = 0.02, samples: int = 300) -> list:
    margins = parallel_map(_quotient_trial, [(n, k, theta, delta, samples, seed, t) for t in range(trials)])
    return [Check("quotient-budget", f"max delta - (2 upper + 1 - theta^-2) over {trials}", max(margins), "<=", 1e-6)]


def omega_suite(seed: int = 0, sigma: float = 0.05, angle: float = 0.015) -> list:
    s = "omega"
    Z = Lp(3, 2.0)
    X = Subspace(Z, [[1, 0], [0, 1], [0, 0]])
    Y = Subspace(Z, [[1, 0], [0, math.cos(angle)], [0, math.sin(angle)]])
    b = gap(Z, X, Y, delta=0.004)
    ctrl = build_omega(Z, X, X, sigma, seed=seed)
    near = build_omega(Z, X, Y, sigma, seed=seed)
    return [
        Check(s, "gap(X, Y) upper", b.upper, "<=", 0.02),
        Check(s, "identical subspaces: worst defect", ctrl.worst_defect, "<=", 1e-12),
        Check(s, "near subspaces: worst defect", near.worst_defect, "<=", 14 * sigma),
    ]


def covering(seeds=range(5), dims=(1, 2, 3)) -> list:
    s = "covering"
    out = []
    for d in dims:
        ball = Lp(d, 2.0)
        sep = [greedy_separated(ball, 0.5, "ball", seed=i) for i in seeds]
        nets = [greedy_net(ball, 0.75, "ball", seed=i) for i in seeds]
        out.append(Check(s, f"d={d} max 1/2-separated size", max(r.size for r in sep), "<=", 5 ** d))
        out.append(Check(s, f"d={d} min 3/4-net size", min(r.size for r in nets), ">=", (4 / 3) ** d))
        out.append(Check(s, f"d={d} unverified reports", sum(not r.verified for r in sep + nets), "<=", 0))
    return out


def structural(ps=(1.25, 1.5, 2.0, 3.0, 4.0), n: int = 8, samples: int = 300, seed: int = 0,
               r: float = 0.9) -> list:
    s = "structural"
    out = []
    for p in ps:
        for q in ps:
            rep = structural_check(mazur_coupling(n, p, q), samples=samples, seed=seed, r=r)
            out.append(Check(s, f"p={p:g} q={q:g} D - delta", rep.worst_d_minus_delta, "<=", 1e-12))
            out.append(Check(s, f"p={p:g} q={q:g} D - 2^(2/r-1) delta_r", rep.worst_thm36_slack, "<=", 1e-12))
    return out


SUITES = {
    "closed-forms": closed_forms,
    "mazur-scalar": mazur_scalar,
    "mazur-d": mazur_two_point,
    "dual-gap": dual_gap,
    "znorm": znorm_suite,
    "quotient-budget": quotient_budget,
    "omega": omega_suite,
    "covering": covering,
    "structural": structural,
}
