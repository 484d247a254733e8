"""Command-line front end.

Every subcommand writes CSV (to ``--output`` or stdout) preceded by one
versioned comment line.  Exit codes: 0 success, 1 usage or input error,
2 numerical non-convergence, 3 violation of a closed-form bound.

``--config run.json`` loads a ``RunConfig`` whose values override the
flags; ``--dump-config`` writes the effective configuration back out.
``GAPKIT_THREADS`` caps the worker processes of sweeps and suites.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import math
import sys
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .checks import SUITES, parallel_map
from .solvers import ConvergenceWarning
from .spaces import GapkitError, INF, dim, format_space, load_subspace, norm_eval, parse_space

CSV_VERSION = 1
EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_BOUND = 0, 1, 2, 3
DEFAULT_GRID = "1.25,1.5,2,3,4"

log = logging.getLogger("gapkit")


class UsageError(GapkitError):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# run configuration


@dataclass
class RunConfig:
    command: str = ""
    ambient: str | None = None
    space: str | None = None
    coupling: str | None = None
    E: str | None = None
    F: str | None = None
    p: float | None = None
    q: float | None = None
    sigma: float | None = None
    theta: float | None = None
    delta: float | None = None
    budget: int | None = None
    samples: int | None = None
    seed: int = 0
    output: str | None = None
    params: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        data = json.loads(text)
        if not isinstance(data, dict):
            raise UsageError("run config must be a JSON object")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise UsageError(f"unknown run config keys: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)} - {"params"}
        top, params = {}, {}
        for key, val in sorted(vars(args).items()):
            if key in _PLUMBING:
                continue
            (top if key in names else params)[key] = val
        return cls(**top, params=params)

    def apply(self, args: argparse.Namespace) -> None:
        """Override parsed flags with the values set in this config."""
        merged = {k: v for k, v in dataclasses.asdict(self).items() if k != "params"}
        merged.update(self.params)
        for key, val in merged.items():
            if key in ("command",) or val is None:
                continue
            if not hasattr(args, key):
                raise UsageError(f"run config key {key!r} does not apply to '{args.command}'")
            setattr(args, key, val)


_PLUMBING = {"func", "config", "dump_config", "verbose"}


# ---------------------------------------------------------------------------
# output helpers


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return ""
        return "inf" if x == math.inf else repr(x)
    return str(x)


class _Table:
    def __init__(self, command: str, header):
        self.buf = io.StringIO()
        self.buf.write(f"# gapkit-csv v{CSV_VERSION} {command}\n")
        self.writer = csv.writer(self.buf, lineterminator="\n")
        self.writer.writerow(header)

    def row(self, *values):
        self.writer.writerow([_fmt(v) for v in values])

    def emit(self, path):
        text = self.buf.getvalue()
        if path:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)


def _grid(text: str) -> list:
    out = []
    for tok in str(text).split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            out.append(INF if tok in ("inf", "infinity") else float(tok))
        except ValueError:
            raise UsageError(f"bad grid value {tok!r}") from None
    if not out:
        raise UsageError("empty grid")
    return out


def _order(p) -> float:
    return math.inf if p is INF else float(p)


def _space(text, what="space"):
    if not text:
        raise UsageError(f"--{what} is required")
    return parse_space(text)


def _subspace(parent, path, flag):
    if not path:
        raise UsageError(f"--{flag} is required")
    return load_subspace(parent, path)


def _coupling(args):
    from .couplings import parse_coupling

    if not args.coupling:
        raise UsageError("--coupling is required")
    space = parse_space(args.space) if args.space else None
    return parse_coupling(args.coupling, space=space, n=args.dim)


# ---------------------------------------------------------------------------
# subcommands


def cmd_gap(args) -> int:
    from .gap import gap

    Z = _space(args.ambient, "ambient")
    E = _subspace(Z, args.E, "E")
    F = _subspace(Z, args.F, "F")
    b = gap(Z, E, F, delta=args.delta, budget=args.budget, seed=args.seed, certify=not args.no_certify)
    t = _Table("gap", ["ambient", "dimE", "dimF", "lower", "upper", "delta", "seed"])
    t.row(format_space(Z), E.dim, F.dim, b.lower, b.upper, args.delta, args.seed)
    t.emit(args.output)
    for flag in b.flags:
        log.warning("gap: %s", flag)
    return EXIT_OK if b.converged else EXIT_NUMERIC


def _bounds_row(p, q):
    from .interp import gh_upper_l1_lp, kadets_lower_lp, kadets_upper_lp

    finite = all(x is not INF and x > 1.0 for x in (p, q))
    upper = kadets_upper_lp(p, q) if finite else math.nan
    lower = kadets_lower_lp(p, q)
    gh = gh_upper_l1_lp(p) if p is not INF and 1.0 <= p <= 2.0 else math.nan
    return upper, lower, gh


def cmd_bounds(args) -> int:
    t = _Table("bounds", ["p", "q", "upper", "lower", "gh_upper_if_p_le_2"])
    bad = 0
    for p in sorted(_grid(args.p_grid), key=_order):
        for q in sorted(_grid(args.q_grid), key=_order):
            upper, lower, gh = _bounds_row(p, q)
            if not math.isnan(upper) and lower > upper + 1e-12:
                bad += 1
            t.row(p, q, upper, lower, gh)
    t.emit(args.output)
    return EXIT_BOUND if bad else EXIT_OK


def _sweep_cell(job):
    from .couplings import delta_estimate, mazur_coupling, structural_check

    p, q, n, budget, samples, seed = job
    upper, lower, _ = _bounds_row(p, q)
    c = mazur_coupling(n, p, q)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        est = delta_estimate(c, budget=budget, samples=samples, seed=seed)
        rep = structural_check(c, samples=samples, seed=seed)
    flagged = any(issubclass(w.category, ConvergenceWarning) for w in caught)
    return upper, lower, est.value, rep.d_max, rep.delta_max, rep.worst_d_minus_delta, flagged


def cmd_sweep(args) -> int:
    ps = sorted(_grid(args.p_grid), key=_order)
    qs = sorted(_grid(args.q_grid), key=_order)
    for x in ps + qs:
        if x is INF or not x > 1.0:
            raise UsageError("sweep exponents must be finite and > 1")
    cells = [(float(p), float(q)) for p in ps for q in qs]
    jobs = [(p, q, args.dim, args.budget, args.samples, args.seed) for p, q in cells]
    results = parallel_map(_sweep_cell, jobs)
    t = _Table("sweep", ["p", "q", "upper", "lower", "delta_sampled", "d_sampled"])
    violations, flagged = [], False
    for (p, q), (upper, lower, dl, d, d_pool_delta, worst, fl) in zip(cells, results):
        t.row(p, q, upper, lower, dl, d)
        flagged |= fl
        if dl > upper + 1e-6:
            violations.append(f"p={p:g} q={q:g}: sampled delta {dl:.9g} exceeds upper {upper:.9g}")
        if lower > upper + 1e-12:
            violations.append(f"p={p:g} q={q:g}: lower {lower:.9g} exceeds upper {upper:.9g}")
        if worst > 1e-12:
            violations.append(f"p={p:g} q={q:g}: D exceeds delta by {worst:.3g} on the shared pool")
    t.emit(args.output)
    for v in violations:
        log.error("sweep: %s", v)
    if violations:
        return EXIT_BOUND
    return EXIT_NUMERIC if flagged else EXIT_OK


def cmd_estimate(args) -> int:
    from .couplings import d_small_estimate, delta_estimate, delta_r_estimate, write_family_csv

    c = _coupling(args)
    if args.kind == "delta":
        est = delta_estimate(c, budget=args.budget, samples=args.samples, seed=args.seed)
    elif args.kind == "delta_r":
        if args.r is None:
            raise UsageError("--r is required for delta_r")
        est = delta_r_estimate(c, args.r, budget=args.budget, samples=args.samples, seed=args.seed)
    else:
        est = d_small_estimate(c, samples=args.samples, seed=args.seed)
    t = _Table("estimate", ["coupling", "kind", "budget", "samples", "seed", "value"])
    t.row(c.name, est.kind, est.budget, est.samples, est.seed, est.value)
    t.emit(args.output)
    if args.witness:
        write_family_csv(args.witness, est.witness)
    return EXIT_OK


def cmd_znorm(args) -> int:
    from .interp import kadets_upper_lp
    from .couplings import Mazur
    from .znorm import GaugeBuildError, build_znorm, save_gauge, verify_embedded_gap, znorm_eval

    c = _coupling(args)
    sigma = args.sigma
    if sigma is None:
        if not isinstance(c.phi, Mazur):
            raise UsageError("--sigma is required unless the coupling is a Mazur coupling")
        sigma = kadets_upper_lp(c.phi.p_from, c.phi.p_to)
    nx, ny = dim(c.domain), dim(c.codomain)
    rng = np.random.default_rng(np.random.SeedSequence([int(args.seed), 11]))
    k = args.include_tests
    tx, ty = rng.standard_normal((k // 2, nx)), rng.standard_normal((k - k // 2, ny))
    try:
        g = build_znorm(c, sigma, args.atoms, seed=args.seed, test_x=tx, test_y=ty)
    except GaugeBuildError as exc:
        raise UsageError(str(exc)) from None
    if args.save:
        save_gauge(g, args.save)
    pr = np.random.default_rng(np.random.SeedSequence([int(args.seed), 12]))
    ex = ey = 0.0
    for _ in range(args.probes):
        u, v = pr.standard_normal(nx), pr.standard_normal(ny)
        ex = max(ex, abs(znorm_eval(g, u, np.zeros(ny)) / norm_eval(c.domain, u) - 1.0))
        ey = max(ey, abs(znorm_eval(g, np.zeros(nx), v) / norm_eval(c.codomain, v) - 1.0))
    rep = verify_embedded_gap(g)
    t = _Table("znorm", ["coupling", "sigma", "atoms", "tests", "embedded_gap_worst_slack",
                         "block_x_error", "block_y_error"])
    t.row(c.name, sigma, g.size, k, rep.worst, ex, ey)
    t.emit(args.output)
    return EXIT_BOUND if (rep.worst > 1e-6 or max(ex, ey) > 1e-4) else EXIT_OK


def _vectors(args, n):
    rows = [list(map(float, v.split(","))) for v in (args.vector or [])]
    if args.vectors:
        with open(args.vectors, newline="") as fh:
            data = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
        for r in data:
            try:
                rows.append([float(x) for x in r])
            except ValueError:
                continue  # header
    if not rows:
        raise UsageError("give --vector or --vectors")
    for r in rows:
        if len(r) != n:
            raise UsageError(f"vector has {len(r)} entries, parent dimension is {n}")
    return np.array(rows)


def cmd_quotient(args) -> int:
    from .solvers import lift_from_quotient, solve_quotient

    Z = _space(args.parent, "parent")
    K = _subspace(Z, args.kernel, "kernel")
    V = _vectors(args, dim(Z))
    t = _Table("quotient", ["index", "quotient_norm", "lift_norm", "converged"])
    ok = True
    for i, v in enumerate(V):
        sol = solve_quotient(Z, K, v)
        lift = math.nan
        if args.theta is not None:
            z, good = lift_from_quotient(Z, K, v, args.theta, return_flag=True)
            lift = norm_eval(Z, z)
            ok &= good
        ok &= sol.converged
        t.row(i, sol.value, lift, sol.converged)
    t.emit(args.output)
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_omega(args) -> int:
    from .couplings import MatchingError, build_omega

    Z = _space(args.ambient, "ambient")
    X = _subspace(Z, args.E, "E")
    Y = _subspace(Z, args.F, "F")
    if args.sigma is None:
        raise UsageError("--sigma is required")
    try:
        r = build_omega(Z, X, Y, args.sigma, sphere_samples=args.samples, seed=args.seed,
                        check_families=args.families, check_budget=args.budget)
    except MatchingError as exc:
        raise UsageError(f"{exc}; is the gap below sigma?") from None
    t = _Table("omega", ["ambient", "dim", "sigma", "centers", "rays", "dropped", "worst_defect", "bound"])
    t.row(format_space(Z), X.dim, args.sigma, len(r.centers_x), r.rays, r.dropped, r.worst_defect, r.bound)
    t.emit(args.output)
    return EXIT_OK if r.ok else EXIT_BOUND


def cmd_nets(args) -> int:
    from .nets import certified_sphere_net, greedy_net, greedy_separated, write_points_csv
    from .spaces import Subspace

    Z = _space(args.space)
    region = load_subspace(Z, args.basis) if args.basis else Z
    if args.kind == "certified":
        if not isinstance(region, Subspace):
            region = Subspace(Z, np.eye(dim(Z)), full=True)
        net = certified_sphere_net(region, args.radius)
        points, size, verified, worst = net.points, net.size, not net.capped, net.radius
        target = "sphere"
    else:
        make = greedy_separated if args.kind == "separated" else greedy_net
        rep = make(region, args.radius, args.target, candidate_budget=args.budget, seed=args.seed)
        points, size, verified, worst, target = rep.points, rep.size, rep.verified, rep.worst, rep.target
    if args.points and size:
        write_points_csv(args.points, points)
    t = _Table("nets", ["space", "kind", "target", "radius", "size", "verified", "worst", "seed"])
    t.row(format_space(Z), args.kind, target, args.radius, size, verified, worst, args.seed)
    t.emit(args.output)
    return EXIT_OK if verified else EXIT_NUMERIC


_SUITE_FLAGS = {"p": "ps", "trials": "trials", "seed": "seed"}


def _suite_kwargs(args) -> dict:
    kw = {}
    for flag, name in _SUITE_FLAGS.items():
        val = getattr(args, flag)
        if val is not None:
            kw[name] = tuple(_grid(val)) if flag == "p" else val
    return kw


def cmd_verify(args) -> int:
    import inspect

    if args.suite not in SUITES:
        avail = ", ".join(sorted(SUITES))
        raise UsageError(f"unknown suite {args.suite!r}; available: {avail}")
    fn = SUITES[args.suite]
    accepted = inspect.signature(fn).parameters
    kw = _suite_kwargs(args)
    extra = [f"--{f}" for f, name in _SUITE_FLAGS.items() if name in kw and name not in accepted]
    if extra:
        raise UsageError(f"suite {args.suite!r} does not take {', '.join(extra)}")
    rows = fn(**kw)
    t = _Table("verify", ["suite", "check", "value", "relation", "bound", "pass"])
    for r in rows:
        t.row(r.suite, r.name, r.value, r.relation, r.bound, r.passed)
    t.emit(args.output)
    return EXIT_OK if all(r.passed for r in rows) else EXIT_BOUND


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="gapkit", description="Gap brackets, coupling defects and l_p bounds.")
    ap.add_argument("--version", action="version", version=f"gapkit {__version__}")
    sub = ap.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        p.set_defaults(func=func)
        p.add_argument("--config", help="JSON run config; its values override flags")
        p.add_argument("--dump-config", help="write the effective run config to this path")
        p.add_argument("-o", "--output", help="CSV output path (default stdout)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    p = add("gap", cmd_gap, "bracket the gap between two subspaces")
    p.add_argument("--ambient")
    p.add_argument("--E", help="CSV basis of E (columns b1,b2,...)")
    p.add_argument("--F", help="CSV basis of F")
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--budget", type=int, default=8)
    p.add_argument("--no-certify", action="store_true", help="skip the certified net (trivial upper end)")

    p = add("bounds", cmd_bounds, "closed-form distance bounds between l_p spaces on a grid")
    p.add_argument("--p-grid", default=DEFAULT_GRID)
    p.add_argument("--q-grid", default=DEFAULT_GRID)

    p = add("sweep", cmd_sweep, "closed forms against sampled Mazur-coupling defects on a grid")
    p.add_argument("--p-grid", default=DEFAULT_GRID)
    p.add_argument("--q-grid", default=DEFAULT_GRID)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--budget", type=int, default=5)
    p.add_argument("--samples", type=int, default=2000)

    p = add("estimate", cmd_estimate, "sampled defect of a coupling (a lower bound)")
    p.add_argument("--coupling")
    p.add_argument("--space", help="domain for recipes that do not name one")
    p.add_argument("--dim", type=int, help="dimension for mazur recipes")
    p.add_argument("--kind", choices=("delta", "delta_r", "d_small"), default="delta")
    p.add_argument("--r", type=float)
    p.add_argument("--budget", type=int, default=5)
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--witness", help="write the witness family CSV here")

    p = add("znorm", cmd_znorm, "build and verify a twisted norm")
    p.add_argument("--coupling")
    p.add_argument("--space")
    p.add_argument("--dim", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--atoms", type=int, default=2000)
    p.add_argument("--include-tests", type=int, default=100, help="random test directions added as atoms")
    p.add_argument("--probes", type=int, default=20, help="random vectors for the block isometry check")
    p.add_argument("--save", help="write the gauge here")

    p = add("quotient", cmd_quotient, "quotient norms and near-minimal lifts")
    p.add_argument("--parent")
    p.add_argument("--kernel", help="CSV basis of the kernel")
    p.add_argument("--vector", action="append", help="comma-separated vector (repeatable)")
    p.add_argument("--vectors", help="CSV file, one vector per row")
    p.add_argument("--theta", type=float)

    p = add("omega", cmd_omega, "norm-preserving bijection between near subspaces")
    p.add_argument("--ambient")
    p.add_argument("--E")
    p.add_argument("--F")
    p.add_argument("--sigma", type=float)
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--families", type=int, default=2000)
    p.add_argument("--budget", type=int, default=5)

    p = add("nets", cmd_nets, "separated sets, coverings and certified sphere nets")
    p.add_argument("--space")
    p.add_argument("--basis", help="CSV basis of a subspace (default: the whole space)")
    p.add_argument("--radius", type=float, default=0.5)
    p.add_argument("--kind", choices=("separated", "covering", "certified"), default="separated")
    p.add_argument("--target", choices=("sphere", "ball"), default="sphere")
    p.add_argument("--budget", type=int, default=10_000, help="consecutive rejections before stopping")
    p.add_argument("--points", help="write the points CSV here")

    p = add("verify", cmd_verify, "run a named verification suite")
    p.add_argument("suite", help="one of: " + ", ".join(sorted(SUITES)))
    p.add_argument("--p", help="comma-separated exponents")
    p.add_argument("--trials", type=int)
    p.set_defaults(seed=None)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="gapkit: %(message)s", stream=sys.stderr)
    try:
        if args.config:
            with open(args.config) as fh:
                RunConfig.from_json(fh.read()).apply(args)
        if args.dump_config:
            with open(args.dump_config, "w") as fh:
                fh.write(RunConfig.from_args(args).to_json())
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", ConvergenceWarning)
            code = args.func(args)
        noisy = [w for w in caught if issubclass(w.category, ConvergenceWarning)]
        for w in noisy[:5]:
            log.warning("%s", w.message)
        if noisy and code == EXIT_OK:
            code = EXIT_NUMERIC
        return code
    except (GapkitError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"gapkit: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
