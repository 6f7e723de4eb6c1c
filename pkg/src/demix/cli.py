"""``demix`` command line: predictions, statistical dimensions, single solves and experiments.

Exit codes: 0 success, 1 usage error (bad flags, malformed config), 2
numerical failure.  The root seed comes from ``--seed``, else the
``DEMIX_SEED`` environment variable, else a fixed default, so bare runs are
reproducible.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time

import jsonschema
import numpy as np

from . import cones, kinematics, solver
from .errors import DemixError, NonConvergenceError, RankDeficiencyError
from .experiments import DEFAULT_SEED, PhaseGridConfig, run_and_report
from .rng import SeedStream

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def root_seed(args) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("DEMIX_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"DEMIX_SEED must be an integer, got {env!r}") from None
    return DEFAULT_SEED


def _emit(args, payload: dict, lines: list[str]):
    for line in lines:
        print(line)
    if getattr(args, "out", None):
        os.makedirs(os.path.dirname(os.path.abspath(args.out)) or ".", exist_ok=True)
        with open(args.out, "w") as fh:
            json.dump(payload, fh, indent=2)


def _apply_config(args, parser_defaults: dict):
    """Overlay a flat JSON config onto flags that were left at their defaults."""
    if not getattr(args, "config", None):
        return
    try:
        with open(args.config) as fh:
            obj = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {args.config}: {exc}") from None
    if not isinstance(obj, dict):
        raise UsageError("config file must hold a JSON object")
    for key, value in obj.items():
        attr = key.replace("-", "_")
        if attr not in parser_defaults or attr in ("config", "command"):
            raise UsageError(f"unknown config key {key!r}")
        if getattr(args, attr) == parser_defaults[attr]:
            setattr(args, attr, value)


# ------------------------------------------------------------ subcommands


def _constituent_deltas(args):
    d = args.d
    deltas = [cones.sdim_l1_formula(k, d).value for k in args.l1 or []]
    deltas += [d / 2.0] * args.sign
    deltas += list(args.delta or [])
    if not deltas:
        raise UsageError("give at least one constituent (--l1 K, --sign or --delta X)")
    return deltas


def cmd_predict(args):
    deltas = _constituent_deltas(args)
    m = args.m if args.m is not None else args.d
    pred = kinematics.predict_transition(deltas, args.d, m, args.eta)
    lines = [
        f"Delta = {pred.delta_total:.4f}",
        f"sigma = {pred.sigma:.4f}",
        f"lambda* = {pred.lambda_star:.4f}",
        f"m = {m}",
        f"verdict = {pred.verdict}",
    ]
    _emit(args, {"deltas": deltas, **pred.to_json()}, lines)
    return EXIT_OK


def cmd_sdim(args):
    stream = SeedStream(root_seed(args))
    d = args.d
    if args.linf:
        cone = cones.DescentCone(cones.LINF, np.ones(d))
        exact = cones.sdim_exact(cone)
        label = "linf-sign"
        tol_extra = 0.0
    else:
        if args.k is None:
            raise UsageError("--l1 needs --k")
        anchor = np.zeros(d)
        anchor[: args.k] = 1.0
        cone = cones.DescentCone(cones.L1, anchor)
        exact = cones.sdim_l1_formula(args.k, d)
        label = "l1"
        tol_extra = 2.0 * math.sqrt(args.k * d) if 0 < args.k else 0.0
    mc = cones.sdim_mc(cone, args.mc_trials, stream) if args.mc_trials else None
    lines = [f"{label} d={d}" + (f" k={args.k}" if label == "l1" else ""), f"formula = {exact.value:.6f}"]
    payload = {"cone": label, "d": d, "k": args.k, "formula": exact.value, "tau_star": exact.tau_star}
    if mc is not None:
        tol = tol_extra + 3.0 * mc.std_error
        agree = abs(mc.value - exact.value) <= tol
        lines += [f"monte_carlo = {mc.value:.6f} +/- {mc.std_error:.6f} ({mc.trials} trials)", f"tolerance = {tol:.6f}", f"agree = {agree}"]
        payload.update(monte_carlo=mc.value, std_error=mc.std_error, trials=mc.trials, tolerance=tol, agree=agree)
    _emit(args, payload, lines)
    return EXIT_OK


def cmd_solve(args):
    stream = SeedStream(root_seed(args))
    pens, spars = [], []
    for k in args.l1 or []:
        pens.append(cones.L1)
        spars.append(k)
    for _ in range(args.sign):
        pens.append(cones.LINF)
        spars.append(None)
    if not pens:
        raise UsageError("give at least one constituent (--l1 K or --sign)")
    m = args.m if args.m is not None else args.d
    problem = solver.synthesize_problem(args.d, m, len(pens), pens, spars, args.noise, stream, identity_measurement=args.identity)
    config = solver.SolverConfig(max_iterations=args.max_iterations)
    start = time.perf_counter()
    sol = solver.solve_constrained(problem, config)
    elapsed = time.perf_counter() - start
    ok = solver.check_success(sol, problem, config.success_tolerance)
    err = max(float(np.max(np.abs(a - b))) for a, b in zip(sol.x_hat, problem.x_true))
    report = solver.stability_report(sol, problem)
    lines = [
        f"objective = {sol.objective:.6e}",
        f"iterations = {sol.iterations}",
        f"converged = {sol.converged}",
        f"max_inf_error = {err:.3e}",
        f"success = {ok}",
    ]
    if report.ratio is not None:
        lines.append(f"stability_ratio = {report.ratio:.4f}")
    payload = {
        "problem": solver.problem_to_json(problem),
        "solution": solver.solution_to_json(sol),
        "success": ok,
        "max_inf_error": err,
        "seconds": elapsed,
    }
    _emit(args, payload, lines)
    return EXIT_OK


def cmd_phase_grid(args):
    if not args.config:
        raise UsageError("phase-grid needs --config")
    try:
        with open(args.config) as fh:
            obj = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {args.config}: {exc}") from None
    if args.seed is not None or "DEMIX_SEED" in os.environ:
        obj["seed"] = root_seed(args)
    if args.trials is not None:
        obj["trials_per_cell"] = args.trials
    try:
        config = PhaseGridConfig.from_dict(obj)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise UsageError(f"invalid config at {where}: {exc.message}") from None
    out = args.out or "."
    summary = run_and_report(config, out, threads=args.threads, resume=args.resume)
    print(f"wrote results for {config.name or config.experiment} to {out}")
    for m, info in summary["per_m"].items():
        print(f"m = {m}: 50% contour within 2 cells of prediction for {100 * info['agreement_50']:.1f}% of vertices")
    print(f"wall_clock = {summary['wall_clock_seconds']:.1f} s")
    return EXIT_OK


def _make_cone(name: str, d: int, stream: SeedStream, dim: int | None = None, generators: int | None = None):
    if name == "orthant":
        return cones.Orthant(d)
    if name == "ray":
        e = np.zeros(d)
        e[0] = 1.0
        return cones.ray(e)
    if name == "halfspace":
        e = np.zeros(d)
        e[-1] = 1.0
        return cones.halfspace(e)
    if name == "subspace":
        dim = 1 if dim is None else dim
        return cones.Subspace(np.eye(d)[:, :dim])
    if name == "full":
        return cones.full_space(d)
    if name == "random":
        p = generators or d
        return cones.PolyhedralGenerators(stream.generator().standard_normal((d, p)))
    raise UsageError(f"unknown cone {name!r}")


CONE_NAMES = ("orthant", "ray", "halfspace", "subspace", "full", "random")


def cmd_intrinsic_volumes(args):
    stream = SeedStream(root_seed(args))
    cone = _make_cone(args.cone, args.d, stream.child(0), args.dim, args.generators)
    prof = kinematics.intrinsic_volumes_mc(cone, args.trials, stream.child(1))
    mean, se = prof.mean()
    lines = [f"v_{k} = {v:.5f}" for k, v in enumerate(prof.values)]
    lines.append(f"mean = {mean:.5f} +/- {se:.5f}")
    if not prof.is_subspace:
        lines.append(f"2*h_1 = {2 * kinematics.half_tail(prof, 1):.5f}")
    _emit(args, {"cone": args.cone, **prof.to_json()}, lines)
    return EXIT_OK


def cmd_crofton(args):
    stream = SeedStream(root_seed(args))
    cone_list = [_make_cone(name, args.d, stream.child(0, i)) for i, name in enumerate(args.cones)]
    profiles = [kinematics.profile_for(c, args.profile_trials, stream.child(1, i)) for i, c in enumerate(cone_list)]
    formula = kinematics.crofton_probability_formula(profiles)
    mc = kinematics.crofton_probability_mc(cone_list, args.trials, stream.child(2))
    lines = [f"formula = {formula:.5f}", f"monte_carlo = {mc.value:.5f} +/- {mc.std_error:.5f} ({mc.trials} trials)"]
    _emit(args, {"cones": args.cones, "d": args.d, "formula": formula, "monte_carlo": mc.value, "std_error": mc.std_error}, lines)
    return EXIT_OK


def cmd_kinematic_check(args):
    stream = SeedStream(root_seed(args))
    c = _make_cone(args.c, args.d, stream.child(0))
    dc = _make_cone(args.D, args.d, stream.child(1))
    res = kinematics.kinematic_expectation_check(c, dc, args.k, args.trials, stream.child(2), inner_trials=args.inner_trials)
    lines = [
        f"E v_{args.k}(C ∩ QD) = {res.lhs:.5f} +/- {res.lhs_stderr:.5f}",
        f"v_{args.d + args.k}(C x D) = {res.rhs:.5f} +/- {res.rhs_stderr:.5f}",
        f"agree = {res.agrees()}",
    ]
    _emit(args, {"lhs": res.lhs, "lhs_stderr": res.lhs_stderr, "rhs": res.rhs, "rhs_stderr": res.rhs_stderr}, lines)
    return EXIT_OK


def cmd_selftest(args):
    from .selftest import run_selftest

    ok = run_selftest(SeedStream(root_seed(args)), verbose=True)
    return EXIT_OK if ok else EXIT_NUMERIC


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="demix", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(p, trials_default=None):
        p.add_argument("--config", help="JSON file whose keys override flag defaults")
        p.add_argument("--out", help="write a JSON result here (phase-grid: output directory)")
        p.add_argument("--seed", type=int, help="root seed (overrides DEMIX_SEED)")
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
        p.add_argument("--trials", type=int, default=trials_default)

    def constituents(p):
        p.add_argument("--d", type=int, required=False, default=200)
        p.add_argument("--m", type=int)
        p.add_argument("--l1", type=int, action="append", metavar="K", help="sparse constituent with K nonzeros (repeatable)")
        p.add_argument("--sign", action="count", default=0, help="sign-vector constituent (repeatable)")

    p = sub.add_parser("predict", help="phase-transition verdict for a demixing configuration")
    common(p)
    constituents(p)
    p.add_argument("--delta", type=float, action="append", help="explicit statistical dimension (repeatable)")
    p.add_argument("--eta", type=float, default=0.01)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("sdim", help="statistical dimension of an l1 or sign-vector descent cone")
    common(p)
    kind = p.add_mutually_exclusive_group()
    kind.add_argument("--l1", action="store_true", default=True)
    kind.add_argument("--linf", action="store_true")
    p.add_argument("--k", type=int)
    p.add_argument("--d", type=int, default=100)
    p.add_argument("--mc-trials", type=int, default=0)
    p.set_defaults(func=cmd_sdim)

    p = sub.add_parser("solve", help="synthesize and solve one demixing instance")
    common(p)
    constituents(p)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--identity", action="store_true", help="use A = I (requires m = d)")
    p.add_argument("--max-iterations", type=int, default=50_000)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("phase-grid", help="run a phase-transition experiment from a JSON config")
    common(p)
    p.add_argument("--resume", action="store_true", help="keep cells already present in the CSV")
    p.set_defaults(func=cmd_phase_grid)

    p = sub.add_parser("intrinsic-volumes", help="Monte Carlo intrinsic volumes of a small cone")
    common(p, trials_default=100_000)
    p.add_argument("--cone", choices=CONE_NAMES, default="orthant")
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--dim", type=int, help="subspace dimension")
    p.add_argument("--generators", type=int, help="number of generators of a random cone")
    p.set_defaults(func=cmd_intrinsic_volumes)

    p = sub.add_parser("crofton", help="Crofton formula versus Monte Carlo intersection frequency")
    common(p, trials_default=10_000)
    p.add_argument("--cones", nargs="+", choices=CONE_NAMES, default=["ray", "halfspace"])
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--profile-trials", type=int, default=100_000)
    p.set_defaults(func=cmd_crofton)

    p = sub.add_parser("kinematic-check", help="kinematic formula check on small cones")
    common(p, trials_default=400)
    p.add_argument("--c", choices=CONE_NAMES, default="orthant")
    p.add_argument("--D", choices=CONE_NAMES, default="orthant")
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--inner-trials", type=int, default=500)
    p.set_defaults(func=cmd_kinematic_check)

    p = sub.add_parser("selftest", help="run the invariant suites")
    common(p)
    p.set_defaults(func=cmd_selftest)
    return parser


_NUMERIC = (NonConvergenceError, RankDeficiencyError, FloatingPointError, np.linalg.LinAlgError)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("missing subcommand")
        if args.command != "phase-grid":
            sub = parser._subparsers._group_actions[0].choices[args.command]
            _apply_config(args, {a.dest: a.default for a in sub._actions if a.dest != "help"})
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _NUMERIC as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, TypeError) as exc:
        # input validation errors from the library
        print(f"usage error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DemixError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
