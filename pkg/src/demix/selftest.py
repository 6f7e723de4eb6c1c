"""Fast invariant suite behind ``demix selftest`` (well under a minute on one core)."""

from __future__ import annotations

import math
import time

import numpy as np

from . import cones, kinematics, solver
from .rng import RotationSet, SeedStream


def _projections(stream):
    rng = stream.generator()
    for _ in range(50):
        v = rng.standard_normal(20) * 3
        r = float(rng.uniform(0.1, 5))
        p = cones.project_l1_ball(v, r)
        if np.abs(p).sum() > r * (1 + 1e-12) + 1e-12:
            return False
        # optimality of the projection: <v - p, y - p> <= 0 for feasible y
        y = cones.project_l1_ball(rng.standard_normal(20), r)
        if (v - p) @ (y - p) > 1e-9:
            return False
    return True


def _sdim(stream):
    est = cones.sdim_mc(cones.DescentCone(cones.LINF, np.ones(50)), 20_000, stream)
    if abs(est.value - 25) > 4 * est.std_error:
        return False
    anchor = np.zeros(100)
    anchor[:10] = 1
    mc = cones.sdim_mc(cones.DescentCone(cones.L1, anchor), 20_000, stream.child(1))
    return abs(mc.value - cones.sdim_l1_formula(10, 100).value) <= 2 * math.sqrt(1000) + 3 * mc.std_error


def _orthant_profile(stream):
    prof = kinematics.intrinsic_volumes_mc(cones.Orthant(5), 50_000, stream)
    exact = kinematics.orthant_profile(5).values
    return np.max(np.abs(prof.values - exact)) < 0.01 and prof.values.sum() == 1.0


def _gauss_bonnet(stream):
    gen = cones.PolyhedralGenerators(stream.child(0).generator().standard_normal((3, 4)))
    prof = kinematics.intrinsic_volumes_mc(gen, 10_000, stream.child(1))
    val, se = prof.functional(2 * kinematics.half_tail_coeffs(3, 1))
    return abs(val - 1) <= 3 * se + 1e-12


def _crofton(stream):
    r2 = kinematics.ray_profile(2)
    if kinematics.crofton_probability_formula([r2, kinematics.halfspace_profile(2)]) != 0.5:
        return False
    mc = kinematics.crofton_probability_mc([cones.ray([1.0, 0.0]), cones.halfspace([0.0, 1.0])], 2000, stream)
    return abs(mc.value - 0.5) <= 3 * mc.std_error


def _concentration(stream):
    for eta in (0.5, 0.1, 0.01):
        for sigma in (0, 1, 10, 100):
            if kinematics.p_theta(sigma, kinematics.lambda_star(eta, sigma)) > eta:
                return False
    chk = kinematics.tail_concentration_check([5], 10, 9, [kinematics.orthant_profile(10)])
    return chk.holds()


def _solver_identity(stream):
    x = np.zeros(30)
    x[:3] = [1.0, -2.0, 0.5]
    prob = solver.DemixProblem.from_parts(None, RotationSet.identity(1, 30), [cones.L1], [x])
    sol = solver.solve_constrained(prob)
    return sol.converged and solver.check_success(sol, prob, 1e-6)


def _solver_random(stream):
    prob = solver.synthesize_problem(60, 60, 3, [cones.L1, cones.L1, cones.LINF], [2, 2, None], 0.0, stream, identity_measurement=True)
    sol = solver.solve_constrained(prob, solver.SolverConfig(record_history=True))
    hist = np.asarray(sol.history)
    return (
        solver.check_success(sol, prob)
        and max(sol.per_block_constraint_slack) <= 1e-9
        and bool(np.all(np.diff(hist) <= 1e-12 * max(1.0, hist[0])))
    )


def _erc(stream):
    e1 = cones.ray([1.0, 0.0])
    rot = RotationSet.identity(2, 2)
    fails = not solver.check_erc_small([e1, cones.ray([-1.0, 0.0])], rot).holds
    holds = solver.check_erc_small([e1, cones.ray([0.0, 1.0])], rot).holds
    return fails and holds


def _prediction(stream):
    p = kinematics.predict_transition([100], 200, 200, 0.01)
    q = kinematics.predict_transition([100], 200, 25, 0.01)
    return p.verdict == "STABLE_WHP" and q.verdict == "FAIL_WHP" and abs(p.lambda_star - 49.0595) < 1e-3


CHECKS = [
    ("ball projections", _projections),
    ("statistical dimensions", _sdim),
    ("orthant intrinsic volumes", _orthant_profile),
    ("Gauss-Bonnet", _gauss_bonnet),
    ("Crofton ray/halfspace", _crofton),
    ("concentration bounds", _concentration),
    ("solver identity instance", _solver_identity),
    ("solver random instance", _solver_random),
    ("ERC examples", _erc),
    ("transition prediction", _prediction),
]


def run_selftest(stream: SeedStream, verbose: bool = True) -> bool:
    all_ok = True
    for i, (name, check) in enumerate(CHECKS):
        start = time.perf_counter()
        try:
            ok = bool(check(stream.child(i)))
        except Exception as exc:  # a crash is a failed check, reported not raised
            ok = False
            if verbose:
                print(f"  {name}: {type(exc).__name__}: {exc}")
        all_ok &= ok
        if verbose:
            print(f"{'PASS' if ok else 'FAIL'} {name} ({time.perf_counter() - start:.2f} s)")
    return all_ok
