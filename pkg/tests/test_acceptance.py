"""Acceptance criteria, one test each, at their stated tolerances.

Every test prints a single ``PASS``/``FAIL`` line (capture disabled, so the
lines appear in the normal ``pytest -v`` log).  Run this file as a script to
get just the nine lines.
"""

import math
import os
import sys
from pathlib import Path

import numpy as np
import pytest

from demix.cones import (
    L1,
    LINF,
    DescentCone,
    Orthant,
    PolyhedralGenerators,
    halfspace,
    polar,
    ray,
    sdim_l1_formula,
    sdim_mc,
)
from demix.experiments import PhaseGridConfig, contour_agreement, extract_contours, predicted_curve, run_phase_grid
from demix.kinematics import (
    crofton_probability_formula,
    crofton_probability_mc,
    half_tail_coeffs,
    halfspace_profile,
    intrinsic_volumes_mc,
    lambda_star,
    orthant_profile,
    p_theta,
    predict_transition,
    ray_profile,
    tail_coeffs,
    tail_concentration_check,
)
from demix.rng import RotationSet, SeedStream
from demix.solver import (
    ConeConstraint,
    DemixProblem,
    check_erc_small,
    check_success,
    solve_constrained,
    stability_report,
    synthesize_problem,
)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
SEED = 20130813
THREADS = os.cpu_count() or 1


def _report(capsys, number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} | {detail}"
    if capsys is None:
        print(line)
    else:
        with capsys.disabled():
            print("\n" + line)
    return ok


# ------------------------------------------------------------- 1 and 2


def _grid_agreement(name):
    cfg = PhaseGridConfig.from_json_file(CONFIGS / f"{name}.json")
    grid = run_phase_grid(cfg, threads=THREADS)
    scores = {}
    for m in cfg.m_values:
        contours = extract_contours(grid.field(m), cfg.k1_values, cfg.k2_values, levels=(0.5,))
        scores[m] = contour_agreement(contours[0.5], predicted_curve(cfg, m))
    return scores


def criterion_1():
    scores = _grid_agreement("left_panel_reduced")
    ok = all(s >= 0.8 for s in scores.values())
    return ok, "left panel d=60: 50% contour vertices within 2 cells " + ", ".join(f"m={m}: {s:.3f}" for m, s in scores.items())


def criterion_2():
    scores = _grid_agreement("right_panel_reduced")
    ok = all(s >= 0.8 for s in scores.values())
    return ok, "right panel d=60: 50% contour vertices within 2 cells " + ", ".join(f"m={m}: {s:.3f}" for m, s in scores.items())


# ------------------------------------------------------------------- 3


def _sign_success_rate(m, trials=100):
    hits = 0
    for t in range(trials):
        prob = synthesize_problem(200, m, 1, [LINF], [None], 0.0, SeedStream(SEED, (3, m, t)))
        hits += check_success(solve_constrained(prob), prob)
    return hits / trials


# the criterion fixes the endpoints at 117 and 83; lambda*(0.1, 10) itself is 33.42
SIGN_SUCCESS_M, SIGN_FAILURE_M = 117, 83


def criterion_3():
    pred = predict_transition([100.0], 200, 200, 0.1)
    exact = pred.delta_total == 100 and pred.sigma == 10
    r_hi, r_lo = _sign_success_rate(SIGN_SUCCESS_M), _sign_success_rate(SIGN_FAILURE_M)
    ok = exact and r_hi >= 0.9 - 2 / math.sqrt(100) and r_lo <= 0.1 + 2 / math.sqrt(100)
    return ok, (
        f"delta=100 sigma=10 (lambda*(0.1,10)={pred.lambda_star:.4f}); success at m={SIGN_SUCCESS_M}: {r_hi:.2f} "
        f"(need >= 0.70), at m={SIGN_FAILURE_M}: {r_lo:.2f} (need <= 0.30)"
    )


# ------------------------------------------------------------------- 4


def criterion_4():
    parts, ok = [], True
    for i, (d, k) in enumerate([(100, 5), (100, 10), (100, 30)]):
        anchor = np.zeros(d)
        anchor[:k] = 1.0
        est = sdim_mc(DescentCone(L1, anchor), 100_000, SeedStream(SEED, (4, i)))
        ref = sdim_l1_formula(k, d).value
        tol = 2 * math.sqrt(k * d) + 3 * est.std_error
        ok &= abs(est.value - ref) <= tol
        parts.append(f"(d={d},k={k}) mc={est.value:.3f} formula={ref:.3f} |diff|={abs(est.value - ref):.3f}")
    est = sdim_mc(DescentCone(LINF, np.ones(50)), 100_000, SeedStream(SEED, (4, 9)))
    ok &= abs(est.value - 25.0) <= 3 * est.std_error
    parts.append(f"linf d=50 mc={est.value:.3f}+/-{est.std_error:.3f}")
    return ok, "; ".join(parts)


# ------------------------------------------------------------------- 5


def _pointed(seed, d, p):
    v = np.random.default_rng(seed).standard_normal((d, p))
    v[0] = np.abs(v[0]) + 0.2
    return PolyhedralGenerators(v)


def criterion_5():
    stream = SeedStream(SEED, (5,))
    fails = []
    for d in (2, 5, 10):
        prof = intrinsic_volumes_mc(Orthant(d), 100_000, stream.child(0, d))
        binom = np.array([math.comb(d, j) for j in range(d + 1)]) / 2**d
        if np.max(np.abs(prof.values - binom)) > 0.01:
            fails.append(f"binomial d={d}")
    cones = {
        "orthant3": Orthant(3),
        "orthant5": Orthant(5),
        "halfspace3": halfspace([1.0, -2.0, 0.5]),
        "gen3x4": _pointed(51, 3, 4),
        "gen4x6": _pointed(52, 4, 6),
        "gen5x3": _pointed(53, 5, 3),
    }
    checked = 0
    for i, (name, cone) in enumerate(cones.items()):
        prof = intrinsic_volumes_mc(cone, 10_000, stream.child(1, i))
        pol = intrinsic_volumes_mc(polar(cone), 10_000, stream.child(2, i))
        d = prof.d
        for p in (prof, pol):
            if abs(p.values.sum() - 1.0) > 1e-12 or p.counts.sum() != p.trials:
                fails.append(f"sum {name}")
            h1, se = p.functional(half_tail_coeffs(d, 1))
            if abs(2 * h1 - 1) > 3 * 2 * se:
                fails.append(f"gauss-bonnet {name}")
            for k in range(d + 1):
                hk, s1 = p.functional(half_tail_coeffs(d, k))
                tk, s2 = p.functional(tail_coeffs(d, k))
                hk1, s3 = p.functional(half_tail_coeffs(d, k + 1)) if k < d else (0.0, 0.0)
                s = max(s1, s2, s3)
                if not hk >= tk / 2 - 3 * s >= hk1 - 6 * s:
                    fails.append(f"interlacing {name} k={k}")
        for k in range(1, d + 1):
            a, sa = prof.functional(tail_coeffs(d, k))
            b, sb = pol.functional(tail_coeffs(d, d - k + 1))
            if abs(a + b - 1) > 3 * math.hypot(sa, sb):
                fails.append(f"duality {name} k={k}")
        mean, se = prof.mean()
        est = sdim_mc(cone, 10_000, stream.child(3, i))
        if abs(mean - est.value) > 3 * math.hypot(se, est.std_error):
            fails.append(f"mean {name}")
        checked += 1
    return not fails, f"binomial d=2,5,10 at 1e5; {checked} cones with polars checked" + (f"; failures: {fails}" if fails else "")


# ------------------------------------------------------------------- 6


def criterion_6():
    stream = SeedStream(SEED, (6,))
    f_rh = crofton_probability_formula([ray_profile(2), halfspace_profile(2)])
    mc_rh = crofton_probability_mc([ray([1.0, 0.0]), halfspace([0.0, 1.0])], 10_000, stream.child(0))
    f_rr = crofton_probability_formula([ray_profile(2), ray_profile(2)])
    mc_rr = crofton_probability_mc([ray([1.0, 0.0]), ray([0.0, 1.0])], 10_000, stream.child(1))
    f_oo = crofton_probability_formula([orthant_profile(2), orthant_profile(2)])
    mc_oo = crofton_probability_mc([Orthant(2), Orthant(2)], 10_000, stream.child(2))
    ok = (
        f_rh == 0.5
        and abs(mc_rh.value - 0.5) <= 3 * mc_rh.std_error
        and f_rr == 0.0
        and mc_rr.value == 0.0
        and abs(mc_oo.value - f_oo) <= 3 * mc_oo.std_error
    )
    detail = (
        f"ray/halfspace formula={f_rh} mc={mc_rh.value:.4f}+/-{mc_rh.std_error:.4f}; "
        f"ray/ray formula={f_rr} mc={mc_rr.value}; orthant pair formula={f_oo:.4f} mc={mc_oo.value:.4f}+/-{mc_oo.std_error:.4f}"
    )
    return ok, detail


# ------------------------------------------------------------------- 7


def criterion_7():
    grid_ok = all(
        p_theta(s, lambda_star(e, s)) <= e for e in (0.5, 0.1, 0.01) for s in (0.0, 1.0, 10.0, 100.0)
    )
    one = tail_concentration_check([5.0], 10, 9, [orthant_profile(10)])
    two = tail_concentration_check([5.0, 5.0], 10, 14, [orthant_profile(10)] * 2)
    mc = intrinsic_volumes_mc(Orthant(10), 100_000, SeedStream(SEED, (7,)))
    est = tail_concentration_check([5.0], 10, 9, [mc])
    ok = grid_ok and one.holds() and two.holds() and est.holds()
    return ok, (
        f"p_sigma(lambda*) <= eta on 12-point grid: {grid_ok}; single orthant t9={one.tail:.5f} <= {one.bound:.4f}; "
        f"estimated t9={est.tail:.5f}; doubled orthant t14={two.tail:.5f} <= {two.bound:.4f}"
    )


# ------------------------------------------------------------------- 8


def _erc_instance(t):
    stream = SeedStream(SEED, (8, t))
    rng = stream.child(0).generator()
    d = int(rng.integers(3, 11))
    cones = [PolyhedralGenerators(rng.standard_normal((d, int(rng.integers(1, d + 1))))) for _ in range(2)]
    rot = RotationSet.haar(2, d, stream.child(1))
    x_true = [rng.standard_normal(d) for _ in range(2)]
    prob = DemixProblem.from_parts(None, rot, [ConeConstraint(c) for c in cones], x_true)
    start = [x + rng.standard_normal(d) for x in x_true]
    return cones, rot, prob, start


def criterion_8():
    agree = holds = 0
    for t in range(100):
        cones, rot, prob, start = _erc_instance(t)
        erc = check_erc_small(cones, rot).holds
        holds += erc
        agree += erc == check_success(solve_constrained(prob, x0=start), prob)
    return agree >= 95, f"agreement {agree}/100 (ERC holds on {holds})"


# ------------------------------------------------------------------- 9


def criterion_9():
    m = SIGN_SUCCESS_M
    parts, ok = [], True
    for j, noise in enumerate((1e-3, 1e-2)):
        medians = []
        for batch in range(2):
            ratios = []
            for t in range(10):
                prob = synthesize_problem(200, m, 1, [LINF], [None], noise, SeedStream(SEED, (9, j, batch, t)))
                rep = stability_report(solve_constrained(prob), prob)
                ok &= all(np.isfinite(rep.per_block_error)) and rep.ratio is not None and np.isfinite(rep.ratio)
                ratios.append(rep.ratio)
            medians.append(float(np.median(ratios)))
        spread = max(medians) / min(medians)
        ok &= spread <= 2.0
        parts.append(f"noise={noise:g}: medians {medians[0]:.4f}, {medians[1]:.4f} (x{spread:.3f})")
    return ok, f"m={m}; " + "; ".join(parts)


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7, criterion_8, criterion_9]


@pytest.mark.slow
@pytest.mark.parametrize("number", range(1, 10))
def test_criterion(number, capsys):
    ok, detail = CRITERIA[number - 1]()
    assert _report(capsys, number, ok, detail), detail


if __name__ == "__main__":
    results = [_report(None, i + 1, *fn()) for i, fn in enumerate(CRITERIA)]
    sys.exit(0 if all(results) else 1)
