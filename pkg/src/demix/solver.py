"""Demixing instances and the constrained demixing program.

The program solved is

    minimize   || A^+ (A sum_i U_i x_i - z0) ||^2
    subject to f_i(x_i) <= f_i(x_i_true)   for every block i,

by accelerated projected gradient over the stacked variable
``x = (x_1, ..., x_n)``.  The iteration keeps the objective monotone (a
momentum step that raises the objective is discarded and momentum is reset)
and every few iterations tries to *polish*: fix the face of the constraint set
the iterate sits on, solve the equality-constrained least-squares problem on
that face exactly, and accept the result only if it is feasible, no worse, and
passes the projected-gradient optimality test.  Polishing is what turns a
1e-6-accurate iterate into a machine-precision one on successful instances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
import scipy.linalg

from .cones import (
    PenaltySpec,
    PolyhedralGenerators,
    _lp_feasible,
    _nnls,
    cone_from_json,
    cone_to_json,
    is_pointed,
    project_cone,
    project_l1_ball,
    project_linf_ball,
)
from .errors import DemixError, InvalidParameterError, InvalidShapeError, RankDeficiencyError, UnsupportedConeError
from .rng import PseudoInverse, RotationSet, SeedStream, numerical_rank


@dataclass(frozen=True, eq=False)
class ConeConstraint:
    """Block constraint ``x_i - x_i_true in C`` for a polyhedral cone ``C``.

    Its descent cone at the true constituent is exactly ``C``, so it stands in
    for a polyhedral penalty when checking the recovery condition on small
    synthetic instances.
    """

    cone: PolyhedralGenerators


Block = Union[PenaltySpec, ConeConstraint]


@dataclass(frozen=True, eq=False)
class DemixProblem:
    a: np.ndarray
    rotations: RotationSet
    penalties: tuple
    x_true: tuple
    w: np.ndarray
    z0: np.ndarray
    identity_measurement: bool = False

    @property
    def d(self) -> int:
        return self.a.shape[1]

    @property
    def m(self) -> int:
        return self.a.shape[0]

    @property
    def n(self) -> int:
        return len(self.penalties)

    @classmethod
    def from_parts(cls, a, rotations, penalties, x_true, w=None) -> "DemixProblem":
        """Assemble an instance and compute ``z0 = A (sum_i U_i x_i + w)``."""
        rotations = rotations if isinstance(rotations, RotationSet) else RotationSet(tuple(rotations))
        d = rotations.dimension
        identity = a is None
        a = np.eye(d) if identity else np.atleast_2d(np.asarray(a, dtype=float))
        if a.shape[1] != d or a.shape[0] > d:
            raise InvalidShapeError(f"A of shape {a.shape} does not match d={d}")
        x_true = tuple(np.asarray(x, dtype=float).copy() for x in x_true)
        penalties = tuple(penalties)
        if not (len(rotations) == len(penalties) == len(x_true)):
            raise InvalidShapeError("rotations, penalties and constituents must have the same length")
        if any(x.shape != (d,) for x in x_true):
            raise InvalidShapeError(f"every constituent must be a vector of length {d}")
        w = np.zeros(d) if w is None else np.asarray(w, dtype=float).copy()
        if not identity:
            rank = numerical_rank(a)
            if rank < a.shape[0]:
                raise RankDeficiencyError(f"A has numerical rank {rank} < {a.shape[0]}", numerical_rank=rank)
        signal = sum(u @ x for u, x in zip(rotations, x_true)) + w
        z0 = signal if identity else a @ signal
        return cls(a, rotations, penalties, x_true, w, z0, identity)

    def residual_objective(self, xs) -> float:
        """``||A^+(A sum U_i x_i - z0)||^2`` evaluated directly."""
        s = sum(u @ x for u, x in zip(self.rotations, xs))
        if self.identity_measurement:
            r = s - self.z0
        else:
            pinv = PseudoInverse(self.a)
            r = pinv.apply(self.a @ s - self.z0)
        return float(r @ r)


def _draw_sparse(d, k, rng):
    x = np.zeros(d)
    support = rng.choice(d, size=k, replace=False)
    x[support] = rng.choice([-1.0, 1.0], size=k)
    return x


def synthesize_problem(
    d: int,
    m: int,
    n: int,
    penalties: Sequence[Block],
    sparsities: Sequence,
    noise_scale: float,
    stream: SeedStream,
    identity_measurement: bool = False,
) -> DemixProblem:
    """Random instance: Haar rotations, Gaussian ``A``, +/-1 sparse or sign constituents.

    ``sparsities[i]`` is the number of nonzeros of block ``i`` (random support,
    random signs), ``None`` for a uniformly random sign vector, or an explicit
    vector used as is.  ``identity_measurement`` replaces ``A`` by the
    identity and requires ``m == d``.  The noise is ``noise_scale`` times a
    uniformly random unit vector.

    Seeds: ``child(0, attempt)`` for ``A``, ``child(1)`` for the rotations,
    ``child(2, i)`` for constituent ``i`` and ``child(3)`` for the noise, so
    changing the noise scale leaves everything else unchanged.
    """
    if not 1 <= m <= d:
        raise InvalidShapeError(f"need 1 <= m <= d, got m={m}, d={d}")
    if n < 1 or len(penalties) != n or len(sparsities) != n:
        raise InvalidShapeError("need n >= 1 and one penalty and sparsity entry per block")
    if noise_scale < 0:
        raise InvalidParameterError("noise_scale must be nonnegative")
    if identity_measurement and m != d:
        raise InvalidShapeError("the identity measurement operator needs m == d")
    rotations = RotationSet.haar(n, d, stream.child(1))
    x_true = []
    for i, k in enumerate(sparsities):
        rng = stream.child(2, i).generator()
        if k is None:
            x_true.append(rng.choice([-1.0, 1.0], size=d))
        elif np.ndim(k) == 0:
            if int(k) != k or not 0 <= k <= d:
                raise InvalidShapeError(f"sparsity {k} outside [0, {d}]")
            x_true.append(_draw_sparse(d, int(k), rng))
        else:
            x_true.append(np.asarray(k, dtype=float))
    g = stream.child(3).generator().standard_normal(d)
    w = noise_scale * g / np.linalg.norm(g)
    if identity_measurement:
        return DemixProblem.from_parts(None, rotations, penalties, x_true, w)
    for attempt in range(2):
        a = stream.child(0, attempt).generator().standard_normal((m, d))
        try:
            return DemixProblem.from_parts(a, rotations, penalties, x_true, w)
        except RankDeficiencyError:
            if attempt == 1:
                raise


def _block_to_json(pen):
    if isinstance(pen, ConeConstraint):
        return {"kind": "CONE", "cone": cone_to_json(pen.cone)}
    return {"kind": pen.kind}


def _block_from_json(obj):
    if obj["kind"] == "CONE":
        return ConeConstraint(cone_from_json(obj["cone"]))
    return PenaltySpec(obj["kind"])


def _matrix_to_json(a):
    a = np.asarray(a, dtype=float)
    return {"rows": a.shape[0], "cols": a.shape[1], "data": a.ravel().tolist()}


def _matrix_from_json(obj):
    return np.asarray(obj["data"], dtype=float).reshape(obj["rows"], obj["cols"])


def problem_to_json(problem: DemixProblem) -> dict:
    return {
        "d": problem.d,
        "m": problem.m,
        "n": problem.n,
        "A": None if problem.identity_measurement else _matrix_to_json(problem.a),
        "rotations": [_matrix_to_json(u) for u in problem.rotations],
        "penalties": [_block_to_json(p) for p in problem.penalties],
        "x_true": [x.tolist() for x in problem.x_true],
        "w": problem.w.tolist(),
        "z0": problem.z0.tolist(),
    }


def problem_from_json(obj: dict) -> DemixProblem:
    """Rebuild a problem; ``z0`` is recomputed and checked against the stored value."""
    a = None if obj.get("A") is None else _matrix_from_json(obj["A"])
    rotations = RotationSet(tuple(_matrix_from_json(u) for u in obj["rotations"]))
    penalties = [_block_from_json(p) for p in obj["penalties"]]
    problem = DemixProblem.from_parts(a, rotations, penalties, obj["x_true"], obj.get("w"))
    if "z0" in obj and not np.allclose(problem.z0, obj["z0"], rtol=0, atol=1e-10):
        raise InvalidShapeError("stored z0 does not match A (sum U_i x_i + w)")
    return problem


# ------------------------------------------------------------------ solver


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 50_000
    gradient_tolerance: float = 1e-10
    step_rule: str = "fixed"  # "fixed" (1/L from power iteration) or "backtracking"
    success_tolerance: float = 1e-5
    polish_every: int = 25
    record_history: bool = False

    def __post_init__(self):
        if self.max_iterations < 1:
            raise InvalidParameterError("max_iterations must be >= 1")
        if not (self.gradient_tolerance > 0 and self.success_tolerance > 0):
            raise InvalidParameterError("tolerances must be positive")
        if self.step_rule not in ("fixed", "backtracking"):
            raise InvalidParameterError(f"unknown step rule {self.step_rule!r}")
        if self.polish_every < 1:
            raise InvalidParameterError("polish_every must be >= 1")


@dataclass
class DemixSolution:
    x_hat: list
    objective: float
    iterations: int
    converged: bool
    per_block_constraint_slack: list
    history: list = field(default_factory=list)


class _Blocks:
    """Per-block projections and face parametrisations for the stacked variable."""

    def __init__(self, problem: DemixProblem):
        self.d = problem.d
        self.n = problem.n
        self.kinds = []
        self.radii = []
        self.anchors = []
        for pen, x in zip(problem.penalties, problem.x_true):
            if isinstance(pen, ConeConstraint):
                self.kinds.append("CONE")
                self.radii.append(0.0)
            else:
                self.kinds.append(pen.kind)
                self.radii.append(pen(x))
            self.anchors.append(x)
        self.cones = [p.cone if isinstance(p, ConeConstraint) else None for p in problem.penalties]

    def slice(self, i):
        return slice(i * self.d, (i + 1) * self.d)

    def project_block(self, i, v):
        kind, r = self.kinds[i], self.radii[i]
        if kind == "CONE":
            a = self.anchors[i]
            return a + project_cone(self.cones[i], v - a)[0]
        if r == 0:
            return np.zeros_like(v)
        return project_l1_ball(v, r) if kind == "L1" else project_linf_ball(v, r)

    def project(self, x):
        out = np.empty_like(x)
        for i in range(self.n):
            s = self.slice(i)
            out[s] = self.project_block(i, x[s])
        return out

    def slack(self, i, xi) -> float:
        kind = self.kinds[i]
        if kind == "CONE":
            a = self.anchors[i]
            return float(np.linalg.norm((xi - a) - project_cone(self.cones[i], xi - a)[0]))
        val = np.sum(np.abs(xi)) if kind == "L1" else np.max(np.abs(xi))
        return float(val - self.radii[i])

    def face(self, i, xi):
        """Affine parametrisation ``c + N z`` of the face containing ``xi`` and the ``z`` of ``xi``."""
        d = self.d
        kind, r = self.kinds[i], self.radii[i]
        if kind == "CONE":
            v = self.cones[i].generators
            a = self.anchors[i]
            coef = _nnls(v, xi - a)
            act = coef > 1e-12 * max(1.0, float(np.abs(coef).max(initial=0.0)))
            return a.copy(), v[:, act], coef[act]
        if r == 0:
            return np.zeros(d), np.zeros((d, 0)), np.zeros(0)
        if kind == "L1" and np.sum(np.abs(xi)) < r * (1 - 1e-9):
            return np.zeros(d), np.eye(d), xi.copy()
        if kind == "L1":
            support = np.nonzero(xi)[0]
            s = np.sign(xi[support])
            c = np.zeros(d)
            c[support] = r * s / support.size
            basis = np.zeros((d, support.size - 1))
            if support.size > 1:
                basis[support] = scipy.linalg.null_space(s[None, :])
        else:
            fixed = np.abs(xi) >= r * (1 - 1e-12)
            c = np.where(fixed, np.sign(xi) * r, 0.0)
            basis = np.eye(d)[:, ~fixed]
        # basis is orthonormal in both cases
        return c, basis, basis.T @ (xi - c)


def _operator(problem: DemixProblem):
    """Reduced operator ``M`` and data ``b`` with objective ``||M x - b||^2``."""
    stacked = np.hstack(list(problem.rotations))
    if problem.identity_measurement:
        return stacked, problem.z0.copy()
    pinv = PseudoInverse(problem.a)
    m_op = pinv.q.T @ stacked
    b = scipy.linalg.solve_triangular(pinv.r, problem.z0, trans="T")
    return m_op, b


def lipschitz_estimate(m_op: np.ndarray, iterations: int = 20, rtol: float = 1e-6) -> float:
    """Largest eigenvalue of ``M^T M`` by power iteration."""
    v = np.ones(m_op.shape[1]) / math.sqrt(m_op.shape[1])
    lam = 0.0
    for _ in range(iterations):
        u = m_op.T @ (m_op @ v)
        new = float(np.linalg.norm(u))
        if new == 0:
            return 1.0
        v = u / new
        if abs(new - lam) <= rtol * new:
            lam = new
            break
        lam = new
    return lam


def solve_constrained(problem: DemixProblem, config: SolverConfig = SolverConfig(), x0=None) -> DemixSolution:
    """Solve the constrained demixing program by monotone accelerated projected gradient."""
    m_op, b = _operator(problem)
    blocks = _Blocks(problem)
    nd = m_op.shape[1]

    def value_grad(x):
        r = m_op @ x - b
        return 0.5 * float(r @ r), m_op.T @ r

    def value(x):
        r = m_op @ x - b
        return 0.5 * float(r @ r)

    lip = lipschitz_estimate(m_op) if config.step_rule == "fixed" else 1.0
    tol = config.gradient_tolerance * max(1.0, float(np.linalg.norm(m_op.T @ b)))

    def pg_norm(x, grad):
        return lip * float(np.linalg.norm(x - blocks.project(x - grad / lip)))

    def polish(x):
        # exact least squares on the current face, as the smallest move from x
        cs, ns, zs = zip(*(blocks.face(i, x[blocks.slice(i)]) for i in range(blocks.n)))
        c, z = np.concatenate(cs), np.concatenate(zs)
        if z.size == 0:
            cand = c
        else:
            basis = scipy.linalg.block_diag(*ns)
            op = m_op @ basis
            z = z + np.linalg.lstsq(op, b - m_op @ c - op @ z, rcond=None)[0]
            cand = c + basis @ z
        proj = blocks.project(cand)
        if np.max(np.abs(proj - cand)) > 1e-11 * max(1.0, float(np.max(np.abs(cand)))):
            return None
        return proj

    x = blocks.project(np.zeros(nd) if x0 is None else np.concatenate([np.asarray(v, float) for v in x0]))
    fx, gx = value_grad(x)
    history = [2 * fx] if config.record_history else []
    y, gy, fy = x, gx, fx
    t = 1.0
    converged = False
    accepted = 0
    it = 0
    for it in range(1, config.max_iterations + 1):
        while True:
            xn = blocks.project(y - gy / lip)
            fn = value(xn)
            step = xn - y
            # quadratic upper bound at y; fails only if L is underestimated
            if fn <= fy + float(gy @ step) + 0.5 * lip * float(step @ step) + 1e-14 * max(1.0, abs(fy)):
                break
            lip *= 2.0
        if t == 1.0 and lip * float(np.linalg.norm(step)) <= tol:
            # y == x here, so this is the projected-gradient mapping at x
            if fn <= fx:
                x, fx = xn, fn
            converged = True
            break
        if fn > fx:
            y, gy, fy, t = x, gx, fx, 1.0
            continue
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = xn + ((t - 1.0) / t_next) * (xn - x)
        x, t = xn, t_next
        fx, gx = value_grad(x)
        fy, gy = value_grad(y)
        accepted += 1
        if config.record_history:
            history.append(2 * fx)
        if accepted % config.polish_every == 0:
            if pg_norm(x, gx) <= tol:
                converged = True
                break
            cand = polish(x)
            if cand is not None:
                fc, gc = value_grad(cand)
                if fc <= fx and pg_norm(cand, gc) <= tol:
                    x, fx = cand, fc
                    if config.record_history:
                        history.append(2 * fx)
                    converged = True
                    break
    x_hat = [x[blocks.slice(i)].copy() for i in range(blocks.n)]
    slack = [blocks.slack(i, xi) for i, xi in enumerate(x_hat)]
    if max(slack) > 1e-9:
        raise DemixError(f"internal error: solver iterate infeasible (slack {max(slack):.3e})")
    return DemixSolution(x_hat, 2 * fx, it, converged, slack, history)


def solution_to_json(solution: DemixSolution) -> dict:
    return {
        "x_hat": [x.tolist() for x in solution.x_hat],
        "objective": solution.objective,
        "iterations": solution.iterations,
        "converged": solution.converged,
        "per_block_constraint_slack": list(solution.per_block_constraint_slack),
    }


def check_success(solution: DemixSolution, problem: DemixProblem, tol: float = 1e-5) -> bool:
    """True iff every block satisfies ``||x_hat_i - x_true_i||_inf < tol``."""
    err = max(float(np.max(np.abs(xh - xt))) for xh, xt in zip(solution.x_hat, problem.x_true))
    return err < tol


@dataclass(frozen=True)
class StabilityReport:
    noise_norm: float
    per_block_error: list
    ratio: float | None  # None when w = 0

    @property
    def ratio_defined(self) -> bool:
        return self.ratio is not None


def stability_report(solution: DemixSolution, problem: DemixProblem) -> StabilityReport:
    errors = [float(np.linalg.norm(xh - xt)) for xh, xt in zip(solution.x_hat, problem.x_true)]
    noise = float(np.linalg.norm(problem.w))
    ratio = max(errors) / noise if noise > 0 else None
    return StabilityReport(noise, errors, ratio)


# ------------------------------------------------------------------- ERC


@dataclass(frozen=True)
class ERCResult:
    per_index: list
    holds: bool


def check_erc_small(cones: Sequence[PolyhedralGenerators], rotations, nullspace=None) -> ERCResult:
    """Exact recovery condition for pointed polyhedral descent cones, by LP.

    For each ``i`` the LP looks for ``a >= 0`` with ``sum(a) = 1`` and
    ``b_j >= 0`` such that ``Q_i V_i a + sum_{j != i} Q_j V_j b_j (+ N c) = 0``;
    feasibility means ``-Q_i D_i`` meets the sum of the others in a ray, so
    the condition fails at ``i``.  ``nullspace`` (a ``d x r`` basis of the
    nullspace of ``A``) appends the extra index ``n + 1``; its entry may
    report a failure that is already implied by another index.
    """
    rotations = list(rotations)
    if len(cones) != len(rotations):
        raise InvalidShapeError("need one rotation per cone")
    d = cones[0].ambient_dimension
    if d > 20:
        raise InvalidParameterError(f"the LP certificate is meant for d <= 20, got {d}")
    for c in cones:
        if not isinstance(c, PolyhedralGenerators):
            raise UnsupportedConeError("ERC check needs cones in generator form")
        if not is_pointed(c):
            raise UnsupportedConeError("ERC check needs pointed cones")
    mats = [q @ c.generators for q, c in zip(rotations, cones)]
    n_mat = np.zeros((d, 0)) if nullspace is None else np.atleast_2d(np.asarray(nullspace, dtype=float))
    if n_mat.shape[0] != d:
        n_mat = n_mat.reshape(d, -1)

    def ray_shared(normalised, others):
        blocks = [normalised] + others + ([n_mat] if n_mat.shape[1] else [])
        width = sum(b.shape[1] for b in blocks)
        a_eq = np.zeros((d + 1, width))
        a_eq[:d] = np.hstack(blocks)
        a_eq[d, : normalised.shape[1]] = 1.0
        b_eq = np.zeros(d + 1)
        b_eq[d] = 1.0
        n_pos = width - n_mat.shape[1]
        bounds = [(0, None)] * n_pos + [(None, None)] * n_mat.shape[1]
        return _lp_feasible(a_eq, b_eq, bounds=bounds)

    per_index = []
    for i in range(len(mats)):
        others = [mats[j] for j in range(len(mats)) if j != i]
        per_index.append(not ray_shared(mats[i], others))
    if n_mat.shape[1]:
        stacked = np.hstack(mats)
        per_index.append(not ray_shared(stacked, []))
    return ERCResult(per_index, all(per_index))
