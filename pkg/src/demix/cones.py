"""Cones, exact projections and statistical dimensions.

Explicit cones (orthant, subspace, polyhedral cones in generator or inequality
form, the trivial cone) support Euclidean projection with face
identification.  Descent cones of the l1 and l-infinity norms are never
projected onto directly; their statistical dimension goes through the
distance to the scaled subdifferential,

    delta(D(f, x)) = E min_{tau >= 0} dist^2(g, tau * subdiff f(x)),

which is exact sample by sample because the cone generated by the
subdifferential is the polar of the descent cone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
import scipy.integrate
import scipy.linalg
import scipy.optimize
from scipy.stats import norm

from .errors import (
    InvalidDimensionError,
    InvalidParameterError,
    InvalidRadiusError,
    InvalidShapeError,
    InvalidSparsityError,
    NonConvergenceError,
    UnsupportedAnchorError,
    UnsupportedConeError,
    UnsupportedVariantError,
)
from .rng import SeedStream, numerical_rank

ACTIVITY_RTOL = 1e-9
BISECTION_STEPS = 64
_MC_CHUNK = 8192


# ---------------------------------------------------------------- penalties


@dataclass(frozen=True)
class PenaltySpec:
    kind: str

    def __post_init__(self):
        if self.kind not in ("L1", "LINF"):
            raise UnsupportedVariantError(f"unknown penalty kind {self.kind!r}")

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if self.kind == "L1":
            return float(np.sum(np.abs(x)))
        return float(np.max(np.abs(x))) if x.size else 0.0


L1 = PenaltySpec("L1")
LINF = PenaltySpec("LINF")


# -------------------------------------------------------------------- cones


@dataclass(frozen=True, eq=False)
class Orthant:
    d: int

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise InvalidDimensionError(f"orthant dimension must be >= 1, got {self.d}")

    @property
    def ambient_dimension(self):
        return self.d


@dataclass(frozen=True, eq=False)
class Trivial:
    d: int

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise InvalidDimensionError(f"ambient dimension must be >= 1, got {self.d}")

    @property
    def ambient_dimension(self):
        return self.d


@dataclass(frozen=True, eq=False)
class Subspace:
    """Span of the orthonormal columns of ``basis`` (shape ``d x k``, k >= 1)."""

    basis: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.basis, dtype=float)
        if b.ndim == 1:
            b = b[:, None]
        if b.ndim != 2 or b.shape[1] < 1 or b.shape[1] > b.shape[0]:
            raise InvalidShapeError(f"subspace basis must be d x k with 1 <= k <= d, got {b.shape}")
        if np.max(np.abs(b.T @ b - np.eye(b.shape[1]))) > 1e-10:
            raise InvalidShapeError("subspace basis is not orthonormal to 1e-10")
        object.__setattr__(self, "basis", b)

    @classmethod
    def span(cls, vectors) -> "Subspace":
        """Subspace spanned by the columns of ``vectors`` (orthonormalised)."""
        v = np.asarray(vectors, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        return cls(scipy.linalg.orth(v))

    @property
    def ambient_dimension(self):
        return self.basis.shape[0]

    @property
    def dim(self):
        return self.basis.shape[1]


@dataclass(frozen=True, eq=False)
class PolyhedralGenerators:
    """Conic hull of the columns of ``generators`` (shape ``d x p``)."""

    generators: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.generators, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[1] < 1:
            raise InvalidShapeError(f"generator matrix must be d x p with p >= 1, got {v.shape}")
        if np.any(np.linalg.norm(v, axis=0) == 0):
            raise InvalidShapeError("generator columns must be nonzero")
        object.__setattr__(self, "generators", v)

    @property
    def ambient_dimension(self):
        return self.generators.shape[0]


@dataclass(frozen=True, eq=False)
class PolyhedralInequalities:
    """The cone ``{x : B x <= 0}`` for outer normals ``B`` (shape ``q x d``)."""

    normals: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.normals, dtype=float)
        if b.ndim == 1:
            b = b[None, :]
        if b.ndim != 2 or b.shape[0] < 1:
            raise InvalidShapeError(f"normal matrix must be q x d with q >= 1, got {b.shape}")
        object.__setattr__(self, "normals", b)

    @property
    def ambient_dimension(self):
        return self.normals.shape[1]


@dataclass(frozen=True, eq=False)
class DescentCone:
    penalty: PenaltySpec
    anchor: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.anchor, dtype=float).ravel()
        if x.size < 1:
            raise InvalidDimensionError("anchor must be a nonempty vector")
        object.__setattr__(self, "anchor", x)

    @property
    def ambient_dimension(self):
        return self.anchor.size


ConeSpec = Union[Orthant, Trivial, Subspace, PolyhedralGenerators, PolyhedralInequalities, DescentCone]
EXPLICIT = (Orthant, Trivial, Subspace, PolyhedralGenerators, PolyhedralInequalities)


def full_space(d: int) -> Subspace:
    return Subspace(np.eye(d))


def halfspace(normal) -> PolyhedralInequalities:
    """The halfspace ``{x : <normal, x> <= 0}``."""
    return PolyhedralInequalities(np.asarray(normal, dtype=float)[None, :])


def ray(direction) -> PolyhedralGenerators:
    return PolyhedralGenerators(np.asarray(direction, dtype=float)[:, None])


# -------------------------------------------------------------- projections


def project_l1_ball(v, radius: float) -> np.ndarray:
    """Euclidean projection onto ``{x : ||x||_1 <= radius}`` by sort and threshold."""
    if not radius > 0:
        raise InvalidRadiusError(f"radius must be positive, got {radius}")
    v = np.asarray(v, dtype=float)
    a = np.abs(v)
    if a.sum() <= radius:
        return v.copy()
    u = np.sort(a)[::-1]
    css = np.cumsum(u) - radius
    j = np.arange(1, u.size + 1)
    rho = np.nonzero(u * j > css)[0][-1]
    theta = css[rho] / (rho + 1)
    return np.sign(v) * np.maximum(a - theta, 0.0)


def project_linf_ball(v, radius: float) -> np.ndarray:
    if not radius > 0:
        raise InvalidRadiusError(f"radius must be positive, got {radius}")
    return np.clip(np.asarray(v, dtype=float), -radius, radius)


def _simplex_threshold(h: np.ndarray, total: np.ndarray) -> np.ndarray:
    """Row-wise threshold ``theta`` with ``sum((h - theta)_+) = total`` (total > 0)."""
    u = -np.sort(-h, axis=1)
    css = np.cumsum(u, axis=1) - total[:, None]
    j = np.arange(1, h.shape[1] + 1)
    cond = u * j > css
    cond[:, 0] = True  # j = 1 always qualifies; rounding can hide it when total is tiny
    rho = h.shape[1] - 1 - np.argmax(cond[:, ::-1], axis=1)
    return css[np.arange(h.shape[0]), rho] / (rho + 1)


def _activity_tol(g, tol):
    return ACTIVITY_RTOL * max(float(np.linalg.norm(g)), 1.0) if tol is None else tol


def _nnls_kkt_ok(mat, rhs, coef) -> bool:
    grad = mat.T @ (rhs - mat @ coef)
    scale = 1e-9 * max(1.0, float(np.linalg.norm(rhs))) * max(1.0, float(np.abs(mat).max()))
    return bool(np.all(grad <= scale) and np.all(np.abs(grad[coef > 0]) <= scale))


def _nnls(mat, rhs):
    """Nonnegative least squares with a KKT check.

    scipy's ``nnls`` occasionally returns a non-optimal point while reporting
    success (seen with scipy 1.15 on small degenerate problems), so its answer
    is verified and replaced by the bounded-variable solver when it fails.
    """
    try:
        coef, _ = scipy.optimize.nnls(mat, rhs, maxiter=50 * max(mat.shape))
    except RuntimeError:
        coef = None
    if coef is not None and _nnls_kkt_ok(mat, rhs, coef):
        return coef
    res = scipy.optimize.lsq_linear(mat, rhs, bounds=(0.0, np.inf), method="bvls", tol=1e-14)
    coef = np.maximum(res.x, 0.0)
    coef[coef <= 1e-12 * coef.max(initial=0.0)] = 0.0
    if not _nnls_kkt_ok(mat, rhs, coef):
        raise NonConvergenceError(
            "nonnegative least squares failed its optimality check",
            diagnostics={"shape": mat.shape, "rhs_norm": float(np.linalg.norm(rhs)), "status": int(res.status)},
        )
    return coef


def project_cone(cone: ConeSpec, g, tol: float | None = None) -> tuple[np.ndarray, int]:
    """Euclidean projection of ``g`` onto ``cone`` and the dimension of the face hit.

    ``tol`` decides constraint/generator activity; it defaults to
    ``1e-9 * max(||g||, 1)``.
    """
    g = np.asarray(g, dtype=float)
    if g.shape != (cone.ambient_dimension,):
        raise InvalidShapeError(f"vector of shape {g.shape} for a cone in R^{cone.ambient_dimension}")
    tol = _activity_tol(g, tol)
    if isinstance(cone, Orthant):
        p = np.maximum(g, 0.0)
        return p, int(np.sum(p > tol))
    if isinstance(cone, Trivial):
        return np.zeros_like(g), 0
    if isinstance(cone, Subspace):
        q = cone.basis
        return q @ (q.T @ g), cone.dim
    if isinstance(cone, PolyhedralGenerators):
        v = cone.generators
        coef = _nnls(v, g)
        p = v @ coef
        active = coef * np.linalg.norm(v, axis=0) > tol
        return p, numerical_rank(v[:, active]) if active.any() else 0
    if isinstance(cone, PolyhedralInequalities):
        b = cone.normals
        lam = _nnls(b.T, g)
        p = g - b.T @ lam
        tight = b @ p >= -tol * np.linalg.norm(b, axis=1)
        face = g.size - (numerical_rank(b[tight]) if tight.any() else 0)
        return p, face
    raise UnsupportedVariantError(f"no projection available for {type(cone).__name__}")


def contains(cone: ConeSpec, x, tol: float = 1e-8) -> bool:
    """Membership test, up to ``tol * max(||x||, 1)`` in distance."""
    x = np.asarray(x, dtype=float)
    p, _ = project_cone(cone, x)
    return bool(np.linalg.norm(x - p) <= tol * max(float(np.linalg.norm(x)), 1.0))


def polar(cone: ConeSpec) -> ConeSpec:
    d = cone.ambient_dimension
    if isinstance(cone, Orthant):
        return PolyhedralGenerators(-np.eye(d))
    if isinstance(cone, Trivial):
        return full_space(d)
    if isinstance(cone, Subspace):
        if cone.dim == d:
            return Trivial(d)
        return Subspace(scipy.linalg.null_space(cone.basis.T))
    if isinstance(cone, PolyhedralGenerators):
        return PolyhedralInequalities(cone.generators.T)
    if isinstance(cone, PolyhedralInequalities):
        return PolyhedralGenerators(cone.normals.T)
    raise UnsupportedVariantError(
        f"polar of {type(cone).__name__} is not offered; descent cones are handled via the subdifferential"
    )


def as_inequalities(cone: ConeSpec) -> PolyhedralInequalities:
    """Inequality form of an explicit cone (simplicial generator cones only)."""
    d = cone.ambient_dimension
    if isinstance(cone, PolyhedralInequalities):
        return cone
    if isinstance(cone, Orthant):
        return PolyhedralInequalities(-np.eye(d))
    if isinstance(cone, Trivial):
        return PolyhedralInequalities(np.vstack([np.eye(d), -np.eye(d)]))
    if isinstance(cone, Subspace):
        if cone.dim == d:
            return PolyhedralInequalities(np.zeros((1, d)))
        n = scipy.linalg.null_space(cone.basis.T).T
        return PolyhedralInequalities(np.vstack([n, -n]))
    if isinstance(cone, PolyhedralGenerators):
        v = cone.generators
        if v.shape[0] == v.shape[1] and numerical_rank(v) == d:
            return PolyhedralInequalities(-np.linalg.inv(v))
        raise UnsupportedConeError("only simplicial full-dimensional generator cones convert to inequality form")
    raise UnsupportedVariantError(f"{type(cone).__name__} has no inequality form")


def as_generators(cone: ConeSpec) -> PolyhedralGenerators:
    d = cone.ambient_dimension
    if isinstance(cone, PolyhedralGenerators):
        return cone
    if isinstance(cone, Orthant):
        return PolyhedralGenerators(np.eye(d))
    if isinstance(cone, Subspace):
        return PolyhedralGenerators(np.hstack([cone.basis, -cone.basis]))
    raise UnsupportedVariantError(f"{type(cone).__name__} has no generator form here")


def rotate(cone: ConeSpec, q: np.ndarray) -> ConeSpec:
    """The image ``Q C`` of an explicit cone under an orthogonal matrix."""
    if isinstance(cone, Trivial):
        return cone
    if isinstance(cone, Orthant):
        return PolyhedralGenerators(q)
    if isinstance(cone, Subspace):
        return Subspace(q @ cone.basis)
    if isinstance(cone, PolyhedralGenerators):
        return PolyhedralGenerators(q @ cone.generators)
    if isinstance(cone, PolyhedralInequalities):
        return PolyhedralInequalities(cone.normals @ q.T)
    raise UnsupportedVariantError(f"cannot rotate {type(cone).__name__}")


# ------------------------------------------------------- LP certificates


def _lp_feasible(a_eq, b_eq, a_ub=None, b_ub=None, bounds=None) -> bool:
    n = a_eq.shape[1]
    res = scipy.optimize.linprog(
        np.zeros(n), A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq, bounds=bounds, method="highs"
    )
    if res.status == 0:
        return True
    if res.status == 2:
        return False
    raise NonConvergenceError(f"LP solver returned status {res.status}: {res.message}")


def is_pointed(cone: PolyhedralGenerators) -> bool:
    """True when no convex combination of the generators vanishes."""
    v = cone.generators
    d, p = v.shape
    a_eq = np.vstack([v, np.ones((1, p))])
    b_eq = np.concatenate([np.zeros(d), [1.0]])
    return not _lp_feasible(a_eq, b_eq, bounds=[(0, None)] * p)


def intersect_nontrivially(cones) -> bool:
    """Decide whether ``C_1 ∩ ... ∩ C_n`` contains a nonzero point by one LP.

    The first cone must be a pointed :class:`PolyhedralGenerators`; its
    coefficients are normalised onto the simplex, which certifies that the
    common point is nonzero.  Later cones may be in generator form or in
    inequality form.
    """
    first = cones[0]
    if not isinstance(first, PolyhedralGenerators):
        raise UnsupportedConeError("the normalised cone must be in generator form")
    d = first.ambient_dimension
    v1 = first.generators
    gens = [c.generators for c in cones[1:] if isinstance(c, PolyhedralGenerators)]
    sizes = [v1.shape[1]] + [v.shape[1] for v in gens]
    offsets = np.cumsum([0] + sizes)
    n_var = offsets[-1]
    eq_rows = []
    for j, v in enumerate(gens, start=1):
        row = np.zeros((d, n_var))
        row[:, offsets[0]:offsets[1]] = v1
        row[:, offsets[j]:offsets[j + 1]] = -v
        eq_rows.append(row)
    ub_rows = []
    for c in cones[1:]:
        if isinstance(c, PolyhedralInequalities):
            row = np.zeros((c.normals.shape[0], n_var))
            row[:, offsets[0]:offsets[1]] = c.normals @ v1
            ub_rows.append(row)
        elif not isinstance(c, PolyhedralGenerators):
            raise UnsupportedConeError(f"{type(c).__name__} must be converted to generator or inequality form")
    simplex = np.zeros((1, n_var))
    simplex[0, offsets[0]:offsets[1]] = 1.0
    a_eq = np.vstack(eq_rows + [simplex])
    b_eq = np.zeros(a_eq.shape[0])
    b_eq[-1] = 1.0
    a_ub = np.vstack(ub_rows) if ub_rows else None
    b_ub = np.zeros(a_ub.shape[0]) if ub_rows else None
    return _lp_feasible(a_eq, b_eq, a_ub, b_ub, [(0, None)] * n_var)


# -------------------------------------------- subdifferential distances


def _check_anchor(penalty: PenaltySpec, anchor: np.ndarray):
    if penalty.kind == "LINF":
        mags = np.abs(anchor)
        if mags.max() == 0 or np.ptp(mags) > 1e-12 * mags.max():
            raise UnsupportedAnchorError("l-infinity descent cones are supported only at vectors in {±c}^d")


def _subdiff_batch(penalty, anchor, g, tau):
    """Squared distance from each row of ``g`` to ``tau * subdiff f(anchor)`` and its tau-derivative."""
    tau = np.broadcast_to(np.asarray(tau, dtype=float), (g.shape[0],))
    if penalty.kind == "L1":
        on = anchor != 0
        s = np.sign(anchor[on])
        gs = g[:, on]
        off = np.abs(g[:, ~on])
        on_res = gs - tau[:, None] * s
        excess = np.maximum(off - tau[:, None], 0.0)
        dist = np.sum(on_res**2, axis=1) + np.sum(excess**2, axis=1)
        deriv = -2.0 * (np.sum(on_res * s, axis=1) + np.sum(excess, axis=1))
        return dist, deriv
    h = g * np.sign(anchor)
    pos = tau > 0
    dist = np.sum(h**2, axis=1)
    deriv = -2.0 * np.max(h, axis=1)
    if pos.any():
        theta = _simplex_threshold(h[pos], tau[pos])
        z = np.maximum(h[pos] - theta[:, None], 0.0)
        dist[pos] = np.sum((h[pos] - z) ** 2, axis=1)
        deriv[pos] = -2.0 * theta
    return dist, deriv


def subdiff_distance(penalty: PenaltySpec, anchor, g, tau: float) -> float:
    """``dist^2(g, tau * subdiff f(anchor))`` for the l1 or l-infinity norm."""
    anchor = np.asarray(anchor, dtype=float).ravel()
    g = np.asarray(g, dtype=float).ravel()
    if g.shape != anchor.shape:
        raise InvalidShapeError("g and anchor must have the same length")
    if tau < 0:
        raise InvalidParameterError(f"tau must be nonnegative, got {tau}")
    if penalty.kind == "L1" and not np.any(anchor):
        raise UnsupportedAnchorError("the l1 subdifferential recipe needs a nonzero anchor")
    _check_anchor(penalty, anchor)
    return float(_subdiff_batch(penalty, anchor, g[None, :], tau)[0][0])


def min_subdiff_distance(penalty: PenaltySpec, anchor, g) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise ``min_tau dist^2(g, tau * subdiff f(anchor))`` and the minimising tau.

    The map is convex in tau, so its derivative is monotone; bisection runs on
    ``[0, max|g| + 1]`` for l1.  The l-infinity subdifferential sits on the
    l1 sphere, where the minimiser is ``||(sign(x) * g)_+||_1``, so that
    bracket widens to ``[0, ||g||_1 + 1]``.
    """
    g = np.atleast_2d(np.asarray(g, dtype=float))
    lo = np.zeros(g.shape[0])
    if penalty.kind == "L1":
        hi = np.max(np.abs(g), axis=1) + 1.0
    else:
        hi = np.sum(np.abs(g), axis=1) + 1.0
    _, d0 = _subdiff_batch(penalty, anchor, g, lo)
    at_zero = d0 >= 0
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        _, dm = _subdiff_batch(penalty, anchor, g, mid)
        up = dm > 0
        hi = np.where(up, mid, hi)
        lo = np.where(up, lo, mid)
    tau = np.where(at_zero, 0.0, 0.5 * (lo + hi))
    dist, _ = _subdiff_batch(penalty, anchor, g, tau)
    return dist, tau


# ---------------------------------------------------- statistical dimension


@dataclass(frozen=True)
class SdimEstimate:
    value: float
    std_error: float
    method: str  # "MONTE_CARLO" or "CLOSED_FORM"
    tau_star: float | None = None
    trials: int = 0


def _mc_estimate(samples_fn, d, trials, stream) -> SdimEstimate:
    rng = stream.generator()
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < trials:
        n = min(_MC_CHUNK, trials - done)
        vals = samples_fn(rng.standard_normal((n, d)))
        total += float(np.sum(vals))
        total_sq += float(np.sum(vals**2))
        done += n
    mean = total / trials
    var = max(total_sq / trials - mean**2, 0.0) * trials / (trials - 1)
    return SdimEstimate(mean, math.sqrt(var / trials), "MONTE_CARLO", trials=trials)


def sdim_mc(cone: ConeSpec, trials: int, stream: SeedStream) -> SdimEstimate:
    """Monte Carlo statistical dimension ``E ||Proj_C(g)||^2``."""
    if trials < 100:
        raise InvalidParameterError(f"need at least 100 trials, got {trials}")
    d = cone.ambient_dimension
    if isinstance(cone, Trivial):
        return SdimEstimate(0.0, 0.0, "MONTE_CARLO", trials=trials)
    if isinstance(cone, Orthant):
        fn = lambda g: np.sum(np.maximum(g, 0.0) ** 2, axis=1)
    elif isinstance(cone, Subspace):
        fn = lambda g: np.sum((g @ cone.basis) ** 2, axis=1)
    elif isinstance(cone, (PolyhedralGenerators, PolyhedralInequalities)):
        fn = lambda g: np.array([np.sum(project_cone(cone, row)[0] ** 2) for row in g])
    elif isinstance(cone, DescentCone):
        anchor = cone.anchor
        if not np.any(anchor):
            return SdimEstimate(0.0, 0.0, "MONTE_CARLO", trials=trials)
        _check_anchor(cone.penalty, anchor)
        fn = lambda g: min_subdiff_distance(cone.penalty, anchor, g)[0]
    else:
        raise UnsupportedVariantError(f"no statistical dimension for {type(cone).__name__}")
    return _mc_estimate(fn, d, trials, stream)


def sdim_exact(cone: ConeSpec) -> SdimEstimate:
    """Closed-form statistical dimension where one is known."""
    d = cone.ambient_dimension
    if isinstance(cone, Trivial):
        return SdimEstimate(0.0, 0.0, "CLOSED_FORM")
    if isinstance(cone, Subspace):
        return SdimEstimate(float(cone.dim), 0.0, "CLOSED_FORM")
    if isinstance(cone, Orthant):
        return SdimEstimate(d / 2.0, 0.0, "CLOSED_FORM")
    if isinstance(cone, DescentCone):
        if not np.any(cone.anchor):
            return SdimEstimate(0.0, 0.0, "CLOSED_FORM")
        if cone.penalty.kind == "LINF":
            _check_anchor(cone.penalty, cone.anchor)
            return SdimEstimate(d / 2.0, 0.0, "CLOSED_FORM")
        return sdim_l1_formula(int(np.count_nonzero(cone.anchor)), d)
    raise UnsupportedVariantError(f"no closed form for {type(cone).__name__}")


def gaussian_tail_moment(tau: float) -> float:
    """``E[(|g| - tau)_+^2]`` for standard normal ``g`` and ``tau >= 0``."""
    return 2.0 * ((1.0 + tau * tau) * norm.sf(tau) - tau * norm.pdf(tau))


def gaussian_tail_moment_quad(tau: float) -> float:
    """The same moment by adaptive quadrature (reference for the closed form)."""
    val, _ = scipy.integrate.quad(
        lambda u: (u - tau) ** 2 * norm.pdf(u), tau, np.inf, epsabs=1e-14, epsrel=1e-12
    )
    return 2.0 * val


def _l1_objective(tau, k, d):
    return k * (1.0 + tau * tau) + (d - k) * gaussian_tail_moment(tau)


def _l1_objective_deriv(tau, k, d):
    return 2.0 * k * tau - 4.0 * (d - k) * (norm.pdf(tau) - tau * norm.sf(tau))


def sdim_l1_formula(k: float, d: int) -> SdimEstimate:
    """``min_tau k(1 + tau^2) + (d - k) E[(|g| - tau)_+^2]``.

    This is ``d * psi(k/d)``: an upper bound on the statistical dimension of
    the l1 descent cone at a k-sparse vector, within ``2 sqrt(d/k)`` of it.
    Non-integer ``k`` is accepted for drawing smooth level curves.
    """
    if int(d) != d or d < 1:
        raise InvalidDimensionError(f"d must be a positive integer, got {d}")
    if k < 0 or k > d:
        raise InvalidSparsityError(f"sparsity must lie in [0, d={d}], got {k}")
    if k == 0:
        return SdimEstimate(0.0, 0.0, "CLOSED_FORM", tau_star=None)
    if k == d:
        return SdimEstimate(float(d), 0.0, "CLOSED_FORM", tau_star=0.0)
    hi = 1.0
    while _l1_objective_deriv(hi, k, d) < 0:
        hi *= 2.0
    tau = scipy.optimize.brentq(_l1_objective_deriv, 0.0, hi, args=(k, d), xtol=1e-14, rtol=1e-15)
    value = min(max(_l1_objective(tau, k, d), 0.0), float(d))
    return SdimEstimate(value, 0.0, "CLOSED_FORM", tau_star=tau)


# ------------------------------------------------------------------ JSON


def cone_to_json(cone: ConeSpec) -> dict:
    if isinstance(cone, Orthant):
        return {"variant": "Orthant", "d": cone.d}
    if isinstance(cone, Trivial):
        return {"variant": "Trivial", "d": cone.d}
    if isinstance(cone, Subspace):
        b = cone.basis
        return {"variant": "Subspace", "rows": b.shape[0], "cols": b.shape[1], "data": b.ravel().tolist()}
    if isinstance(cone, PolyhedralGenerators):
        v = cone.generators
        return {"variant": "PolyhedralGenerators", "rows": v.shape[0], "cols": v.shape[1], "data": v.ravel().tolist()}
    if isinstance(cone, PolyhedralInequalities):
        b = cone.normals
        return {"variant": "PolyhedralInequalities", "rows": b.shape[0], "cols": b.shape[1], "data": b.ravel().tolist()}
    if isinstance(cone, DescentCone):
        return {"variant": "DescentCone", "penalty": cone.penalty.kind, "anchor": cone.anchor.tolist()}
    raise UnsupportedVariantError(f"cannot serialise {type(cone).__name__}")


def cone_from_json(obj: dict) -> ConeSpec:
    variant = obj.get("variant")

    def matrix():
        return np.asarray(obj["data"], dtype=float).reshape(obj["rows"], obj["cols"])

    if variant == "Orthant":
        return Orthant(int(obj["d"]))
    if variant == "Trivial":
        return Trivial(int(obj["d"]))
    if variant == "Subspace":
        return Subspace(matrix())
    if variant == "PolyhedralGenerators":
        return PolyhedralGenerators(matrix())
    if variant == "PolyhedralInequalities":
        return PolyhedralInequalities(matrix())
    if variant == "DescentCone":
        return DescentCone(PenaltySpec(obj["penalty"]), np.asarray(obj["anchor"], dtype=float))
    raise UnsupportedVariantError(f"unknown cone variant {variant!r}")
