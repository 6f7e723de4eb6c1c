"""Conic integral geometry: intrinsic volumes, tail functionals, concentration and Crofton checks.

Intrinsic volumes are estimated as the distribution of the dimension of the
face that receives the projection of a standard Gaussian vector.  The tail
``t_k`` and half-tail ``h_k`` functionals, the product rule (convolution of
profiles) and the concentration function ``p_theta`` feed the predicted phase
transition and the Crofton / kinematic cross-checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import comb

from .cones import (
    Orthant,
    PolyhedralGenerators,
    PolyhedralInequalities,
    SdimEstimate,
    Subspace,
    Trivial,
    as_inequalities,
    intersect_nontrivially,
    is_pointed,
    project_cone,
    rotate,
)
from .errors import (
    InvalidDimensionError,
    InvalidParameterError,
    PreconditionError,
    UnsupportedConeError,
    UnsupportedVariantError,
)
from .rng import SeedStream, haar_orthogonal

MAX_MC_DIMENSION = 20
MIN_PROFILE_TRIALS = 10_000


@dataclass(frozen=True, eq=False)
class IntrinsicVolumeProfile:
    """``(v_0, ..., v_d)``; Monte Carlo profiles also keep the raw face-dimension counts."""

    values: np.ndarray
    counts: np.ndarray
    exact: bool
    is_subspace: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size < 2:
            raise InvalidDimensionError("a profile needs entries v_0..v_d with d >= 1")
        if np.any(v < 0) or abs(v.sum() - 1.0) > 1e-12:
            raise InvalidParameterError("intrinsic volumes must be nonnegative and sum to 1")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "counts", np.asarray(self.counts, dtype=np.int64))

    @classmethod
    def from_counts(cls, counts, is_subspace=False) -> "IntrinsicVolumeProfile":
        counts = np.asarray(counts, dtype=np.int64)
        return cls(counts / counts.sum(), counts, False, is_subspace)

    @classmethod
    def from_values(cls, values, is_subspace=False) -> "IntrinsicVolumeProfile":
        v = np.asarray(values, dtype=float)
        return cls(v, np.zeros(v.size, dtype=np.int64), True, is_subspace)

    @property
    def d(self) -> int:
        return self.values.size - 1

    @property
    def trials(self) -> int:
        return int(self.counts.sum())

    def functional(self, coeffs) -> tuple[float, float]:
        """Estimate of ``sum_k c_k v_k`` and its standard error (0 for exact profiles)."""
        c = np.asarray(coeffs, dtype=float)
        value = float(c @ self.values)
        if self.exact or self.trials == 0:
            return value, 0.0
        var = float((c * c) @ self.values) - value * value
        return value, math.sqrt(max(var, 0.0) / self.trials)

    @property
    def stderr(self) -> np.ndarray:
        if self.exact:
            return np.zeros_like(self.values)
        return np.sqrt(self.values * (1 - self.values) / self.trials)

    def mean(self) -> tuple[float, float]:
        """The profile mean ``sum_k k v_k`` (the statistical dimension) and its standard error."""
        return self.functional(np.arange(self.d + 1))

    def to_json(self) -> dict:
        return {
            "d": self.d,
            "values": self.values.tolist(),
            "counts": self.counts.tolist(),
            "exact": self.exact,
            "is_subspace": self.is_subspace,
        }

    @classmethod
    def from_json(cls, obj) -> "IntrinsicVolumeProfile":
        return cls(np.asarray(obj["values"]), np.asarray(obj["counts"]), bool(obj["exact"]), bool(obj.get("is_subspace", False)))


def orthant_profile(d: int) -> IntrinsicVolumeProfile:
    return IntrinsicVolumeProfile.from_values(comb(d, np.arange(d + 1)) / 2.0**d)


def subspace_profile(dim: int, d: int) -> IntrinsicVolumeProfile:
    if not 0 <= dim <= d:
        raise InvalidDimensionError(f"subspace dimension {dim} outside [0, {d}]")
    v = np.zeros(d + 1)
    v[dim] = 1.0
    return IntrinsicVolumeProfile.from_values(v, is_subspace=True)


def halfspace_profile(d: int) -> IntrinsicVolumeProfile:
    v = np.zeros(d + 1)
    v[d - 1] = v[d] = 0.5
    return IntrinsicVolumeProfile.from_values(v)


def ray_profile(d: int) -> IntrinsicVolumeProfile:
    v = np.zeros(d + 1)
    v[0] = v[1] = 0.5
    return IntrinsicVolumeProfile.from_values(v)


def exact_profile(cone) -> IntrinsicVolumeProfile | None:
    """Closed-form profile where one is known, else ``None``."""
    d = cone.ambient_dimension
    if isinstance(cone, Orthant):
        return orthant_profile(d)
    if isinstance(cone, Trivial):
        return subspace_profile(0, d)
    if isinstance(cone, Subspace):
        return subspace_profile(cone.dim, d)
    return None


def _face_counts(cone, trials: int, stream: SeedStream) -> np.ndarray:
    d = cone.ambient_dimension
    rng = stream.generator()
    counts = np.zeros(d + 1, dtype=np.int64)
    if isinstance(cone, Trivial):
        counts[0] = trials
    elif isinstance(cone, Subspace):
        counts[cone.dim] = trials
    elif isinstance(cone, Orthant):
        done = 0
        while done < trials:
            size = min(8192, trials - done)
            k = np.sum(rng.standard_normal((size, d)) > 0, axis=1)
            counts += np.bincount(k, minlength=d + 1)
            done += size
    elif isinstance(cone, (PolyhedralGenerators, PolyhedralInequalities)):
        g = rng.standard_normal((trials, d))
        for row in g:
            counts[project_cone(cone, row)[1]] += 1
    else:
        raise UnsupportedVariantError(f"no intrinsic-volume estimator for {type(cone).__name__}")
    return counts


def _is_subspace(cone) -> bool:
    return isinstance(cone, (Subspace, Trivial))


def intrinsic_volumes_mc(cone, trials: int, stream: SeedStream) -> IntrinsicVolumeProfile:
    """Face-dimension frequencies of ``project_cone`` on ``trials`` Gaussian samples."""
    if not isinstance(cone, (Orthant, Trivial, Subspace, PolyhedralGenerators, PolyhedralInequalities)):
        raise UnsupportedVariantError(f"no intrinsic-volume estimator for {type(cone).__name__}")
    if cone.ambient_dimension > MAX_MC_DIMENSION:
        raise InvalidDimensionError(f"intrinsic-volume estimation is limited to d <= {MAX_MC_DIMENSION}")
    if trials < MIN_PROFILE_TRIALS:
        raise InvalidParameterError(f"need at least {MIN_PROFILE_TRIALS} trials, got {trials}")
    return IntrinsicVolumeProfile.from_counts(_face_counts(cone, trials, stream), _is_subspace(cone))


def merge_profiles(profiles: Sequence[IntrinsicVolumeProfile]) -> IntrinsicVolumeProfile:
    """Pool Monte Carlo profiles of the same cone by adding counts."""
    return IntrinsicVolumeProfile.from_counts(sum(p.counts for p in profiles), profiles[0].is_subspace)


def _check_index(profile, k):
    if int(k) != k or not 0 <= k <= profile.d:
        raise InvalidParameterError(f"index {k} outside [0, {profile.d}]")
    return int(k)


def tail(profile: IntrinsicVolumeProfile, k: int) -> float:
    k = _check_index(profile, k)
    return float(profile.values[k:].sum())


def half_tail(profile: IntrinsicVolumeProfile, k: int) -> float:
    k = _check_index(profile, k)
    return float(profile.values[k::2].sum())


def tail_coeffs(d: int, k: int) -> np.ndarray:
    c = np.zeros(d + 1)
    c[k:] = 1.0
    return c


def half_tail_coeffs(d: int, k: int) -> np.ndarray:
    c = np.zeros(d + 1)
    c[k::2] = 1.0
    return c


def profile_product(p: IntrinsicVolumeProfile, q: IntrinsicVolumeProfile) -> IntrinsicVolumeProfile:
    """Profile of the product cone: the convolution of the two profiles."""
    v = np.convolve(p.values, q.values)
    v = np.clip(v, 0.0, None)
    v /= v.sum()
    return IntrinsicVolumeProfile(
        v, np.zeros(v.size, dtype=np.int64), p.exact and q.exact, p.is_subspace and q.is_subspace
    )


# --------------------------------------------------------- concentration


def p_theta(theta: float, lam: float) -> float:
    """Concentration function ``exp(-(lam^2/4) / (theta^2 + lam/3))``."""
    if not lam > 0:
        raise InvalidParameterError(f"lambda must be positive, got {lam}")
    if theta < 0:
        raise InvalidParameterError(f"theta must be nonnegative, got {theta}")
    return math.exp(-(lam * lam / 4.0) / (theta * theta + lam / 3.0))


def lambda_star(eta: float, sigma: float) -> float:
    """Transition half-width ``(4/3) log(1/eta) + 2 sigma sqrt(log(1/eta))``."""
    if not 0 < eta < 1:
        raise InvalidParameterError(f"eta must lie in (0, 1), got {eta}")
    if sigma < 0:
        raise InvalidParameterError(f"sigma must be nonnegative, got {sigma}")
    log_inv = math.log(1.0 / eta)
    return (4.0 / 3.0) * log_inv + 2.0 * sigma * math.sqrt(log_inv)


@dataclass(frozen=True)
class ConcentrationParams:
    omega: float
    theta: float
    n: int
    d: int

    @classmethod
    def from_deltas(cls, deltas: Sequence[float], d: int) -> "ConcentrationParams":
        deltas = [float(x) for x in deltas]
        for x in deltas:
            if not 0 <= x <= d:
                raise InvalidParameterError(f"statistical dimension {x} outside [0, {d}]")
        theta2 = sum(min(x, d - x) for x in deltas)
        return cls(sum(deltas), math.sqrt(theta2), len(deltas), d)


VERDICTS = ("STABLE_WHP", "FAIL_WHP", "TRANSITION_REGION", "DEGENERATE_ALWAYS_SUCCESS")


@dataclass(frozen=True)
class TransitionPrediction:
    delta_total: float
    sigma: float
    lambda_star: float
    eta: float
    m: int
    d: int
    verdict: str
    degenerate: bool
    delta_stderr: float = 0.0
    note: str = ""

    def to_json(self) -> dict:
        return dict(self.__dict__)


def _delta_value(entry) -> tuple[float, float]:
    if isinstance(entry, SdimEstimate):
        return float(entry.value), float(entry.std_error)
    if isinstance(entry, (tuple, list)):
        return float(entry[0]), float(entry[1])
    return float(entry), 0.0


def predict_transition(delta_list, d: int, m: int, eta: float = 0.01) -> TransitionPrediction:
    """Phase-transition verdict for ``m`` measurements given the descent-cone statistical dimensions.

    ``delta_list`` entries are plain numbers, ``(value, stderr)`` pairs or
    :class:`SdimEstimate` objects.  When ``m < d`` the nullspace of the
    measurement matrix acts as one more randomly oriented cone (of dimension
    ``d - m``).  The instance is degenerate when at most one of all these
    cones is nontrivial; recovery then always succeeds because the lone cone
    meets nothing.  A degenerate instance reports DEGENERATE_ALWAYS_SUCCESS,
    except a single constituent that already clears ``Delta + lambda*``,
    which stays STABLE_WHP.  Otherwise the verdict is STABLE_WHP, FAIL_WHP
    or TRANSITION_REGION from the thresholds.
    """
    if int(d) != d or d < 1:
        raise InvalidDimensionError(f"d must be a positive integer, got {d}")
    if int(m) != m or not 1 <= m <= d:
        raise InvalidParameterError(f"need 1 <= m <= d, got m={m}")
    pairs = [_delta_value(e) for e in delta_list]
    if not pairs:
        raise InvalidParameterError("need at least one statistical dimension")
    values = [v for v, _ in pairs]
    for v in values:
        if not 0 <= v <= d:
            raise InvalidParameterError(f"statistical dimension {v} outside [0, {d}]")
    delta_total = sum(values)
    sigma = math.sqrt(sum(min(v, d - v) for v in values))
    lam = lambda_star(eta, sigma)
    nontrivial = sum(v > 0 for v in values) + (1 if m < d else 0)
    degenerate = nontrivial <= 1
    if degenerate and not (len(values) == 1 and m >= delta_total + lam):
        verdict, note = "DEGENERATE_ALWAYS_SUCCESS", "at most one nontrivial cone; m >= Delta always"
    elif m >= delta_total + lam:
        verdict, note = "STABLE_WHP", ""
    elif m <= delta_total - lam:
        verdict, note = "FAIL_WHP", ""
    else:
        verdict, note = "TRANSITION_REGION", ""
    stderr = math.sqrt(sum(s * s for _, s in pairs))
    return TransitionPrediction(delta_total, sigma, lam, eta, int(m), int(d), verdict, degenerate, stderr, note)


# ---------------------------------------------------------------- Crofton


@dataclass(frozen=True)
class MCEstimate:
    value: float
    std_error: float
    trials: int


def crofton_probability_formula(profiles: Sequence[IntrinsicVolumeProfile]) -> float:
    """``2 h_{(n-1)d+1}`` of the product profile: the chance randomly rotated cones share a ray."""
    if not profiles:
        raise InvalidParameterError("need at least one profile")
    d = profiles[0].d
    if any(p.d != d for p in profiles):
        raise InvalidDimensionError("all profiles must live in the same ambient dimension")
    if all(p.is_subspace for p in profiles):
        raise PreconditionError(
            "all inputs are subspaces: generic subspaces meet nontrivially iff their dimensions sum to more than d"
        )
    prod = profiles[0]
    for p in profiles[1:]:
        prod = profile_product(prod, p)
    return 2.0 * half_tail(prod, (len(profiles) - 1) * d + 1)


def _lp_form(cone):
    """Generator form for pointed generator cones, inequality form for everything else."""
    if isinstance(cone, PolyhedralGenerators):
        if not is_pointed(cone):
            raise UnsupportedConeError("generator cone is not pointed; pass it in inequality form instead")
        return cone
    if isinstance(cone, Orthant):
        return PolyhedralGenerators(np.eye(cone.ambient_dimension))
    if isinstance(cone, (PolyhedralInequalities, Subspace, Trivial)):
        return as_inequalities(cone)
    raise UnsupportedVariantError(f"{type(cone).__name__} is not supported by the intersection test")


def crofton_probability_mc(cones, trials: int, stream: SeedStream) -> MCEstimate:
    """Frequency with which independently Haar-rotated cones share a nonzero point.

    One LP per trial.  At least one cone must be a pointed generator cone (its
    coefficients are normalised onto the simplex); the others may be pointed
    generator cones or given in inequality form (halfspaces, subspaces).
    """
    if trials < 1:
        raise InvalidParameterError("trials must be positive")
    d = cones[0].ambient_dimension
    if d > MAX_MC_DIMENSION:
        raise InvalidDimensionError(f"intersection tests are limited to d <= {MAX_MC_DIMENSION}")
    forms = [_lp_form(c) for c in cones]
    order = sorted(range(len(forms)), key=lambda i: not isinstance(forms[i], PolyhedralGenerators))
    if not isinstance(forms[order[0]], PolyhedralGenerators):
        raise UnsupportedConeError("need at least one pointed generator cone to normalise the LP")
    hits = 0
    for t in range(trials):
        rotated = [rotate(forms[i], haar_orthogonal(d, stream.child(t, i))) for i in order]
        hits += intersect_nontrivially(rotated)
    p = hits / trials
    return MCEstimate(p, math.sqrt(p * (1 - p) / trials), trials)


# -------------------------------------------------------------- kinematic


def _intersection(c, d_rot):
    rows = [as_inequalities(x).normals for x in (c, d_rot)]
    normals = np.vstack(rows)
    normals = normals[np.linalg.norm(normals, axis=1) > 0]
    if normals.shape[0] == 0:
        return Subspace(np.eye(c.ambient_dimension))
    return PolyhedralInequalities(normals)


def profile_for(cone, trials: int, stream: SeedStream) -> IntrinsicVolumeProfile:
    exact = exact_profile(cone)
    return exact if exact is not None else intrinsic_volumes_mc(cone, trials, stream)


@dataclass(frozen=True)
class KinematicCheck:
    lhs: float
    lhs_stderr: float
    rhs: float
    rhs_stderr: float

    def agrees(self, n_sigma: float = 3.0) -> bool:
        return abs(self.lhs - self.rhs) <= n_sigma * math.hypot(self.lhs_stderr, self.rhs_stderr)


def kinematic_expectation_check(
    c, d_cone, k: int, trials: int, stream: SeedStream, inner_trials: int = 500, profile_trials: int = 100_000
) -> KinematicCheck:
    """Compare ``E v_k(C ∩ Q D)`` over Haar ``Q`` with ``v_{d+k}(C x D)``.

    The left side averages, over ``trials`` rotations, the fraction of
    ``inner_trials`` Gaussian samples whose projection onto the intersection
    lands on a ``k``-dimensional face.  Its standard error is the spread of
    those per-rotation fractions.  The right side uses closed-form profiles
    where known and Monte Carlo profiles otherwise.
    """
    d = c.ambient_dimension
    if d_cone.ambient_dimension != d:
        raise InvalidDimensionError("both cones must live in the same space")
    if d > 6:
        raise InvalidDimensionError("the kinematic check is limited to d <= 6")
    if int(k) != k or not 1 <= k <= d:
        raise InvalidParameterError(f"k must lie in [1, {d}], got {k}")
    if trials < 2 or inner_trials < 1:
        raise InvalidParameterError("need at least two rotations and one inner sample")
    fractions = np.empty(trials)
    for t in range(trials):
        q = haar_orthogonal(d, stream.child(0, t))
        inter = _intersection(c, rotate(d_cone, q))
        counts = _face_counts(inter, inner_trials, stream.child(1, t))
        fractions[t] = counts[k] / inner_trials
    lhs = float(fractions.mean())
    lhs_se = float(fractions.std(ddof=1) / math.sqrt(trials))
    pc = profile_for(c, profile_trials, stream.child(2))
    pd = profile_for(d_cone, profile_trials, stream.child(3))
    # v_{d+k}(C x D) = sum_j v_j(C) v_{d+k-j}(D); delta-method error from each factor
    idx = d + k
    coef_c = np.array([pd.values[idx - j] if 0 <= idx - j <= d else 0.0 for j in range(d + 1)])
    coef_d = np.array([pc.values[idx - j] if 0 <= idx - j <= d else 0.0 for j in range(d + 1)])
    rhs, se_c = pc.functional(coef_c)
    _, se_d = pd.functional(coef_d)
    return KinematicCheck(lhs, lhs_se, rhs, math.hypot(se_c, se_d))


@dataclass(frozen=True)
class TailCheck:
    bound: float
    tail: float
    tail_stderr: float

    def holds(self, n_sigma: float = 3.0) -> bool:
        return self.tail <= self.bound + n_sigma * self.tail_stderr


def tail_concentration_check(delta_list, d: int, k: int, profiles: Sequence[IntrinsicVolumeProfile]) -> TailCheck:
    """Bound ``p_theta(k - Omega)`` and the tail ``t_k`` of the product of the given profiles."""
    if len(profiles) != len(delta_list):
        raise InvalidParameterError("need one profile per statistical dimension")
    params = ConcentrationParams.from_deltas([_delta_value(x)[0] for x in delta_list], d)
    if not k > params.omega:
        raise PreconditionError(f"k={k} must exceed Omega={params.omega}")
    prod = profiles[0]
    for p in profiles[1:]:
        prod = profile_product(prod, p)
    if not k <= prod.d:
        raise InvalidParameterError(f"k={k} beyond the product dimension {prod.d}")
    bound = p_theta(params.theta, k - params.omega)
    t_k = tail(prod, k)
    if len(profiles) == 1:
        _, se = profiles[0].functional(tail_coeffs(d, k))
    else:
        # crude but conservative: sum of per-factor binomial errors on the tail
        se = math.sqrt(t_k * (1 - t_k) / min((p.trials for p in profiles if not p.exact), default=1)) if not prod.exact else 0.0
    return TailCheck(bound, t_k, se)
