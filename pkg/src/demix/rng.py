"""Deterministic random sources and the small dense linear algebra used everywhere.

Every random draw in the package flows through a :class:`SeedStream`, an
immutable ``(root_seed, path)`` pair.  A stream never carries mutable state:
``stream.generator()`` builds a fresh counter-based generator each time, so
the same stream always yields the same numbers and distinct paths yield
independent numbers.  Experiments derive per-cell and per-trial streams with
:meth:`SeedStream.child`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import InvalidDimensionError, InvalidShapeError, RankDeficiencyError

_UINT64 = 1 << 64

# Singular values below RANK_RTOL * largest count as zero.
RANK_RTOL = 1e-10


@dataclass(frozen=True)
class SeedStream:
    root_seed: int
    path: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not 0 <= int(self.root_seed) < _UINT64:
            raise ValueError(f"root_seed must be a 64-bit unsigned integer, got {self.root_seed}")
        path = tuple(int(p) for p in self.path)
        for p in path:
            if not 0 <= p < _UINT64:
                raise ValueError(f"path entries must be 64-bit unsigned integers, got {p}")
        object.__setattr__(self, "root_seed", int(self.root_seed))
        object.__setattr__(self, "path", path)

    def child(self, *indices: int) -> "SeedStream":
        return SeedStream(self.root_seed, self.path + tuple(indices))

    def seed_sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(entropy=self.root_seed, spawn_key=self.path)

    def generator(self) -> np.random.Generator:
        """A fresh Philox generator keyed by ``(root_seed, path)``."""
        return np.random.Generator(np.random.Philox(self.seed_sequence()))


def _check_dim(d):
    if int(d) != d or d < 1:
        raise InvalidDimensionError(f"dimension must be a positive integer, got {d!r}")
    return int(d)


def gaussian_vector(d: int, stream: SeedStream) -> np.ndarray:
    """i.i.d. standard normal vector of length ``d``."""
    d = _check_dim(d)
    return stream.generator().standard_normal(d)


def gaussian_matrix(rows: int, cols: int, stream: SeedStream) -> np.ndarray:
    rows, cols = _check_dim(rows), _check_dim(cols)
    return stream.generator().standard_normal((rows, cols))


def haar_orthogonal(d: int, stream: SeedStream) -> np.ndarray:
    """Haar-distributed orthogonal ``d x d`` matrix.

    QR factorization of a Gaussian matrix, with each column of Q multiplied by
    the sign of the matching diagonal entry of R.  Without the sign fix the
    output of LAPACK's QR is not Haar distributed.
    """
    d = _check_dim(d)
    z = stream.generator().standard_normal((d, d))
    q, r = np.linalg.qr(z)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


@dataclass(frozen=True)
class RotationSet:
    matrices: tuple[np.ndarray, ...]

    def __post_init__(self):
        mats = tuple(np.asarray(m, dtype=float) for m in self.matrices)
        if not mats:
            raise InvalidShapeError("a rotation set needs at least one matrix")
        d = mats[0].shape[0]
        for m in mats:
            if m.shape != (d, d):
                raise InvalidShapeError(f"rotation of shape {m.shape}, expected {(d, d)}")
            if np.max(np.abs(m.T @ m - np.eye(d))) > 1e-10:
                raise InvalidShapeError("rotation matrix is not orthogonal to 1e-10")
        object.__setattr__(self, "matrices", mats)

    @property
    def dimension(self) -> int:
        return self.matrices[0].shape[0]

    def __len__(self):
        return len(self.matrices)

    def __getitem__(self, i):
        return self.matrices[i]

    def __iter__(self):
        return iter(self.matrices)

    @classmethod
    def haar(cls, n: int, d: int, stream: SeedStream) -> "RotationSet":
        return cls(tuple(haar_orthogonal(d, stream.child(i)) for i in range(n)))

    @classmethod
    def identity(cls, n: int, d: int) -> "RotationSet":
        return cls(tuple(np.eye(d) for _ in range(n)))


def numerical_rank(a: np.ndarray, rtol: float = RANK_RTOL) -> int:
    s = scipy.linalg.svdvals(a)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > rtol * s[0]))


class PseudoInverse:
    """Moore-Penrose pseudoinverse of a full-row-rank ``m x d`` matrix.

    Factors ``A^T = Q R`` once; then ``A^+ v = Q R^{-T} v`` and the orthogonal
    projector onto the row space of ``A`` is ``Q Q^T``.
    """

    def __init__(self, a):
        a = np.atleast_2d(np.asarray(a, dtype=float))
        m, d = a.shape
        if m > d:
            raise InvalidShapeError(f"expected m <= d, got A of shape {a.shape}")
        rank = numerical_rank(a)
        if rank < m:
            raise RankDeficiencyError(
                f"A of shape {a.shape} has numerical rank {rank} < {m}", numerical_rank=rank
            )
        self.a = a
        self.q, self.r = np.linalg.qr(a.T)

    @property
    def shape(self):
        return self.a.shape

    def apply(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.a.shape[0]:
            raise InvalidShapeError(f"vector of length {v.shape[0]}, expected {self.a.shape[0]}")
        return self.q @ scipy.linalg.solve_triangular(self.r, v, trans="T")

    def project_rows(self, x) -> np.ndarray:
        """Orthogonal projection onto the row space of A (equals ``A^+ A x``)."""
        return self.q @ (self.q.T @ x)


def pinv_apply(a, v) -> np.ndarray:
    """Return ``A^+ v = A^T (A A^T)^{-1} v`` for full-row-rank ``A``."""
    return PseudoInverse(a).apply(v)
