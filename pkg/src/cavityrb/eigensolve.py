"""Generalized symmetric eigensolver with gradient null-space filtering.

At desk scale the pencil is reduced to a dense symmetric-definite problem;
the exact-zero gradient modes of an ungauged system land many orders below
the physical spectrum and are discarded by a relative threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import NumericalError

DEFAULT_NULL_TOL = 1e-8
DEFAULT_MULT_TOL = 1e-6


def _dense(M) -> np.ndarray:
    if sp.issparse(M):
        return M.toarray()
    return np.asarray(M, dtype=float)


@dataclass
class EigenSolution:
    """Retained eigenpairs of one pencil, ascending, B-orthonormal columns."""

    lambdas: np.ndarray
    vectors: np.ndarray
    n_discarded_null: int
    residuals: np.ndarray = field(default=None)
    t: float = float("nan")

    @property
    def frequencies(self) -> np.ndarray:
        """f_k = sqrt(lambda_k) / (2 pi), nondimensional."""
        return np.sqrt(self.lambdas) / (2.0 * np.pi)

    @property
    def k(self) -> int:
        return len(self.lambdas)


def solve_gevp(A, B, k: int, null_tol: float = DEFAULT_NULL_TOL) -> EigenSolution:
    """Smallest k eigenpairs of A v = lambda B v above the null threshold.

    A must be symmetric positive semi-definite and B symmetric positive
    definite. Eigenvalues at or below null_tol times the largest computed
    magnitude count as gradient null modes and are discarded.
    """
    if k < 1:
        raise ValueError(f"requested eigenpair count must be >= 1, got {k}")
    Ad = _dense(A)
    Bd = _dense(B)
    try:
        lam, V = scipy.linalg.eigh(Ad, Bd)
    except (scipy.linalg.LinAlgError, np.linalg.LinAlgError) as exc:
        raise NumericalError(f"mass-matrix factorization failed: {exc}") from exc
    lam_ref = max(float(np.abs(lam).max()), np.finfo(float).tiny)
    nonzero = lam > null_tol * lam_ref
    n_discarded = int((~nonzero).sum())
    idx = np.flatnonzero(nonzero)
    if idx.size < k:
        raise NumericalError(
            f"only {idx.size} eigenvalues above the null threshold, requested {k}"
        )
    idx = idx[:k]
    lambdas = lam[idx].copy()
    vectors = V[:, idx].copy()
    res = residual_norms(A, B, lambdas, vectors)
    return EigenSolution(
        lambdas=lambdas,
        vectors=vectors,
        n_discarded_null=n_discarded,
        residuals=res,
    )


def solve_dense_gevp(A_red: np.ndarray, B_red: np.ndarray):
    """All eigenpairs of a small dense pencil, no null filtering."""
    try:
        return scipy.linalg.eigh(np.asarray(A_red, float), np.asarray(B_red, float))
    except (scipy.linalg.LinAlgError, np.linalg.LinAlgError) as exc:
        raise NumericalError(f"reduced pencil factorization failed: {exc}") from exc


def residual_norms(A, B, lambdas, vectors) -> np.ndarray:
    """Relative residuals ||A v - lam B v|| / (lam ||B v||) per column."""
    Av = A @ vectors
    Bv = B @ vectors
    out = np.empty(len(lambdas))
    for j, lam in enumerate(lambdas):
        denom = max(abs(lam) * np.linalg.norm(Bv[:, j]), np.finfo(float).tiny)
        out[j] = np.linalg.norm(Av[:, j] - lam * Bv[:, j]) / denom
    return out


def count_null(A, B, null_tol: float = DEFAULT_NULL_TOL) -> int:
    """Number of eigenvalues of (A, B) at or below the null threshold."""
    lam = scipy.linalg.eigvalsh(_dense(A), _dense(B))
    lam_ref = max(float(np.abs(lam).max()), np.finfo(float).tiny)
    return int((lam <= null_tol * lam_ref).sum())


def b_normalize(v: np.ndarray, B) -> np.ndarray:
    """Scale v so that v^T B v = 1; direction is preserved."""
    v = np.asarray(v, dtype=float)
    nn = float(v @ (B @ v))
    if not np.isfinite(nn) or nn <= 0.0:
        raise ValueError("cannot normalize a zero or B-degenerate vector")
    return v / np.sqrt(nn)


def b_orthonormalize(
    V: np.ndarray,
    B,
    against: np.ndarray | None = None,
    drop_tol: float = 1e-10,
):
    """Modified Gram-Schmidt in the B inner product with re-orthogonalization.

    Columns are first orthogonalized against ``against`` (assumed already
    B-orthonormal), then against each other; each projection pass runs twice.
    Columns whose B norm shrinks below drop_tol times the input norm are
    dropped. Returns (Q, kept_indices).
    """
    V = np.array(V, dtype=float, copy=True)
    if V.ndim == 1:
        V = V[:, None]
    kept_cols = []
    kept_idx = []
    for j in range(V.shape[1]):
        v = V[:, j].copy()
        before = float(np.sqrt(max(v @ (B @ v), 0.0)))
        if before == 0.0:
            continue
        for _ in range(2):
            if against is not None and against.shape[1] > 0:
                v -= against @ (against.T @ (B @ v))
            for q in kept_cols:
                v -= q * float(q @ (B @ v))
        after = float(np.sqrt(max(v @ (B @ v), 0.0)))
        if after < drop_tol * before:
            continue
        kept_cols.append(v / after)
        kept_idx.append(j)
    if kept_cols:
        Q = np.column_stack(kept_cols)
    else:
        Q = np.zeros((V.shape[0], 0))
    return Q, kept_idx


def eigenvalue_clusters(lambdas: np.ndarray, delta: float = DEFAULT_MULT_TOL):
    """Group an ascending spectrum into relative-gap clusters.

    Consecutive eigenvalues stay in one cluster while their gap is at most
    delta times the larger magnitude. Returns a list of index arrays.
    """
    lam = np.asarray(lambdas, dtype=float)
    if lam.size == 0:
        return []
    groups = [[0]]
    for i in range(1, lam.size):
        scale = max(abs(lam[i]), abs(lam[i - 1]), np.finfo(float).tiny)
        if lam[i] - lam[i - 1] <= delta * scale:
            groups[-1].append(i)
        else:
            groups.append([i])
    return [np.array(g, dtype=int) for g in groups]


def cluster_of(lambdas: np.ndarray, i: int, delta: float = DEFAULT_MULT_TOL) -> np.ndarray:
    """Indices of the multiplicity cluster containing eigenvalue i."""
    for group in eigenvalue_clusters(lambdas, delta):
        if i in group:
            return group
    raise IndexError(f"eigenvalue index {i} outside spectrum of length {len(lambdas)}")
