"""Removal of spurious gradient content from bases and systems.

Three interchangeable strategies:

* orthogonalization of basis columns against the gradient space in a fixed
  mass inner product (cheap, but ties divergence-freeness to one domain),
* a grad-div projector built from the mixed coupling block (same fixed-
  parameter limitation),
* tree-cotree condensation, which eliminates the gradient kernel purely
  topologically and therefore works uniformly in the deformation parameter.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import GeometryError, NumericalError
from .eigensolve import b_orthonormalize
from .geometry import ReferenceMesh


@dataclass(frozen=True)
class TreeCotree:
    """Partition of interior-edge unknowns into tree and cotree index sets.

    The tree spans the interior vertices against a single root that stands
    for the whole (eliminated) boundary, so there are exactly n_grad tree
    edges. Indices refer to the interior-edge numbering. ``column_order``
    records the [cotree, tree] permutation used by the block notation of the
    condensed system; the matrices below are kept in natural ordering.
    """

    tree: np.ndarray
    cotree: np.ndarray
    n_curl: int

    @property
    def column_order(self) -> np.ndarray:
        return np.concatenate([self.cotree, self.tree])

    def __post_init__(self):
        both = np.concatenate([self.tree, self.cotree])
        if len(np.unique(both)) != self.n_curl or len(both) != self.n_curl:
            raise GeometryError("tree/cotree sets do not partition the edge unknowns")


def build_tree_cotree(mesh: ReferenceMesh) -> TreeCotree:
    """Breadth-first spanning tree on interior vertices with a boundary root.

    All boundary vertices are identified with one super-node (their edge
    unknowns are eliminated anyway). Neighbors are visited in ascending
    (vertex, edge) order, so the partition is deterministic. Interior edges
    joining two boundary vertices can never be tree edges.
    """
    n_curl = mesh.n_curl
    n_grad = mesh.n_grad
    root = -1

    def node_of(v: int) -> int:
        return root if mesh.boundary_vertex[v] else int(v)

    adjacency: dict[int, list[tuple[int, int]]] = {}
    interior_edges = np.flatnonzero(mesh.interior_edge_index >= 0)
    for eid in interior_edges:
        lo, hi = mesh.edges[eid]
        a, b = node_of(lo), node_of(hi)
        ie = int(mesh.interior_edge_index[eid])
        if a == b:
            continue
        adjacency.setdefault(a, []).append((b, ie))
        adjacency.setdefault(b, []).append((a, ie))
    for nbrs in adjacency.values():
        nbrs.sort()

    visited = {root}
    tree = []
    queue = deque([root])
    while queue:
        node = queue.popleft()
        for nbr, ie in adjacency.get(node, ()):
            if nbr in visited:
                continue
            visited.add(nbr)
            tree.append(ie)
            queue.append(nbr)
    if len(tree) != n_grad:
        raise GeometryError(
            f"spanning tree reached {len(tree)} interior vertices, expected {n_grad}"
        )
    tree_arr = np.array(sorted(tree), dtype=int)
    mask = np.ones(n_curl, dtype=bool)
    mask[tree_arr] = False
    return TreeCotree(tree=tree_arr, cotree=np.flatnonzero(mask), n_curl=n_curl)


def tree_cotree_condense(A, B, tc: TreeCotree):
    """Condense the pencil onto the cotree unknowns.

    H collects the cotree rows of A; with X = B^{-1} H^T the condensed pencil
    is A_hat = X^T A X, B_hat = H X. Its spectrum equals the nonzero spectrum
    of (A, B) and it is positive definite on both sides: the change of
    variables v = X y parameterizes exactly the span of the physical
    eigenvectors.
    """
    A = sp.csr_matrix(A)
    B = sp.csr_matrix(B)
    if A.shape != B.shape or A.shape[0] != tc.n_curl:
        raise ValueError("pencil dimensions do not match the tree-cotree partition")
    H = A[tc.cotree, :]
    try:
        factor = spla.splu(B.tocsc())
    except RuntimeError as exc:
        raise NumericalError(f"mass-matrix factorization failed: {exc}") from exc
    X = factor.solve(H.T.toarray())
    A_hat = X.T @ (A @ X)
    B_hat = H @ X
    A_hat = 0.5 * (A_hat + A_hat.T)
    B_hat = 0.5 * (B_hat + B_hat.T)
    return A_hat, B_hat, H


def condensed_standard_form(A, B, tc: TreeCotree):
    """Orthonormal-frame standard form of the condensed pencil.

    Forming the condensed matrices squares the conditioning of the cotree
    rows, so working with (A_hat, B_hat) directly loses half the digits.
    With X = B^{-1} H^T and the QR factorization L^T X = Q_w R (L the
    Cholesky factor of B), B_hat = R^T R holds exactly and the condensed
    pencil is congruent to the perfectly conditioned standard matrix
    C = (X R^{-1})^T A (X R^{-1}). Returns (C, Q, R) with Q = X R^{-1},
    whose columns are B-orthonormal and span the physical eigenspace.
    """
    A = sp.csr_matrix(A)
    B = sp.csr_matrix(B)
    H = A[tc.cotree, :]
    try:
        factor = spla.splu(B.tocsc())
    except RuntimeError as exc:
        raise NumericalError(f"mass-matrix factorization failed: {exc}") from exc
    X = factor.solve(H.T.toarray())
    L = scipy.linalg.cholesky(B.toarray(), lower=True)
    R = scipy.linalg.qr(L.T @ X, mode="economic")[1]
    # enforce a positive diagonal so R is the Cholesky factor of B_hat
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    R = signs[:, None] * R
    Q = scipy.linalg.solve_triangular(R.T, X.T, lower=True).T
    C_std = Q.T @ (A @ Q)
    return 0.5 * (C_std + C_std.T), Q, R


def condensed_eigensolve(A, B, tc: TreeCotree):
    """Eigenpairs of the condensed pencil through a stable change of basis.

    Returns ascending eigenvalues, eigenvectors in condensed coordinates,
    and the B-orthonormal full-space vectors.
    """
    C_std, Q, R = condensed_standard_form(A, B, tc)
    lam, Y_std = scipy.linalg.eigh(C_std)
    V = Q @ Y_std
    Y = scipy.linalg.solve_triangular(R, Y_std, lower=False)
    return lam, Y, V


def tree_cotree_expand(y, B, H):
    """Map cotree coordinates back to the full edge space, v = B^{-1} H^T y.

    Accepts a vector or a matrix of column vectors. The result is discretely
    divergence-free with respect to the same B used for the expansion.
    """
    y = np.asarray(y, dtype=float)
    rhs = H.T @ y
    try:
        factor = spla.splu(sp.csc_matrix(B))
    except RuntimeError as exc:
        raise NumericalError(f"mass-matrix factorization failed: {exc}") from exc
    return factor.solve(rhs if rhs.ndim > 1 else rhs)


def gradient_basis(G, B0) -> np.ndarray:
    """B0-orthonormal basis of the discrete gradient space.

    Orthonormalizing the raw incidence columns first makes the subsequent
    sweep an exact projection; a single pass over non-orthogonal gradient
    columns would leave O(1) residual coupling between neighboring vertices.
    """
    Gd = G.toarray() if sp.issparse(G) else np.asarray(G, dtype=float)
    if Gd.shape[1] == 0:
        return np.zeros((Gd.shape[0], 0))
    Q, kept = b_orthonormalize(Gd, B0)
    if len(kept) != Gd.shape[1]:
        raise NumericalError("gradient incidence columns are numerically dependent")
    return Q

def gram_schmidt_clean(Z, G, B0, drop_tol: float = 1e-10):
    """Orthogonalize basis columns against the gradient space in B0.

    Modified Gram-Schmidt sweeps (applied twice) against the orthonormalized
    gradient columns, with the normalizing denominators that make each step a
    projection. Columns that collapse to (numerically) pure gradients are
    dropped and reported; the surviving columns are re-orthonormalized in B0.

    Returns (Z_orth, dropped_column_indices).
    """
    Z = np.array(Z, dtype=float, copy=True)
    if Z.ndim == 1:
        Z = Z[:, None]
    if G.shape[1] == 0:
        return Z, []
    Q = gradient_basis(G, B0)
    before = np.sqrt(np.maximum(np.einsum("ij,ij->j", Z, B0 @ Z), 0.0))
    for _ in range(2):
        for j in range(Q.shape[1]):
            q = Q[:, j]
            Z -= np.outer(q, (B0 @ q) @ Z)
    after = np.sqrt(np.maximum(np.einsum("ij,ij->j", Z, B0 @ Z), 0.0))
    alive = after >= drop_tol * np.maximum(before, np.finfo(float).tiny)
    dropped = [int(i) for i in np.flatnonzero(~alive)]
    Z = Z[:, alive]
    Z, kept = b_orthonormalize(Z, B0, drop_tol=drop_tol)
    alive_idx = [int(i) for i in np.flatnonzero(alive)]
    dropped += [alive_idx[i] for i in range(len(alive_idx)) if i not in kept]
    return Z, sorted(dropped)


def graddiv_project(Z, G, C0):
    """Apply the grad-div projector P = I - G (C^T G)^{-1} C^T to columns.

    C0 is the mixed coupling block at the chosen parameter (n_curl x n_grad,
    equal to B G there), so C0^T G is the symmetric positive-definite
    gradient Gram matrix. P annihilates gradients and is idempotent.
    """
    Z = np.asarray(Z, dtype=float)
    single = Z.ndim == 1
    Zm = Z[:, None] if single else Z
    if G.shape[1] == 0:
        out = Zm.copy()
        return out[:, 0] if single else out
    M = sp.csc_matrix(C0.T @ G)
    try:
        factor = spla.splu(M)
    except RuntimeError as exc:
        raise NumericalError(f"gradient Gram matrix is singular: {exc}") from exc
    coeff = factor.solve(np.asarray(C0.T @ Zm))
    out = Zm - G @ coeff
    return out[:, 0] if single else out


def divergence_defect(v, C, B) -> float:
    """Relative discrete divergence ||C^T v|| / ||v||_B at the parameter of C.

    Zero exactly when v is discretely divergence-free on that domain; the
    defect of a vector cleaned at one parameter generally grows when it is
    evaluated on a different domain configuration.
    """
    v = np.asarray(v, dtype=float)
    den = float(v @ (B @ v))
    if den <= 0.0:
        return 0.0
    if C.shape[1] == 0:
        return 0.0
    return float(np.linalg.norm(C.T @ v) / np.sqrt(den))
