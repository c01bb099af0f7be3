"""Sparse assembly of the curl-curl pencil on a mapped reference mesh.

Edge unknowns transform covariantly under the domain map: a field w on the
deformed domain pulls back to J^T (w o Phi) on the reference mesh, so edge
circulations (the degrees of freedom) are preserved and the scalar curl
transforms as curl w = curl w_ref / det J. All integrals are evaluated on
the reference mesh with the metric factors of the map:

    A_ij = int curl w_i curl w_j / det J
    B_ij = int w_i^T (J^T J)^{-1} w_j det J
    C_iv = int w_i^T (J^T J)^{-1} grad p_v det J

Tangential boundary values are eliminated, so rows/columns belong to
interior edges only and grad-space columns to interior vertices only.
The incidence matrix G is purely topological: its column for a vertex v
carries +1 on edges ending at v and -1 on edges starting at v.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import GeometryError
from .geometry import MappingFamily, ReferenceMesh

# Degree-2 rule (edge midpoints): exact for products of lowest-order edge
# functions under affine maps.
_QUAD_D2_BARY = np.array(
    [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]]
)
_QUAD_D2_W = np.full(3, 1.0 / 3.0)

# Degree-4 rule (two 3-point orbits) for non-affine maps, where the metric
# factors are rational in the coordinates.
_A1, _B1, _W1 = 0.445948490915965, 0.108103018168070, 0.223381589678011
_A2, _B2, _W2 = 0.091576213509771, 0.816847572980459, 0.109951743655322
_QUAD_D4_BARY = np.array(
    [
        [_B1, _A1, _A1],
        [_A1, _B1, _A1],
        [_A1, _A1, _B1],
        [_B2, _A2, _A2],
        [_A2, _B2, _A2],
        [_A2, _A2, _B2],
    ]
)
_QUAD_D4_W = np.array([_W1, _W1, _W1, _W2, _W2, _W2])

_LOCAL_EDGES = ((0, 1), (1, 2), (2, 0))


@dataclass(frozen=True)
class AssembledSystem:
    """All system matrices of the high-fidelity problem at one parameter.

    A is symmetric positive semi-definite with rank deficiency n_grad,
    B symmetric positive definite, C the mixed grad-div coupling block
    (n_curl x n_grad, equal to B G up to quadrature rounding), and G the
    signed incidence of interior edges against interior vertices.
    """

    t: float
    A: sp.csr_matrix
    B: sp.csr_matrix
    C: sp.csr_matrix
    G: sp.csr_matrix

    @property
    def n_curl(self) -> int:
        return self.A.shape[0]

    @property
    def n_grad(self) -> int:
        return self.G.shape[1]


def quadrature_rule(family: MappingFamily):
    """Barycentric points and weights used for this mapping family."""
    if family.affine:
        return _QUAD_D2_BARY, _QUAD_D2_W
    return _QUAD_D4_BARY, _QUAD_D4_W


def _bary_gradients(X: np.ndarray):
    """Gradients of the barycentric coordinates and triangle areas.

    X has shape (T, 3, 2); returns grads (T, 3, 2) and areas (T,).
    """
    two_a = (X[:, 1, 0] - X[:, 0, 0]) * (X[:, 2, 1] - X[:, 0, 1]) - (
        X[:, 1, 1] - X[:, 0, 1]
    ) * (X[:, 2, 0] - X[:, 0, 0])
    if np.any(two_a <= 0):
        raise GeometryError("triangle with non-positive area (orientation)")
    g = np.empty_like(X)
    for i in range(3):
        e = X[:, (i + 2) % 3] - X[:, (i + 1) % 3]  # edge opposite vertex i
        g[:, i, 0] = -e[:, 1] / two_a
        g[:, i, 1] = e[:, 0] / two_a
    return g, 0.5 * two_a


def discrete_gradient(mesh: ReferenceMesh) -> sp.csr_matrix:
    """Signed incidence of interior edges against interior vertices."""
    rows, cols, vals = [], [], []
    interior = np.flatnonzero(mesh.interior_edge_index >= 0)
    for eid in interior:
        lo, hi = mesh.edges[eid]
        r = mesh.interior_edge_index[eid]
        for v, s in ((hi, 1.0), (lo, -1.0)):
            c = mesh.interior_vertex_index[v]
            if c >= 0:
                rows.append(r)
                cols.append(c)
                vals.append(s)
    return sp.csr_matrix(
        (vals, (rows, cols)), shape=(mesh.n_curl, mesh.n_grad)
    )


def _scatter_edge_edge(vals, mesh):
    idx = mesh.interior_edge_index[mesh.tri_edges]
    r = np.broadcast_to(idx[:, :, None], vals.shape)
    c = np.broadcast_to(idx[:, None, :], vals.shape)
    m = (r >= 0) & (c >= 0)
    M = sp.coo_matrix(
        (vals[m], (r[m], c[m])), shape=(mesh.n_curl, mesh.n_curl)
    ).tocsr()
    return (M + M.T) * 0.5


def _scatter_edge_vertex(vals, mesh):
    eidx = mesh.interior_edge_index[mesh.tri_edges]
    vidx = mesh.interior_vertex_index[mesh.triangles]
    r = np.broadcast_to(eidx[:, :, None], vals.shape)
    c = np.broadcast_to(vidx[:, None, :], vals.shape)
    m = (r >= 0) & (c >= 0)
    return sp.coo_matrix(
        (vals[m], (r[m], c[m])), shape=(mesh.n_curl, mesh.n_grad)
    ).tocsr()


def assemble(mesh: ReferenceMesh, family: MappingFamily, t: float) -> AssembledSystem:
    """Assemble A(t), B(t), C(t) and the topological G for one parameter.

    Raises GeometryError when det J <= 0 at any quadrature point, reporting
    the offending point and parameter value.
    """
    bary, wts = quadrature_rule(family)
    X = mesh.vertices[mesh.triangles]  # (T, 3, 2)
    g, area = _bary_gradients(X)
    sgn = mesh.tri_edge_signs.astype(float)

    curl = np.empty((X.shape[0], 3))
    for e, (a, b) in enumerate(_LOCAL_EDGES):
        cross = g[:, a, 0] * g[:, b, 1] - g[:, a, 1] * g[:, b, 0]
        curl[:, e] = 2.0 * cross * sgn[:, e]

    ntri = X.shape[0]
    B_loc = np.zeros((ntri, 3, 3))
    C_loc = np.zeros((ntri, 3, 3))
    inv_det_sum = np.zeros(ntri)

    for q in range(len(wts)):
        lam = bary[q]
        xq = np.einsum("i,tid->td", lam, X)
        J = family.jacobians(xq, t)
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        if np.any(det <= 0.0):
            bad = int(np.argmax(det <= 0.0))
            raise GeometryError(
                "non-positive jacobian determinant at t="
                f"{t!r}, quadrature point {tuple(xq[bad])}, det={det[bad]!r}"
            )
        # (J^T J)^{-1} through the adjugate; det(J^T J) = det(J)^2
        k00 = J[:, 0, 0] ** 2 + J[:, 1, 0] ** 2
        k01 = J[:, 0, 0] * J[:, 0, 1] + J[:, 1, 0] * J[:, 1, 1]
        k11 = J[:, 0, 1] ** 2 + J[:, 1, 1] ** 2
        det_k = det**2

        w_edge = np.empty((ntri, 3, 2))
        for e, (a, b) in enumerate(_LOCAL_EDGES):
            w_edge[:, e, :] = lam[a] * g[:, b, :] - lam[b] * g[:, a, :]
        w_edge *= sgn[:, :, None]

        mw = np.empty_like(w_edge)
        mw[:, :, 0] = (k11[:, None] * w_edge[:, :, 0] - k01[:, None] * w_edge[:, :, 1]) / det_k[:, None]
        mw[:, :, 1] = (-k01[:, None] * w_edge[:, :, 0] + k00[:, None] * w_edge[:, :, 1]) / det_k[:, None]

        coef = (wts[q] * area * det)[:, None, None]
        B_loc += coef * np.einsum("ted,tfd->tef", w_edge, mw)
        C_loc += coef * np.einsum("ted,tvd->tev", mw, g)
        inv_det_sum += wts[q] / det

    A_loc = curl[:, :, None] * curl[:, None, :] * (area * inv_det_sum)[:, None, None]

    A = _scatter_edge_edge(A_loc, mesh)
    B = _scatter_edge_edge(B_loc, mesh)
    C = _scatter_edge_vertex(C_loc, mesh)
    G = discrete_gradient(mesh)
    return AssembledSystem(t=float(t), A=A, B=B, C=C, G=G)


def matrix_derivatives(
    mesh: ReferenceMesh,
    family: MappingFamily,
    t: float,
    h_fd: float = 1e-4,
):
    """Finite-difference derivatives (A'(t), B'(t)) of the assembled pencil.

    Central second-order differences in the interior of [0, 1], one-sided
    second-order stencils at the endpoints. The returned matrices share the
    sparsity pattern of the assembled operators.
    """
    if h_fd <= 0:
        raise ValueError(f"finite-difference step must be positive, got {h_fd}")

    def pencil(tt):
        s = assemble(mesh, family, tt)
        return s.A, s.B

    if t - h_fd >= 0.0 and t + h_fd <= 1.0:
        a_p, b_p = pencil(t + h_fd)
        a_m, b_m = pencil(t - h_fd)
        scale = 1.0 / (2.0 * h_fd)
        return ((a_p - a_m) * scale).tocsr(), ((b_p - b_m) * scale).tocsr()
    if t - h_fd < 0.0:
        a0, b0 = pencil(t)
        a1, b1 = pencil(t + h_fd)
        a2, b2 = pencil(t + 2 * h_fd)
        scale = 1.0 / (2.0 * h_fd)
        return (
            ((-3.0) * a0 + 4.0 * a1 - a2) * scale
        ).tocsr(), (((-3.0) * b0 + 4.0 * b1 - b2) * scale).tocsr()
    a0, b0 = pencil(t)
    a1, b1 = pencil(t - h_fd)
    a2, b2 = pencil(t - 2 * h_fd)
    scale = 1.0 / (2.0 * h_fd)
    return (
        (3.0 * a0 - 4.0 * a1 + a2) * scale
    ).tocsr(), ((3.0 * b0 - 4.0 * b1 + b2) * scale).tocsr()
