"""Problem bundle: mesh + mapping + gauge strategy + per-parameter caches."""

from __future__ import annotations

import numpy as np
import scipy.sparse.linalg as spla

from . import gauge as gauge_mod
from .assembly import AssembledSystem, assemble, discrete_gradient, matrix_derivatives
from .eigensolve import (
    DEFAULT_MULT_TOL,
    DEFAULT_NULL_TOL,
    EigenSolution,
    b_orthonormalize,
    residual_norms,
    solve_dense_gevp,
    solve_gevp,
)
from .errors import NumericalError
from .geometry import MappingFamily, ReferenceMesh

GAUGES = ("none", "gram-schmidt", "projection", "tree-cotree")


class CavityProblem:
    """One parameterized eigenproblem with an active spurious-mode strategy.

    Mesh and mapping are immutable; assembled systems are cached per
    parameter value and shared by every consumer (snapshots, greedy sweeps,
    tracking). The gauge strategy decides how high-fidelity eigenvectors are
    produced and how basis matrices are cleaned.
    """

    def __init__(
        self,
        mesh: ReferenceMesh,
        family: MappingFamily,
        gauge: str = "tree-cotree",
        null_tol: float = DEFAULT_NULL_TOL,
        delta_mult: float = DEFAULT_MULT_TOL,
        h_fd: float = 1e-4,
        t_ref: float = 0.0,
    ):
        if gauge not in GAUGES:
            raise ValueError(f"unknown gauge {gauge!r}, expected one of {GAUGES}")
        self.mesh = mesh
        self.family = family
        self.gauge = gauge
        self.null_tol = null_tol
        self.delta_mult = delta_mult
        self.h_fd = h_fd
        self.t_ref = t_ref
        self._systems: dict[float, AssembledSystem] = {}
        self._G = None
        self._tc = None
        self._bhat_ref = None

    # ------------------------------------------------------------------ data

    @property
    def n_curl(self) -> int:
        return self.mesh.n_curl

    @property
    def n_grad(self) -> int:
        return self.mesh.n_grad

    @property
    def G(self):
        if self._G is None:
            self._G = discrete_gradient(self.mesh)
        return self._G

    @property
    def tree_cotree(self) -> gauge_mod.TreeCotree:
        if self._tc is None:
            self._tc = gauge_mod.build_tree_cotree(self.mesh)
        return self._tc

    def system(self, t: float) -> AssembledSystem:
        """Assembled matrices at t, cached by exact parameter value."""
        key = float(t)
        hit = self._systems.get(key)
        if hit is None:
            hit = assemble(self.mesh, self.family, key)
            self._systems[key] = hit
        return hit

    def clear_cache(self):
        self._systems.clear()

    @property
    def b_ref(self):
        """Reference mass matrix B(t_ref) used for all orthonormalizations."""
        return self.system(self.t_ref).B

    def derivative_pencil(self, t: float):
        """(A'(t), B'(t)) by finite differences on cached assemblies."""
        h = self.h_fd
        if t - h >= 0.0 and t + h <= 1.0:
            sp_, sm = self.system(t + h), self.system(t - h)
            s = 1.0 / (2.0 * h)
            return ((sp_.A - sm.A) * s).tocsr(), ((sp_.B - sm.B) * s).tocsr()
        return matrix_derivatives(self.mesh, self.family, t, h)

    # ----------------------------------------------------------------- solve

    def solve_full(self, t: float, k: int) -> EigenSolution:
        """Ungauged solve with null filtering; vectors in the full edge space."""
        sys_t = self.system(t)
        try:
            sol = solve_gevp(sys_t.A, sys_t.B, k, null_tol=self.null_tol)
        except NumericalError as exc:
            raise NumericalError(f"high-fidelity solve failed at t={t!r}: {exc}") from exc
        sol.t = float(t)
        return sol

    def solve_condensed(self, t: float, k: int) -> EigenSolution:
        """Cotree-condensed solve, expanded back to the full edge space."""
        sys_t = self.system(t)
        lam, _, V = gauge_mod.condensed_eigensolve(sys_t.A, sys_t.B, self.tree_cotree)
        if lam.size < k:
            raise NumericalError(
                f"condensed pencil at t={t!r} has only {lam.size} eigenvalues"
            )
        lambdas = lam[:k].copy()
        V = V[:, :k].copy()
        res = residual_norms(sys_t.A, sys_t.B, lambdas, V)
        return EigenSolution(
            lambdas=lambdas,
            vectors=V,
            n_discarded_null=0,
            residuals=res,
            t=float(t),
        )

    def solve_gauged(self, t: float, k: int) -> EigenSolution:
        """High-fidelity eigenpairs produced per the active gauge strategy.

        Tree-cotree snapshots come from the condensed pencil and are expanded
        back, so they are divergence-free by construction; the remaining
        strategies solve the ungauged pencil and defer cleanup to the basis.
        """
        if self.gauge == "tree-cotree":
            return self.solve_condensed(t, k)
        return self.solve_full(t, k)

    # --------------------------------------------------------- basis support

    @property
    def basis_space(self) -> str:
        """Coordinate space of reduced bases built for this problem.

        The tree-cotree strategy keeps the basis in cotree coordinates: the
        condensed pencil is positive definite for every parameter, so the
        reduced model cannot develop spurious near-zero modes no matter how
        the basis recombines snapshots. The other strategies work in the
        full edge space. Combinations of divergence-free snapshots taken at
        different parameters are generally not divergence-free in any single
        metric, which is exactly what the cleanup strategies deal with.
        """
        return "cotree" if self.gauge == "tree-cotree" else "edge"

    @property
    def basis_metric(self):
        """Inner-product matrix at t_ref in the basis coordinate space."""
        if self.basis_space == "edge":
            return self.b_ref
        if self._bhat_ref is None:
            sys_ref = self.system(self.t_ref)
            A_hat, B_hat, _ = gauge_mod.tree_cotree_condense(
                sys_ref.A, sys_ref.B, self.tree_cotree
            )
            self._bhat_ref = B_hat
        return self._bhat_ref

    def snapshot_solve(self, t: float, k: int):
        """First k eigenpairs with vectors in the basis coordinate space."""
        if self.basis_space == "cotree":
            sys_t = self.system(t)
            lam, Y, _ = gauge_mod.condensed_eigensolve(
                sys_t.A, sys_t.B, self.tree_cotree
            )
            if lam.size < k:
                raise NumericalError(
                    f"condensed pencil at t={t!r} has only {lam.size} eigenvalues"
                )
            return lam[:k].copy(), Y[:, :k].copy()
        sol = self.solve_full(t, k)
        return sol.lambdas, sol.vectors

    def upscale_matrix(self, Z: np.ndarray, t: float, space: str | None = None) -> np.ndarray:
        """Full-space image of the basis columns at parameter t.

        Identity for edge-space bases; for cotree bases the columns map
        through the parameter's expansion B(t)^{-1} H(t)^T, so the reduced
        trial space is divergence-free on every domain configuration.
        """
        if (space or self.basis_space) == "edge":
            return np.asarray(Z, dtype=float)
        sys_t = self.system(t)
        H = sys_t.A.tocsr()[self.tree_cotree.cotree, :]
        try:
            factor = spla.splu(sys_t.B.tocsc())
        except RuntimeError as exc:
            raise NumericalError(
                f"mass-matrix factorization failed at t={t!r}: {exc}"
            ) from exc
        return factor.solve(H.T @ np.asarray(Z, dtype=float))

    def reduced_pencil(self, Z: np.ndarray, t: float, space: str | None = None):
        """(A_red, B_red, U) of the basis at t; U upscales reduced vectors."""
        sys_t = self.system(t)
        U = self.upscale_matrix(Z, t, space=space)
        A_red = U.T @ (sys_t.A @ U)
        B_red = U.T @ (sys_t.B @ U)
        return 0.5 * (A_red + A_red.T), 0.5 * (B_red + B_red.T), U

    # ----------------------------------------------------------------- gauge

    def clean_basis(self, Z: np.ndarray):
        """Apply the active strategy's spurious-mode removal to basis columns.

        Returns (Z_clean, dropped_column_indices). The tree-cotree strategy
        needs no cleanup (its basis coordinates carry no gradient space) and
        ungauged runs deliberately skip it.
        """
        if self.gauge == "gram-schmidt":
            return gauge_mod.gram_schmidt_clean(Z, self.G, self.b_ref)
        if self.gauge == "projection":
            sys_ref = self.system(self.t_ref)
            return gauge_mod.graddiv_project(Z, self.G, sys_ref.C), []
        return np.array(Z, dtype=float, copy=True), []

    def orthonormalize(self, V: np.ndarray, against: np.ndarray | None = None):
        return b_orthonormalize(V, self.basis_metric, against=against)
