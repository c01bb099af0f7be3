"""Derivative-based eigenvalue tracking along the deformation parameter.

Each step solves a bordered linear system for the eigenpair derivatives,
predicts the pair at t + h by first-order Taylor expansion, solves the
eigenproblem there and re-identifies the tracked modes by a B-weighted
correlation assignment. Crossings show up as rank changes inside the
tracked family and are flagged; splits of previously degenerate clusters
are not crossings and stay unflagged.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import linear_sum_assignment

from .errors import NumericalError, SingularDerivativeError
from .eigensolve import cluster_of, eigenvalue_clusters, solve_dense_gevp
from .gauge import condensed_standard_form
from .pod import ReducedBasis, reduce_system
from .problem import CavityProblem

SYSTEMS = ("high-fidelity", "cotree", "reduced")


@dataclass
class TrackingConfig:
    """March parameters for one tracking run.

    ``overtrack`` extra candidates are always solved beyond the tracked K;
    the candidate window additionally grows on its own whenever tracked
    modes sink deeper into the sorted spectrum, so modes that are overtaken
    by untracked curves are never lost.
    """

    K: int
    h: float
    system: str = "high-fidelity"
    rho_min: float = 0.8
    max_halvings: int = 4
    overtrack: int = 2
    delta_mult: float = 1e-6
    derivative_fallback: bool = True
    residual_tol: float = 1e-8

    def __post_init__(self):
        if not (0.0 < self.h <= 1.0):
            raise ValueError(f"step size must lie in (0, 1], got {self.h}")
        if self.K < 1:
            raise ValueError(f"tracked mode count must be >= 1, got {self.K}")
        if not (0.0 < self.rho_min <= 1.0):
            raise ValueError(f"rho_min must lie in (0, 1], got {self.rho_min}")
        if self.system not in SYSTEMS:
            raise ValueError(f"system must be one of {SYSTEMS}")


@dataclass
class TrackStep:
    t: float
    lambdas: np.ndarray          # tracked order, not sorted
    ranks: np.ndarray            # sorted position of each tracked mode
    perm: tuple                  # rank change vs previous step
    rhos: np.ndarray             # correlation of each match (nan at t=0)
    dlambdas: np.ndarray         # derivative used to predict this step
    flags: tuple = ()
    window: int = 0


@dataclass
class TrackingTrace:
    steps: list = field(default_factory=list)
    status: str = "completed"
    system: str = "high-fidelity"
    gauge: str = "none"
    labels: list | None = None

    @property
    def complete(self) -> bool:
        return self.status == "completed" and bool(self.steps) and (
            abs(self.steps[-1].t - 1.0) < 1e-12
        )

    def crossings(self):
        """(t_before, t_after, midpoint) of every flagged crossing step."""
        out = []
        for prev, step in zip(self.steps, self.steps[1:]):
            if "crossing-detected" in step.flags:
                out.append((prev.t, step.t, 0.5 * (prev.t + step.t)))
        return out

    def endpoint_lambdas(self) -> np.ndarray:
        if not self.steps:
            raise NumericalError("empty trace")
        return self.steps[-1].lambdas


def eigen_derivatives(A, B, A_prime, B_prime, v, lam, c, residual_tol=1e-8):
    """Eigenpair derivatives from the bordered system.

    Solves
        [A - lam B   -B v] [v']     [-A' v + lam B' v]
        [  c^T B       0 ] [lam']  = [   -c^T B' v    ]
    and verifies the linear-system residual; a numerically singular border
    (multiple eigenvalue) raises SingularDerivativeError.
    """
    v = np.asarray(v, dtype=float)
    Bv = B @ v
    Av = A @ v
    scale = max(abs(lam) * np.linalg.norm(Bv), np.finfo(float).tiny)
    if np.linalg.norm(Av - lam * Bv) / scale > residual_tol:
        raise ValueError("input pair is not an eigenpair to the required residual")
    c = np.asarray(c, dtype=float)
    cB = B @ c
    if abs(cB @ v) < 1e-12 * max(np.linalg.norm(cB) * np.linalg.norm(v), 1e-300):
        raise ValueError("normalization vector is B-orthogonal to the eigenvector")
    rhs = np.concatenate(
        [-(A_prime @ v) + lam * (B_prime @ v), [-(c @ (B_prime @ v))]]
    )
    n = v.shape[0]
    # One extra solve with a fixed probe estimates the inverse norm; a
    # backward-stable solve of a singular border still returns a small
    # residual, so the residual check alone cannot diagnose multiplicity.
    probe = np.cos(np.arange(n + 1, dtype=float))
    if sp.issparse(A):
        M = sp.bmat(
            [
                [A - lam * B, -sp.csc_matrix(Bv.reshape(n, 1))],
                [sp.csc_matrix(cB.reshape(1, n)), None],
            ],
            format="csc",
        )
        try:
            factor = spla.splu(M)
            x = factor.solve(rhs)
            x_probe = factor.solve(probe)
        except RuntimeError as exc:
            raise SingularDerivativeError(
                f"bordered system singular (multiple eigenvalue?): {exc}"
            ) from exc
        m_norm = abs(M).max()
    else:
        M = np.zeros((n + 1, n + 1))
        M[:n, :n] = A - lam * B
        M[:n, n] = -Bv
        M[n, :n] = cB
        try:
            lu = scipy.linalg.lu_factor(M)
            x = scipy.linalg.lu_solve(lu, rhs)
            x_probe = scipy.linalg.lu_solve(lu, probe)
        except (scipy.linalg.LinAlgError, ValueError) as exc:
            raise SingularDerivativeError(
                f"bordered system singular (multiple eigenvalue?): {exc}"
            ) from exc
        m_norm = np.abs(M).max()
    kappa_est = m_norm * np.linalg.norm(x_probe) / np.linalg.norm(probe)
    if not np.all(np.isfinite(x)) or kappa_est > 1e12:
        raise SingularDerivativeError(
            f"bordered system numerically singular (condition estimate "
            f"{kappa_est:.2e}): multiple eigenvalue suspected"
        )
    res = np.linalg.norm(M @ x - rhs)
    ref = max(np.linalg.norm(rhs), abs(lam) * np.linalg.norm(Bv))
    if res > residual_tol * max(ref, 1.0):
        raise SingularDerivativeError(
            f"bordered solve residual {res!r} exceeds tolerance "
            "(multiple eigenvalue suspected)"
        )
    return x[:n], float(x[n])


def taylor_predict(v, lam, v_prime, lam_prime, h):
    """First-order prediction of the eigenpair at t + h."""
    return np.asarray(v) + h * np.asarray(v_prime), lam + h * lam_prime


@dataclass
class MatchResult:
    perm: np.ndarray
    rhos: np.ndarray
    ok: bool


def _correlation_matrix(P, C, B):
    BP = B @ P
    BC = B @ C
    pn = np.sqrt(np.maximum(np.einsum("ij,ij->j", P, BP), np.finfo(float).tiny))
    cn = np.sqrt(np.maximum(np.einsum("ij,ij->j", C, BC), np.finfo(float).tiny))
    return np.abs(P.T @ BC) / np.outer(pn, cn)


def _assign(rho, rho_min):
    K = rho.shape[0]
    rows, cols = linear_sum_assignment(-rho)
    perm = np.empty(K, dtype=int)
    perm[rows] = cols
    rhos = rho[np.arange(K), perm]
    ok = True if rho_min is None else bool(rhos.min() >= rho_min)
    return MatchResult(perm=perm, rhos=rhos, ok=ok)


def correlation_match(predicted: np.ndarray, candidates: np.ndarray, B, rho_min=None) -> MatchResult:
    """Assign candidates to predicted vectors by maximal total correlation.

    rho_kj = |p_k^T B c_j| / (||p_k||_B ||c_j||_B); the optimal bipartite
    assignment makes permutation recovery deterministic near degeneracies.
    Requires at least as many candidates as predictions.
    """
    P = np.atleast_2d(np.asarray(predicted, dtype=float))
    C = np.atleast_2d(np.asarray(candidates, dtype=float))
    if P.ndim != 2 or C.ndim != 2:
        raise ValueError("predicted and candidate vectors must be matrices")
    if C.shape[1] < P.shape[1]:
        raise ValueError(f"need at least {P.shape[1]} candidates, got {C.shape[1]}")
    return _assign(_correlation_matrix(P, C, B), rho_min)


def _clusters_unsorted(lam, delta):
    """Multiplicity clusters of an arbitrarily ordered eigenvalue array."""
    lam = np.asarray(lam, dtype=float)
    order = np.argsort(lam, kind="stable")
    return [order[g] for g in eigenvalue_clusters(lam[order], delta)]


def _cluster_aware_match(P, lam_pred, C, B, delta, rho_min):
    """Correlation assignment treating degenerate clusters as subspaces.

    Within a multiplicity cluster the individual eigenvector directions are
    arbitrary (any rotation of the eigenspace is valid), so each clustered
    mode scores candidates by their projection norm onto the whole cluster
    subspace; the assignment still hands out distinct candidates.
    """
    rho_ind = _correlation_matrix(P, C, B)
    rho = rho_ind.copy()
    for idx in _clusters_unsorted(lam_pred, delta):
        if idx.size < 2:
            continue
        Q, kept = _b_orthonormal_block(P[:, idx], B)
        if kept == 0:
            continue
        BC = B @ C
        cn = np.sqrt(np.maximum(np.einsum("ij,ij->j", C, BC), np.finfo(float).tiny))
        proj = (Q.T @ BC) / cn[None, :]
        score = np.minimum(np.sqrt((proj**2).sum(axis=0)), 1.0)
        rho[idx, :] = score[None, :]
    # The subspace score decides acceptance; a small individual-correlation
    # term breaks assignment ties inside clusters so that seeded/predicted
    # member order survives a degenerate step.
    K = rho.shape[0]
    rows, cols = linear_sum_assignment(-(rho + 1e-6 * rho_ind))
    perm = np.empty(K, dtype=int)
    perm[rows] = cols
    rhos = rho[np.arange(K), perm]
    ok = True if rho_min is None else bool(rhos.min() >= rho_min)
    return MatchResult(perm=perm, rhos=rhos, ok=ok)


def _b_orthonormal_block(V, B, drop_tol=1e-10):
    """Small-block modified Gram-Schmidt in the B inner product."""
    V = np.array(V, dtype=float, copy=True)
    cols = []
    for j in range(V.shape[1]):
        v = V[:, j]
        for _ in range(2):
            for q in cols:
                v = v - q * float(q @ (B @ v))
        nrm = float(np.sqrt(max(v @ (B @ v), 0.0)))
        if nrm > drop_tol:
            cols.append(v / nrm)
    Q = np.column_stack(cols) if cols else np.zeros((V.shape[0], 0))
    return Q, len(cols)


class _FullOps:
    """High-fidelity systems: sparse pencil, dense solve, null filtering."""

    def __init__(self, problem: CavityProblem, K: int):
        self.problem = problem
        self.K = K

    def pencil(self, t):
        s = self.problem.system(t)
        return s.A, s.B

    def derivative_pencil(self, t):
        return self.problem.derivative_pencil(t)

    def solve_all(self, t):
        s = self.problem.system(t)
        lam, V = solve_dense_gevp(s.A.toarray(), s.B.toarray())
        lam_ref = max(float(np.abs(lam).max()), np.finfo(float).tiny)
        keep = lam > self.problem.null_tol * lam_ref
        return lam[keep], V[:, keep]


class _PencilCache:
    """Small per-run memo for t-dependent pencils (bounded memory)."""

    def __init__(self, build, maxsize=8):
        self.build = build
        self.maxsize = maxsize
        self.store = OrderedDict()

    def __call__(self, t):
        key = float(t)
        if key in self.store:
            self.store.move_to_end(key)
            return self.store[key]
        value = self.build(key)
        self.store[key] = value
        if len(self.store) > self.maxsize:
            self.store.popitem(last=False)
        return value


class _CotreeOps:
    """Condensed system in its orthonormal standard form per parameter.

    The per-t gauge transformation (mass factorization, QR, projection) is
    genuine online work of this variant and runs inside the march; the memo
    only avoids recomputing the identical parameter twice within one run.
    The frame varies smoothly with t, and the eigenvalue curves equal those
    of the condensed pencil exactly.
    """

    def __init__(self, problem: CavityProblem, K: int):
        self.problem = problem
        self.K = K
        self._pencil = _PencilCache(self._standard_form)

    def _standard_form(self, t):
        s = self.problem.system(t)
        C_std, _, _ = condensed_standard_form(s.A, s.B, self.problem.tree_cotree)
        return C_std, np.eye(C_std.shape[0])

    def pencil(self, t):
        return self._pencil(t)

    def derivative_pencil(self, t):
        h = self.problem.h_fd
        if t - h < 0.0:
            ts, ws = (t, t + h, t + 2 * h), (-3.0, 4.0, -1.0)
        elif t + h > 1.0:
            ts, ws = (t, t - h, t - 2 * h), (3.0, -4.0, 1.0)
        else:
            ts, ws = (t + h, t - h), (1.0, -1.0)
        mats = [self._pencil(tt) for tt in ts]
        scale = 1.0 / (2.0 * h)
        A_p = scale * sum(w * m[0] for w, m in zip(ws, mats))
        B_p = np.zeros_like(A_p)
        return A_p, B_p

    def solve_all(self, t):
        C_std, _ = self._pencil(t)
        lam, Y = scipy.linalg.eigh(C_std)
        return lam, Y


class _ReducedOps:
    """Reduced pencil restricted to a fixed basis; reduction happens per t."""

    def __init__(self, problem: CavityProblem, basis: ReducedBasis, K: int):
        self.problem = problem
        self.basis = basis
        self.K = K
        self._pencil = _PencilCache(self._reduce, maxsize=16)

    def _reduce(self, t):
        A_red, B_red, _ = self.problem.reduced_pencil(
            self.basis.Z, t, space=self.basis.space
        )
        return A_red, B_red

    def pencil(self, t):
        return self._pencil(t)

    def derivative_pencil(self, t):
        if self.basis.space == "edge":
            A_p, B_p = self.problem.derivative_pencil(t)
            return reduce_system(self.basis.Z, A_p, B_p)
        # Cotree bases upscale through a t-dependent map, so the reduced
        # operator family is differentiated directly.
        h = self.problem.h_fd
        if t - h < 0.0:
            ts, ws = (t, t + h, t + 2 * h), (-3.0, 4.0, -1.0)
        elif t + h > 1.0:
            ts, ws = (t, t - h, t - 2 * h), (3.0, -4.0, 1.0)
        else:
            ts, ws = (t + h, t - h), (1.0, -1.0)
        mats = [self.pencil(tt) for tt in ts]
        scale = 1.0 / (2.0 * h)
        A_p = scale * sum(w * m[0] for w, m in zip(ws, mats))
        B_p = scale * sum(w * m[1] for w, m in zip(ws, mats))
        return A_p, B_p

    def solve_all(self, t):
        return solve_dense_gevp(*self.pencil(t))


def _seed_degenerate_clusters(ops, lam0, V0, config):
    """Align degenerate starting clusters with the directions they split into.

    The eigensolver returns an arbitrary rotation inside each multiple
    eigenspace at t = 0; projecting the eigenvectors from a small probe
    parameter back onto the eigenspace fixes physically meaningful tracked
    labels (the member that stays lower gets the lower index), consistently
    across system variants.
    """
    scan = min(lam0.size, config.K + config.overtrack + 2)
    clusters = _clusters_unsorted(lam0[:scan], config.delta_mult)
    if all(c.size < 2 for c in clusters):
        return V0
    delta = min(config.h / 4.0, 0.25)
    _, V_d = ops.solve_all(delta)
    _, B0 = ops.pencil(0.0)
    for idx in clusters:
        if idx.size < 2 or idx.max() >= V_d.shape[1]:
            continue
        idx = np.sort(idx)
        Q, kept = _b_orthonormal_block(V0[:, idx], B0)
        if kept < idx.size:
            continue
        probe = V_d[:, idx]
        coeff = Q.T @ (B0 @ probe)
        seeded, kq = _b_orthonormal_block(Q @ coeff, B0)
        if kq == idx.size:
            V0[:, idx] = seeded
    return V0


def _make_ops(config, problem, basis):
    if config.system == "high-fidelity":
        return _FullOps(problem, config.K)
    if config.system == "cotree":
        return _CotreeOps(problem, config.K)
    if basis is None:
        raise ValueError("reduced tracking needs a basis")
    return _ReducedOps(problem, basis, config.K)


def _rank_permutation(prev_lam, cur_lam, delta):
    """Rank change of the tracked family and whether it is a true crossing.

    Returns the step permutation sigma with sigma[old rank] = new rank for
    each tracked mode. A rank swap only counts as a crossing when the
    swapped modes were separated (outside one multiplicity cluster) before
    the step; the splitting of a degenerate cluster is not a crossing.
    """
    prev_rank = np.argsort(np.argsort(prev_lam, kind="stable"), kind="stable")
    cur_rank = np.argsort(np.argsort(cur_lam, kind="stable"), kind="stable")
    sigma = np.empty(len(prev_lam), dtype=int)
    sigma[prev_rank] = cur_rank
    crossing = False
    K = len(prev_lam)
    for a in range(K):
        for b in range(a + 1, K):
            swapped = (prev_rank[a] - prev_rank[b]) * (cur_rank[a] - cur_rank[b]) < 0
            if not swapped:
                continue
            scale = max(abs(prev_lam[a]), abs(prev_lam[b]), np.finfo(float).tiny)
            if abs(prev_lam[a] - prev_lam[b]) > delta * scale:
                crossing = True
    return tuple(int(s) for s in sigma), crossing, tuple(int(r) for r in cur_rank)


def track(config: TrackingConfig, problem: CavityProblem, basis: ReducedBasis | None = None) -> TrackingTrace:
    """March the tracked eigenpairs from t = 0 to t = 1.

    The normalization vector of the bordered system is reset to B(t) v(t)
    at every step. Steps that fail the correlation threshold first widen the
    candidate window, then halve the step size (at most max_halvings times)
    before aborting with a partial trace. The final step lands exactly on 1.
    """
    ops = _make_ops(config, problem, basis)
    trace = TrackingTrace(
        system=config.system,
        gauge=basis.gauge if basis is not None else problem.gauge,
    )

    lam0, V0 = ops.solve_all(0.0)
    if lam0.size < config.K:
        raise NumericalError(
            f"system provides only {lam0.size} eigenvalues, tracking needs {config.K}"
        )
    V0 = _seed_degenerate_clusters(ops, lam0, V0.copy(), config)
    lam_cur = lam0[: config.K].copy()
    V_cur = V0[:, : config.K].copy()
    trace.steps.append(
        TrackStep(
            t=0.0,
            lambdas=lam_cur.copy(),
            ranks=np.arange(config.K),
            perm=tuple(range(config.K)),
            rhos=np.full(config.K, np.nan),
            dlambdas=np.zeros(config.K),
            flags=(),
            window=min(lam0.size, config.K + config.overtrack),
        )
    )

    window = min(lam0.size, config.K + config.overtrack)
    lam_all = lam0
    positions = np.arange(config.K)
    t = 0.0
    while t < 1.0 - 1e-12:
        A_t, B_t = ops.pencil(t)
        Ap_t, Bp_t = ops.derivative_pencil(t)

        # Eigenvector/eigenvalue derivatives per tracked mode. Degeneracy is
        # judged against the full spectrum at t (an untracked partner of a
        # multiple eigenvalue still makes the bordered system singular), and
        # affected modes fall back to zero-order prediction.
        dlam = np.zeros(config.K)
        Vdot = np.zeros_like(V_cur)
        clustered = {
            k
            for k in range(config.K)
            if cluster_of(lam_all, int(positions[k]), config.delta_mult).size > 1
        }
        fallback_modes = []
        for k in range(config.K):
            if k in clustered:
                fallback_modes.append(k)
                continue
            c = B_t @ V_cur[:, k]
            try:
                v_p, l_p = eigen_derivatives(
                    A_t, B_t, Ap_t, Bp_t, V_cur[:, k], lam_cur[k], c,
                    residual_tol=config.residual_tol,
                )
            except SingularDerivativeError:
                if not config.derivative_fallback:
                    trace.status = "aborted-derivative-failure"
                    return trace
                fallback_modes.append(k)
                continue
            dlam[k] = l_p
            Vdot[:, k] = v_p

        h_cur = min(config.h, 1.0 - t)
        halvings = 0
        match = None
        while True:
            t_next = min(t + h_cur, 1.0)
            dt = t_next - t
            V_pred = V_cur + dt * Vdot
            lam_next, V_next = ops.solve_all(t_next)
            if lam_next.size < config.K:
                raise NumericalError(f"system lost eigenvalues at t={t_next!r}")
            _, B_next = ops.pencil(t_next)
            win = min(max(window, config.K + config.overtrack), lam_next.size)
            # Low correlation first widens the candidate window (tracked
            # modes may have been overtaken), then shrinks the step.
            while True:
                match = _cluster_aware_match(
                    V_pred, lam_cur, V_next[:, :win], B_next,
                    config.delta_mult, config.rho_min,
                )
                if match.ok or win >= lam_next.size:
                    break
                win = min(2 * win, lam_next.size)
            if match.ok or halvings >= config.max_halvings:
                break
            halvings += 1
            h_cur *= 0.5
        if not match.ok:
            trace.status = "aborted-low-correlation"
            return trace

        lam_new = lam_next[match.perm].copy()
        V_new = V_next[:, match.perm].copy()
        perm, crossing, ranks = _rank_permutation(lam_cur, lam_new, config.delta_mult)
        flags = []
        if crossing:
            flags.append("crossing-detected")
        if fallback_modes:
            flags.append("derivative-fallback")
        if halvings:
            flags.append("step-halved")
        trace.steps.append(
            TrackStep(
                t=t_next,
                lambdas=lam_new,
                ranks=np.array(ranks),
                perm=perm,
                rhos=match.rhos.copy(),
                dlambdas=dlam.copy(),
                flags=tuple(flags),
                window=win,
            )
        )
        window = max(config.K + config.overtrack, int(match.perm.max()) + 1 + config.overtrack)
        lam_cur, V_cur = lam_new, V_new
        lam_all = lam_next
        positions = match.perm
        t = t_next

    trace.status = "completed"
    return trace


def analytic_rectangle_table(a: float, count: int, max_index: int = 12):
    """Analytic cavity eigenvalues of the a x 1 rectangle with mode labels.

    lambda_(m,n) = pi^2 (m^2 / a^2 + n^2) for integer m, n >= 0, not both
    zero; returns the ``count`` smallest as (label, lambda) pairs.
    """
    entries = []
    for m in range(max_index + 1):
        for n in range(max_index + 1):
            if m == 0 and n == 0:
                continue
            lam = np.pi**2 * (m**2 / a**2 + n**2)
            entries.append((f"({m},{n})", lam))
    entries.sort(key=lambda e: (e[1], e[0]))
    return entries[:count]


def classify_endpoint(trace: TrackingTrace, analytic_table, mismatch_tol: float = 0.05):
    """Label each tracked mode with the analytic entry of closest eigenvalue.

    The assignment is injective (optimal bipartite matching on relative
    mismatch); tracked modes whose best mismatch exceeds mismatch_tol get an
    ``unclassified`` label carrying the observed mismatch. Duplicate analytic
    eigenvalues are assigned in deterministic table order.
    """
    if not trace.complete:
        raise NumericalError("trace did not reach t = 1; cannot classify endpoint")
    lam_end = trace.endpoint_lambdas()
    labels = [lbl for lbl, _ in analytic_table]
    values = np.array([v for _, v in analytic_table])
    if values.size < lam_end.size:
        raise ValueError("analytic table smaller than the tracked mode count")
    cost = np.abs(lam_end[:, None] - values[None, :]) / values[None, :]
    rows, cols = linear_sum_assignment(cost)
    out = [None] * lam_end.size
    for r, c in zip(rows, cols):
        mismatch = cost[r, c]
        if mismatch > mismatch_tol:
            out[r] = f"unclassified(mismatch={mismatch:.3g})"
        else:
            out[r] = labels[c]
    trace.labels = out
    return out
