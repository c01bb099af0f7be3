"""Run orchestration: basis construction, error studies, timing benchmarks.

Timing convention for the benchmark: raw matrix assembly and offline basis
construction are excluded (warm caches), everything t-dependent downstream
is included. In particular the cotree variant pays for its per-parameter
condensation and the reduced variants pay for their per-parameter
projections, which is exactly the online cost of each gauge.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from statistics import mean, median

import numpy as np

from .config import RunConfig, config_to_dict
from .errors import CavityError, RankDeficiencyError
from .eigensolve import solve_dense_gevp
from .geometry import affine_stretch, build_reference_mesh, sine_bump
from .greedy import GreedyConfig, greedy_extend
from .pod import ReducedBasis, collect_snapshots, pod_basis
from .problem import CavityProblem
from .tracking import (
    TrackingConfig,
    analytic_rectangle_table,
    classify_endpoint,
    track,
)


def build_problem(cfg: RunConfig, gauge: str | None = None, mesh=None) -> CavityProblem:
    if mesh is None:
        mesh = build_reference_mesh(cfg.mesh_n)
    if cfg.family == "affine-stretch":
        family = affine_stretch(cfg.stretch_a1)
    else:
        family = sine_bump(cfg.bump_beta)
    return CavityProblem(
        mesh=mesh,
        family=family,
        gauge=gauge or cfg.gauge,
        null_tol=cfg.null_tol,
        delta_mult=cfg.delta_mult,
        h_fd=cfg.h_fd,
    )


def initial_basis(problem: CavityProblem, cfg: RunConfig):
    """Snapshots, POD, and the strategy's spurious-mode cleanup.

    When the snapshot set has less numerical rank than the requested
    initial size, the basis degrades to the achievable size with a warning
    (strongly correlated snapshot families hit the POD rank floor).
    """
    ts = np.linspace(0.0, 1.0, cfg.N_pod)
    snapshots = collect_snapshots(problem, ts, cfg.K)
    n_init = cfg.resolved_n_init()
    try:
        basis = pod_basis(
            snapshots.Y,
            problem.basis_metric,
            n_init,
            t_ref=problem.t_ref,
            gauge=problem.gauge,
            space=problem.basis_space,
        )
    except RankDeficiencyError as exc:
        warnings.warn(
            f"snapshot rank supports only {exc.achievable} POD modes, "
            f"requested {n_init}; continuing with the achievable size",
            stacklevel=2,
        )
        basis = pod_basis(
            snapshots.Y,
            problem.basis_metric,
            exc.achievable,
            t_ref=problem.t_ref,
            gauge=problem.gauge,
            space=problem.basis_space,
        )
    Z_clean, dropped = problem.clean_basis(basis.Z)
    if problem.gauge == "projection":
        Z_clean, kept = problem.orthonormalize(Z_clean)
        dropped = [j for j in range(basis.size) if j not in kept]
    if dropped:
        warnings.warn(
            f"spurious-mode cleanup dropped {len(dropped)} initial basis columns",
            stacklevel=2,
        )
    provenance = [p for j, p in enumerate(basis.provenance) if j not in set(dropped)]
    basis = ReducedBasis(
        Z=Z_clean, t_ref=basis.t_ref, gauge=basis.gauge, provenance=provenance,
        space=basis.space,
    )
    return basis, snapshots


def build_basis(problem: CavityProblem, cfg: RunConfig, callback=None):
    """Full offline phase: POD initialization plus greedy extension."""
    basis, snapshots = initial_basis(problem, cfg)
    gcfg = GreedyConfig(
        K=cfg.K,
        tau=cfg.tau,
        N_init=basis.size,
        xi_train=np.linspace(0.0, 1.0, cfg.N_train),
        tol=cfg.tol,
        N_max=cfg.N_max,
        delta_mult=cfg.delta_mult,
        residual_form=cfg.residual_form,
    )
    extended, log = greedy_extend(basis, gcfg, problem, callback=callback)
    return extended, log, snapshots


# --------------------------------------------------------------------- study


@dataclass
class ErrorStudy:
    """Signed average and max-absolute eigenvalue errors over a test set.

    truth[j, i] holds the i-th high-fidelity eigenvalue at test parameter j;
    rows accumulate (basis_size, mode, avg signed, max abs, null leak).
    """

    problem: CavityProblem
    cfg: RunConfig
    ts_test: np.ndarray
    truth: np.ndarray
    rows: list = field(default_factory=list)

    @classmethod
    def prepare(cls, problem: CavityProblem, cfg: RunConfig):
        rng = np.random.default_rng(cfg.seed)
        ts_test = rng.uniform(0.0, 1.0, cfg.N_test)
        truth = np.empty((cfg.N_test, cfg.K))
        for j, t in enumerate(ts_test):
            truth[j] = problem.solve_full(float(t), cfg.K).lambdas
        return cls(problem=problem, cfg=cfg, ts_test=ts_test, truth=truth)

    def evaluate(self, Z: np.ndarray):
        K = self.cfg.K
        signed = np.zeros(K)
        max_abs = np.zeros(K)
        leak = 0
        for j, t in enumerate(self.ts_test):
            A_red, B_red, _ = self.problem.reduced_pencil(Z, float(t))
            lam, _ = solve_dense_gevp(A_red, B_red)
            lam_ref = max(float(np.abs(lam).max()), np.finfo(float).tiny)
            leak = max(leak, int((lam < self.cfg.null_tol * lam_ref).sum()))
            take = min(K, lam.size)
            rel = (lam[:take] - self.truth[j, :take]) / self.truth[j, :take]
            signed[:take] += rel
            max_abs[:take] = np.maximum(max_abs[:take], np.abs(rel))
        signed /= len(self.ts_test)
        size = Z.shape[1]
        for i in range(K):
            self.rows.append((size, i, signed[i], max_abs[i], leak))

    def final_errors(self):
        """(avg signed, max abs) per mode at the largest recorded size."""
        if not self.rows:
            raise CavityError("error study has no evaluations")
        last = max(r[0] for r in self.rows)
        sel = [r for r in self.rows if r[0] == last]
        return (
            np.array([r[2] for r in sel]),
            np.array([r[3] for r in sel]),
        )


def run_error_study(cfg: RunConfig, problem: CavityProblem | None = None):
    """Greedy run instrumented with per-size test errors.

    Returns (study, basis, log). The study rows include the initial POD
    basis and every greedy extension.
    """
    if problem is None:
        problem = build_problem(cfg)
    study = ErrorStudy.prepare(problem, cfg)

    def callback(iteration, Z):
        study.evaluate(Z)

    basis0, snapshots = initial_basis(problem, cfg)
    study.evaluate(basis0.Z)
    gcfg = GreedyConfig(
        K=cfg.K,
        tau=cfg.tau,
        N_init=basis0.size,
        xi_train=np.linspace(0.0, 1.0, cfg.N_train),
        tol=cfg.tol,
        N_max=cfg.N_max,
        delta_mult=cfg.delta_mult,
        residual_form=cfg.residual_form,
    )
    basis, log = greedy_extend(basis0, gcfg, problem, callback=callback)
    return study, basis, log


# --------------------------------------------------------------------- bench


def _time_callable(fn, repetitions: int):
    """Median/mean seconds over ``repetitions`` runs after one warm-up."""
    fn()  # warm-up, also fills raw assembly caches
    times = []
    for _ in range(repetitions):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return median(times), mean(times)


@dataclass
class BenchVariant:
    label: str
    dof_count: int
    evp_median: float = float("nan")
    evp_mean: float = float("nan")
    track_median: float = float("nan")
    track_mean: float = float("nan")
    status: str = "ok"


def run_bench(cfg: RunConfig, prebuilt: dict | None = None):
    """Time one eigensolve and one full tracking per system variant.

    Variants: ungauged high-fidelity, cotree-condensed high-fidelity, and
    the reduced bases cleaned by tree-cotree and by fixed-parameter
    orthogonalization, both built with identical budgets. Returns a report
    dict with per-variant rows and the timing protocol.
    """
    if cfg.repetitions < 3:
        raise CavityError("benchmark needs at least 3 repetitions")
    prebuilt = dict(prebuilt or {})
    mesh = build_reference_mesh(cfg.mesh_n)
    problem = build_problem(cfg, gauge="tree-cotree", mesh=mesh)

    bases = {}
    for gauge in ("tree-cotree", "gram-schmidt"):
        if gauge in prebuilt:
            bases[gauge] = prebuilt[gauge]
            continue
        gauge_problem = build_problem(cfg, gauge=gauge, mesh=mesh)
        bases[gauge], _, _ = build_basis(gauge_problem, cfg)

    t_evp = 0.5
    k = cfg.K

    def evp_full():
        problem.solve_full(t_evp, k)

    def evp_cotree():
        problem.solve_condensed(t_evp, k)

    def make_evp_reduced(basis):
        def _run():
            A_red, B_red, _ = problem.reduced_pencil(
                basis.Z, t_evp, space=basis.space
            )
            solve_dense_gevp(A_red, B_red)

        return _run

    def make_track(system, basis=None):
        tcfg = TrackingConfig(
            K=cfg.K,
            h=cfg.track_h,
            system=system,
            rho_min=cfg.rho_min,
            max_halvings=cfg.max_halvings,
            overtrack=cfg.tau,
            delta_mult=cfg.delta_mult,
        )

        def _run():
            trace = track(tcfg, problem, basis=basis)
            if not trace.complete:
                raise CavityError(f"benchmark tracking aborted: {trace.status}")

        return _run

    plan = [
        ("high-fidelity", problem.n_curl, evp_full, make_track("high-fidelity")),
        (
            "high-fidelity-cotree",
            problem.n_curl - problem.n_grad,
            evp_cotree,
            make_track("cotree"),
        ),
        (
            "rb-tree-cotree",
            bases["tree-cotree"].size,
            make_evp_reduced(bases["tree-cotree"]),
            make_track("reduced", bases["tree-cotree"]),
        ),
        (
            "rb-gram-schmidt",
            bases["gram-schmidt"].size,
            make_evp_reduced(bases["gram-schmidt"]),
            make_track("reduced", bases["gram-schmidt"]),
        ),
    ]

    rows = []
    for label, dof, evp_fn, track_fn in plan:
        variant = BenchVariant(label=label, dof_count=dof)
        try:
            variant.evp_median, variant.evp_mean = _time_callable(
                evp_fn, cfg.repetitions
            )
            variant.track_median, variant.track_mean = _time_callable(
                track_fn, cfg.repetitions
            )
        except CavityError as exc:
            variant.status = f"failed: {exc}"
        rows.append(variant)

    ref = rows[0]
    report_rows = []
    for variant in rows:
        report_rows.append(
            {
                "label": variant.label,
                "dof_count": variant.dof_count,
                "evp_time_median": variant.evp_median,
                "evp_time_mean": variant.evp_mean,
                "evp_speedup": ref.evp_median / variant.evp_median
                if variant.status == "ok"
                else float("nan"),
                "tracking_time_median": variant.track_median,
                "tracking_time_mean": variant.track_mean,
                "tracking_speedup": ref.track_median / variant.track_median
                if variant.status == "ok"
                else float("nan"),
                "status": variant.status,
            }
        )
    return {
        "rows": report_rows,
        "protocol": {
            "repetitions": cfg.repetitions,
            "aggregation": "median (mean reported alongside)",
            "warmup_runs_discarded": 1,
            "excluded": "raw matrix assembly and offline basis construction",
            "included": "per-parameter condensation, reduction and all solves",
        },
    }


# ------------------------------------------------------------------ pipeline


def run_pipeline(cfg: RunConfig, with_bench: bool = True):
    """Offline-online pipeline; returns (manifest, artifacts).

    Stages: snapshots and POD, cleanup, greedy (instrumented with the error
    study), basis serialization data, tracking, endpoint classification,
    error study rows, benchmark. A stage failure is recorded and the
    remaining stages are skipped. Nothing in the manifest depends on wall
    clock, so a reproduced run yields a byte-identical manifest.
    """
    manifest = {
        "schema": 1,
        "config": config_to_dict(cfg),
        "stages": [],
        "warnings": [],
    }
    artifacts = {}
    if cfg.gauge == "none":
        manifest["warnings"].append(
            "gauge=none: snapshots may contain spurious gradient content"
        )

    state = {"failed": False}

    def run_stage(name, fn):
        record = {"name": name, "status": "skipped", "error": None}
        manifest["stages"].append(record)
        if state["failed"]:
            return
        try:
            fn()
            record["status"] = "ok"
        except CavityError as exc:
            record["status"] = "failed"
            record["error"] = str(exc)
            state["failed"] = True

    def _build_initial():
        state["problem"] = build_problem(cfg)
        state["study"] = ErrorStudy.prepare(state["problem"], cfg)
        basis0, snapshots = initial_basis(state["problem"], cfg)
        state["basis0"] = basis0
        state["snapshots"] = snapshots

    def _greedy():
        study = state["study"]
        study.evaluate(state["basis0"].Z)
        gcfg = GreedyConfig(
            K=cfg.K,
            tau=cfg.tau,
            N_init=state["basis0"].size,
            xi_train=np.linspace(0.0, 1.0, cfg.N_train),
            tol=cfg.tol,
            N_max=cfg.N_max,
            delta_mult=cfg.delta_mult,
            residual_form=cfg.residual_form,
        )
        basis, log = greedy_extend(
            state["basis0"], gcfg, state["problem"],
            callback=lambda it, Z: study.evaluate(Z),
        )
        state["basis"] = basis
        artifacts["greedy_log"] = log
        artifacts["basis"] = basis
        manifest["stages"][-1]["detail"] = (
            f"status={log.status}, basis_size={basis.size}"
        )
        if log.status != "converged":
            manifest["warnings"].append(f"greedy ended with status {log.status}")

    def _serialize():
        artifacts["tree_cotree"] = state["problem"].tree_cotree

    def _track():
        tcfg = TrackingConfig(
            K=cfg.K,
            h=cfg.track_h,
            system=cfg.track_system,
            rho_min=cfg.rho_min,
            max_halvings=cfg.max_halvings,
            overtrack=cfg.tau,
            delta_mult=cfg.delta_mult,
        )
        basis = state.get("basis") if cfg.track_system == "reduced" else None
        trace = track(tcfg, state["problem"], basis=basis)
        if not trace.complete:
            raise CavityError(f"tracking aborted: {trace.status}")
        artifacts["trace"] = trace

    def _classify():
        if cfg.family != "affine-stretch":
            manifest["warnings"].append(
                "classification skipped: no analytic endpoint table for this family"
            )
            return
        table = analytic_rectangle_table(cfg.stretch_a1, cfg.K + 12)
        artifacts["labels"] = classify_endpoint(artifacts["trace"], table)

    def _study_rows():
        artifacts["error_study"] = state["study"]

    def _bench():
        prebuilt = {}
        if cfg.gauge in ("tree-cotree", "gram-schmidt") and "basis" in state:
            prebuilt[cfg.gauge] = state["basis"]
        artifacts["bench"] = run_bench(cfg, prebuilt=prebuilt)

    run_stage("snapshots-pod-cleanup", _build_initial)
    run_stage("greedy", _greedy)
    run_stage("serialize", _serialize)
    run_stage("track", _track)
    run_stage("classify", _classify)
    run_stage("error-study", _study_rows)
    if with_bench:
        run_stage("bench", _bench)

    return manifest, artifacts
