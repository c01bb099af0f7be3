import numpy as np
import pytest

from cavityrb import (
    TrackingConfig,
    analytic_rectangle_table,
    classify_endpoint,
    correlation_match,
    eigen_derivatives,
    solve_gevp,
    taylor_predict,
    track,
)
from cavityrb.errors import NumericalError, SingularDerivativeError
from cavityrb.tracking import TrackingTrace, TrackStep

from conftest import make_problem


def test_derivative_stationary_family():
    problem = make_problem(n=4, family="identity")
    s = problem.system(0.3)
    sol = solve_gevp(s.A, s.B, 4)
    k = 2  # simple eigenvalue of the square
    v, lam = sol.vectors[:, k], sol.lambdas[k]
    zero = s.A * 0.0
    vp, lp = eigen_derivatives(s.A, s.B, zero, zero, v, lam, s.B @ v)
    assert abs(lp) <= 1e-10 * lam
    assert np.linalg.norm(vp) <= 1e-8 * np.linalg.norm(v)


def test_derivative_unit_cell_closed_form():
    # lambda(t) = 24 / (1 + a^2) for the single-edge system
    problem = make_problem(n=1, family="affine")
    fam = problem.family
    t = 0.3
    s = problem.system(t)
    Ap, Bp = problem.derivative_pencil(t)
    sol = solve_gevp(s.A, s.B, 1)
    v, lam = sol.vectors[:, 0], sol.lambdas[0]
    _, lp = eigen_derivatives(s.A, s.B, Ap, Bp, v, lam, s.B @ v)
    a, ap = fam.stretch(t), fam.stretch_rate()
    exact = -48.0 * a * ap / (1 + a * a) ** 2
    np.testing.assert_allclose(lp, exact, rtol=1e-6)


def test_derivative_matches_analytic_stretch_mode():
    problem = make_problem(n=16, family="affine")
    t = 0.2
    s = problem.system(t)
    Ap, Bp = problem.derivative_pencil(t)
    sol = solve_gevp(s.A, s.B, 2)
    a, ap = problem.family.stretch(t), problem.family.stretch_rate()
    # mode (1,0) is the smallest for t > 0
    v, lam = sol.vectors[:, 0], sol.lambdas[0]
    _, lp = eigen_derivatives(s.A, s.B, Ap, Bp, v, lam, s.B @ v)
    exact = -2.0 * np.pi**2 * ap / a**3
    assert abs(lp - exact) / abs(exact) < 0.01


def test_derivative_finite_difference_oracle():
    problem = make_problem(n=8, family="affine")
    t = 0.35
    s = problem.system(t)
    Ap, Bp = problem.derivative_pencil(t)
    sol = solve_gevp(s.A, s.B, 1)
    v, lam = sol.vectors[:, 0], sol.lambdas[0]
    _, lp = eigen_derivatives(s.A, s.B, Ap, Bp, v, lam, s.B @ v)
    errs = []
    for delta in (2e-3, 1e-3):
        lam_p = problem.solve_full(t + delta, 1).lambdas[0]
        lam_m = problem.solve_full(t - delta, 1).lambdas[0]
        errs.append(abs((lam_p - lam_m) / (2 * delta) - lp))
    ratio = errs[0] / errs[1]
    assert 3.0 < ratio < 5.2


def test_derivative_singular_at_degenerate_pair():
    problem = make_problem(n=8, family="identity")
    s = problem.system(0.0)
    Ap, Bp = problem.derivative_pencil(0.0)
    sol = solve_gevp(s.A, s.B, 2)  # exactly degenerate pair
    v, lam = sol.vectors[:, 0], sol.lambdas[0]
    with pytest.raises((SingularDerivativeError, ValueError)):
        eigen_derivatives(s.A, s.B, Ap, Bp, v, lam, s.B @ v)


def test_taylor_predict_trivial_cases(rng):
    v = rng.standard_normal(5)
    vp = rng.standard_normal(5)
    out_v, out_lam = taylor_predict(v, 2.0, vp, -3.0, 0.0)
    np.testing.assert_array_equal(out_v, v)
    assert out_lam == 2.0
    out_v, out_lam = taylor_predict(v, 2.0, 0 * vp, 0.0, 0.7)
    assert out_lam == 2.0
    np.testing.assert_array_equal(out_v, v)


def test_taylor_predict_second_order():
    problem = make_problem(n=4, family="affine")
    t = 0.3
    s = problem.system(t)
    Ap, Bp = problem.derivative_pencil(t)
    sol = solve_gevp(s.A, s.B, 1)
    v, lam = sol.vectors[:, 0], sol.lambdas[0]
    _, lp = eigen_derivatives(s.A, s.B, Ap, Bp, v, lam, s.B @ v)
    errs = []
    for h in (0.1, 0.05, 0.025):
        _, lam_pred = taylor_predict(v, lam, 0 * v, lp, h)
        lam_true = problem.solve_full(t + h, 1).lambdas[0]
        errs.append(abs(lam_pred - lam_true))
    assert errs[0] / errs[1] > 3.0
    assert errs[1] / errs[2] > 3.0


def test_correlation_identity(rng):
    B = np.eye(6)
    V = np.linalg.qr(rng.standard_normal((6, 3)))[0]
    m = correlation_match(V, V, B)
    np.testing.assert_array_equal(m.perm, [0, 1, 2])
    np.testing.assert_allclose(m.rhos, 1.0, atol=1e-12)


def test_correlation_recovers_swap(rng):
    B = np.diag(rng.uniform(0.5, 2.0, 6))
    V = rng.standard_normal((6, 3))
    swapped = V[:, [1, 0, 2]]
    m = correlation_match(V, swapped, B)
    np.testing.assert_array_equal(m.perm, [1, 0, 2])
    np.testing.assert_allclose(m.rhos, 1.0, atol=1e-12)


def test_correlation_rotation_in_degenerate_plane(rng):
    # predictions rotated ten degrees inside a 2D eigenspace still match
    B = np.eye(8)
    Q = np.linalg.qr(rng.standard_normal((8, 2)))[0]
    theta = np.deg2rad(10.0)
    R = np.array(
        [[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]]
    )
    pred = Q @ R
    m = correlation_match(pred, Q, B)
    assert m.rhos.min() >= np.cos(theta) - 1e-12
    assert sorted(m.perm) == [0, 1]


def test_correlation_needs_enough_candidates(rng):
    with pytest.raises(ValueError):
        correlation_match(rng.standard_normal((5, 3)), rng.standard_normal((5, 2)), np.eye(5))


def test_correlation_low_flag(rng):
    a = np.eye(4)[:, :1]
    b = np.eye(4)[:, 1:2]
    m = correlation_match(a, b, np.eye(4), rho_min=0.9)
    assert not m.ok


def test_track_identity_family():
    problem = make_problem(n=4, family="identity")
    trace = track(TrackingConfig(K=3, h=0.25, system="high-fidelity"), problem)
    assert trace.complete
    assert len(trace.crossings()) == 0
    first = trace.steps[0].lambdas
    for step in trace.steps:
        np.testing.assert_allclose(step.lambdas, first, rtol=1e-12)
        assert step.perm == (0, 1, 2)


def test_track_lands_exactly_on_one():
    problem = make_problem(n=4, family="affine")
    trace = track(TrackingConfig(K=3, h=0.3, system="high-fidelity"), problem)
    assert trace.steps[-1].t == 1.0
    assert trace.complete


def test_track_multiset_matches_sorted_solver_values():
    problem = make_problem(n=8, family="affine")
    trace = track(TrackingConfig(K=4, h=0.2, system="high-fidelity"), problem)
    for step in trace.steps:
        sol = problem.solve_full(step.t, 10)
        tracked = np.sort(step.lambdas)
        # tracked values are solver values (possibly beyond the first K)
        for lam in tracked:
            assert np.min(np.abs(sol.lambdas - lam)) <= 1e-9 * lam


def test_track_cotree_agrees_with_full():
    problem = make_problem(n=8, family="affine")
    a = track(TrackingConfig(K=4, h=0.2, system="high-fidelity"), problem)
    b = track(TrackingConfig(K=4, h=0.2, system="cotree"), problem)
    for sa, sb in zip(a.steps, b.steps):
        np.testing.assert_allclose(sb.lambdas, sa.lambdas, rtol=1e-9)


def test_classify_endpoint_table_and_errors():
    table = analytic_rectangle_table(2.5, 6)
    assert table[0][0] == "(1,0)"
    np.testing.assert_allclose(table[0][1], np.pi**2 / 6.25)
    trace = TrackingTrace(status="aborted-low-correlation")
    with pytest.raises(NumericalError):
        classify_endpoint(trace, table)


def test_classify_degenerate_table_entries():
    # two tracked modes on a degenerate analytic pair get both labels
    steps = [
        TrackStep(
            t=1.0,
            lambdas=np.array([4.0, 4.0]),
            ranks=np.arange(2),
            perm=(0, 1),
            rhos=np.ones(2),
            dlambdas=np.zeros(2),
        )
    ]
    trace = TrackingTrace(steps=steps, status="completed")
    labels = classify_endpoint(trace, [("a", 4.0), ("b", 4.0), ("c", 9.0)])
    assert sorted(labels) == ["a", "b"]


def test_classify_mismatch_marked_unclassified():
    steps = [
        TrackStep(
            t=1.0,
            lambdas=np.array([40.0]),
            ranks=np.arange(1),
            perm=(0,),
            rhos=np.ones(1),
            dlambdas=np.zeros(1),
        )
    ]
    trace = TrackingTrace(steps=steps, status="completed")
    labels = classify_endpoint(trace, [("a", 4.0), ("b", 9.0)])
    assert labels[0].startswith("unclassified")


def test_track_config_validation():
    with pytest.raises(ValueError):
        TrackingConfig(K=0, h=0.1)
    with pytest.raises(ValueError):
        TrackingConfig(K=2, h=0.0)
    with pytest.raises(ValueError):
        TrackingConfig(K=2, h=0.1, rho_min=1.5)
    with pytest.raises(ValueError):
        TrackingConfig(K=2, h=0.1, system="bogus")
