import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cavityrb import (
    affine_stretch,
    assemble,
    identity_map,
    matrix_derivatives,
    sine_bump,
)
from cavityrb.errors import GeometryError
from cavityrb.geometry import MappingFamily

from conftest import mesh


def test_unit_cell_stiffness_hand_value():
    s = assemble(mesh(1), identity_map(), 0.0)
    np.testing.assert_allclose(s.A.toarray(), [[4.0]], rtol=1e-14)


def test_unit_cell_mass_hand_value():
    s = assemble(mesh(1), identity_map(), 0.0)
    np.testing.assert_allclose(s.B.toarray(), [[1.0 / 3.0]], rtol=1e-14)


def test_unit_cell_gradient_empty():
    s = assemble(mesh(1), identity_map(), 0.0)
    assert s.G.shape == (1, 0)
    assert s.C.shape == (1, 0)


def test_unit_cell_affine_closed_forms():
    # single interior edge: A(t) = 4/a, B(t) = (1/a + a)/6
    fam = affine_stretch(2.5)
    for t in (0.0, 0.3, 1.0):
        a = fam.stretch(t)
        s = assemble(mesh(1), fam, t)
        np.testing.assert_allclose(s.A[0, 0], 4.0 / a, rtol=1e-14)
        np.testing.assert_allclose(s.B[0, 0], (1.0 / a + a) / 6.0, rtol=1e-14)


@given(
    st.sampled_from([2, 4]),
    st.sampled_from(["affine", "bump"]),
    st.floats(min_value=0.0, max_value=1.0),
)
def test_structural_identities(n, kind, t):
    fam = affine_stretch(2.0) if kind == "affine" else sine_bump(0.3)
    s = assemble(mesh(n), fam, t)
    a_scale = abs(s.A).max()
    b_scale = abs(s.B).max()
    if s.n_grad:
        assert abs(s.A @ s.G).max() <= 1e-12 * a_scale
        assert abs(s.C - s.B @ s.G).max() <= 1e-12 * b_scale
    d = (s.A - s.A.T)
    assert abs(d).max() if d.nnz else 0.0 <= 1e-15 * a_scale


def test_mass_positive_definite():
    import scipy.linalg

    s = assemble(mesh(4), sine_bump(0.3), 0.7)
    scipy.linalg.cholesky(s.B.toarray())  # raises on failure


def test_stiffness_positive_semidefinite():
    s = assemble(mesh(4), affine_stretch(2.5), 0.4)
    lam = np.linalg.eigvalsh(s.A.toarray())
    assert lam.min() >= -1e-10 * abs(lam).max()


def test_gradient_incidence_column():
    # center vertex of the 2x2 mesh touches every interior edge
    s = assemble(mesh(2), identity_map(), 0.0)
    col = s.G.toarray()[:, 0]
    assert np.abs(col).sum() == 8
    assert set(np.unique(col)) == {-1.0, 1.0}


def test_gradient_independent_of_t():
    m = mesh(3)
    fam = sine_bump(0.3)
    g0 = assemble(m, fam, 0.0).G.toarray()
    g1 = assemble(m, fam, 1.0).G.toarray()
    np.testing.assert_array_equal(g0, g1)


def test_negative_jacobian_rejected():
    bad = MappingFamily(kind="affine-stretch", stretch_end=-1.0)
    with pytest.raises(GeometryError) as err:
        assemble(mesh(2), bad, 1.0)
    assert "t=" in str(err.value)


def test_derivative_of_identity_family_is_zero():
    Ap, Bp = matrix_derivatives(mesh(2), identity_map(), 0.5, 1e-4)
    assert abs(Ap).max() if Ap.nnz else 0.0 == 0.0
    assert abs(Bp).max() if Bp.nnz else 0.0 == 0.0


def test_derivative_matches_closed_form():
    # d/dt of the single-edge system: A' = -4 a'/a^2, B' = a'(1 - 1/a^2)/6
    fam = affine_stretch(2.5)
    t = 0.4
    a, ap = fam.stretch(t), fam.stretch_rate()
    Ap, Bp = matrix_derivatives(mesh(1), fam, t, 1e-5)
    np.testing.assert_allclose(Ap[0, 0], -4.0 * ap / a**2, rtol=1e-7)
    np.testing.assert_allclose(Bp[0, 0], ap * (1.0 - 1.0 / a**2) / 6.0, rtol=1e-7)


def test_derivative_richardson_rate():
    # halving the step shrinks the truncation error by about four
    fam = affine_stretch(2.5)
    t = 0.4
    a, ap = fam.stretch(t), fam.stretch_rate()
    exact = -4.0 * ap / a**2
    errs = []
    for h in (1e-2, 5e-3):
        Ap, _ = matrix_derivatives(mesh(1), fam, t, h)
        errs.append(abs(Ap[0, 0] - exact))
    ratio = errs[0] / errs[1]
    assert 3.0 < ratio < 5.0


def test_derivative_one_sided_at_endpoints():
    fam = affine_stretch(2.5)
    for t in (0.0, 1.0):
        a, ap = fam.stretch(t), fam.stretch_rate()
        Ap, _ = matrix_derivatives(mesh(1), fam, t, 1e-4)
        np.testing.assert_allclose(Ap[0, 0], -4.0 * ap / a**2, rtol=1e-6)


def test_derivative_rejects_bad_step():
    with pytest.raises(ValueError):
        matrix_derivatives(mesh(1), affine_stretch(2.5), 0.5, 0.0)


def test_derivative_sparsity_pattern_matches():
    m = mesh(4)
    fam = sine_bump(0.3)
    s = assemble(m, fam, 0.5)
    Ap, Bp = matrix_derivatives(m, fam, 0.5, 1e-4)
    assert Ap.shape == s.A.shape and Bp.shape == s.B.shape
    a_pat = set(zip(*s.A.nonzero()))
    ap_pat = set(zip(*Ap.nonzero()))
    assert ap_pat <= a_pat
