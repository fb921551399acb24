import numpy as np
import pytest
import scipy.sparse as sp

from ocpfem.errors import CoefficientError, OcpFemError
from ocpfem.fem import (
    CoefficientSet,
    ExactField,
    P0Field,
    P1Field,
    assemble_bilinear,
    assemble_load,
    assemble_mass,
    bilinear_load,
    constant,
    error_norms,
    l2_project_p0,
    p0_l2_difference,
    p1_p0_coupling,
    poincare_constant,
    ritz_project,
    solve_spd,
)
from ocpfem.mesh import rectangle_mesh, unit_square_mesh
from ocpfem.verify import SIN2, fit_rate

PI = np.pi
IDENT = CoefficientSet.identity()


def test_center_stiffness_entry():
    s = assemble_bilinear(unit_square_mesh(2), IDENT)
    assert s.matrix.shape == (1, 1)
    assert abs(s.matrix[0, 0] - 4.0) <= 1e-14


def test_linearity_in_coefficient():
    m = unit_square_mesh(5)
    two = CoefficientSet.isotropic(lambda x: np.full(len(x), 2.0), mu=2.0, beta=2.0)
    a = assemble_bilinear(m, IDENT).full
    b = assemble_bilinear(m, two).full
    assert abs(b - 2 * a).max() <= 1e-13


def test_mass_only_row_sums_are_lumped_areas():
    m = unit_square_mesh(4)
    zero_a = CoefficientSet(A=lambda x: np.zeros((len(x), 2, 2)), c=lambda x: np.ones(len(x)),
                            mu=0.0, alpha=0.0, beta=1.0)
    K = assemble_bilinear(m, zero_a, check=False).full
    lumped = np.bincount(m.cells.ravel(), weights=np.repeat(m.areas / 3, 3), minlength=m.n_vertices)
    np.testing.assert_allclose(np.asarray(K.sum(axis=1)).ravel(), lumped, atol=1e-14)
    assert abs(K - assemble_mass(m)).max() <= 1e-14


def test_stiffness_symmetric_and_kills_constants():
    m = unit_square_mesh(6)
    coeff = CoefficientSet.checkerboard(10.0, 0.5)
    K = assemble_bilinear(m, coeff).full
    assert abs(K - K.T).max() <= 1e-12 * abs(K).max()
    assert np.abs(K @ np.ones(m.n_vertices)).max() <= 1e-12


def test_invalid_coefficients_rejected():
    m = unit_square_mesh(3)
    neg_c = CoefficientSet.isotropic(lambda x: np.ones(len(x)), lambda x: -np.ones(len(x)), mu=1.0, beta=1.0)
    with pytest.raises(CoefficientError):
        assemble_bilinear(m, neg_c)
    weak = CoefficientSet.isotropic(lambda x: np.full(len(x), 0.5), mu=1.0, beta=1.0)
    with pytest.raises(CoefficientError):
        assemble_bilinear(m, weak)
    nan = CoefficientSet.isotropic(lambda x: np.full(len(x), np.nan), mu=1.0, beta=1.0)
    with pytest.raises(CoefficientError):
        assemble_bilinear(m, nan)
    with pytest.raises(CoefficientError):
        CoefficientSet.checkerboard(-1.0, 0.25)


def test_checkerboard_values():
    c = CoefficientSet.checkerboard(100.0, 0.5)
    m = unit_square_mesh(4)
    A, _ = c.evaluate(m.centroids[:, None, :], m.centroids)
    a = A[:, 0, 0, 0]
    assert set(np.unique(a)) == {1.0, 100.0}
    # squares of side 1/4: (0,0) square has 1, (1,0) has 100
    k = m.locate(np.array([[0.1, 0.05], [0.35, 0.05], [0.35, 0.3]]))
    np.testing.assert_array_equal(a[k], [1.0, 100.0, 1.0])


def test_load_vector_examples():
    m = unit_square_mesh(5)
    assert abs(assemble_load(m, constant(1.0)).sum() - 1.0) <= 1e-13
    assert not assemble_load(m, constant(0.0)).any()
    assert abs(assemble_load(m, lambda x: x[:, 0]).sum() - 0.5) <= 1e-12
    with pytest.raises(OcpFemError):
        assemble_load(m, constant(1.0), quad_degree=3)


def test_solve_spd_consistency():
    s = assemble_bilinear(unit_square_mesh(6), IDENT)
    w = np.random.default_rng(1).standard_normal(s.dimension)
    fld = solve_spd(s, s.matrix @ w)
    np.testing.assert_allclose(fld.values[s.dofs], w, atol=1e-10)
    eye = type(s)(mesh=s.mesh, full=s.full, matrix=sp.identity(s.dimension, format="csr"), dofs=s.dofs)
    np.testing.assert_allclose(solve_spd(eye, w).values[s.dofs], w, atol=1e-14)


def _poisson_errors(n):
    m = unit_square_mesh(n)
    s = assemble_bilinear(m, IDENT)
    fld = solve_spd(s, assemble_load(m, lambda x: 2 * PI**2 * SIN2(x)))
    return error_norms(m, IDENT, fld, SIN2)


def test_poisson_accuracy_and_rates():
    assert _poisson_errors(32)[0] < 4e-3
    h = [np.sqrt(2) / n for n in (8, 16, 32)]
    errs = [_poisson_errors(n) for n in (8, 16, 32)]
    assert 1.8 <= fit_rate(list(zip(h, [e[0] for e in errs]))) <= 2.2
    assert 0.9 <= fit_rate(list(zip(h, [e[1] for e in errs]))) <= 1.1


def test_ritz_projection_idempotent_and_rates():
    m = unit_square_mesh(6)
    v = P1Field.interpolate(m, lambda x: x[:, 0] * (1 - x[:, 0]) * x[:, 1] * (1 - x[:, 1]))
    np.testing.assert_allclose(ritz_project(m, IDENT, v).values, v.values, atol=1e-10)
    rows = []
    for n in (8, 16, 32):
        mm = unit_square_mesh(n)
        rows.append((1.0 / n, error_norms(mm, IDENT, ritz_project(mm, IDENT, SIN2), SIN2)))
    assert 1.8 <= fit_rate([(h, e[0]) for h, e in rows]) <= 2.2
    assert 0.9 <= fit_rate([(h, e[1]) for h, e in rows]) <= 1.1


def test_galerkin_orthogonality():
    m = unit_square_mesh(10)
    coeff = CoefficientSet.checkerboard(10.0, 0.2)
    s = assemble_bilinear(m, coeff)
    r = ritz_project(m, coeff, SIN2, system=s)
    resid = bilinear_load(m, coeff, SIN2) - s.full @ r.values
    rng = np.random.default_rng(3)
    for _ in range(20):
        v = np.zeros(m.n_vertices)
        v[s.dofs] = rng.standard_normal(s.dimension)
        scale = abs(bilinear_load(m, coeff, SIN2)) @ abs(v)
        assert abs(resid @ v) <= 1e-9 * scale


def test_l2_projection_examples():
    m = unit_square_mesh(5)
    np.testing.assert_allclose(l2_project_p0(m, constant(3.5)).values, 3.5, atol=1e-14)
    np.testing.assert_allclose(l2_project_p0(m, lambda x: x[:, 0]).values, m.centroids[:, 0], atol=1e-14)
    q = l2_project_p0(m, lambda x: np.abs(np.sin(7 * x[:, 0])) * x[:, 1] ** 2)
    assert q.values.min() >= -1e-13


def test_l2_projection_idempotent_and_contractive():
    m = unit_square_mesh(6)
    f = lambda x: np.sin(5 * x[:, 0]) * np.exp(x[:, 1])  # noqa: E731
    q = l2_project_p0(m, f)
    np.testing.assert_allclose(l2_project_p0(m, q).values, q.values, atol=1e-10)
    fine = unit_square_mesh(18)
    assert error_norms(fine, None, P0Field(fine, np.zeros(fine.n_cells)), q, energy=False)[0] <= (
        error_norms(fine, None, P0Field(fine, np.zeros(fine.n_cells)), f, energy=False)[0] + 1e-10
    )


def test_error_norm_examples():
    m = unit_square_mesh(4)
    lin = ExactField(lambda x: 1 + 2 * x[:, 0] - x[:, 1], lambda x: np.tile([2.0, -1.0], (len(x), 1)))
    l2, en = error_norms(m, IDENT, P1Field.interpolate(m, lin), lin)
    assert l2 <= 1e-12 and en <= 1e-12
    l2, _ = error_norms(m, IDENT, P1Field(m, np.zeros(m.n_vertices)), constant(1.0), energy=False)
    assert abs(l2 - 1.0) <= 1e-14
    with pytest.raises(OcpFemError):
        error_norms(m, IDENT, P0Field(m, np.zeros(m.n_cells)), lin)
    e1 = error_norms(unit_square_mesh(16), None, P1Field.interpolate(unit_square_mesh(16), SIN2), SIN2, False)[0]
    e2 = error_norms(unit_square_mesh(32), None, P1Field.interpolate(unit_square_mesh(32), SIN2), SIN2, False)[0]
    assert abs(e1 / e2 - 4.0) <= 0.3


def test_poincare_constant():
    c = [poincare_constant(unit_square_mesh(n)) for n in (4, 8, 16)]
    exact = 1 / (PI * np.sqrt(2))
    assert abs(c[-1] - exact) <= 0.02 * exact
    assert c[0] < c[1] < c[2] <= exact
    rect = poincare_constant(rectangle_mesh(32, 16, (0.0, 0.0, 2.0, 1.0)))
    exact = 1 / (PI * np.sqrt(1.25))
    assert abs(rect - exact) <= 0.02 * exact


def test_coupling_matches_common_refinement():
    state, control = unit_square_mesh(4), unit_square_mesh(6)
    B = p1_p0_coupling(state, control)
    np.testing.assert_allclose(np.asarray(B.sum(axis=0)).ravel(), control.areas, atol=1e-14)
    # int_{T_k} P1 function = B^T values; compare with fine quadrature of the interpolant
    v = P1Field.interpolate(state, lambda x: np.sin(3 * x[:, 0]) + x[:, 1])
    ref = unit_square_mesh(12)
    cell_int = np.bincount(control.locate(ref.centroids), weights=ref.areas * v(ref.centroids),
                           minlength=control.n_cells)
    np.testing.assert_allclose(B.T @ v.values, cell_int, atol=1e-14)
    same = p1_p0_coupling(state, state)
    other = p1_p0_coupling(state, unit_square_mesh(4))
    assert abs(same - other).max() <= 1e-15


def test_p0_difference_on_common_refinement():
    a = P0Field(unit_square_mesh(2), np.arange(8.0))
    b = l2_project_p0(unit_square_mesh(4), a)
    assert p0_l2_difference(b, a) <= 1e-14
    assert abs(p0_l2_difference(a, P0Field(unit_square_mesh(3), np.zeros(18))) - np.sqrt((np.arange(8.0) ** 2).sum() / 8)) <= 1e-12
