import numpy as np
import pytest
import sympy

from ocpfem.errors import OcpFemError
from ocpfem.quadrature import physical_points, rule

X, Y = sympy.symbols("x y")
TRI = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def _exact(a, b):
    return float(sympy.integrate(sympy.integrate(X**a * Y**b, (Y, 0, 1 - X)), (X, 0, 1)))


@pytest.mark.parametrize("degree", [2, 5])
def test_exact_for_polynomials_up_to_degree(degree):
    pts, w = physical_points(TRI, np.array([[0, 1, 2]]), degree)
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            q = (w[0] * pts[0, :, 0] ** a * pts[0, :, 1] ** b).sum()
            assert abs(q - _exact(a, b)) <= 1e-14


def test_degree5_not_exact_for_degree6():
    pts, w = physical_points(TRI, np.array([[0, 1, 2]]), 5)
    q = (w[0] * pts[0, :, 0] ** 6).sum()
    assert abs(q - _exact(6, 0)) > 1e-8


def test_weights_sum_to_one():
    for d in (2, 5):
        bary, w = rule(d)
        assert abs(w.sum() - 1.0) <= 1e-15
        np.testing.assert_allclose(bary.sum(axis=1), 1.0, atol=1e-15)


def test_unknown_degree():
    with pytest.raises(OcpFemError):
        rule(3)
