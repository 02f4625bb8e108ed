"""B-spline basis: independent Cox-de Boor oracle and algebraic properties."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynaqtl.spline import BasisSystem, MeanCurve, SplineError, fit_coefficients, make_basis


def de_boor_basis(t: float, knots: np.ndarray, degree: int) -> np.ndarray:
    """Cox-de Boor recursion, written independently of scipy.

    Zero-degree functions are right-open except the last interval, which
    is closed so the clamped right endpoint evaluates to 1.
    """
    n = len(knots) - degree - 1
    b = np.zeros((degree + 1, len(knots) - 1))
    last = np.max(np.nonzero(np.diff(knots))[0])
    for i in range(len(knots) - 1):
        if knots[i] <= t < knots[i + 1] or (i == last and t == knots[i + 1]):
            b[0, i] = 1.0
    for d in range(1, degree + 1):
        for i in range(len(knots) - d - 1):
            left = 0.0
            if knots[i + d] > knots[i]:
                left = (t - knots[i]) / (knots[i + d] - knots[i]) * b[d - 1, i]
            right = 0.0
            if knots[i + d + 1] > knots[i + 1]:
                right = (
                    (knots[i + d + 1] - t)
                    / (knots[i + d + 1] - knots[i + 1])
                    * b[d - 1, i + 1]
                )
            b[d, i] = left + right
    return b[degree, :n]


@pytest.mark.parametrize("n_basis", [4, 5, 7])
def test_matches_de_boor_oracle(n_basis):
    basis = make_basis(1.0, 8.0, n_basis)
    ts = np.linspace(1.0, 8.0, 53)
    phi = basis.design_matrix(ts)
    for row, t in zip(phi, ts):
        oracle = de_boor_basis(float(t), basis.knots, basis.degree)
        assert np.allclose(row, oracle, atol=1e-12)


def test_knot_placement_example():
    basis = make_basis(1.0, 8.0, 7)
    assert np.allclose(basis.interior_knots, [2.75, 4.5, 6.25])
    assert basis.knots[0] == basis.knots[3] == 1.0
    assert basis.knots[-1] == basis.knots[-4] == 8.0


def test_partition_of_unity():
    basis = make_basis(0.0, 10.0, 6)
    phi = basis.design_matrix(np.linspace(0.0, 10.0, 201))
    assert np.allclose(phi.sum(axis=1), 1.0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(
    t=st.floats(min_value=0.0, max_value=10.0, allow_nan=False),
    n_basis=st.integers(min_value=4, max_value=9),
)
def test_partition_of_unity_property(t, n_basis):
    basis = make_basis(0.0, 10.0, n_basis)
    assert abs(basis.evaluate(t).sum() - 1.0) < 1e-12


def test_reproduces_cubic_polynomial():
    basis = make_basis(1.0, 8.0, 7)
    ts = np.linspace(1.0, 8.0, 40)
    target = 0.3 * ts**3 - 2.0 * ts**2 + ts - 4.0
    coef = fit_coefficients(basis, ts, target)
    dense = np.linspace(1.0, 8.0, 301)
    recon = basis.design_matrix(dense) @ coef
    truth = 0.3 * dense**3 - 2.0 * dense**2 + dense - 4.0
    assert np.max(np.abs(recon - truth)) < 1e-8


def test_endpoints_are_evaluable():
    basis = make_basis(1.0, 8.0, 5)
    assert np.isclose(basis.evaluate(1.0).sum(), 1.0)
    assert np.isclose(basis.evaluate(8.0).sum(), 1.0)
    assert basis.evaluate(8.0)[-1] == pytest.approx(1.0)


def test_out_of_range_raises():
    basis = make_basis(1.0, 8.0, 5)
    with pytest.raises(SplineError):
        basis.design_matrix([0.99])
    with pytest.raises(SplineError):
        basis.design_matrix([8.01])


def test_invalid_configuration_raises():
    with pytest.raises(SplineError):
        BasisSystem(1.0, 8.0, 3)
    with pytest.raises(SplineError):
        BasisSystem(8.0, 1.0, 5)


def test_mean_curve_round_trip():
    basis = make_basis(0.0, 5.0, 5)
    coef = np.array([1.0, -0.5, 2.0, 0.3, 1.1])
    curve = MeanCurve(basis, coef)
    ts = np.linspace(0.0, 5.0, 17)
    refit = fit_coefficients(basis, ts, curve(ts))
    assert np.allclose(refit, coef, atol=1e-10)
    with pytest.raises(SplineError):
        MeanCurve(basis, np.ones(4))
