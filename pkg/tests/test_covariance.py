"""Cholesky covariance encoding: round trips, dense log-det oracle, SPD."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import REFERENCE_SIGMA
from dynaqtl.covariance import (
    CholeskyParam,
    from_matrix,
    identity_param,
    logdet_gamma,
    n_params,
    param_from_sigma,
    sigma_from,
    to_matrix,
)


def test_n_params():
    assert [n_params(h) for h in (1, 2, 3, 4)] == [1, 3, 6, 10]


def test_reference_sigma_round_trip():
    param = param_from_sigma(REFERENCE_SIGMA)
    assert np.max(np.abs(sigma_from(param) - REFERENCE_SIGMA)) < 1e-10


def test_matrix_round_trip():
    rng = np.random.default_rng(5)
    ell = rng.normal(0, 1, n_params(4))
    param = CholeskyParam(ell, 4)
    again = from_matrix(to_matrix(param))
    assert np.allclose(again.ell, ell, atol=1e-12)


def test_logdet_gamma_dense_oracle():
    """log|I_m kron Sigma| against a dense 24x24 slogdet."""
    param = param_from_sigma(REFERENCE_SIGMA)
    m = 8
    gamma = np.kron(np.eye(m), REFERENCE_SIGMA)
    sign, dense = np.linalg.slogdet(gamma)
    assert sign > 0
    assert logdet_gamma(param, m) == pytest.approx(dense, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(
    st.lists(
        st.floats(min_value=-3.0, max_value=3.0, allow_nan=False),
        min_size=6, max_size=6,
    )
)
def test_any_parameter_vector_gives_spd_sigma(ell):
    sigma = sigma_from(CholeskyParam(np.array(ell), 3))
    assert np.allclose(sigma, sigma.T)
    assert np.all(np.linalg.eigvalsh(sigma) > 0)


def test_identity_param_is_identity():
    assert np.allclose(sigma_from(identity_param(3)), np.eye(3))
    assert logdet_gamma(identity_param(3), 10) == 0.0


def test_log_diag_clamped_in_logdet():
    big = CholeskyParam(np.array([40.0]), 1)
    assert logdet_gamma(big, 1) == pytest.approx(-30.0)


def test_invalid_shapes_raise():
    with pytest.raises(ValueError):
        CholeskyParam(np.zeros(5), 3)
    with pytest.raises(ValueError):
        from_matrix(np.array([[-1.0, 0.0], [0.3, 1.0]]))
    with pytest.raises(ValueError):
        logdet_gamma(identity_param(2), 0)
