"""Cholesky parameterization of the trait covariance.

The inverse covariance is factored as inv(Sigma) = L L' with L lower
triangular.  The free parameters are the lower-triangle entries of L in
row-major order, with the diagonal stored as logarithms so that any real
vector maps to a strictly positive diagonal, hence a symmetric positive
definite Sigma, with no constraints on the optimizer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Clamp on stored log-diagonals; prevents covariance collapse/blowup on
# saturated fits.
LOG_DIAG_BOUND = 15.0


def n_params(n_traits: int) -> int:
    return n_traits * (n_traits + 1) // 2


@dataclass(frozen=True)
class CholeskyParam:
    """Unconstrained encoding of an H x H SPD covariance matrix."""

    ell: np.ndarray
    n_traits: int

    def __post_init__(self):
        ell = np.asarray(self.ell, dtype=float)
        expected = n_params(self.n_traits)
        if ell.shape != (expected,):
            raise ValueError(
                f"need {expected} parameters for {self.n_traits} traits, "
                f"got shape {ell.shape}"
            )
        object.__setattr__(self, "ell", ell)

    @property
    def log_diag(self) -> np.ndarray:
        rows, cols = np.tril_indices(self.n_traits)
        return self.ell[rows == cols]

    def with_ell(self, ell: np.ndarray) -> "CholeskyParam":
        return CholeskyParam(np.asarray(ell, dtype=float), self.n_traits)


def identity_param(n_traits: int) -> CholeskyParam:
    return CholeskyParam(np.zeros(n_params(n_traits)), n_traits)


def to_matrix(param: CholeskyParam) -> np.ndarray:
    """Lower-triangular L with exp applied to the stored diagonal."""
    h = param.n_traits
    L = np.zeros((h, h))
    rows, cols = np.tril_indices(h)
    L[rows, cols] = param.ell
    diag = np.clip(np.diag(L), -LOG_DIAG_BOUND, LOG_DIAG_BOUND)
    L[np.diag_indices(h)] = np.exp(diag)
    return L


def from_matrix(L: np.ndarray) -> CholeskyParam:
    """Inverse of :func:`to_matrix`; L must have a positive diagonal."""
    L = np.asarray(L, dtype=float)
    h = L.shape[0]
    if np.any(np.diag(L) <= 0):
        raise ValueError("L must have a strictly positive diagonal")
    work = L.copy()
    work[np.diag_indices(h)] = np.log(np.diag(L))
    rows, cols = np.tril_indices(h)
    return CholeskyParam(work[rows, cols], h)


def param_from_sigma(sigma: np.ndarray) -> CholeskyParam:
    """Encode an SPD covariance matrix by factoring its inverse."""
    sigma = np.asarray(sigma, dtype=float)
    L = np.linalg.cholesky(np.linalg.inv(sigma))
    return from_matrix(L)


def sigma_from(param: CholeskyParam) -> np.ndarray:
    """Sigma = inv(L L'), symmetric positive definite by construction."""
    L = to_matrix(param)
    inv_L = np.linalg.inv(L)
    sigma = inv_L.T @ inv_L
    return (sigma + sigma.T) / 2.0


def logdet_gamma(param: CholeskyParam, n_times: int) -> float:
    """log|Gamma| for Gamma = I_{n_times} (x) Sigma, via |Sigma| = |L|^-2."""
    if n_times < 1:
        raise ValueError("n_times must be at least 1")
    log_diag = np.clip(param.log_diag, -LOG_DIAG_BOUND, LOG_DIAG_BOUND)
    return -2.0 * n_times * float(np.sum(log_diag))


def sd_and_correlations(sigma: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-trait standard deviations and the correlation matrix."""
    sd = np.sqrt(np.diag(sigma))
    corr = sigma / np.outer(sd, sd)
    return sd, corr
