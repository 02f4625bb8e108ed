"""Cubic B-spline basis systems and genotype-specific mean curves.

Mean trajectories are linear combinations of B-spline basis functions,
mu(t) = c' phi(t).  Bases are clamped (full-multiplicity boundary knots)
with equally spaced interior knots, so evaluation at either endpoint is
well defined and the basis forms a partition of unity on [t_min, t_max].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline


class SplineError(ValueError):
    """Invalid basis configuration or out-of-range evaluation."""


@dataclass(frozen=True)
class BasisSystem:
    """A clamped B-spline basis of `n_basis` functions on [t_min, t_max]."""

    t_min: float
    t_max: float
    n_basis: int
    order: int = 4
    knots: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.n_basis < self.order:
            raise SplineError(
                f"need at least {self.order} basis functions, got {self.n_basis}"
            )
        if not self.t_min < self.t_max:
            raise SplineError("t_min must be strictly less than t_max")
        n_interior = self.n_basis - self.order
        interior = np.linspace(self.t_min, self.t_max, n_interior + 2)[1:-1]
        knots = np.concatenate(
            [
                np.full(self.order, self.t_min),
                interior,
                np.full(self.order, self.t_max),
            ]
        )
        object.__setattr__(self, "knots", knots)

    @property
    def degree(self) -> int:
        return self.order - 1

    @property
    def interior_knots(self) -> np.ndarray:
        return self.knots[self.order : -self.order]

    def _check_range(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if np.any(t < self.t_min) or np.any(t > self.t_max):
            raise SplineError(
                f"evaluation points must lie in [{self.t_min}, {self.t_max}]"
            )
        return t

    def design_matrix(self, times) -> np.ndarray:
        """Dense (len(times), n_basis) matrix of basis values."""
        t = self._check_range(np.atleast_1d(times))
        return BSpline.design_matrix(t, self.knots, self.degree).toarray()

    def evaluate(self, t: float) -> np.ndarray:
        """Basis values phi(t), a length-n_basis vector."""
        return self.design_matrix([t])[0]


def make_basis(t_min: float, t_max: float, n_basis: int) -> BasisSystem:
    """Cubic basis with n_basis - 4 equally spaced interior knots."""
    return BasisSystem(float(t_min), float(t_max), int(n_basis))


@dataclass(frozen=True)
class MeanCurve:
    """One trait-by-genotype mean trajectory c' phi(t)."""

    basis: BasisSystem
    coefficients: np.ndarray

    def __post_init__(self):
        coef = np.asarray(self.coefficients, dtype=float)
        if coef.shape != (self.basis.n_basis,):
            raise SplineError(
                f"expected {self.basis.n_basis} coefficients, got {coef.shape}"
            )
        object.__setattr__(self, "coefficients", coef)

    def __call__(self, times) -> np.ndarray:
        return self.basis.design_matrix(np.atleast_1d(times)) @ self.coefficients


def fit_coefficients(basis: BasisSystem, times, values) -> np.ndarray:
    """Least-squares spline coefficients for values observed at times."""
    phi = basis.design_matrix(times)
    coef, *_ = np.linalg.lstsq(phi, np.asarray(values, dtype=float), rcond=None)
    return coef
