"""Shared fixtures: small synthetic scenarios that keep unit tests fast."""

import numpy as np
import pytest

from dynaqtl.data import Dataset, LinkageGroup, LinkageMap
from dynaqtl.simulate import SimTruth, simulate_population
from dynaqtl.spline import make_basis

# Per-trait SDs and correlations used as the reference covariance truth.
REFERENCE_SD = np.array([1.49, 1.19, 0.41])
REFERENCE_CORR = np.array(
    [
        [1.00, 0.79, 0.66],
        [0.79, 1.00, 0.65],
        [0.66, 0.65, 1.00],
    ]
)
REFERENCE_SIGMA = REFERENCE_CORR * np.outer(REFERENCE_SD, REFERENCE_SD)


def small_map(n_markers: int = 5, length_cM: float = 40.0) -> LinkageMap:
    positions = np.linspace(0.0, length_cM, n_markers)
    return LinkageMap(
        (
            LinkageGroup(
                name="1",
                markers=tuple(f"M{k + 1:02d}" for k in range(n_markers)),
                positions=positions,
            ),
        )
    )


def small_truth(
    n_individuals: int = 40,
    n_traits: int = 2,
    n_times: int = 5,
    n_basis: int = 4,
    qtl_position: float = 22.0,
    seed: int = 0,
) -> SimTruth:
    """A light scenario: one 40-cM group, few individuals, few times."""
    rng = np.random.default_rng(seed)
    basis = make_basis(1.0, float(n_times), n_basis)
    coef = np.stack(
        [
            np.linspace(1.0, 4.0, n_basis) + rng.normal(0, 0.3, (n_traits, n_basis)),
            np.linspace(2.0, 6.0, n_basis) + rng.normal(0, 0.3, (n_traits, n_basis)),
        ]
    )
    a = rng.normal(0, 0.4, (n_traits, n_traits))
    sigma = 0.5 * np.eye(n_traits) + a @ a.T
    return SimTruth(
        linkage_map=small_map(),
        design="ril-selfing",
        n_individuals=n_individuals,
        times=np.arange(1.0, n_times + 1.0),
        basis=basis,
        mean_coefficients=coef,
        sigma=sigma,
        qtl_group=0,
        qtl_position_cM=qtl_position,
    )


@pytest.fixture
def truth() -> SimTruth:
    return small_truth()


@pytest.fixture
def dataset(truth) -> Dataset:
    return simulate_population(truth, seed=11)


def random_dataset(
    seed: int,
    n_individuals: int = 20,
    n_traits: int = 3,
    n_times: int = 8,
) -> Dataset:
    """Unstructured phenotypes over a two-marker map (for likelihood tests)."""
    rng = np.random.default_rng(seed)
    lmap = small_map(n_markers=2, length_cM=20.0)
    times = np.linspace(1.0, 8.0, n_times)
    return Dataset(
        individual_ids=tuple(f"i{k + 1:03d}" for k in range(n_individuals)),
        n_traits=n_traits,
        times=tuple([times] * n_individuals),
        values=tuple(
            rng.normal(2.0, 1.0, n_traits * n_times) for _ in range(n_individuals)
        ),
        genotypes=rng.integers(1, 3, (n_individuals, 2)).astype(np.int8),
        linkage_map=lmap,
    )


def random_omega(seed: int, n_individuals: int, n_genotypes: int = 2) -> np.ndarray:
    rng = np.random.default_rng(seed)
    w = rng.uniform(0.05, 1.0, (n_individuals, n_genotypes))
    return w / w.sum(axis=1, keepdims=True)
