"""Scans, thresholds, QTL calls, and the bootstrap plumbing."""

import numpy as np
import pytest

from conftest import small_truth
from dynaqtl.estimator import default_bases, fit_full, fit_null
from dynaqtl.genetics import ScanPosition, position_on_map, qtl_probs
from dynaqtl.inference import (
    bootstrap_se,
    declare_qtls,
    empirical_threshold,
    genome_scan,
    lr_statistic,
    permutation_threshold,
)
from dynaqtl.simulate import simulate_population


@pytest.fixture(scope="module")
def scan_setup():
    truth = small_truth(n_individuals=60, seed=21)
    dataset = simulate_population(truth, seed=22)
    return truth, dataset


def test_lr_statistic_arithmetic():
    class Stub:
        def __init__(self, ll):
            self.loglik = ll

    assert lr_statistic(Stub(-100.0), Stub(-90.0)) == pytest.approx(20.0)
    assert lr_statistic(Stub(-90.0), Stub(-90.0)) == 0.0


def test_declare_qtls_splits_contiguous_runs():
    positions = [ScanPosition(0, float(p), 0, 1) for p in (0, 2, 4, 6, 8)]
    positions += [ScanPosition(1, float(p), 0, 1) for p in (0, 2)]
    lr = np.array([5.0, 12.0, 9.0, 1.0, 11.0, 13.0, 2.0])
    calls = declare_qtls(positions, lr, threshold=8.0)
    assert calls == [(0, 2.0, 12.0), (0, 8.0, 11.0), (1, 0.0, 13.0)]
    assert declare_qtls(positions, lr, threshold=100.0) == []


def test_declare_qtls_skips_nan():
    positions = [ScanPosition(0, float(p), 0, 1) for p in (0, 2, 4)]
    lr = np.array([np.nan, 9.0, np.nan])
    assert declare_qtls(positions, lr, threshold=5.0) == [(0, 2.0, 9.0)]


def test_empirical_threshold_order_statistic():
    vals = np.arange(1.0, 101.0)
    # ceil(0.95 * 100) = 95 -> the 95th smallest value
    assert empirical_threshold(vals, 0.05) == 95.0
    assert empirical_threshold(np.array([7.0]), 0.05) == 7.0
    assert empirical_threshold(vals, 0.5) == 50.0


def test_permutation_threshold_validates_arguments(scan_setup):
    _, dataset = scan_setup
    with pytest.raises(ValueError):
        permutation_threshold(dataset, n_perm=0)
    with pytest.raises(ValueError):
        permutation_threshold(dataset, n_perm=2, alpha=1.5)


def test_scan_lr_nonnegative_and_peak_near_qtl(scan_setup):
    truth, dataset = scan_setup
    result = genome_scan(dataset, step_cM=4.0, design=truth.design)
    assert np.all(result.lr[np.isfinite(result.lr)] >= -1e-6)
    assert result.null_loglik is not None
    assert abs(result.argmax_position().position_cM - truth.qtl_position_cM) <= 15.0


def test_scan_invariant_under_trait_rescaling(scan_setup):
    """Multiplying one trait by a constant is absorbed by Sigma and the
    mean curves; the LR profile must not change."""
    truth, dataset = scan_setup
    base = genome_scan(dataset, step_cM=8.0, design=truth.design)
    scale = np.array([3.7, 0.2])
    rescaled = type(dataset)(
        individual_ids=dataset.individual_ids,
        n_traits=dataset.n_traits,
        times=dataset.times,
        values=tuple((v.reshape(-1, 2) * scale).ravel() for v in dataset.values),
        genotypes=dataset.genotypes,
        linkage_map=dataset.linkage_map,
    )
    other = genome_scan(rescaled, step_cM=8.0, design=truth.design)
    denom = np.maximum(1.0, np.abs(base.lr))
    assert np.nanmax(np.abs(other.lr - base.lr) / denom) < 1e-3


def test_permutation_seed_determinism(scan_setup):
    truth, dataset = scan_setup
    kwargs = dict(step_cM=8.0, n_perm=3, alpha=0.05, design=truth.design,
                  return_max_lrs=True)
    t1, lrs1 = permutation_threshold(dataset, seed=5, **kwargs)
    t2, lrs2 = permutation_threshold(dataset, seed=5, **kwargs)
    t3, lrs3 = permutation_threshold(dataset, seed=6, **kwargs)
    assert t1 == t2 and np.array_equal(lrs1, lrs2)
    assert not np.array_equal(lrs1, lrs3)
    # n_perm=1 threshold is that replicate's max LR
    t_single, lrs_single = permutation_threshold(
        dataset, seed=5, step_cM=8.0, n_perm=1, design=truth.design,
        return_max_lrs=True,
    )
    assert t_single == lrs_single[0]


def test_bootstrap_reports_positive_ses(scan_setup):
    truth, dataset = scan_setup
    bases = default_bases(dataset, 4)
    sp = position_on_map(dataset.linkage_map, "1", truth.qtl_position_cM)
    omega = qtl_probs(dataset, sp, truth.design)
    fit_h1 = fit_full(dataset, omega, bases=bases)
    fit_h0 = fit_null(dataset, bases=bases)
    report = bootstrap_se(
        dataset, fit_h1, fit_h0, omega, n_boot=4, seed=3, bases=bases
    )
    assert report.n_requested == 4
    assert report.n_converged_h1 >= 2 and report.n_converged_h0 >= 2
    assert np.all(report.h1_se > 0)
    assert np.all(report.h0_se > 0)
    assert report.parameter_names[:2] == ["sd_1", "sd_2"]
