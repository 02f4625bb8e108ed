"""Population simulator: determinism, shapes, recombination calibration."""

import numpy as np
import pytest

from conftest import small_truth
from dynaqtl.genetics import design_switch_prob
from dynaqtl.simulate import (
    SimReport,
    default_truth,
    load_truth,
    save_truth,
    simulate_population,
    true_scan_position,
    truth_from_json,
    truth_to_json,
)


def test_seed_determinism():
    truth = small_truth()
    a = simulate_population(truth, seed=7)
    b = simulate_population(truth, seed=7)
    c = simulate_population(truth, seed=8)
    for x, y in zip(a.values, b.values):
        assert np.array_equal(x, y)
    assert np.array_equal(a.genotypes, b.genotypes)
    assert not np.array_equal(a.genotypes, c.genotypes)


def test_default_truth_geometry():
    truth = default_truth()
    assert truth.n_individuals == 184
    assert truth.n_traits == 3
    assert truth.times.size == 8
    group = truth.linkage_map.groups[truth.qtl_group]
    assert group.name == "12"
    assert len(group.markers) == 21
    assert group.length_cM == pytest.approx(196.0)
    assert truth.qtl_position_cM == pytest.approx(182.6)
    dataset = simulate_population(truth, seed=1)
    # 184 individuals x 3 traits x 8 times phenotype records
    assert sum(v.size for v in dataset.values) == 184 * 3 * 8 == 4416


def test_truth_json_round_trip(tmp_path):
    truth = small_truth()
    path = tmp_path / "truth.json"
    save_truth(truth, path)
    again = load_truth(path)
    assert np.array_equal(again.mean_coefficients, truth.mean_coefficients)
    assert np.array_equal(again.sigma, truth.sigma)
    assert again.qtl_position_cM == truth.qtl_position_cM
    assert truth_to_json(again) == truth_to_json(truth)
    assert truth_from_json(truth_to_json(truth)).design == truth.design


def test_effect_scale_zero_removes_genotype_contrast():
    truth = small_truth()
    null = truth.with_effect_scale(0.0)
    assert np.allclose(null.mean_coefficients[0], null.mean_coefficients[1])
    full = truth.with_effect_scale(1.0)
    assert np.allclose(full.mean_coefficients, truth.mean_coefficients)


def test_recombination_fraction_calibration():
    """Adjacent-marker switch frequency within 3 binomial SEs of the
    design-adjusted recombination fraction."""
    truth = small_truth(n_individuals=4000)
    dataset = simulate_population(truth, seed=13)
    group = truth.linkage_map.groups[0]
    geno = dataset.genotypes
    for k in range(len(group.markers) - 1):
        d = group.positions[k + 1] - group.positions[k]
        expected = design_switch_prob(d, truth.design)
        observed = np.mean(geno[:, k] != geno[:, k + 1])
        se = np.sqrt(expected * (1 - expected) / geno.shape[0])
        assert abs(observed - expected) < 3 * se


def test_qtl_linked_to_flanking_markers():
    """Individuals' phenotype means must track the QTL genotype, which in
    turn is correlated with nearby marker calls."""
    truth = small_truth(n_individuals=2000)
    dataset = simulate_population(truth, seed=17)
    sp = true_scan_position(truth)
    left_calls = dataset.genotypes[:, sp.left_marker]
    means = truth.mean_curves(truth.times)
    # classify individuals by which genotype mean their record is closer to
    dists = np.stack(
        [
            np.linalg.norm(
                np.stack(dataset.values) - means[j].T.ravel()[None], axis=1
            )
            for j in range(2)
        ]
    )
    inferred = dists.argmin(axis=0) + 1
    agreement = np.mean(inferred == left_calls)
    assert agreement > 0.75  # strongly linked, not perfect (recombination)


def test_sim_report_error_decomposition():
    estimates = np.array([1.0, 3.0, 5.0, 7.0])
    report = SimReport(true_position=3.5, estimates=estimates)
    assert report.rmse**2 == pytest.approx(report.bias**2 + report.std**2)
    lo, hi = report.interval
    assert lo <= report.mean <= hi


def test_write_sim_report(tmp_path):
    from dynaqtl.simulate import write_sim_report

    report = SimReport(true_position=3.5, estimates=np.array([1.0, 3.0, 5.0]))
    path = tmp_path / "report.csv"
    write_sim_report(report, path)
    text = path.read_text(encoding="utf-8")
    assert text.startswith("replicate,estimate_cM")
    assert "# true_position_cM,3.5" in text
    assert "# rmse," in text and "# n_failed,0" in text


def test_write_curve_study(tmp_path):
    from dynaqtl.simulate import curve_bias_study, write_curve_study

    truth = small_truth(n_individuals=20)
    study = curve_bias_study(truth, 2, seed=3, n_grid=11)
    path = tmp_path / "curves.csv"
    write_curve_study(study, path)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "genotype,trait,time,true_mean,bias,std"
    assert len(lines) == 1 + 2 * truth.n_traits * 11
