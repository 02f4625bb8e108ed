"""QTL mapping for multiple dynamic traits.

Fits a multivariate-normal mixture with B-spline mean curves and a
Cholesky-parameterized trait covariance, scans a linkage map with
likelihood-ratio tests, and calibrates them with permutation thresholds
and parametric-bootstrap standard errors.
"""

from .covariance import CholeskyParam, param_from_sigma, sigma_from
from .data import (
    ConsistencyError,
    Dataset,
    LinkageGroup,
    LinkageMap,
    ParseError,
    load_dataset,
    write_dataset,
    write_scan_result,
)
from .estimator import (
    EstimationError,
    FitConfig,
    ModelFit,
    default_bases,
    fit_full,
    fit_null,
)
from .genetics import (
    GeneticsError,
    ScanPosition,
    haldane_d,
    haldane_r,
    position_on_map,
    qtl_probs,
    scan_grid,
)
from .inference import (
    BootstrapReport,
    ScanResult,
    bootstrap_se,
    declare_qtls,
    genome_scan,
    lr_statistic,
    permutation_threshold,
)
from .mixture import MixtureModel
from .simulate import (
    SimTruth,
    curve_bias_study,
    default_truth,
    load_truth,
    run_location_study,
    run_power_study,
    save_truth,
    simulate_population,
    write_curve_study,
    write_sim_report,
)
from .spline import BasisSystem, MeanCurve, SplineError, fit_coefficients, make_basis

__all__ = [
    "BasisSystem",
    "BootstrapReport",
    "CholeskyParam",
    "ConsistencyError",
    "Dataset",
    "EstimationError",
    "FitConfig",
    "GeneticsError",
    "LinkageGroup",
    "LinkageMap",
    "MeanCurve",
    "MixtureModel",
    "ModelFit",
    "ParseError",
    "ScanPosition",
    "ScanResult",
    "SimTruth",
    "SplineError",
    "bootstrap_se",
    "curve_bias_study",
    "declare_qtls",
    "default_bases",
    "default_truth",
    "fit_coefficients",
    "fit_full",
    "fit_null",
    "genome_scan",
    "haldane_d",
    "haldane_r",
    "load_dataset",
    "load_truth",
    "lr_statistic",
    "make_basis",
    "param_from_sigma",
    "permutation_threshold",
    "position_on_map",
    "qtl_probs",
    "run_location_study",
    "run_power_study",
    "save_truth",
    "scan_grid",
    "sigma_from",
    "simulate_population",
    "write_curve_study",
    "write_dataset",
    "write_scan_result",
    "write_sim_report",
]
