"""Genome scans, permutation thresholds and bootstrap standard errors.

The scan fits the null (single-component) model once, then at each grid
position conditions the QTL genotype on flanking markers, fits the
two-component mixture, and records the likelihood-ratio statistic
LR = -2 [loglik(H0) - loglik(H1)].  Fits are warm-started from the
neighboring position.  Significance thresholds come from permuting whole
phenotype records among individuals (each individual's multi-trait time
course stays intact) and taking an upper order statistic of the maximum
LR over the grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import partial

import numpy as np

from .covariance import sd_and_correlations, sigma_from
from .data import Dataset
from .estimator import (
    FitConfig,
    ModelFit,
    EstimationError,
    default_bases,
    diagonal_mask,
    fit_full,
    fit_null,
)
from .genetics import ScanPosition, scan_grid, scan_omegas
from .mixture import MixtureModel
from .parallel import parallel_map
from .spline import BasisSystem


@dataclass
class ScanResult:
    group_names: list[str]
    positions: list[ScanPosition]
    lr: np.ndarray
    threshold: float | None = None
    qtl_calls: list[tuple[int, float, float]] = field(default_factory=list)
    # per call: (group index, position cM, LR at the peak)
    null_loglik: float | None = None

    @property
    def max_lr(self) -> float:
        finite = self.lr[np.isfinite(self.lr)]
        return float(finite.max()) if finite.size else float("nan")

    def argmax_position(self) -> ScanPosition:
        lr = np.where(np.isfinite(self.lr), self.lr, -np.inf)
        return self.positions[int(np.argmax(lr))]


def lr_statistic(null_fit: ModelFit, alt_fit: ModelFit) -> float:
    return -2.0 * (null_fit.loglik - alt_fit.loglik)


def declare_qtls(
    positions: list[ScanPosition], lr: np.ndarray, threshold: float
) -> list[tuple[int, float, float]]:
    """One call per contiguous supra-threshold run: the run's argmax."""
    calls = []
    run: list[int] = []
    order = sorted(
        range(len(positions)),
        key=lambda i: (positions[i].group_index, positions[i].position_cM),
    )

    def flush(run):
        if run:
            best = max(run, key=lambda i: lr[i])
            sp = positions[best]
            calls.append((sp.group_index, sp.position_cM, float(lr[best])))

    prev_group = None
    for i in order:
        above = np.isfinite(lr[i]) and lr[i] > threshold
        if above and positions[i].group_index == prev_group:
            run.append(i)
        elif above:
            flush(run)
            run = [i]
            prev_group = positions[i].group_index
        else:
            flush(run)
            run = []
            prev_group = positions[i].group_index if above else None
    flush(run)
    return calls


def genome_scan(
    dataset: Dataset,
    step_cM: float = 2.0,
    design: str = "ril-selfing",
    bases: list[BasisSystem] | None = None,
    config: FitConfig | None = None,
    correlated: bool = True,
    positions: list[ScanPosition] | None = None,
    omegas: list[np.ndarray] | None = None,
    null_fit: ModelFit | None = None,
    model: MixtureModel | None = None,
    progress=None,
) -> ScanResult:
    """LR profile over the scan grid.

    `positions`/`omegas`/`null_fit`/`model` may be precomputed and shared
    (e.g. across permutation replicates, where genotype rows and thus the
    omegas do not change).  `correlated=False` constrains Sigma to be
    diagonal in both hypotheses.  Per-position fit failures are recorded
    as NaN LR and the scan continues.
    """
    config = config or FitConfig()
    if bases is None:
        bases = default_bases(dataset)
    if model is None:
        model = MixtureModel(dataset, bases)
    free_mask = None if correlated else diagonal_mask(dataset.n_traits)
    if positions is None:
        positions = scan_grid(dataset.linkage_map, step_cM)
    if omegas is None:
        omegas = scan_omegas(dataset, positions, design)
    if null_fit is None:
        null_fit = fit_null(dataset, bases=bases, config=config,
                            free_mask=free_mask, model=model)

    lr = np.full(len(positions), np.nan)
    warm: tuple[np.ndarray, np.ndarray] | None = None
    prev_group = None
    for k, (sp, omega) in enumerate(zip(positions, omegas)):
        if sp.group_index != prev_group:
            warm = None  # do not warm-start across linkage groups
            prev_group = sp.group_index
        try:
            fit = fit_full(
                dataset, omega, config=config, free_mask=free_mask,
                init=warm, model=model,
            )
        except EstimationError:
            fit = None
        if fit is None or not np.isfinite(fit.loglik):
            warm = None
            continue
        # a cold restart occasionally beats a stale warm start
        if warm is not None and not fit.converged:
            try:
                cold = fit_full(dataset, omega, config=config,
                                free_mask=free_mask, model=model)
                if cold.loglik > fit.loglik:
                    fit = cold
            except EstimationError:
                pass
        lr[k] = lr_statistic(null_fit, fit)
        warm = (fit.coefficients, fit.param.ell)
        if progress is not None:
            progress(k, len(positions), sp, lr[k])
    return ScanResult(
        group_names=[g.name for g in dataset.linkage_map.groups],
        positions=positions,
        lr=lr,
        null_loglik=null_fit.loglik,
    )


def permutation_threshold(
    dataset: Dataset,
    step_cM: float = 2.0,
    n_perm: int = 100,
    alpha: float = 0.05,
    seed: int = 0,
    design: str = "ril-selfing",
    bases: list[BasisSystem] | None = None,
    config: FitConfig | None = None,
    correlated: bool = True,
    progress=None,
    return_max_lrs: bool = False,
    workers: int = 1,
):
    """Empirical (1 - alpha) quantile of the permutation max-LR distribution.

    Each replicate permutes whole phenotype records against genotype rows
    and rescans the grid.  The null fit is permutation invariant, so it is
    computed once and reused; likewise the per-position omegas, which
    depend only on the genotype rows.  Replicate r uses the generator
    seeded by (seed, r), so results are independent of evaluation order
    and worker count.
    """
    if n_perm < 1:
        raise ValueError("n_perm must be at least 1")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if bases is None:
        bases = default_bases(dataset)
    config = config or FitConfig()
    positions = scan_grid(dataset.linkage_map, step_cM)
    omegas = scan_omegas(dataset, positions, design)
    free_mask = None if correlated else diagonal_mask(dataset.n_traits)
    base_model = MixtureModel(dataset, bases)
    null_fit = fit_null(dataset, bases=bases, config=config,
                        free_mask=free_mask, model=base_model)
    task = partial(
        _permutation_max_lr, dataset, positions, omegas, null_fit,
        step_cM, design, bases, config, correlated, seed,
    )
    max_lrs = np.array(parallel_map(task, range(n_perm), workers, progress))
    threshold = empirical_threshold(max_lrs, alpha)
    if return_max_lrs:
        return threshold, max_lrs
    return threshold


def _permutation_max_lr(
    dataset, positions, omegas, null_fit, step_cM, design, bases, config,
    correlated, seed, r,
):
    rng = np.random.default_rng([seed, r])
    perm = rng.permutation(dataset.n_individuals)
    permuted = dataset.with_permuted_phenotypes(perm)
    result = genome_scan(
        permuted, step_cM, design, bases, config, correlated,
        positions=positions, omegas=omegas, null_fit=null_fit,
    )
    return result.max_lr


def empirical_threshold(max_lrs: np.ndarray, alpha: float) -> float:
    """Order statistic #ceil((1-alpha) n) of the max-LR sample."""
    vals = np.sort(np.asarray(max_lrs, dtype=float))
    k = int(np.ceil((1.0 - alpha) * vals.size))
    return float(vals[max(k, 1) - 1])


@dataclass
class BootstrapReport:
    """Parametric-bootstrap estimates and SEs for the covariance
    parameters (per-trait SDs and pairwise correlations), under H1 and H0."""

    parameter_names: list[str]
    h1_estimates: np.ndarray
    h1_se: np.ndarray
    h0_estimates: np.ndarray
    h0_se: np.ndarray
    n_requested: int
    n_converged_h1: int
    n_converged_h0: int


def covariance_parameters(sigma: np.ndarray) -> tuple[list[str], np.ndarray]:
    """Flatten Sigma into named SDs and correlations (sd_1.., rho_12..)."""
    sd, corr = sd_and_correlations(sigma)
    names = [f"sd_{h + 1}" for h in range(sigma.shape[0])]
    vals = list(sd)
    for a in range(sigma.shape[0]):
        for b in range(a + 1, sigma.shape[0]):
            names.append(f"rho_{a + 1}{b + 1}")
            vals.append(corr[a, b])
    return names, np.array(vals)


def _simulate_from_fit(
    dataset: Dataset, fit: ModelFit, omega: np.ndarray,
    bases: list[BasisSystem], rng: np.random.Generator,
) -> Dataset:
    """Replicate dataset drawn from the fitted model (mixture if the fit
    has several components, single Gaussian otherwise)."""
    sigma = sigma_from(fit.param)
    chol = np.linalg.cholesky(sigma)
    n_geno = fit.coefficients.shape[0]
    slices_k = np.cumsum([0] + [b.n_basis for b in bases])
    values = []
    for i in range(dataset.n_individuals):
        times = dataset.times[i]
        j = rng.choice(n_geno, p=omega[i]) if n_geno > 1 else 0
        mean = np.stack(
            [
                bases[h].design_matrix(times)
                @ fit.coefficients[j, slices_k[h] : slices_k[h + 1]]
                for h in range(dataset.n_traits)
            ],
            axis=1,
        )
        y = mean + rng.standard_normal(mean.shape) @ chol.T
        values.append(y.ravel())
    return Dataset(
        individual_ids=dataset.individual_ids,
        n_traits=dataset.n_traits,
        times=dataset.times,
        values=tuple(values),
        genotypes=dataset.genotypes,
        linkage_map=dataset.linkage_map,
    )


def _bootstrap_replicate(dataset, fit_h1, fit_h0, omega, bases, config, seed, r):
    rng = np.random.default_rng([seed, r])
    h1_vals = h0_vals = None
    rep1 = _simulate_from_fit(dataset, fit_h1, omega, bases, rng)
    try:
        refit1 = fit_full(rep1, omega, bases=bases, config=config)
        if refit1.converged:
            h1_vals = covariance_parameters(sigma_from(refit1.param))[1]
    except EstimationError:
        pass
    rep0 = _simulate_from_fit(dataset, fit_h0, omega, bases, rng)
    try:
        refit0 = fit_null(rep0, bases=bases, config=config)
        if refit0.converged:
            h0_vals = covariance_parameters(sigma_from(refit0.param))[1]
    except EstimationError:
        pass
    return h1_vals, h0_vals


def bootstrap_se(
    dataset: Dataset,
    fit_h1: ModelFit,
    fit_h0: ModelFit,
    omega: np.ndarray,
    n_boot: int = 100,
    seed: int = 0,
    bases: list[BasisSystem] | None = None,
    config: FitConfig | None = None,
    progress=None,
    workers: int = 1,
) -> BootstrapReport:
    """Parametric-bootstrap SEs of the covariance parameters.

    H1 replicates are drawn from the fitted mixture at the given omega and
    refit with the two-component model; H0 replicates from the fitted
    single Gaussian and refit with the null model.  Replicates that fail
    to converge are dropped and counted.
    """
    if bases is None:
        bases = default_bases(dataset)
    config = config or FitConfig()
    names, _ = covariance_parameters(sigma_from(fit_h1.param))
    task = partial(
        _bootstrap_replicate, dataset, fit_h1, fit_h0, omega, bases, config, seed
    )
    results = parallel_map(task, range(n_boot), workers, progress)
    h1_samples = [r1 for r1, _ in results if r1 is not None]
    h0_samples = [r0 for _, r0 in results if r0 is not None]
    if not h1_samples or not h0_samples:
        raise EstimationError("all bootstrap replicates failed to converge")
    h1 = np.array(h1_samples)
    h0 = np.array(h0_samples)
    return BootstrapReport(
        parameter_names=names,
        h1_estimates=covariance_parameters(sigma_from(fit_h1.param))[1],
        h1_se=h1.std(axis=0, ddof=1) if h1.shape[0] > 1 else np.zeros(h1.shape[1]),
        h0_estimates=covariance_parameters(sigma_from(fit_h0.param))[1],
        h0_se=h0.std(axis=0, ddof=1) if h0.shape[0] > 1 else np.zeros(h0.shape[1]),
        n_requested=n_boot,
        n_converged_h1=h1.shape[0],
        n_converged_h0=h0.shape[0],
    )
