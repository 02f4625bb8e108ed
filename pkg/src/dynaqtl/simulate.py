"""Data generation from the mixture model and the simulation studies.

A :class:`SimTruth` fixes the linkage-map geometry, the QTL position,
genotype-specific spline mean curves, the trait covariance, and the
sampling design.  Marker genotypes are simulated as a two-state parental
origin chain along each group (switch probability = design-adjusted
recombination fraction between adjacent loci); the QTL genotype is
inserted at its map position inside the chain, so it is automatically
consistent with its flanking-marker haplotype.

The three studies mirror the standard evaluation battery: distribution
of the estimated QTL location (with and without modeling trait
correlations), test power against permutation thresholds, and pointwise
bias/STD of the fitted mean curves at the true QTL.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from functools import partial

import numpy as np

from .data import Dataset, LinkageGroup, LinkageMap
from .estimator import EstimationError, FitConfig, fit_full
from .genetics import ScanPosition, design_switch_prob, qtl_probs
from .inference import genome_scan, permutation_threshold
from .parallel import parallel_map
from .spline import BasisSystem, make_basis


@dataclass(frozen=True)
class SimTruth:
    linkage_map: LinkageMap
    design: str
    n_individuals: int
    times: np.ndarray
    basis: BasisSystem
    mean_coefficients: np.ndarray  # (J, H, K)
    sigma: np.ndarray              # (H, H)
    qtl_group: int
    qtl_position_cM: float

    def __post_init__(self):
        coef = np.asarray(self.mean_coefficients, dtype=float)
        sigma = np.asarray(self.sigma, dtype=float)
        if coef.ndim != 3 or coef.shape[2] != self.basis.n_basis:
            raise ValueError("mean_coefficients must be (J, H, n_basis)")
        if sigma.shape != (coef.shape[1], coef.shape[1]):
            raise ValueError("sigma shape must match the trait count")
        if np.any(np.linalg.eigvalsh((sigma + sigma.T) / 2) <= 0):
            raise ValueError("sigma must be positive definite")
        group = self.linkage_map.groups[self.qtl_group]
        if not group.positions[0] <= self.qtl_position_cM <= group.positions[-1]:
            raise ValueError("QTL position outside its linkage group")
        object.__setattr__(self, "mean_coefficients", coef)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(
            self, "times", np.asarray(self.times, dtype=float)
        )

    @property
    def n_traits(self) -> int:
        return self.mean_coefficients.shape[1]

    @property
    def n_genotypes(self) -> int:
        return self.mean_coefficients.shape[0]

    def mean_curves(self, times) -> np.ndarray:
        """True mean values, shape (J, H, len(times))."""
        phi = self.basis.design_matrix(times)
        return np.einsum("jhk,tk->jht", self.mean_coefficients, phi)

    def with_effect_scale(self, scale: float) -> "SimTruth":
        """Shrink the genotype contrast toward the average curve."""
        avg = self.mean_coefficients.mean(axis=0, keepdims=True)
        coef = avg + scale * (self.mean_coefficients - avg)
        return SimTruth(
            self.linkage_map, self.design, self.n_individuals, self.times,
            self.basis, coef, self.sigma, self.qtl_group, self.qtl_position_cM,
        )


def truth_to_json(truth: SimTruth) -> dict:
    return {
        "design": truth.design,
        "n_individuals": truth.n_individuals,
        "times": truth.times.tolist(),
        "basis": {
            "t_min": truth.basis.t_min,
            "t_max": truth.basis.t_max,
            "n_basis": truth.basis.n_basis,
        },
        "mean_coefficients": truth.mean_coefficients.tolist(),
        "sigma": truth.sigma.tolist(),
        "qtl": {
            "group": truth.linkage_map.groups[truth.qtl_group].name,
            "position_cM": truth.qtl_position_cM,
        },
        "map": {
            "groups": [
                {
                    "name": g.name,
                    "markers": list(g.markers),
                    "positions": g.positions.tolist(),
                }
                for g in truth.linkage_map.groups
            ]
        },
    }


def truth_from_json(doc: dict) -> SimTruth:
    groups = tuple(
        LinkageGroup(g["name"], tuple(g["markers"]), np.array(g["positions"]))
        for g in doc["map"]["groups"]
    )
    linkage_map = LinkageMap(groups)
    names = [g.name for g in groups]
    basis = make_basis(
        doc["basis"]["t_min"], doc["basis"]["t_max"], doc["basis"]["n_basis"]
    )
    return SimTruth(
        linkage_map=linkage_map,
        design=doc["design"],
        n_individuals=int(doc["n_individuals"]),
        times=np.array(doc["times"]),
        basis=basis,
        mean_coefficients=np.array(doc["mean_coefficients"]),
        sigma=np.array(doc["sigma"]),
        qtl_group=names.index(doc["qtl"]["group"]),
        qtl_position_cM=float(doc["qtl"]["position_cM"]),
    )


def save_truth(truth: SimTruth, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(truth_to_json(truth), fh, indent=2)


def load_truth(path) -> SimTruth:
    with open(path, encoding="utf-8") as fh:
        return truth_from_json(json.load(fh))


def default_truth() -> SimTruth:
    """The packaged simulation scenario (21-marker, 196-cM group with a
    QTL at 182.6 cM; three correlated traits at eight weekly times)."""
    from importlib.resources import files

    doc = json.loads(files("dynaqtl.data_files").joinpath("default_truth.json").read_text())
    return truth_from_json(doc)


def simulate_population(truth: SimTruth, seed) -> Dataset:
    """Draw one population: marker chains along the map, QTL genotypes
    consistent with flanking haplotypes, and mixture phenotypes."""
    rng = np.random.default_rng(seed)
    n = truth.n_individuals
    qtl_genotype = None
    marker_calls = []
    for gi, group in enumerate(truth.linkage_map.groups):
        loci = list(group.positions)
        qtl_slot = None
        if gi == truth.qtl_group:
            qtl_slot = int(np.searchsorted(group.positions, truth.qtl_position_cM))
            loci = loci[:qtl_slot] + [truth.qtl_position_cM] + loci[qtl_slot:]
        states = np.empty((n, len(loci)), dtype=np.int8)
        states[:, 0] = rng.integers(1, 3, n)
        for k in range(1, len(loci)):
            switch = design_switch_prob(loci[k] - loci[k - 1], truth.design)
            flip = rng.random(n) < switch
            states[:, k] = np.where(flip, 3 - states[:, k - 1], states[:, k - 1])
        if qtl_slot is not None:
            qtl_genotype = states[:, qtl_slot].copy()
            states = np.delete(states, qtl_slot, axis=1)
        marker_calls.append(states)
    genotypes = np.concatenate(marker_calls, axis=1)

    chol = np.linalg.cholesky(truth.sigma)
    means = truth.mean_curves(truth.times)  # (J, H, m)
    values = []
    for i in range(n):
        mean = means[qtl_genotype[i] - 1].T  # (m, H)
        y = mean + rng.standard_normal(mean.shape) @ chol.T
        values.append(y.ravel())
    width = len(str(n))
    return Dataset(
        individual_ids=tuple(f"ind{i + 1:0{width}d}" for i in range(n)),
        n_traits=truth.n_traits,
        times=tuple([truth.times] * n),
        values=tuple(values),
        genotypes=genotypes,
        linkage_map=truth.linkage_map,
    )


def true_scan_position(truth: SimTruth) -> ScanPosition:
    group = truth.linkage_map.groups[truth.qtl_group]
    left = int(np.searchsorted(group.positions, truth.qtl_position_cM + 1e-9) - 1)
    left = min(max(left, 0), group.positions.size - 2)
    return ScanPosition(truth.qtl_group, truth.qtl_position_cM, left, left + 1)


def _bases_for(truth: SimTruth, n_basis: int | None = None) -> list[BasisSystem]:
    if n_basis is None or n_basis == truth.basis.n_basis:
        basis = truth.basis
    else:
        basis = make_basis(truth.basis.t_min, truth.basis.t_max, n_basis)
    return [basis] * truth.n_traits


@dataclass
class SimReport:
    """Distribution of the estimated QTL location over replicates."""

    true_position: float
    estimates: np.ndarray
    n_failed: int = 0

    @property
    def mean(self) -> float:
        return float(self.estimates.mean())

    @property
    def bias(self) -> float:
        return self.mean - self.true_position

    @property
    def std(self) -> float:
        # population STD so that rmse**2 == bias**2 + std**2 exactly
        return float(self.estimates.std(ddof=0))

    @property
    def rmse(self) -> float:
        return float(np.sqrt(np.mean((self.estimates - self.true_position) ** 2)))

    @property
    def interval(self) -> tuple[float, float]:
        lo, hi = np.percentile(self.estimates, [2.5, 97.5])
        return float(lo), float(hi)


def _location_replicate(truth, correlated, seed, step_cM, config, rep):
    dataset = simulate_population(truth, [seed, rep])
    try:
        result = genome_scan(
            dataset, step_cM, truth.design, config=config,
            correlated=correlated,
        )
        return result.argmax_position().position_cM
    except (EstimationError, ValueError):
        return None


def run_location_study(
    truth: SimTruth,
    n_reps: int,
    correlated: bool = True,
    seed: int = 0,
    step_cM: float = 2.0,
    config: FitConfig | None = None,
    progress=None,
    workers: int = 1,
) -> SimReport:
    """Estimated-QTL-location distribution: simulate, scan, take the
    argmax-LR position, per replicate."""
    task = partial(_location_replicate, truth, correlated, seed, step_cM, config)
    results = parallel_map(task, range(n_reps), workers, progress)
    estimates = [e for e in results if e is not None]
    return SimReport(
        true_position=truth.qtl_position_cM,
        estimates=np.array(estimates),
        n_failed=n_reps - len(estimates),
    )


def run_power_study(
    truth: SimTruth,
    n_reps: int,
    threshold_reps: int = 100,
    alpha: float = 0.05,
    seed: int = 0,
    step_cM: float = 2.0,
    config: FitConfig | None = None,
    progress=None,
    workers: int = 1,
) -> float:
    """Fraction of replicates whose max LR exceeds its own
    permutation threshold."""
    task = partial(
        _power_replicate, truth, threshold_reps, alpha, seed, step_cM, config
    )
    detections = parallel_map(task, range(n_reps), workers, progress)
    return sum(detections) / n_reps


def _power_replicate(truth, threshold_reps, alpha, seed, step_cM, config, rep):
    dataset = simulate_population(truth, [seed, rep])
    result = genome_scan(dataset, step_cM, truth.design, config=config)
    perm_seed = int(np.random.SeedSequence([seed, rep, 7]).generate_state(1)[0])
    threshold = permutation_threshold(
        dataset, step_cM, threshold_reps, alpha, perm_seed,
        design=truth.design, config=config,
    )
    return result.max_lr > threshold


@dataclass
class CurveStudy:
    """Pointwise bias/STD of fitted mean curves at the true QTL."""

    grid: np.ndarray            # dense time grid
    true_curves: np.ndarray     # (J, H, len(grid))
    bias: np.ndarray            # (J, H, len(grid))
    std: np.ndarray             # (J, H, len(grid))
    n_replicates: int
    n_failed: int = 0


def _curve_replicate(truth, bases, phi, position, seed, config, rep):
    dataset = simulate_population(truth, [seed, rep])
    omega = qtl_probs(dataset, position, truth.design)
    try:
        fit = fit_full(dataset, omega, bases=bases, config=config)
    except EstimationError:
        return None
    k = truth.basis.n_basis
    return np.stack(
        [
            np.stack(
                [phi @ fit.coefficients[j, h * k : (h + 1) * k]
                 for h in range(truth.n_traits)]
            )
            for j in range(truth.n_genotypes)
        ]
    )


def curve_bias_study(
    truth: SimTruth,
    n_reps: int,
    seed: int = 0,
    n_grid: int = 101,
    config: FitConfig | None = None,
    progress=None,
    workers: int = 1,
) -> CurveStudy:
    """Refit at the true QTL position per replicate; summarize the fitted
    genotype mean curves pointwise on a dense time grid."""
    grid = np.linspace(truth.basis.t_min, truth.basis.t_max, n_grid)
    bases = _bases_for(truth)
    phi = truth.basis.design_matrix(grid)
    position = true_scan_position(truth)
    task = partial(_curve_replicate, truth, bases, phi, position, seed, config)
    results = parallel_map(task, range(n_reps), workers, progress)
    n_failed = sum(1 for c in results if c is None)
    fitted = np.array([c for c in results if c is not None])  # (reps, J, H, grid)
    true_curves = truth.mean_curves(grid)
    return CurveStudy(
        grid=grid,
        true_curves=true_curves,
        bias=fitted.mean(axis=0) - true_curves,
        std=fitted.std(axis=0, ddof=0),
        n_replicates=fitted.shape[0],
        n_failed=n_failed,
    )


def write_sim_report(report: SimReport, path) -> None:
    """Location-study CSV: per-replicate estimates, then a '#'-prefixed
    summary block (same convention as the scan CSV)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["replicate", "estimate_cM"])
        for r, est in enumerate(report.estimates):
            w.writerow([r, repr(float(est))])
        lo, hi = report.interval
        for key, value in (
            ("true_position_cM", report.true_position),
            ("mean", report.mean),
            ("bias", report.bias),
            ("std", report.std),
            ("rmse", report.rmse),
            ("interval_low", lo),
            ("interval_high", hi),
            ("n_failed", report.n_failed),
        ):
            fh.write(f"# {key},{repr(float(value))}\n")


def write_curve_study(study: CurveStudy, path) -> None:
    """Curve-study CSV, long form: genotype, trait, time, true mean,
    pointwise bias and STD."""
    n_geno, n_traits, _ = study.bias.shape
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["genotype", "trait", "time", "true_mean", "bias", "std"])
        for j in range(n_geno):
            for h in range(n_traits):
                for k, t in enumerate(study.grid):
                    w.writerow(
                        [
                            j + 1,
                            h + 1,
                            repr(float(t)),
                            repr(float(study.true_curves[j, h, k])),
                            repr(float(study.bias[j, h, k])),
                            repr(float(study.std[j, h, k])),
                        ]
                    )
