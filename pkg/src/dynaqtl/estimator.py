"""Two-level profile-likelihood estimation of the mixture model.

Inner level: Newton-Raphson on the basis coefficients c for a fixed
Cholesky factor L, using the analytic gradient and a central-difference
Hessian of that gradient.  Outer level: Newton-Raphson on the free
entries of the Cholesky vector ell, maximizing the profiled objective
F(ell) = J(c_hat(ell) | ell).

The outer gradient follows the chain rule dF/dell = dJ/dell +
(dJ/dc) dc_hat/dell where dc_hat/dell comes from the implicit function
theorem, dc_hat/dell = -inv(H_cc) H_cl.  At an inner stationary point
dJ/dc = 0, so the correction term is added only when the inner gradient
exceeds its tolerance.  The outer Hessian is assembled from the same
finite-difference blocks: d2F/dell2 = H_ll + H_lc dc_hat/dell, which is
the derivative of dF/dell along the stationary path.

Both Newton loops shift the Hessian toward negative definiteness when
needed and halve steps until the objective does not decrease, so
accepted iterations never reduce the likelihood.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .covariance import (
    LOG_DIAG_BOUND,
    CholeskyParam,
    n_params,
    param_from_sigma,
    to_matrix,
)
from .data import Dataset
from .mixture import MixtureModel, check_omega
from .spline import BasisSystem, make_basis


class EstimationError(RuntimeError):
    """Numerical failure that invalidates a fit (singular Hessian, etc.)."""


@dataclass(frozen=True)
class FitConfig:
    inner_tol: float = 1e-8
    outer_tol: float = 1e-8
    max_inner: int = 100
    max_outer: int = 200
    fd_step_hess: float = 1e-6      # Hessian of J in c (FD of analytic grad)
    fd_step_mixed: float = 1e-5     # mixed partials d2J/dc dell
    fd_step_ell: float = 1e-5       # first derivative of J in ell
    fd_step_outer: float = 1e-4     # second differences of J in ell
    max_halvings: int = 30

    def __post_init__(self):
        if self.inner_tol <= 0 or self.outer_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_inner < 1 or self.max_outer < 1:
            raise ValueError("iteration caps must be at least 1")


@dataclass
class ModelFit:
    coefficients: np.ndarray        # (J, Ktot)
    param: CholeskyParam
    loglik: float
    posteriors: np.ndarray          # (n, J)
    converged: bool
    n_outer: int
    n_inner: int
    message: str = ""


def default_bases(dataset: Dataset, n_basis: int = 5) -> list[BasisSystem]:
    """One shared cubic basis per trait over the observed time range."""
    lo, hi = dataset.time_range
    basis = make_basis(lo, hi, n_basis)
    return [basis] * dataset.n_traits


def diagonal_mask(n_traits: int) -> np.ndarray:
    """Free-parameter mask selecting only the log-diagonal entries of L
    (the uncorrelated-traits model variant)."""
    rows, cols = np.tril_indices(n_traits)
    return rows == cols


def _ells_to_L(ells: np.ndarray, n_traits: int) -> np.ndarray:
    """Batch of ell vectors -> batch of lower-triangular L matrices."""
    ells = np.atleast_2d(ells)
    rows, cols = np.tril_indices(n_traits)
    L = np.zeros((ells.shape[0], n_traits, n_traits))
    L[:, rows, cols] = ells
    d = np.arange(n_traits)
    L[:, d, d] = np.exp(np.clip(L[:, d, d], -LOG_DIAG_BOUND, LOG_DIAG_BOUND))
    return L


def _make_neg_def(hess: np.ndarray) -> np.ndarray:
    """Shift eigenvalues so the (symmetrized) Hessian is negative definite."""
    hess = (hess + hess.T) / 2.0
    eigmax = float(np.linalg.eigvalsh(hess)[-1])
    delta = 1e-8 * (1.0 + float(np.abs(np.diag(hess)).max()))
    if eigmax > -delta:
        hess = hess - (eigmax + delta) * np.eye(hess.shape[0])
    return hess


# ---- inner level ---------------------------------------------------------

def fit_inner(
    model: MixtureModel,
    omega: np.ndarray,
    L: np.ndarray,
    c0: np.ndarray,
    config: FitConfig,
):
    """Maximize J(c | L) by damped Newton-Raphson.

    Returns (c_hat, value, gradient, converged, iterations)."""
    c = np.array(c0, dtype=float)
    n_geno = c.shape[0]
    val, grad, _ = model.evaluate(c, L, omega, want_grad=True)
    converged = False
    it = 0
    for it in range(1, config.max_inner + 1):
        gflat = grad.ravel()
        if np.abs(gflat).max() < config.inner_tol * (1.0 + abs(val)):
            converged = True
            break
        hess = model.fd_hessian_c(c, L, omega, config.fd_step_hess)
        hess = _make_neg_def(hess)
        try:
            step = -np.linalg.solve(hess, gflat)
        except np.linalg.LinAlgError as exc:
            raise EstimationError("singular inner Hessian") from exc
        alpha = 1.0
        accepted = False
        for _ in range(config.max_halvings):
            c_try = c + alpha * step.reshape(n_geno, -1)
            val_try, grad_try, _ = model.evaluate(c_try, L, omega, want_grad=True)
            if np.isfinite(val_try) and val_try >= val - 1e-12 * (1.0 + abs(val)):
                c, val, grad = c_try, val_try, grad_try
                accepted = True
                break
            alpha /= 2.0
        if not accepted:
            break  # stalled; caller sees converged flag from grad criterion
        if np.abs(grad).max() < config.inner_tol * (1.0 + abs(val)):
            converged = True
            break
    return c, float(val), grad, converged, it


def profile_F(
    model: MixtureModel,
    omega: np.ndarray,
    param: CholeskyParam,
    c0: np.ndarray,
    config: FitConfig,
):
    """Profile objective F(L) = J(c_hat(L) | L) with its maximizer."""
    L = to_matrix(param)
    c_hat, val, grad, converged, iters = fit_inner(model, omega, L, c0, config)
    return val, c_hat, grad, converged, iters


# ---- finite-difference blocks in ell ------------------------------------

def _partial_grad_ell(model, omega, c, ell, free_idx, step_scale):
    """dJ/dell at fixed c, central differences, free entries only."""
    p = free_idx.size
    steps = step_scale * (1.0 + np.abs(ell[free_idx]))
    ells = np.repeat(ell[None], 2 * p, axis=0)
    ells[np.arange(p), free_idx] += steps
    ells[p + np.arange(p), free_idx] -= steps
    vals = model.loglik_L_sweep(c, _ells_to_L(ells, model.n_traits), omega)
    return (vals[:p] - vals[p:]) / (2.0 * steps)


def _mixed_partial(model, omega, c, ell, free_idx, step_scale):
    """H_cl = d2J / dc dell, by central differences of the analytic
    c-gradient over the free ell entries; shape (dim c, n free)."""
    p = free_idx.size
    steps = step_scale * (1.0 + np.abs(ell[free_idx]))
    ells = np.repeat(ell[None], 2 * p, axis=0)
    ells[np.arange(p), free_idx] += steps
    ells[p + np.arange(p), free_idx] -= steps
    _, grads, _ = model.evaluate(
        c, _ells_to_L(ells, model.n_traits), omega, want_grad=True
    )
    grads = grads.reshape(2 * p, -1)
    return ((grads[:p] - grads[p:]) / (2.0 * steps[:, None])).T


def _hessian_ell(model, omega, c, ell, free_idx, step_scale):
    """H_ll = d2J/dell2 at fixed c by central cross differences."""
    p = free_idx.size
    steps = step_scale * (1.0 + np.abs(ell[free_idx]))
    ells = []
    for k in range(p):
        for l in range(p):
            for sk in (1.0, -1.0):
                for sl in (1.0, -1.0):
                    e = ell.copy()
                    e[free_idx[k]] += sk * steps[k]
                    e[free_idx[l]] += sl * steps[l]
                    ells.append(e)
    vals = model.loglik_L_sweep(c, _ells_to_L(np.array(ells), model.n_traits), omega)
    vals = vals.reshape(p, p, 2, 2)
    hess = (vals[:, :, 0, 0] - vals[:, :, 0, 1] - vals[:, :, 1, 0] + vals[:, :, 1, 1])
    hess /= 4.0 * np.outer(steps, steps)
    return (hess + hess.T) / 2.0


def grad_F(
    model: MixtureModel,
    omega: np.ndarray,
    param: CholeskyParam,
    c_hat: np.ndarray,
    config: FitConfig,
    free_mask: np.ndarray | None = None,
    hess_cc: np.ndarray | None = None,
):
    """Total derivative of the profile objective in the free ell entries.

    At an exact inner stationary point the implicit-function correction
    vanishes; it is added only when the inner gradient is above its
    tolerance (using dc_hat/dell = -inv(H_cc) H_cl).
    """
    if free_mask is None:
        free_mask = np.ones(param.ell.size, dtype=bool)
    free_idx = np.flatnonzero(free_mask)
    g = _partial_grad_ell(
        model, omega, c_hat, param.ell, free_idx, config.fd_step_ell
    )
    val, gc, _ = model.evaluate(c_hat, to_matrix(param), omega, want_grad=True)
    if np.abs(gc).max() > config.inner_tol * (1.0 + abs(val)):
        if hess_cc is None:
            hess_cc = model.fd_hessian_c(
                c_hat, to_matrix(param), omega, config.fd_step_hess
            )
        h_cl = _mixed_partial(
            model, omega, c_hat, param.ell, free_idx, config.fd_step_mixed
        )
        try:
            dc_dell = -np.linalg.solve(hess_cc, h_cl)
        except np.linalg.LinAlgError as exc:
            raise EstimationError("singular d2J/dc2 in implicit gradient") from exc
        g = g + dc_dell.T @ gc.ravel()
    return g


def _outer_hessian(model, omega, c_hat, ell, free_idx, hess_cc, config):
    """d2F/dell2 = H_ll + H_lc dc_hat/dell along the stationary path."""
    h_ll = _hessian_ell(model, omega, c_hat, ell, free_idx, config.fd_step_outer)
    h_cl = _mixed_partial(model, omega, c_hat, ell, free_idx, config.fd_step_mixed)
    try:
        dc_dell = -np.linalg.solve(hess_cc, h_cl)
    except np.linalg.LinAlgError as exc:
        raise EstimationError("singular d2J/dc2 in outer Hessian") from exc
    hess = h_ll + h_cl.T @ dc_dell
    return hess, dc_dell


# ---- initialization ------------------------------------------------------

def initial_values(model: MixtureModel, omega: np.ndarray, diagonal: bool = False):
    """Weighted least squares per genotype under identity covariance,
    then the Cholesky vector of the inverse pooled residual covariance."""
    n_geno = omega.shape[1]
    n_traits = model.n_traits
    c0 = np.zeros((n_geno, model.ktot))
    for j in range(n_geno):
        for h, sl in enumerate(model.slices):
            k = sl.stop - sl.start
            a = np.zeros((k, k))
            b = np.zeros(k)
            for grp in model.groups:
                w = omega[grp.indices, j]
                phi = model.bases[h].design_matrix(
                    model.dataset.times[grp.indices[0]]
                )
                a += w.sum() * phi.T @ phi
                b += phi.T @ (w @ grp.y[:, :, h])
            a += 1e-10 * np.trace(a) / k * np.eye(k)
            c0[j, sl] = np.linalg.solve(a, b)
    # pooled residual covariance, weighted by omega across genotypes
    sigma = np.zeros((n_traits, n_traits))
    total_m = 0.0
    for grp in model.groups:
        means = np.empty((n_geno, grp.m, n_traits))
        for h, sl in enumerate(model.slices):
            phi = model.bases[h].design_matrix(model.dataset.times[grp.indices[0]])
            means[:, :, h] = c0[:, sl] @ phi.T
        resid = grp.y[None] - means[:, None]  # (J, n_g, m, H)
        w = omega[grp.indices].T  # (J, n_g)
        sigma += np.einsum("jn,jnma,jnmb->ab", w, resid, resid, optimize=True)
        total_m += grp.m * grp.indices.size
    sigma /= total_m
    sigma += 1e-10 * np.trace(sigma) / n_traits * np.eye(n_traits)
    if diagonal:
        sigma = np.diag(np.diag(sigma))
    ell0 = param_from_sigma(sigma).ell
    return c0, ell0


# ---- outer level ---------------------------------------------------------

def fit_full(
    dataset: Dataset,
    omega: np.ndarray,
    bases: list[BasisSystem] | None = None,
    config: FitConfig | None = None,
    free_mask: np.ndarray | None = None,
    init: tuple[np.ndarray, np.ndarray] | None = None,
    model: MixtureModel | None = None,
) -> ModelFit:
    """Full two-level profile-likelihood fit of the mixture model.

    `free_mask` restricts which ell entries the outer level optimizes
    (the rest stay at their initial values); `init = (c0, ell0)` warm
    starts both levels, e.g. from a neighboring scan position.
    """
    config = config or FitConfig()
    if model is None:
        if bases is None:
            bases = default_bases(dataset)
        model = MixtureModel(dataset, bases)
    omega = check_omega(omega, dataset.n_individuals)
    n_traits = model.n_traits
    p_all = n_params(n_traits)
    if free_mask is None:
        free_mask = np.ones(p_all, dtype=bool)
    free_mask = np.asarray(free_mask, dtype=bool)
    free_idx = np.flatnonzero(free_mask)
    diagonal = not free_mask[~diagonal_mask(n_traits)].any() if n_traits > 1 else False

    if init is not None:
        c = np.array(init[0], dtype=float)
        ell = np.array(init[1], dtype=float)
    else:
        c, ell = initial_values(model, omega, diagonal=diagonal)
        ell[~free_mask & ~diagonal_mask(n_traits)] = 0.0
    _clamp_diag(ell, n_traits)

    n_inner_total = 0
    message = ""
    converged = False
    param = CholeskyParam(ell.copy(), n_traits)
    f_val, c, grad_c_hat, inner_ok, iters = profile_F(model, omega, param, c, config)
    n_inner_total += iters
    n_outer = 0
    for n_outer in range(1, config.max_outer + 1):
        L = to_matrix(param)
        hess_cc = model.fd_hessian_c(c, L, omega, config.fd_step_hess)
        g = grad_F(model, omega, param, c, config, free_mask, hess_cc=hess_cc)
        if np.abs(g).max() < config.outer_tol * (1.0 + abs(f_val)):
            converged = True
            break
        try:
            hess, dc_dell = _outer_hessian(
                model, omega, c, param.ell, free_idx, hess_cc, config
            )
            hess = _make_neg_def(hess)
            step = -np.linalg.solve(hess, g)
        except (EstimationError, np.linalg.LinAlgError):
            step = g / max(1.0, np.abs(g).max())  # gradient fallback
            dc_dell = np.zeros((c.size, free_idx.size))
        alpha = 1.0
        accepted = False
        for _ in range(config.max_halvings):
            ell_try = param.ell.copy()
            ell_try[free_idx] += alpha * step
            _clamp_diag(ell_try, n_traits)
            param_try = CholeskyParam(ell_try, n_traits)
            c_pred = c + (dc_dell @ (alpha * step)).reshape(c.shape)
            try:
                f_try, c_try, g_try, inner_ok, iters = profile_F(
                    model, omega, param_try, c_pred, config
                )
            except EstimationError:
                alpha /= 2.0
                continue
            n_inner_total += iters
            if np.isfinite(f_try) and f_try >= f_val - 1e-10 * (1.0 + abs(f_val)):
                rel_change = abs(f_try - f_val) / (1.0 + abs(f_val))
                param, c, f_val = param_try, c_try, f_try
                accepted = True
                break
            alpha /= 2.0
        if not accepted:
            message = "outer step-halving stalled"
            break
        if rel_change < config.outer_tol:
            converged = True
            break
    else:
        message = "outer iteration cap reached"

    _, _, post = model.evaluate(c, to_matrix(param), omega, want_posteriors=True)
    if not converged and not message:
        message = "outer gradient above tolerance at stall"
    return ModelFit(
        coefficients=c,
        param=param,
        loglik=float(f_val),
        posteriors=post,
        converged=converged,
        n_outer=n_outer,
        n_inner=n_inner_total,
        message=message,
    )


def fit_null(
    dataset: Dataset,
    bases: list[BasisSystem] | None = None,
    config: FitConfig | None = None,
    free_mask: np.ndarray | None = None,
    model: MixtureModel | None = None,
) -> ModelFit:
    """Single-component fit (no QTL): one mean curve per trait, one Sigma."""
    omega = np.ones((dataset.n_individuals, 1))
    return fit_full(
        dataset, omega, bases=bases, config=config, free_mask=free_mask, model=model
    )


def _clamp_diag(ell: np.ndarray, n_traits: int) -> None:
    rows, cols = np.tril_indices(n_traits)
    diag = rows == cols
    ell[diag] = np.clip(ell[diag], -LOG_DIAG_BOUND, LOG_DIAG_BOUND)
