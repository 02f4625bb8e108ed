"""Stacked Gaussian mixture likelihood for multi-trait time courses.

Per individual i, the H traits observed at m_i time points are stacked
time-major into a vector of length H*m_i whose genotype-j mean is
Psi_i c_j, where Psi_i has one block row per time point and each block
row is block diagonal in the traits.  The stacked covariance is
Gamma = I_{m_i} (x) Sigma with inv(Sigma) = L L'.

Gamma is never materialized: quadratic forms apply L' per time block and
determinants use |Gamma| = |L|^(-2 m_i).  All mixture quantities are
computed in the log domain with log-sum-exp stabilization, since stacked
densities in 24 dimensions underflow in linear space.

The module supports evaluating batches of parameter vectors at once
(used for finite-difference Hessians); individuals sharing a time grid
are grouped so each batch entry is a handful of dense array operations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .covariance import CholeskyParam, to_matrix
from .data import Dataset
from .spline import BasisSystem

LOG_2PI = float(np.log(2.0 * np.pi))


class MixtureError(ValueError):
    pass


def coefficient_slices(bases: list[BasisSystem]) -> list[slice]:
    """Per-trait slices into a genotype's concatenated coefficient vector."""
    slices, start = [], 0
    for b in bases:
        slices.append(slice(start, start + b.n_basis))
        start += b.n_basis
    return slices


def total_coefficients(bases: list[BasisSystem]) -> int:
    return sum(b.n_basis for b in bases)


def build_design(bases: list[BasisSystem], times) -> np.ndarray:
    """Dense stacked design matrix, (H*m) x (sum of basis sizes).

    Rows are time-major (all traits at the first time point first); each
    block row is block diagonal with trait h's basis values.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    n_traits = len(bases)
    m = times.size
    ktot = total_coefficients(bases)
    slices = coefficient_slices(bases)
    psi = np.zeros((n_traits * m, ktot))
    for h, basis in enumerate(bases):
        phi = basis.design_matrix(times)  # (m, K_h)
        for r in range(m):
            psi[r * n_traits + h, slices[h]] = phi[r]
    return psi


@dataclass
class _TimeGroup:
    indices: np.ndarray      # rows of the dataset sharing this time grid
    y: np.ndarray            # (n_g, m, H)
    phis: list[np.ndarray]   # per trait, (m, K_h)
    m: int
    grams: np.ndarray | None = None  # (H, H) object-less cross-grams, see below


@dataclass
class _LStats:
    """Per-(L, time group) sufficient statistics.

    The stacked log-density is quadratic in the coefficients for fixed L:
    logdens_ij = const + m*sum(log diag L) - (yquad_i - 2 b_i'c_j + c_j'Q c_j)/2
    with Q = Psi' inv(Gamma) Psi shared by all individuals of a time group
    and b_i = Psi' inv(Gamma) Y_i.  This makes coefficient sweeps (Newton
    iterations, finite-difference Hessians in c) cheap.
    """

    q: np.ndarray        # (Ktot, Ktot)
    b: np.ndarray        # (n_g, Ktot)
    y_quad: np.ndarray   # (n_g,)


class MixtureModel:
    """Likelihood workspace for one dataset and one basis set.

    Coefficients are passed as (J, Ktot) arrays (genotype-major, traits
    concatenated within a genotype); `omega` is the (n, J) matrix of
    prior genotype probabilities.  The object is reusable across omega
    vectors and parameter values.
    """

    def __init__(self, dataset: Dataset, bases: list[BasisSystem]):
        if len(bases) != dataset.n_traits:
            raise MixtureError(
                f"need {dataset.n_traits} bases, got {len(bases)}"
            )
        self.dataset = dataset
        self.bases = bases
        self.n_traits = dataset.n_traits
        self.ktot = total_coefficients(bases)
        self.slices = coefficient_slices(bases)
        self.total_obs = sum(t.size for t in dataset.times) * self.n_traits

        groups: dict[tuple, list[int]] = {}
        for i, t in enumerate(dataset.times):
            groups.setdefault(tuple(t.tolist()), []).append(i)
        self.groups: list[_TimeGroup] = []
        for key, idx in groups.items():
            times = np.array(key)
            y = np.stack([dataset.trait_matrix(i) for i in idx])
            phis = [b.design_matrix(times) for b in bases]
            # cross-grams Phi_h' Phi_g, reused when assembling Q per L
            grams = np.empty((self.n_traits, self.n_traits), dtype=object)
            for h in range(self.n_traits):
                for g in range(self.n_traits):
                    grams[h, g] = phis[h].T @ phis[g]
            self.groups.append(
                _TimeGroup(np.array(idx), y, phis, times.size, grams)
            )
        self._l_cache_key: bytes | None = None
        self._l_cache: list[_LStats] | None = None
        self._l_cache_logdiag: float = 0.0

    def _l_stats(self, L: np.ndarray) -> tuple[list[_LStats], float]:
        """Sufficient statistics for one L, cached for the most recent L."""
        key = L.tobytes()
        if key == self._l_cache_key:
            return self._l_cache, self._l_cache_logdiag
        w = L @ L.T
        stats = []
        for grp in self.groups:
            q = np.empty((self.ktot, self.ktot))
            for h in range(self.n_traits):
                for g in range(self.n_traits):
                    q[self.slices[h], self.slices[g]] = w[h, g] * grp.grams[h, g]
            v = grp.y @ w  # (n_g, m, H)
            b = np.empty((grp.indices.size, self.ktot))
            for h in range(self.n_traits):
                b[:, self.slices[h]] = v[:, :, h] @ grp.phis[h]
            y_quad = np.einsum("nmh,nmh->n", grp.y, v, optimize=True)
            stats.append(_LStats(q, b, y_quad))
        self._l_cache_key = key
        self._l_cache = stats
        self._l_cache_logdiag = float(np.log(np.diag(L)).sum())
        return stats, self._l_cache_logdiag

    # ---- batched core ---------------------------------------------------

    def _check_c(self, c: np.ndarray) -> np.ndarray:
        c = np.asarray(c, dtype=float)
        if c.ndim == 2:
            c = c[None]
        if c.ndim != 3 or c.shape[2] != self.ktot:
            raise MixtureError(
                f"coefficients must be (J, {self.ktot}) or batched, got {c.shape}"
            )
        return c

    def _check_L(self, L: np.ndarray) -> np.ndarray:
        L = np.asarray(L, dtype=float)
        if L.ndim == 2:
            L = L[None]
        if L.shape[-2:] != (self.n_traits, self.n_traits):
            raise MixtureError(f"L must be {self.n_traits}x{self.n_traits}")
        return L

    def evaluate(
        self,
        c: np.ndarray,
        L: np.ndarray,
        omega: np.ndarray,
        want_grad: bool = False,
        want_posteriors: bool = False,
    ):
        """Mixture log-likelihood, optionally with the coefficient
        gradient and posterior genotype probabilities.

        `c` is (J, Ktot) or (B, J, Ktot); `L` is (H, H) or (B, H, H);
        a singleton batch on either side broadcasts against the other.
        Returns (loglik, grad, posteriors) with leading batch axes
        squeezed away when both inputs were unbatched.
        """
        c_in, L_in = np.asarray(c), np.asarray(L)
        squeeze = c_in.ndim == 2 and L_in.ndim == 2
        c = self._check_c(c_in)
        L = self._check_L(L_in)
        batch = max(c.shape[0], L.shape[0])
        n_geno = c.shape[1]
        omega = np.asarray(omega, dtype=float)
        if omega.shape != (self.dataset.n_individuals, n_geno):
            raise MixtureError(
                f"omega must be ({self.dataset.n_individuals}, {n_geno}), "
                f"got {omega.shape}"
            )
        with np.errstate(divide="ignore"):
            log_omega = np.log(omega)

        if L.shape[0] == 1:
            return self._evaluate_fixed_L(
                c, L[0], log_omega, want_grad, want_posteriors, squeeze
            )

        sum_log_ldiag = np.log(np.diagonal(L, axis1=-2, axis2=-1)).sum(-1)  # (bL,)

        loglik = np.zeros(batch)
        grad = np.zeros((batch, n_geno, self.ktot)) if want_grad else None
        post = (
            np.zeros((batch, self.dataset.n_individuals, n_geno))
            if want_posteriors
            else None
        )

        for grp in self.groups:
            m = grp.m
            # means: (bc, J, m, H)
            means = np.empty((c.shape[0], n_geno, m, self.n_traits))
            for h in range(self.n_traits):
                means[..., h] = c[:, :, self.slices[h]] @ grp.phis[h].T
            # residuals: (bc, J, n_g, m, H)
            resid = grp.y[None, None] - means[:, :, None]
            if L.shape[0] == 1:
                u = resid @ L[0]
            elif c.shape[0] == 1:
                u = np.einsum("jnmh,bhg->bjnmg", resid[0], L, optimize=True)
            else:
                u = np.einsum("bjnmh,bhg->bjnmg", resid, L, optimize=True)
            qf = np.einsum("bjnmg,bjnmg->bjn", u, u, optimize=True)
            logdens = (
                -0.5 * self.n_traits * m * LOG_2PI
                + m * sum_log_ldiag[:, None, None]
                - 0.5 * qf
            )  # (B, J, n_g)
            if not np.all(np.isfinite(logdens)):
                raise MixtureError("non-finite stacked log-density")
            a = logdens + log_omega[grp.indices].T[None]  # (B, J, n_g)
            amax = a.max(axis=1, keepdims=True)
            expa = np.exp(a - amax)
            sumexp = expa.sum(axis=1, keepdims=True)
            loglik += (amax[:, 0] + np.log(sumexp[:, 0])).sum(axis=-1)
            if want_grad or want_posteriors:
                p = expa / sumexp  # (B, J, n_g)
                if want_posteriors:
                    post[:, grp.indices, :] = np.moveaxis(p, 1, 2)
                if want_grad:
                    if L.shape[0] == 1:
                        v = u @ L[0].T
                    else:
                        v = np.einsum("bjnmg,bhg->bjnmh", u, L, optimize=True)
                    w = np.einsum("bjn,bjnmh->bjmh", p, v, optimize=True)
                    for h in range(self.n_traits):
                        grad[:, :, self.slices[h]] += np.einsum(
                            "mk,bjm->bjk", grp.phis[h], w[..., h], optimize=True
                        )
        if squeeze:
            loglik = float(loglik[0])
            grad = grad[0] if want_grad else None
            post = post[0] if want_posteriors else None
        return loglik, grad, post

    def _evaluate_fixed_L(
        self, c, L, log_omega, want_grad, want_posteriors, squeeze
    ):
        """Quadratic-form path for a single L (see :class:`_LStats`)."""
        batch, n_geno = c.shape[0], c.shape[1]
        stats, log_diag = self._l_stats(L)
        loglik = np.zeros(batch)
        grad = np.zeros((batch, n_geno, self.ktot)) if want_grad else None
        post = (
            np.zeros((batch, self.dataset.n_individuals, n_geno))
            if want_posteriors
            else None
        )
        flat_c = c.reshape(-1, self.ktot)
        for grp, st in zip(self.groups, stats):
            qc = (flat_c @ st.q).reshape(batch, n_geno, self.ktot)
            c_q_c = np.einsum("bjk,bjk->bj", c, qc, optimize=True)
            cross = (flat_c @ st.b.T).reshape(batch, n_geno, -1)  # (B, J, n_g)
            qf = st.y_quad[None, None] - 2.0 * cross + c_q_c[..., None]
            logdens = (
                -0.5 * self.n_traits * grp.m * LOG_2PI
                + grp.m * log_diag
                - 0.5 * qf
            )
            if not np.all(np.isfinite(logdens)):
                raise MixtureError("non-finite stacked log-density")
            a = logdens + log_omega[grp.indices].T[None]
            amax = a.max(axis=1, keepdims=True)
            expa = np.exp(a - amax)
            sumexp = expa.sum(axis=1, keepdims=True)
            loglik += (amax[:, 0] + np.log(sumexp[:, 0])).sum(axis=-1)
            if want_grad or want_posteriors:
                p = expa / sumexp  # (B, J, n_g)
                if want_posteriors:
                    post[:, grp.indices, :] = np.moveaxis(p, 1, 2)
                if want_grad:
                    grad += (
                        p.reshape(-1, p.shape[-1]) @ st.b
                    ).reshape(batch, n_geno, self.ktot)
                    grad -= p.sum(axis=-1)[..., None] * qc
        if squeeze:
            loglik = float(loglik[0])
            grad = grad[0] if want_grad else None
            post = post[0] if want_posteriors else None
        return loglik, grad, post

    def loglik_L_sweep(
        self, c: np.ndarray, Ls: np.ndarray, omega: np.ndarray
    ) -> np.ndarray:
        """Mixture log-likelihood at one c for a batch of L matrices.

        Quadratic forms reduce to tr(L L' S_ij) with per-individual
        residual scatter matrices S_ij, so the sweep never touches the
        time dimension.  Used by finite differences in ell.
        """
        c = self._check_c(c)[0]
        Ls = self._check_L(Ls)
        omega = np.asarray(omega, dtype=float)
        with np.errstate(divide="ignore"):
            log_omega = np.log(omega)
        w = Ls @ np.swapaxes(Ls, -1, -2)  # (B, H, H)
        log_diag = np.log(np.diagonal(Ls, axis1=-2, axis2=-1)).sum(-1)  # (B,)
        loglik = np.zeros(Ls.shape[0])
        n_geno = c.shape[0]
        for grp in self.groups:
            means = np.empty((n_geno, grp.m, self.n_traits))
            for h in range(self.n_traits):
                means[:, :, h] = c[:, self.slices[h]] @ grp.phis[h].T
            resid = grp.y[None] - means[:, None]  # (J, n_g, m, H)
            scatter = np.einsum("jnmh,jnmg->jnhg", resid, resid, optimize=True)
            qf = np.einsum("bhg,jnhg->bjn", w, scatter, optimize=True)
            logdens = (
                -0.5 * self.n_traits * grp.m * LOG_2PI
                + grp.m * log_diag[:, None, None]
                - 0.5 * qf
            )
            a = logdens + log_omega[grp.indices].T[None]
            amax = a.max(axis=1, keepdims=True)
            loglik += (
                amax[:, 0] + np.log(np.exp(a - amax).sum(axis=1))
            ).sum(axis=-1)
        return loglik

    # ---- finite-difference second derivatives ---------------------------

    def fd_hessian_c(
        self, c: np.ndarray, L: np.ndarray, omega: np.ndarray, step_scale: float
    ) -> np.ndarray:
        """Hessian of the log-likelihood in c, by central differences of
        the analytic gradient; returned as (JK, JK), symmetrized."""
        c = np.asarray(c, dtype=float)
        n_geno = c.shape[0]
        flat = c.ravel()
        dim = flat.size
        steps = step_scale * (1.0 + np.abs(flat))
        batch = np.repeat(flat[None], 2 * dim, axis=0)
        batch[np.arange(dim), np.arange(dim)] += steps
        batch[dim + np.arange(dim), np.arange(dim)] -= steps
        _, grads, _ = self.evaluate(
            batch.reshape(2 * dim, n_geno, self.ktot), L, omega, want_grad=True
        )
        grads = grads.reshape(2 * dim, dim)
        hess = (grads[:dim] - grads[dim:]) / (2.0 * steps[:, None])
        return (hess + hess.T) / 2.0


def check_omega(omega: np.ndarray, n_individuals: int) -> np.ndarray:
    """Validate prior genotype probabilities: entries in [0,1], rows sum to 1."""
    omega = np.asarray(omega, dtype=float)
    if omega.ndim != 2 or omega.shape[0] != n_individuals:
        raise MixtureError(f"omega must have {n_individuals} rows")
    if np.any(omega < -1e-12) or np.any(omega > 1 + 1e-12):
        raise MixtureError("omega entries must lie in [0, 1]")
    if np.any(np.abs(omega.sum(axis=1) - 1.0) > 1e-9):
        raise MixtureError("omega rows must sum to 1")
    return omega


# ---- spec-level convenience wrappers ------------------------------------

def log_density(model: MixtureModel, i: int, c_j: np.ndarray, param: CholeskyParam) -> float:
    """Stacked Gaussian log-density of individual i under one genotype."""
    y = model.dataset.trait_matrix(i)
    m = y.shape[0]
    L = to_matrix(param)
    phi_means = np.empty_like(y)
    for h in range(model.n_traits):
        basis = model.bases[h]
        phi_means[:, h] = basis.design_matrix(model.dataset.times[i]) @ np.asarray(
            c_j
        )[model.slices[h]]
    resid = y - phi_means
    u = resid @ L
    qf = float((u * u).sum())
    return (
        -0.5 * model.n_traits * m * LOG_2PI
        + m * float(np.log(np.diag(L)).sum())
        - 0.5 * qf
    )


def mixture_loglik(
    model: MixtureModel, omega: np.ndarray, c: np.ndarray, param: CholeskyParam
) -> float:
    ll, _, _ = model.evaluate(c, to_matrix(param), omega)
    return ll


def posteriors(
    model: MixtureModel, omega: np.ndarray, c: np.ndarray, param: CholeskyParam
) -> np.ndarray:
    _, _, post = model.evaluate(c, to_matrix(param), omega, want_posteriors=True)
    return post


def grad_c(
    model: MixtureModel, omega: np.ndarray, c: np.ndarray, param: CholeskyParam
) -> np.ndarray:
    _, grad, _ = model.evaluate(c, to_matrix(param), omega, want_grad=True)
    return grad
