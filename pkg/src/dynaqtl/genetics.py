"""Map distances, conditional QTL genotype probabilities, and scan grids.

Distances in centiMorgans are converted to recombination fractions with
the Haldane map function (no interference).  For RILs produced by
selfing, the observed recombination between two loci is inflated by the
repeated meioses, R = 2r / (1 + 2r); backcross populations use r as is.

Both supported designs have two genotypes, so parental origin along a
linkage group is a two-state Markov chain whose switch probability
between adjacent loci is the design-adjusted recombination fraction.
Conditioning a putative QTL on its nearest informative flanking markers
reduces to two chain transitions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, LinkageMap, MISSING_GENOTYPE

DESIGNS = ("backcross", "ril-selfing")


class GeneticsError(ValueError):
    pass


def haldane_r(d_cM: float) -> float:
    """Recombination fraction for a map distance in centiMorgans."""
    d = np.asarray(d_cM, dtype=float)
    if np.any(d < 0):
        raise GeneticsError("map distance must be nonnegative")
    return 0.5 * (1.0 - np.exp(-2.0 * d / 100.0))


def haldane_d(r) -> float:
    """Inverse map function: distance in cM for a recombination fraction."""
    r = np.asarray(r, dtype=float)
    if np.any((r < 0) | (r >= 0.5)):
        raise GeneticsError("recombination fraction must lie in [0, 0.5)")
    return -50.0 * np.log(1.0 - 2.0 * r)


def design_switch_prob(d_cM, design: str):
    """Probability that parental origin differs between two loci d_cM apart."""
    r = haldane_r(d_cM)
    if design == "backcross":
        return r
    if design == "ril-selfing":
        return 2.0 * r / (1.0 + 2.0 * r)
    raise GeneticsError(f"unknown design {design!r}; expected one of {DESIGNS}")


@dataclass(frozen=True)
class ScanPosition:
    group_index: int
    position_cM: float
    left_marker: int  # index within the group; the interval [left, left+1]
    right_marker: int


def scan_grid(linkage_map: LinkageMap, step_cM: float) -> list[ScanPosition]:
    """Grid from each group's first to last marker, plus marker positions."""
    if step_cM <= 0:
        raise GeneticsError("step must be positive")
    out: list[ScanPosition] = []
    for gi, group in enumerate(linkage_map.groups):
        pos = group.positions
        if pos.size < 2:
            raise GeneticsError(f"group {group.name!r} has fewer than 2 markers")
        first, last = pos[0], pos[-1]
        n_steps = int(np.floor((last - first) / step_cM + 1e-9))
        grid = first + step_cM * np.arange(n_steps + 1)
        grid = np.union1d(np.round(grid, 9), np.round(pos, 9))
        grid = grid[(grid >= first - 1e-9) & (grid <= last + 1e-9)]
        for p in grid:
            # rightmost marker at or left of p; clamp so p==last stays inside
            left = int(np.searchsorted(pos, p + 1e-9) - 1)
            left = min(max(left, 0), pos.size - 2)
            out.append(ScanPosition(gi, float(p), left, left + 1))
    return out


def position_on_map(
    linkage_map: LinkageMap, group_name: str, position_cM: float
) -> ScanPosition:
    """ScanPosition for a named group and map position."""
    names = [g.name for g in linkage_map.groups]
    if group_name not in names:
        raise GeneticsError(f"unknown linkage group {group_name!r}")
    gi = names.index(group_name)
    pos = linkage_map.groups[gi].positions
    if not pos[0] - 1e-9 <= position_cM <= pos[-1] + 1e-9:
        raise GeneticsError(
            f"position {position_cM} cM outside group {group_name!r} span "
            f"[{pos[0]}, {pos[-1]}]"
        )
    left = int(np.searchsorted(pos, position_cM + 1e-9) - 1)
    left = min(max(left, 0), pos.size - 2)
    return ScanPosition(gi, float(position_cM), left, left + 1)


def qtl_probs(dataset: Dataset, position: ScanPosition, design: str) -> np.ndarray:
    """Per-individual probabilities of the two QTL genotypes, (n, 2).

    Conditions on the nearest informative marker on each side of the
    position.  Missing calls are marginalized out of the origin chain:
    the effective switch probability to a non-adjacent marker composes
    the adjacent-locus transitions, s12*(1-s23) + s23*(1-s12), which for
    backcross collapses to the direct Haldane fraction but differs for
    RILs.  With no informative marker on either side the prior (1/2, 1/2)
    is returned.
    """
    if design not in DESIGNS:
        raise GeneticsError(f"unknown design {design!r}; expected one of {DESIGNS}")
    group = dataset.linkage_map.groups[position.group_index]
    pos = group.positions
    p = position.position_cM
    if p < pos[0] - 1e-9 or p > pos[-1] + 1e-9:
        raise GeneticsError(
            f"position {p} cM outside group {group.name!r} span "
            f"[{pos[0]}, {pos[-1]}]"
        )
    cols = dataset.linkage_map.group_columns(position.group_index)
    calls = dataset.genotypes[:, cols]  # (n, n_markers_in_group)
    n, n_markers = calls.shape

    # Work with m = 1 - 2*switch, which multiplies under chain composition.
    anchor = int(np.searchsorted(pos, p + 1e-9) - 1)  # marker at or left of p
    anchor = max(anchor, 0)
    log_m_adj = np.log(1.0 - 2.0 * design_switch_prob(np.diff(pos), design))
    cum = np.concatenate([[0.0], np.cumsum(log_m_adj)])
    m_eff = np.empty(n_markers)
    log_m_left = np.log(1.0 - 2.0 * design_switch_prob(max(p - pos[anchor], 0.0), design))
    m_eff[: anchor + 1] = np.exp(log_m_left + cum[anchor] - cum[: anchor + 1])
    if anchor + 1 < n_markers:
        b = anchor + 1
        log_m_right = np.log(1.0 - 2.0 * design_switch_prob(max(pos[b] - p, 0.0), design))
        m_eff[b:] = np.exp(log_m_right + cum[b:] - cum[b])
    log_same = np.log(np.maximum((1.0 + m_eff) / 2.0, 1e-300))
    log_diff = np.log(np.maximum((1.0 - m_eff) / 2.0, 1e-300))

    informative = calls != MISSING_GENOTYPE
    idx = np.arange(n_markers)
    is_left = pos <= p + 1e-9
    left = np.where(informative & is_left[None], idx[None], -1).max(axis=1)
    right = np.where(informative & ~is_left[None], idx[None], n_markers).min(axis=1)

    logw = np.zeros((n, 2))
    for side, none_value in ((left, -1), (right, n_markers)):
        has = side != none_value
        k = side[has]
        call = calls[has, k]
        same, diff = log_same[k], log_diff[k]
        logw[has, 0] += np.where(call == 1, same, diff)
        logw[has, 1] += np.where(call == 1, diff, same)
    w = np.exp(logw - logw.max(axis=1, keepdims=True))
    return w / w.sum(axis=1, keepdims=True)


def scan_omegas(
    dataset: Dataset, positions: list[ScanPosition], design: str
) -> list[np.ndarray]:
    """qtl_probs at every scan position (reusable across permutations,
    since permutation shuffles phenotypes while genotype rows stay put)."""
    return [qtl_probs(dataset, sp, design) for sp in positions]
