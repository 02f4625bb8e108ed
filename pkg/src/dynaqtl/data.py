"""Dataset model and CSV readers/writers.

Three input files describe a mapping experiment:

* phenotypes: long CSV ``individual,trait,time,value`` with trait indices
  1..H; every individual must have all H traits observed at each of its
  time points.
* genotypes: wide CSV ``individual,<marker>,...`` with calls coded 1/2
  (the two homozygous line genotypes) or NA for missing.
* map: CSV ``group,marker,position_cM`` with positions strictly
  increasing within a group.

A loaded :class:`Dataset` is immutable and safely shareable across
parallel workers.  Per individual, observations are stacked time-major:
all H traits at the first time point, then the second, and so on.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

MISSING_GENOTYPE = 0
GENOTYPE_CODES = (1, 2)


class ParseError(ValueError):
    """A file could not be parsed (malformed row, bad header, bad value)."""


class ConsistencyError(ValueError):
    """Files parsed but disagree with each other or with the data model."""


@dataclass(frozen=True)
class LinkageGroup:
    name: str
    markers: tuple[str, ...]
    positions: np.ndarray  # cM, strictly increasing

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if len(self.markers) != pos.size:
            raise ConsistencyError("marker/position length mismatch")
        if pos.size >= 2 and np.any(np.diff(pos) <= 0):
            raise ConsistencyError(
                f"positions not strictly increasing in group {self.name!r}"
            )
        object.__setattr__(self, "positions", pos)

    @property
    def length_cM(self) -> float:
        return float(self.positions[-1] - self.positions[0])


@dataclass(frozen=True)
class LinkageMap:
    groups: tuple[LinkageGroup, ...]

    def __post_init__(self):
        names = [g.name for g in self.groups]
        if len(set(names)) != len(names):
            raise ConsistencyError("duplicate linkage group names")

    @property
    def marker_names(self) -> list[str]:
        return [m for g in self.groups for m in g.markers]

    def marker_offsets(self) -> dict[str, int]:
        """Column index of each marker in the genotype matrix."""
        return {m: i for i, m in enumerate(self.marker_names)}

    def group_columns(self, group_index: int) -> np.ndarray:
        """Genotype-matrix column indices of one group's markers."""
        start = sum(len(g.markers) for g in self.groups[:group_index])
        return np.arange(start, start + len(self.groups[group_index].markers))


@dataclass(frozen=True)
class Dataset:
    """One mapping population: phenotypes, genotypes and the linkage map.

    ``values[i]`` has length ``n_traits * len(times[i])``, ordered
    time-major.  ``genotypes`` is (n, total markers) with 0 = missing.
    """

    individual_ids: tuple[str, ...]
    n_traits: int
    times: tuple[np.ndarray, ...]
    values: tuple[np.ndarray, ...]
    genotypes: np.ndarray
    linkage_map: LinkageMap

    def __post_init__(self):
        n = len(self.individual_ids)
        if not (len(self.times) == len(self.values) == n):
            raise ConsistencyError("per-individual arrays disagree in length")
        geno = np.asarray(self.genotypes, dtype=np.int8)
        n_markers = len(self.linkage_map.marker_names)
        if geno.shape != (n, n_markers):
            raise ConsistencyError(
                f"genotype matrix shape {geno.shape} != ({n}, {n_markers})"
            )
        for i in range(n):
            t = np.asarray(self.times[i], dtype=float)
            y = np.asarray(self.values[i], dtype=float)
            if not np.all(np.isfinite(t)):
                raise ConsistencyError(f"non-finite time for {self.individual_ids[i]}")
            if y.size != self.n_traits * t.size:
                raise ConsistencyError(
                    f"individual {self.individual_ids[i]}: expected "
                    f"{self.n_traits * t.size} values, got {y.size}"
                )
        object.__setattr__(self, "genotypes", geno)
        object.__setattr__(
            self, "times", tuple(np.asarray(t, dtype=float) for t in self.times)
        )
        object.__setattr__(
            self, "values", tuple(np.asarray(v, dtype=float) for v in self.values)
        )

    @property
    def n_individuals(self) -> int:
        return len(self.individual_ids)

    @property
    def time_range(self) -> tuple[float, float]:
        lo = min(float(t.min()) for t in self.times)
        hi = max(float(t.max()) for t in self.times)
        return lo, hi

    def trait_matrix(self, i: int) -> np.ndarray:
        """Observations of individual i as an (m_i, H) array."""
        return self.values[i].reshape(-1, self.n_traits)

    def with_permuted_phenotypes(self, perm: np.ndarray) -> "Dataset":
        """Reassign whole phenotype records to genotype rows by `perm`.

        Each individual's complete multi-trait time course stays intact;
        only the phenotype-to-genotype pairing changes.
        """
        perm = np.asarray(perm)
        return Dataset(
            individual_ids=self.individual_ids,
            n_traits=self.n_traits,
            times=tuple(self.times[p] for p in perm),
            values=tuple(self.values[p] for p in perm),
            genotypes=self.genotypes,
            linkage_map=self.linkage_map,
        )


def _read_rows(path, expected_header: list[str] | None = None, min_cols: int = 0):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise ParseError(f"{path}: empty file")
    header = [c.strip() for c in rows[0]]
    if expected_header is not None and header != expected_header:
        raise ParseError(
            f"{path}: expected header {expected_header}, got {header}"
        )
    if min_cols and len(header) < min_cols:
        raise ParseError(f"{path}: need at least {min_cols} columns")
    return header, rows[1:]


def _parse_float(text: str, path, what: str) -> float:
    try:
        return float(text)
    except ValueError as exc:
        raise ParseError(f"{path}: bad {what} {text!r}") from exc


def load_map(path) -> LinkageMap:
    _, rows = _read_rows(path, ["group", "marker", "position_cM"])
    order: list[str] = []
    markers: dict[str, list[tuple[str, float]]] = {}
    for row in rows:
        if len(row) != 3:
            raise ParseError(f"{path}: malformed row {row!r}")
        group, marker, pos = (c.strip() for c in row)
        if group not in markers:
            order.append(group)
            markers[group] = []
        markers[group].append((marker, _parse_float(pos, path, "position")))
    groups = []
    for name in order:
        ms = markers[name]
        groups.append(
            LinkageGroup(
                name=name,
                markers=tuple(m for m, _ in ms),
                positions=np.array([p for _, p in ms]),
            )
        )
    return LinkageMap(tuple(groups))


def load_phenotypes(path):
    """Returns (ids, n_traits, times per id, values per id)."""
    _, rows = _read_rows(path, ["individual", "trait", "time", "value"])
    per_ind: dict[str, dict[float, dict[int, float]]] = {}
    order: list[str] = []
    n_traits = 0
    for row in rows:
        if len(row) != 4:
            raise ParseError(f"{path}: malformed row {row!r}")
        ind, trait_s, time_s, value_s = (c.strip() for c in row)
        try:
            trait = int(trait_s)
        except ValueError as exc:
            raise ParseError(f"{path}: bad trait index {trait_s!r}") from exc
        if trait < 1:
            raise ParseError(f"{path}: trait index must be >= 1, got {trait}")
        t = _parse_float(time_s, path, "time")
        v = _parse_float(value_s, path, "value")
        if not np.isfinite(t):
            raise ParseError(f"{path}: non-finite time for {ind!r}")
        if ind not in per_ind:
            order.append(ind)
            per_ind[ind] = {}
        if trait in per_ind[ind].setdefault(t, {}):
            raise ConsistencyError(
                f"{path}: duplicate observation ({ind}, trait {trait}, t={t})"
            )
        per_ind[ind][t][trait] = v
        n_traits = max(n_traits, trait)
    times, values = [], []
    for ind in order:
        ts = sorted(per_ind[ind])
        stacked = []
        for t in ts:
            at_t = per_ind[ind][t]
            for h in range(1, n_traits + 1):
                if h not in at_t:
                    raise ConsistencyError(
                        f"{path}: individual {ind!r} missing trait {h} at t={t}"
                    )
                stacked.append(at_t[h])
        times.append(np.array(ts))
        values.append(np.array(stacked))
    return order, n_traits, times, values


def load_genotypes(path, linkage_map: LinkageMap):
    """Returns (ids in file order, genotype matrix in map marker order)."""
    header, rows = _read_rows(path, min_cols=2)
    if header[0] != "individual":
        raise ParseError(f"{path}: first column must be 'individual'")
    file_markers = header[1:]
    known = set(linkage_map.marker_names)
    unknown = [m for m in file_markers if m not in known]
    if unknown:
        raise ConsistencyError(f"{path}: markers not in map: {unknown[:5]}")
    missing = [m for m in linkage_map.marker_names if m not in file_markers]
    if missing:
        raise ConsistencyError(f"{path}: map markers absent from file: {missing[:5]}")
    col_of = {m: j for j, m in enumerate(file_markers)}
    reorder = [col_of[m] for m in linkage_map.marker_names]
    ids = []
    calls = []
    for row in rows:
        if len(row) != len(header):
            raise ParseError(f"{path}: malformed row {row!r}")
        ids.append(row[0].strip())
        parsed = []
        for cell in row[1:]:
            cell = cell.strip()
            if cell.upper() == "NA" or cell == "":
                parsed.append(MISSING_GENOTYPE)
            elif cell in ("1", "2"):
                parsed.append(int(cell))
            else:
                raise ParseError(f"{path}: bad genotype call {cell!r}")
        calls.append([parsed[j] for j in reorder])
    if len(set(ids)) != len(ids):
        raise ConsistencyError(f"{path}: duplicate individual ids")
    return ids, np.array(calls, dtype=np.int8)


def load_dataset(phenotype_path, genotype_path, map_path) -> Dataset:
    """Read and cross-validate the three input files."""
    linkage_map = load_map(map_path)
    pheno_ids, n_traits, times, values = load_phenotypes(phenotype_path)
    geno_ids, geno = load_genotypes(genotype_path, linkage_map)
    if set(pheno_ids) != set(geno_ids):
        only_p = sorted(set(pheno_ids) - set(geno_ids))
        only_g = sorted(set(geno_ids) - set(pheno_ids))
        raise ConsistencyError(
            f"phenotype/genotype individuals disagree "
            f"(phenotypes only: {only_p[:5]}, genotypes only: {only_g[:5]})"
        )
    row_of = {ind: i for i, ind in enumerate(geno_ids)}
    geno = geno[[row_of[ind] for ind in pheno_ids]]
    return Dataset(
        individual_ids=tuple(pheno_ids),
        n_traits=n_traits,
        times=tuple(times),
        values=tuple(values),
        genotypes=geno,
        linkage_map=linkage_map,
    )


def _fmt(x: float) -> str:
    return repr(float(x))


def write_map(linkage_map: LinkageMap, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["group", "marker", "position_cM"])
        for g in linkage_map.groups:
            for m, p in zip(g.markers, g.positions):
                w.writerow([g.name, m, _fmt(p)])


def write_phenotypes(dataset: Dataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["individual", "trait", "time", "value"])
        for i, ind in enumerate(dataset.individual_ids):
            mat = dataset.trait_matrix(i)
            for r, t in enumerate(dataset.times[i]):
                for h in range(dataset.n_traits):
                    w.writerow([ind, h + 1, _fmt(t), _fmt(mat[r, h])])


def write_genotypes(dataset: Dataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["individual"] + dataset.linkage_map.marker_names)
        for i, ind in enumerate(dataset.individual_ids):
            row = [
                "NA" if c == MISSING_GENOTYPE else str(int(c))
                for c in dataset.genotypes[i]
            ]
            w.writerow([ind] + row)


def write_dataset(dataset: Dataset, phenotype_path, genotype_path, map_path) -> None:
    write_phenotypes(dataset, phenotype_path)
    write_genotypes(dataset, genotype_path)
    write_map(dataset.linkage_map, map_path)


def write_scan_result(result, path) -> None:
    """Scan CSV: group,position_cM,LR rows, then a '#'-prefixed summary
    block with the threshold and declared QTL positions (if any)."""
    lr = np.asarray(result.lr, dtype=float)
    if lr.size and not np.all(np.isfinite(lr[~np.isnan(lr)])):
        raise ValueError("scan result contains non-finite LR values")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["group", "position_cM", "LR"])
        for sp, value in zip(result.positions, lr):
            w.writerow(
                [
                    result.group_names[sp.group_index],
                    _fmt(sp.position_cM),
                    "NA" if np.isnan(value) else _fmt(value),
                ]
            )
        if result.threshold is not None:
            fh.write(f"# threshold,{_fmt(result.threshold)}\n")
            for gi, pos, peak in result.qtl_calls:
                fh.write(
                    f"# qtl,{result.group_names[gi]},{_fmt(pos)},{_fmt(peak)}\n"
                )


def read_scan_result(path):
    """Parse a scan CSV back into (rows, threshold, qtl_calls) where rows
    is a list of (group, position, LR-or-None)."""
    rows, threshold, calls = [], None, []
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError(f"{path}: empty file")
    for line in lines[1:]:
        if line.startswith("# threshold,"):
            threshold = float(line.split(",", 1)[1])
        elif line.startswith("# qtl,"):
            _, group, pos, peak = line[2:].split(",")
            calls.append((group, float(pos), float(peak)))
        elif line.strip():
            group, pos, value = line.split(",")
            rows.append(
                (group, float(pos), None if value == "NA" else float(value))
            )
    return rows, threshold, calls
