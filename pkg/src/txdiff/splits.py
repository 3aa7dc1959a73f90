"""Leakage-aware dataset partitions: random, Bemis-Murcko scaffold and
hierarchical cell-line splits, plus a cross-partition leakage audit."""

from __future__ import annotations

import csv
import warnings
from collections import defaultdict
from functools import lru_cache
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .chem import EMPTY_SCAFFOLD, Scaffold, scaffold_from_smiles
from .molgraph import SmilesError, canonical_smiles
from .tfe import largest_remainder

PARTITIONS = ("train", "val", "test")
RATIOS = (85, 10, 5)
CELL_RATIOS = (89, 11)
TRIVIAL_MAX_ATOMS = 6
MIN_RECORDS = 20
INDEX_HEADER = ("id", "smiles", "cell_line", "tissue", "tumor_type")


class TooSmall(ValueError):
    pass


class ParseFailure(ValueError):
    def __init__(self, record_id: str, cause: Exception):
        super().__init__(f"record {record_id}: {cause}")
        self.record_id = record_id


class UnknownTissue(KeyError):
    pass


class DuplicateRecord(ValueError):
    pass


class UnsplittableWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Record:
    id: str
    smiles: str
    cell_line: str = ""
    tissue: str = ""
    tumor_type: str = ""


@dataclass
class DatasetIndex:
    records: list[Record]

    def __post_init__(self):
        self.records = [r if isinstance(r, Record) else Record(*r) for r in self.records]
        seen = set()
        for r in self.records:
            if r.id in seen:
                raise DuplicateRecord(f"duplicate record id {r.id!r}")
            seen.add(r.id)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.records]


@dataclass
class SplitAssignment:
    """``id -> partition`` over the retained records; ``dropped`` lists downsampled ids."""

    partition: dict[str, str]
    protocol: str
    dropped: list[str] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)

    def members(self, part: str) -> list[str]:
        return [i for i, p in self.partition.items() if p == part]

    def counts(self) -> dict[str, int]:
        out = dict.fromkeys(PARTITIONS, 0)
        for p in self.partition.values():
            out[p] += 1
        return out


# ---------------------------------------------------------------------------
# files


def read_index(path: str | Path) -> DatasetIndex:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(INDEX_HEADER) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"index header lacks {sorted(missing)}")
        return DatasetIndex([Record(*(row[k] for k in INDEX_HEADER)) for row in reader])


def write_index(path: str | Path, ds: DatasetIndex | Iterable) -> None:
    records = ds.records if isinstance(ds, DatasetIndex) else DatasetIndex(list(ds)).records
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(INDEX_HEADER)
        for r in records:
            writer.writerow([r.id, r.smiles, r.cell_line, r.tissue, r.tumor_type])


def write_split(path: str | Path, split: SplitAssignment) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("id", "partition"))
        for ident, part in split.partition.items():
            writer.writerow((ident, part))


def read_split(path: str | Path, protocol: str = "unknown") -> SplitAssignment:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    bad = {r["partition"] for r in rows} - set(PARTITIONS)
    if bad:
        raise ValueError(f"unknown partitions {sorted(bad)}")
    return SplitAssignment({r["id"]: r["partition"] for r in rows}, protocol)


# ---------------------------------------------------------------------------
# protocols


def random_split(ds: DatasetIndex, seed: int = 0) -> SplitAssignment:
    """Uniform shuffle, then an 85:10:5 cut with largest-remainder counts."""
    n = len(ds)
    if n < MIN_RECORDS:
        raise TooSmall(f"random split needs at least {MIN_RECORDS} records, got {n}")
    order = np.random.default_rng([seed, 0x5A11]).permutation(n)
    n_train, n_val, _ = largest_remainder(RATIOS, n)
    parts = np.full(n, "test", dtype=object)
    parts[order[:n_train]] = "train"
    parts[order[n_train : n_train + n_val]] = "val"
    return SplitAssignment({r.id: str(p) for r, p in zip(ds.records, parts)}, "random")


def record_scaffolds(ds: DatasetIndex) -> dict[str, Scaffold]:
    out = {}
    for r in ds.records:
        try:
            out[r.id] = scaffold_from_smiles(r.smiles)
        except SmilesError as exc:
            raise ParseFailure(r.id, exc) from exc
    return out


def _emptiest(filled: dict[str, int], targets: dict[str, float], parts: Sequence[str]) -> str:
    """Partition with the most room left below its target; ties go to the earlier partition."""
    return min(parts, key=lambda p: (filled[p] - targets[p], parts.index(p)))


def scaffold_split(ds: DatasetIndex, seed: int = 0, trivial_max_atoms: int = TRIVIAL_MAX_ATOMS) -> SplitAssignment:
    """Whole scaffold clusters, largest first, each to the partition with the most room below its target.

    Trivial scaffolds (empty or at most ``trivial_max_atoms`` heavy atoms) go to
    train, each capped at the median cluster size; the excess is dropped.
    """
    scaffolds = record_scaffolds(ds)
    clusters: dict[Scaffold, list[str]] = defaultdict(list)
    for r in ds.records:
        clusters[scaffolds[r.id]].append(r.id)
    rng = np.random.default_rng([seed, 0x5CAF])

    def trivial(s: Scaffold) -> bool:
        return s == EMPTY_SCAFFOLD or s.n_heavy <= trivial_max_atoms

    keys = sorted(clusters)
    regular = [s for s in keys if not trivial(s)]
    sizes = [len(clusters[s]) for s in (regular or keys)]
    cap = max(1, int(np.median(sizes)))
    partition: dict[str, str] = {}
    dropped: list[str] = []
    for s in keys:
        if not trivial(s):
            continue
        members = clusters[s]
        keep = set(members) if len(members) <= cap else {members[i] for i in rng.permutation(len(members))[:cap]}
        for ident in members:
            if ident in keep:
                partition[ident] = "train"
            else:
                dropped.append(ident)
    total = len(ds) - len(dropped)
    targets = {p: total * w / sum(RATIOS) for p, w in zip(PARTITIONS, RATIOS)}
    filled = dict.fromkeys(PARTITIONS, 0)
    filled["train"] = len(partition)
    shuffled = [regular[i] for i in rng.permutation(len(regular))]
    for s in sorted(shuffled, key=lambda s: -len(clusters[s])):
        part = _emptiest(filled, targets, PARTITIONS)
        for ident in clusters[s]:
            partition[ident] = part
        filled[part] += len(clusters[s])
    ordered = {r.id: partition[r.id] for r in ds.records if r.id in partition}
    split = SplitAssignment(ordered, "scaffold", dropped)
    _flag_empty(split)
    return split


def _flag_empty(split: SplitAssignment) -> None:
    counts = split.counts()
    split.flags = [f"empty_{p}" for p in PARTITIONS if counts[p] == 0]
    if counts["test"] == 0:
        warnings.warn(f"{split.protocol} split left the test partition empty", UnsplittableWarning, stacklevel=3)


def cell_split(ds: DatasetIndex, held_out_tissues: Iterable[str] = (), seed: int = 0,
               held_out_tumor_types: Iterable[str] = ()) -> SplitAssignment:
    """Held-out tissues or tumor types go to test; remaining cell lines split 89:11 train:val."""
    held_tissues, held_tumors = set(held_out_tissues), set(held_out_tumor_types)
    untagged = [r.id for r in ds.records if not r.tissue]
    if untagged:
        raise UnknownTissue(f"records without tissue: {untagged[:5]}")
    unknown = (held_tissues - {r.tissue for r in ds.records}) | (held_tumors - {r.tumor_type for r in ds.records})
    if unknown:
        raise UnknownTissue(f"not in dataset: {sorted(unknown)}")
    if not held_tissues and not held_tumors:
        raise ValueError("hold out at least one tissue or tumor type")

    def held(r: Record) -> bool:
        return r.tissue in held_tissues or r.tumor_type in held_tumors

    lines = sorted({r.cell_line for r in ds.records if not held(r)})
    straddling = sorted({r.cell_line for r in ds.records if held(r)} & set(lines))
    if straddling:
        raise ValueError(f"cell lines span held-out and retained groups: {straddling[:5]}")
    part_of = {}
    if lines:
        order = np.random.default_rng([seed, 0xCE11]).permutation(len(lines))
        n_train = int(largest_remainder(CELL_RATIOS, len(lines))[0])
        part_of = {lines[i]: ("train" if k < n_train else "val") for k, i in enumerate(order)}
    split = SplitAssignment({r.id: "test" if held(r) else part_of[r.cell_line] for r in ds.records}, "cell")
    _flag_empty(split)
    return split


# ---------------------------------------------------------------------------
# audit

GUARDED = {"random": (), "scaffold": ("scaffold", "duplicate_smiles"), "cell": ("cell_line",)}


@dataclass
class AuditReport:
    protocol: str
    scaffold_overlap: int
    cell_line_overlap: int
    duplicate_smiles: int
    offending: dict[str, list[str]]
    guarded: tuple[str, ...]

    @property
    def passed(self) -> bool:
        counts = {"scaffold": self.scaffold_overlap, "cell_line": self.cell_line_overlap,
                  "duplicate_smiles": self.duplicate_smiles}
        return all(counts[axis] == 0 for axis in self.guarded)

    def summary(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (f"{verdict} protocol={self.protocol} scaffold_overlap={self.scaffold_overlap} "
                f"cell_line_overlap={self.cell_line_overlap} duplicate_smiles={self.duplicate_smiles}")


_canonical = lru_cache(maxsize=65536)(canonical_smiles)


def _straddlers(keys: dict[str, object], split: SplitAssignment) -> tuple[int, list[str]]:
    parts = defaultdict(set)
    for ident, part in split.partition.items():
        parts[keys[ident]].add(part)
    shared = {k for k, ps in parts.items() if len(ps) > 1}
    return len(shared), sorted(i for i in split.partition if keys[i] in shared)


def leakage_audit(ds: DatasetIndex, split: SplitAssignment, protocol: str | None = None) -> AuditReport:
    """Counts of scaffolds, cell lines and canonical SMILES present in more than one partition."""
    protocol = protocol or split.protocol
    if protocol not in GUARDED:
        raise ValueError(f"unknown protocol {protocol!r}")
    by_id = {r.id: r for r in ds.records}
    missing = set(split.partition) - set(by_id)
    if missing:
        raise KeyError(f"split mentions unknown ids {sorted(missing)[:5]}")
    scaffolds = record_scaffolds(DatasetIndex([by_id[i] for i in split.partition]))
    canon = {i: _canonical(by_id[i].smiles) for i in split.partition}
    cells = {i: by_id[i].cell_line for i in split.partition}
    n_scaf, bad_scaf = _straddlers(scaffolds, split)
    n_cell, bad_cell = _straddlers(cells, split)
    n_dup, bad_dup = _straddlers(canon, split)
    offending = {"scaffold": bad_scaf, "cell_line": bad_cell, "duplicate_smiles": bad_dup}
    return AuditReport(protocol, n_scaf, n_cell, n_dup, offending, GUARDED[protocol])
