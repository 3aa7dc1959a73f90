"""Morgan count fingerprints, min-max Tanimoto, Bemis-Murcko scaffolds and the
generation metric suite."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import asdict, dataclass, fields
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .molgraph import (
    ELEMENT_INDEX,
    ELEMENTS,
    MolecularGraph,
    SmilesError,
    is_valid,
    largest_component,
    parse_smiles,
    write_smiles,
)

N_BITS = 2048
DEFAULT_RADIUS = 2


class InvalidGraph(ValueError):
    pass


class BothZero(ValueError):
    pass


class EmptyInput(ValueError):
    pass


def _mix(values: Sequence[int]) -> int:
    """Stable 64-bit hash: BLAKE2b (8-byte digest) over little-endian int64 words."""
    data = struct.pack(f"<{len(values)}q", *[v & 0x7FFFFFFFFFFFFFFF for v in values])
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


def _ring_atoms(g: MolecularGraph) -> set[int]:
    out = set()
    for i, j in g.ring_bonds:
        out.add(i)
        out.add(j)
    return out


def environment_ids(g: MolecularGraph, radius: int = DEFAULT_RADIUS) -> list[list[int]]:
    """Per-radius lists of 64-bit environment identifiers, one per atom."""
    ring = _ring_atoms(g)
    current = [
        _mix((
            ELEMENT_INDEX[a.element], g.degree(i), g.hydrogen_counts[i],
            a.formal_charge, int(a.aromatic), int(i in ring),
        ))
        for i, a in enumerate(g.atoms)
    ]
    layers = [current]
    for r in range(1, radius + 1):
        nxt = []
        for i in range(len(g.atoms)):
            nbr = sorted((int(order), current[j]) for j, order in g.adjacency[i])
            flat = [r, current[i]]
            for order, ident in nbr:
                flat += [order, ident]
            nxt.append(_mix(flat))
        current = nxt
        layers.append(current)
    return layers


def morgan_fingerprint(g: MolecularGraph, radius: int = DEFAULT_RADIUS, n_bits: int = N_BITS,
                       check: bool = True) -> np.ndarray:
    """Count vector over hashed circular environments of radii ``0..radius``.

    Every atom contributes one count per radius; identifiers are folded
    modulo ``n_bits``.
    """
    if radius < 0 or n_bits < 1:
        raise ValueError("radius must be >= 0 and n_bits >= 1")
    if check and not (g.atoms and is_valid(g)):
        raise InvalidGraph("fingerprint requires a valid graph")
    fp = np.zeros(n_bits, dtype=np.int64)
    for layer in environment_ids(g, radius):
        for ident in layer:
            fp[ident % n_bits] += 1
    return fp


@lru_cache(maxsize=65536)
def fingerprint_from_smiles(smiles: str, radius: int = DEFAULT_RADIUS, n_bits: int = N_BITS) -> np.ndarray:
    fp = morgan_fingerprint(parse_smiles(smiles), radius, n_bits, check=False)
    fp.setflags(write=False)
    return fp


def tanimoto(a, b) -> float:
    """Min-max Tanimoto ``sum(min) / sum(max)`` of two non-negative vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch {a.shape} vs {b.shape}")
    if (a < 0).any() or (b < 0).any():
        raise ValueError("tanimoto requires non-negative vectors")
    denom = np.maximum(a, b).sum()
    if denom == 0:
        raise BothZero("both vectors are all zero")
    return float(np.minimum(a, b).sum() / denom)


def tanimoto_matrix(a: np.ndarray, b: np.ndarray, chunk: int = 64) -> np.ndarray:
    """Pairwise min-max Tanimoto between rows of ``a`` (n, d) and ``b`` (m, d)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    out = np.empty((len(a), len(b)))
    for s in range(0, len(a), chunk):
        block = a[s : s + chunk, None, :]
        mins = np.minimum(block, b[None]).sum(-1)
        maxs = np.maximum(block, b[None]).sum(-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            out[s : s + chunk] = np.where(maxs > 0, mins / np.where(maxs > 0, maxs, 1), 0.0)
    return out


# ---------------------------------------------------------------------------
# scaffolds


@dataclass(frozen=True, order=True)
class Scaffold:
    canonical_smiles: str

    @property
    def is_empty(self) -> bool:
        return self.canonical_smiles == ""

    @property
    def n_heavy(self) -> int:
        return 0 if self.is_empty else len(parse_smiles(self.canonical_smiles).atoms)

    def __str__(self) -> str:
        return self.canonical_smiles or "<EMPTY>"


EMPTY_SCAFFOLD = Scaffold("")


def murcko_atoms(g: MolecularGraph) -> list[int]:
    """Atoms kept after repeatedly pruning non-ring atoms of degree <= 1."""
    ring = _ring_atoms(g)
    alive = set(range(len(g.atoms)))
    degree = {i: g.degree(i) for i in alive}
    queue = [i for i in alive if i not in ring and degree[i] <= 1]
    while queue:
        i = queue.pop()
        if i not in alive:
            continue
        alive.remove(i)
        for j, _ in g.adjacency[i]:
            if j in alive:
                degree[j] -= 1
                if j not in ring and degree[j] <= 1:
                    queue.append(j)
    return sorted(alive)


def bemis_murcko(g: MolecularGraph, check: bool = True) -> Scaffold:
    if check and not (g.atoms and is_valid(g)):
        raise InvalidGraph("scaffold requires a valid graph")
    keep = murcko_atoms(g)
    if not keep:
        return EMPTY_SCAFFOLD
    return Scaffold(write_smiles(g.subgraph(keep)))


@lru_cache(maxsize=65536)
def scaffold_from_smiles(smiles: str) -> Scaffold:
    return bemis_murcko(parse_smiles(smiles), check=False)


# ---------------------------------------------------------------------------
# metric suite


@dataclass
class MetricReport:
    validity: float
    uniqueness: float
    coverage: float
    morgan_sim: float
    scaffold_unique: float
    scaffold_novelty: float
    internal_diversity: float

    def to_text(self) -> str:
        return "".join(f"{k}\t{v:.6f}\n" for k, v in asdict(self).items())

    @classmethod
    def from_text(cls, text: str) -> "MetricReport":
        values = {}
        for line in text.splitlines():
            if line.strip():
                key, value = line.split("\t")
                values[key] = float(value)
        names = {f.name for f in fields(cls)}
        if set(values) != names:
            raise ValueError(f"expected keys {sorted(names)}")
        return cls(**values)


def _mean_pairwise_distance(fps: np.ndarray) -> float:
    n = len(fps)
    if n < 2:
        return 0.0
    sims = tanimoto_matrix(fps, fps)
    iu = np.triu_indices(n, k=1)
    return float(np.mean(1.0 - sims[iu]))


def metric_suite(
    generated: Sequence[MolecularGraph],
    reference: Sequence[MolecularGraph],
    training_scaffolds: Iterable[Scaffold] = (),
    pairs: Sequence[int | None] | None = None,
    radius: int = DEFAULT_RADIUS,
) -> MetricReport:
    """Distributional and similarity metrics for a generated set.

    ``pairs[k]`` optionally names the reference index paired with generated
    molecule ``k``; paired molecules are scored against that target, the rest
    against their best match in ``reference``. Metrics other than validity
    are computed over the valid generated molecules (largest component).
    """
    if not generated:
        raise EmptyInput("generated set is empty")
    valid_idx = [k for k, g in enumerate(generated) if g.atoms and is_valid(g)]
    validity = len(valid_idx) / len(generated)
    if not valid_idx:
        return MetricReport(validity, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    mols = [largest_component(generated[k]) for k in valid_idx]
    smiles = [write_smiles(m) for m in mols]
    uniqueness = len(set(smiles)) / len(smiles)
    elements = set()
    for m in mols:
        elements.update(a.element for a in m.atoms)
    coverage = len(elements) / len(ELEMENTS)

    fps = np.stack([morgan_fingerprint(m, radius, check=False) for m in mols])
    morgan_sim = 0.0
    if reference:
        ref_fps = np.stack([morgan_fingerprint(r, radius, check=False) for r in reference])
        sims = tanimoto_matrix(fps, ref_fps)
        per = []
        for row, k in enumerate(valid_idx):
            target = pairs[k] if pairs is not None else None
            per.append(sims[row, target] if target is not None else sims[row].max())
        morgan_sim = float(np.mean(per))

    scaffolds = [bemis_murcko(m, check=False) for m in mols]
    distinct = set(scaffolds)
    scaffold_unique = len(distinct) / len(scaffolds)
    train = set(training_scaffolds)
    scaffold_novelty = sum(1 for s in distinct if s not in train) / len(distinct)
    return MetricReport(
        validity=validity,
        uniqueness=uniqueness,
        coverage=coverage,
        morgan_sim=morgan_sim,
        scaffold_unique=scaffold_unique,
        scaffold_novelty=scaffold_novelty,
        internal_diversity=_mean_pairwise_distance(fps),
    )


def graphs_from_smiles(smiles: Iterable[str]) -> list[MolecularGraph]:
    out = []
    for s in smiles:
        try:
            out.append(parse_smiles(s))
        except SmilesError:
            out.append(MolecularGraph(()))
    return out
