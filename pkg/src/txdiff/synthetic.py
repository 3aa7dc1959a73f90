"""Synthetic fixtures: random molecules, two-cluster conditioning tasks, cell
populations and dataset indices with the same file layouts as real data."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .molgraph import (
    VALENCES,
    Atom,
    Bond,
    BondOrder,
    MolecularGraph,
    is_valid,
    parse_smiles,
    write_smiles,
)

_ELEMENT_WEIGHTS = {
    "C": 0.62, "N": 0.12, "O": 0.12, "F": 0.03, "S": 0.03, "Cl": 0.03,
    "Br": 0.015, "I": 0.005, "P": 0.01, "B": 0.005, "Si": 0.005,
}

# aromatic ring templates, one element per ring position
_AROMATIC_RINGS = [
    ("C", "C", "C", "C", "C", "C"),
    ("N", "C", "C", "C", "C", "C"),
    ("N", "C", "N", "C", "C", "C"),
    ("S", "C", "C", "C", "C"),
    ("O", "C", "C", "C", "C"),
]


class _Builder:
    def __init__(self):
        self.atoms: list[Atom] = []
        self.bonds: dict[tuple[int, int], BondOrder] = {}

    def add_atom(self, atom: Atom) -> int:
        self.atoms.append(atom)
        return len(self.atoms) - 1

    def bond(self, i: int, j: int, order: BondOrder):
        self.bonds[min(i, j), max(i, j)] = order

    def used(self, i: int) -> int:
        return sum(1 if o == BondOrder.AROMATIC else int(o) for (a, b), o in self.bonds.items() if i in (a, b))

    def free(self, i: int) -> int:
        atom = self.atoms[i]
        if atom.aromatic:
            # carbons keep one slot for a substituent; heteroatoms take none
            return (4 - 1 - self.used(i)) if atom.element == "C" else 0
        return VALENCES[atom.element][0] - self.used(i)

    def neighbors(self, i: int) -> set[int]:
        return {b if a == i else a for (a, b) in self.bonds if i in (a, b)}

    def graph(self) -> MolecularGraph:
        return MolecularGraph(tuple(self.atoms), tuple(Bond(i, j, o) for (i, j), o in self.bonds.items()))


def _add_aromatic_ring(b: _Builder, rng: np.random.Generator) -> list[int]:
    template = _AROMATIC_RINGS[rng.integers(len(_AROMATIC_RINGS))]
    idx = []
    for el in template:
        h = 1 if (el == "N" and len(template) == 5) else 0
        idx.append(b.add_atom(Atom(el, aromatic=True, explicit_h=h, no_implicit=bool(h))))
    for k in range(len(idx)):
        b.bond(idx[k], idx[(k + 1) % len(idx)], BondOrder.AROMATIC)
    return idx


def random_molecule(rng: np.random.Generator, n_heavy: int = 12, ring_prob: float = 0.35) -> MolecularGraph:
    """Grow a random valid molecule with roughly ``n_heavy`` heavy atoms."""
    elements = list(_ELEMENT_WEIGHTS)
    weights = np.array([_ELEMENT_WEIGHTS[e] for e in elements])
    weights /= weights.sum()
    for _ in range(100):
        b = _Builder()
        if rng.random() < ring_prob:
            _add_aromatic_ring(b, rng)
        else:
            b.add_atom(Atom("C"))
        while len(b.atoms) < n_heavy:
            candidates = [i for i in range(len(b.atoms)) if b.free(i) > 0]
            if not candidates:
                break
            anchor = candidates[rng.integers(len(candidates))]
            if rng.random() < 0.08 and len(b.atoms) + 5 <= n_heavy + 2:
                ring = _add_aromatic_ring(b, rng)
                hook = [i for i in ring if b.free(i) > 0]
                b.bond(anchor, hook[rng.integers(len(hook))], BondOrder.SINGLE)
                continue
            element = elements[rng.choice(len(elements), p=weights)]
            new = b.add_atom(Atom(element))
            cap = min(b.free(anchor), b.free(new))
            order = BondOrder.SINGLE
            if cap >= 2 and rng.random() < 0.15:
                order = BondOrder.DOUBLE if (cap < 3 or rng.random() < 0.8) else BondOrder.TRIPLE
            b.bond(anchor, new, order)
        # aliphatic ring closures between distant atoms with free valence
        if rng.random() < 0.3:
            open_atoms = [i for i in range(len(b.atoms)) if not b.atoms[i].aromatic and b.free(i) > 0]
            rng.shuffle(open_atoms)
            for i in open_atoms[:4]:
                for j in open_atoms:
                    if j != i and j not in b.neighbors(i) and (min(i, j), max(i, j)) not in b.bonds:
                        if _path_length(b, i, j) in (4, 5) and b.free(i) > 0 and b.free(j) > 0:
                            b.bond(i, j, BondOrder.SINGLE)
                            break
        g = b.graph()
        if is_valid(g) and len(g.components()) == 1:
            return g
    raise RuntimeError("failed to build a valid molecule")


def _path_length(b: _Builder, i: int, j: int) -> int:
    frontier, seen, dist = {i}, {i}, 0
    while frontier:
        if j in frontier:
            return dist
        nxt = set()
        for a in frontier:
            nxt |= b.neighbors(a) - seen
        seen |= nxt
        frontier = nxt
        dist += 1
    return -1


def random_corpus(n: int, seed: int = 0, min_atoms: int = 4, max_atoms: int = 24) -> list[str]:
    rng = np.random.default_rng(seed)
    return [write_smiles(random_molecule(rng, int(rng.integers(min_atoms, max_atoms + 1)))) for _ in range(n)]


# ---------------------------------------------------------------------------
# two-cluster conditioning task

_RING_SUBSTITUENTS = ["C", "O", "N", "F", "Cl", "CC", "CO", "CN", "C(=O)O", "OC", "C#N", "C=O"]
_CHAIN_HEADS = ["N", "O", "S", "Cl", "F"]


def cluster_molecule(cluster: int, rng: np.random.Generator) -> str:
    """Cluster 0: substituted benzenes. Cluster 1: acyclic heteroatom chains."""
    if cluster == 0:
        g = parse_smiles("c1ccccc1")
        n_subs = int(rng.integers(1, 3))
        for site in sorted(rng.choice(6, size=n_subs, replace=False)):
            g = _attach_at(g, int(site), parse_smiles(_RING_SUBSTITUENTS[rng.integers(len(_RING_SUBSTITUENTS))]))
        return write_smiles(g)
    length = int(rng.integers(4, 8))
    chain = ["C"] * length
    for k in range(1, length):
        if rng.random() < 0.25:
            chain[k] = ["N", "O"][rng.integers(2)]
    # avoid O-O / N-O adjacency in the backbone
    for k in range(1, length):
        if chain[k] != "C" and chain[k - 1] != "C":
            chain[k] = "C"
    text = _CHAIN_HEADS[rng.integers(len(_CHAIN_HEADS))] + "".join(chain)
    if rng.random() < 0.5:
        text += "C(=O)O" if rng.random() < 0.5 else "C=C"
    return write_smiles(parse_smiles(text))


@dataclass
class ClusterTask:
    smiles: list[str]
    clusters: np.ndarray          # (n,) cluster index per molecule
    pre: np.ndarray               # (n, N, d) pre-perturbation profiles
    post: np.ndarray              # (n, N, d) post-perturbation profiles
    shifts: np.ndarray            # (n_clusters, d) cluster response directions


def two_cluster_task(n: int = 200, d: int = 128, n_tokens: int = 1, seed: int = 0, noise: float = 0.3) -> ClusterTask:
    """Molecules from two structural clusters with paired expression shifts.

    Each pair's post profile is its pre profile moved along the cluster's
    response direction, so the (pre, post) difference identifies the cluster.
    """
    rng = np.random.default_rng(seed)
    clusters = np.arange(n) % 2
    smiles = [cluster_molecule(int(c), rng) for c in clusters]
    shifts = rng.normal(size=(2, d))
    shifts *= 2.0 / np.linalg.norm(shifts, axis=1, keepdims=True) * np.sqrt(d) / 4
    pre = rng.normal(size=(n, n_tokens, d))
    post = pre + shifts[clusters][:, None, :] + noise * rng.normal(size=(n, n_tokens, d))
    return ClusterTask(smiles, clusters, pre, post, shifts)


# ---------------------------------------------------------------------------
# cell populations and dataset indices

PHASES = ("G1", "S", "G2M")


def random_population(rng: np.random.Generator, n_cells: int, d: int = 128, n_clusters: int = 3,
                      phase_probs=(0.5, 0.25, 0.25)):
    from .tfe import CellPopulation

    phases = rng.choice(len(PHASES), size=n_cells, p=np.asarray(phase_probs) / np.sum(phase_probs))
    clusters = rng.integers(0, n_clusters, size=n_cells)
    centers = rng.normal(size=(len(PHASES), n_clusters, d))
    emb = centers[phases, clusters] + 0.2 * rng.normal(size=(n_cells, d))
    return CellPopulation(emb, [PHASES[p] for p in phases], clusters.tolist())


TISSUES = {
    "Lung": ("NSCLC", "SCLC"),
    "Breast": ("Luminal", "Basal"),
    "Skin": ("Melanoma",),
    "Colon": ("Adenocarcinoma",),
    "Blood": ("AML", "CML"),
}


def synthetic_index(n: int, seed: int = 0, n_scaffold_families: int = 60, cells_per_type: int = 4):
    """Records ``(id, smiles, cell_line, tissue, tumor_type)`` with shared scaffolds."""
    rng = np.random.default_rng(seed)
    families = [write_smiles(random_molecule(rng, int(rng.integers(5, 12)), ring_prob=0.9))
                for _ in range(n_scaffold_families)]
    cell_lines = [(f"{tissue[:3].upper()}-{tumor[:3].upper()}-{k}", tissue, tumor)
                  for tissue, tumors in TISSUES.items() for tumor in tumors for k in range(cells_per_type)]
    side = ["C", "O", "N", "CC", "F", "Cl", "OC", "CN"]
    records = []
    for r in range(n):
        base = families[int(rng.zipf(1.6)) % len(families)]
        smiles = base
        if rng.random() < 0.8:
            smiles = _attach(base, side[rng.integers(len(side))], rng)
        line, tissue, tumor = cell_lines[rng.integers(len(cell_lines))]
        records.append((f"R{r:05d}", smiles, line, tissue, tumor))
    return records


def _attach_at(g: MolecularGraph, site: int, side: MolecularGraph) -> MolecularGraph:
    off = len(g.atoms)
    bonds = g.bonds + tuple(Bond(b.i + off, b.j + off, b.order) for b in side.bonds)
    return MolecularGraph(g.atoms + side.atoms, bonds + (Bond(site, off, BondOrder.SINGLE),))


def _attach(base: str, side: str, rng: np.random.Generator) -> str:
    """Bond the first atom of ``side`` to a random atom of ``base`` that carries hydrogen."""
    g = parse_smiles(base)
    sites = [i for i in range(len(g.atoms)) if g.hydrogen_counts[i] > 0 and not g.atoms[i].no_implicit]
    if not sites:
        return base
    merged = _attach_at(g, sites[rng.integers(len(sites))], parse_smiles(side))
    return write_smiles(merged) if is_valid(merged) else base
