"""Molecular graphs, a SMILES reader/writer, valence rules and canonical ranking.

The supported SMILES subset covers the organic subset, aromatic lowercase
atoms, bracket atoms with hydrogen counts and charges, branches, ring closures
(digits and ``%nn``) and the bond symbols ``- = # :``. Stereo marks and
isotopes are rejected.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from enum import IntEnum
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Sequence

ELEMENTS: tuple[str, ...] = ("B", "C", "N", "O", "F", "Si", "P", "S", "Cl", "Br", "I")
ELEMENT_INDEX = {sym: i for i, sym in enumerate(ELEMENTS)}

# Allowed valences, smallest first. Implicit hydrogens fill up to the first
# valence that accommodates the explicit bonds.
VALENCES: dict[str, tuple[int, ...]] = {
    "B": (3,),
    "C": (4,),
    "N": (3,),
    "O": (2,),
    "F": (1,),
    "Si": (4,),
    "P": (3, 5),
    "S": (2, 4, 6),
    "Cl": (1,),
    "Br": (1,),
    "I": (1,),
}
MAX_VALENCE = {sym: max(v) for sym, v in VALENCES.items()}

ORGANIC_SUBSET = frozenset({"B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I"})
AROMATIC_ELEMENTS = frozenset({"B", "C", "N", "O", "P", "S"})


class BondOrder(IntEnum):
    SINGLE = 1
    DOUBLE = 2
    TRIPLE = 3
    AROMATIC = 4


_BOND_SYMBOLS = {"-": BondOrder.SINGLE, "=": BondOrder.DOUBLE, "#": BondOrder.TRIPLE, ":": BondOrder.AROMATIC}


class SmilesError(ValueError):
    """Base class for SMILES failures; ``offset`` is the 0-based byte position."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class SmilesSyntaxError(SmilesError):
    pass


class UnbalancedParenthesis(SmilesError):
    pass


class UnknownElement(SmilesError):
    pass


class UnclosedRing(SmilesError):
    pass


class ValenceViolation(SmilesError):
    pass


@dataclass(frozen=True)
class Atom:
    element: str
    formal_charge: int = 0
    aromatic: bool = False
    explicit_h: int = 0
    # Bracket atoms carry their full hydrogen count; no implicit hydrogens are added.
    no_implicit: bool = False

    def __post_init__(self):
        if self.element not in ELEMENT_INDEX:
            raise ValueError(f"element {self.element!r} outside the heavy-atom vocabulary")
        if self.explicit_h < 0 or self.explicit_h > MAX_VALENCE[self.element] + abs(self.formal_charge):
            raise ValueError(f"bad hydrogen count {self.explicit_h} for {self.element}")


@dataclass(frozen=True, order=True)
class Bond:
    i: int
    j: int
    order: BondOrder = BondOrder.SINGLE

    def __post_init__(self):
        if self.i == self.j:
            raise ValueError("self-loop bond")
        if self.i > self.j:
            i, j = self.j, self.i
            object.__setattr__(self, "i", i)
            object.__setattr__(self, "j", j)
        object.__setattr__(self, "order", BondOrder(self.order))


@dataclass(frozen=True)
class MolecularGraph:
    atoms: tuple[Atom, ...]
    bonds: tuple[Bond, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(self.atoms))
        bonds = tuple(sorted(self.bonds))
        n = len(self.atoms)
        seen = set()
        for b in bonds:
            if not (0 <= b.i < n and 0 <= b.j < n):
                raise ValueError(f"bond {b} references a missing atom")
            if (b.i, b.j) in seen:
                raise ValueError(f"duplicate bond between {b.i} and {b.j}")
            seen.add((b.i, b.j))
        object.__setattr__(self, "bonds", bonds)

    def __len__(self) -> int:
        return len(self.atoms)

    @cached_property
    def adjacency(self) -> tuple[tuple[tuple[int, BondOrder], ...], ...]:
        adj: list[list[tuple[int, BondOrder]]] = [[] for _ in self.atoms]
        for b in self.bonds:
            adj[b.i].append((b.j, b.order))
            adj[b.j].append((b.i, b.order))
        return tuple(tuple(a) for a in adj)

    @cached_property
    def bond_lookup(self) -> dict[tuple[int, int], BondOrder]:
        table = {}
        for b in self.bonds:
            table[b.i, b.j] = b.order
            table[b.j, b.i] = b.order
        return table

    def degree(self, i: int) -> int:
        return len(self.adjacency[i])

    def bond_valence(self, i: int) -> int:
        """Sum of explicit bond orders with aromatic bonds counted as one."""
        total = 0
        for _, order in self.adjacency[i]:
            total += 1 if order == BondOrder.AROMATIC else int(order)
        return total

    def n_aromatic_bonds(self, i: int) -> int:
        return sum(1 for _, order in self.adjacency[i] if order == BondOrder.AROMATIC)

    def implicit_hydrogens(self, i: int, extra_h: int = 0) -> int:
        """Hydrogens an organic-subset atom receives to reach a standard valence.

        An atom with aromatic bonds contributes one extra valence unit to the
        pi system and is only filled to its lowest valence, so benzene carbon
        gets one H and pyridine nitrogen, furan oxygen and thiophene sulfur get none.
        """
        element = self.atoms[i].element
        used = self.bond_valence(i) + extra_h
        if self.n_aromatic_bonds(i):
            return max(0, VALENCES[element][0] - used - 1)
        for v in VALENCES[element]:
            if v >= used:
                return v - used
        return 0

    def hydrogen_count(self, i: int) -> int:
        atom = self.atoms[i]
        if atom.no_implicit:
            return atom.explicit_h
        return atom.explicit_h + self.implicit_hydrogens(i, atom.explicit_h)

    @cached_property
    def hydrogen_counts(self) -> tuple[int, ...]:
        return tuple(self.hydrogen_count(i) for i in range(len(self.atoms)))

    def valence_ok(self, i: int) -> bool:
        """Bond orders plus hydrogens within the element maximum widened by |charge|.

        Aromatic bonds count one here; pi bookkeeping is not checked.
        """
        atom = self.atoms[i]
        used = self.bond_valence(i) + self.hydrogen_counts[i]
        return used <= MAX_VALENCE[atom.element] + abs(atom.formal_charge)

    def components(self) -> list[list[int]]:
        seen = [False] * len(self.atoms)
        comps = []
        for start in range(len(self.atoms)):
            if seen[start]:
                continue
            stack, comp = [start], []
            seen[start] = True
            while stack:
                a = stack.pop()
                comp.append(a)
                for nb, _ in self.adjacency[a]:
                    if not seen[nb]:
                        seen[nb] = True
                        stack.append(nb)
            comps.append(sorted(comp))
        return comps

    def subgraph(self, indices: Iterable[int]) -> "MolecularGraph":
        keep = sorted(set(indices))
        remap = {old: new for new, old in enumerate(keep)}
        atoms = [self.atoms[i] for i in keep]
        bonds = [Bond(remap[b.i], remap[b.j], b.order) for b in self.bonds if b.i in remap and b.j in remap]
        return MolecularGraph(tuple(atoms), tuple(bonds))

    def relabel(self, perm: Sequence[int]) -> "MolecularGraph":
        """Atom ``i`` of the result is atom ``perm[i]`` of this graph."""
        if sorted(perm) != list(range(len(self.atoms))):
            raise ValueError("perm must be a permutation of atom indices")
        inverse = {old: new for new, old in enumerate(perm)}
        atoms = [self.atoms[p] for p in perm]
        bonds = [Bond(inverse[b.i], inverse[b.j], b.order) for b in self.bonds]
        return MolecularGraph(tuple(atoms), tuple(bonds))

    @cached_property
    def ring_bonds(self) -> frozenset[tuple[int, int]]:
        """Bonds lying on at least one cycle (non-bridges)."""
        return frozenset((b.i, b.j) for b in self.bonds if _connected_without(self, b, lambda o: True))

    def element_counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for a in self.atoms:
            out[a.element] = out.get(a.element, 0) + 1
        return out


def _connected_without(g: MolecularGraph, removed: Bond, allow) -> bool:
    """True if removed.i still reaches removed.j through bonds whose order passes ``allow``."""
    target = removed.j
    seen = {removed.i}
    stack = [removed.i]
    while stack:
        a = stack.pop()
        for nb, order in g.adjacency[a]:
            if not allow(order) or nb in seen:
                continue
            if a == removed.i and nb == removed.j:
                continue
            if nb == target:
                return True
            seen.add(nb)
            stack.append(nb)
    return False


# ---------------------------------------------------------------------------
# parsing


def _default_order(a: Atom, b: Atom) -> BondOrder:
    return BondOrder.AROMATIC if a.aromatic and b.aromatic else BondOrder.SINGLE


def _read_bracket(text: str, pos: int) -> tuple[Atom, int]:
    """Parse ``[...]`` starting at ``pos`` (the '['); return atom and next position."""
    start = pos
    end = text.find("]", pos)
    if end < 0:
        raise SmilesSyntaxError("unterminated bracket atom", start)
    body = text[pos + 1 : end]
    if not body:
        raise SmilesSyntaxError("empty bracket atom", start)
    k = 0
    if body[0].isdigit():
        raise SmilesSyntaxError("isotopes are not supported", start + 1)
    # element symbol
    if body[0].islower():
        sym2 = body[:2]
        if sym2 == "si":
            element, k, aromatic = "Si", 2, True
        else:
            element, k, aromatic = body[0].upper(), 1, True
        if element not in AROMATIC_ELEMENTS:
            raise UnknownElement(f"unknown aromatic element {body[:k]!r}", start + 1)
    elif body[0].isupper():
        if len(body) > 1 and body[1].islower() and body[:2] in ELEMENT_INDEX:
            element, k = body[:2], 2
        else:
            element, k = body[0], 1
            if len(body) > 1 and body[1].islower():
                raise UnknownElement(f"unknown element {body[:2]!r}", start + 1)
        aromatic = False
        if element not in ELEMENT_INDEX:
            raise UnknownElement(f"unknown element {element!r}", start + 1)
    else:
        raise SmilesSyntaxError(f"unexpected {body[0]!r} in bracket atom", start + 1)
    hcount = 0
    if k < len(body) and body[k] in "@/\\":
        raise SmilesSyntaxError("stereochemistry is not supported", start + 1 + k)
    if k < len(body) and body[k] == "H":
        k += 1
        digits = ""
        while k < len(body) and body[k].isdigit():
            digits += body[k]
            k += 1
        hcount = int(digits) if digits else 1
    charge = 0
    if k < len(body) and body[k] in "+-":
        sign = 1 if body[k] == "+" else -1
        k += 1
        digits = ""
        while k < len(body) and body[k].isdigit():
            digits += body[k]
            k += 1
        if digits:
            charge = sign * int(digits)
        else:
            charge = sign
            while k < len(body) and body[k] == body[k - 1]:
                charge += sign
                k += 1
    if k != len(body):
        raise SmilesSyntaxError(f"unexpected {body[k]!r} in bracket atom", start + 1 + k)
    if abs(charge) > 3:
        raise SmilesSyntaxError("formal charge out of range", start)
    try:
        atom = Atom(element, charge, aromatic, hcount, no_implicit=True)
    except ValueError as exc:
        raise ValenceViolation(str(exc), start) from None
    return atom, end + 1


def parse_smiles(text: str | bytes) -> MolecularGraph:
    """Parse a SMILES string into a :class:`MolecularGraph`.

    Every failure raises a :class:`SmilesError` subclass carrying the byte
    offset of the problem.
    """
    if isinstance(text, (bytes, bytearray)):
        for pos, byte in enumerate(text):
            if byte > 127:
                raise SmilesSyntaxError("non-ASCII byte", pos)
        text = bytes(text).decode("ascii")
    if not text:
        raise SmilesSyntaxError("empty SMILES", 0)
    for pos, ch in enumerate(text):
        if ord(ch) > 127:
            raise SmilesSyntaxError("non-ASCII character", pos)

    atoms: list[Atom] = []
    offsets: list[int] = []
    bonds: dict[tuple[int, int], BondOrder] = {}
    branch_stack: list[tuple[int, int]] = []
    rings: dict[int, tuple[int, BondOrder | None, int]] = {}
    prev: int | None = None
    pending: tuple[BondOrder, int] | None = None
    # whether an atom directly follows the last '(' (to reject "()")
    last_open: int | None = None

    def add_bond(a: int, b: int, order: BondOrder | None, pos: int):
        key = (min(a, b), max(a, b))
        if a == b:
            raise SmilesSyntaxError("ring closure onto the same atom", pos)
        if key in bonds:
            raise SmilesSyntaxError("duplicate bond", pos)
        bonds[key] = order if order is not None else _default_order(atoms[a], atoms[b])

    pos = 0
    n = len(text)
    while pos < n:
        ch = text[pos]
        if ch == "(":
            if prev is None:
                raise SmilesSyntaxError("branch without a preceding atom", pos)
            if pending is not None:
                raise SmilesSyntaxError("bond symbol before branch", pos)
            branch_stack.append((prev, pos))
            last_open = pos
            pos += 1
            continue
        if ch == ")":
            if not branch_stack:
                raise UnbalancedParenthesis("unmatched ')'", pos)
            if pending is not None:
                raise SmilesSyntaxError("dangling bond symbol", pending[1])
            if last_open == pos - 1:
                raise SmilesSyntaxError("empty branch", pos)
            prev, _ = branch_stack.pop()
            pos += 1
            continue
        if ch in _BOND_SYMBOLS:
            if prev is None:
                raise SmilesSyntaxError("bond symbol without a preceding atom", pos)
            if pending is not None:
                raise SmilesSyntaxError("consecutive bond symbols", pos)
            pending = (_BOND_SYMBOLS[ch], pos)
            pos += 1
            continue
        if ch == ".":
            if prev is None or pending is not None:
                raise SmilesSyntaxError("misplaced '.'", pos)
            if branch_stack and last_open == pos - 1:
                raise SmilesSyntaxError("empty branch", pos)
            prev = None
            pos += 1
            continue
        if ch.isdigit() or ch == "%":
            if prev is None:
                raise SmilesSyntaxError("ring bond without a preceding atom", pos)
            start = pos
            if ch == "%":
                digits = text[pos + 1 : pos + 3]
                if len(digits) != 2 or not digits.isdigit():
                    raise SmilesSyntaxError("'%' must be followed by two digits", pos)
                num = int(digits)
                pos += 3
            else:
                num = int(ch)
                pos += 1
            order = pending[0] if pending else None
            pending = None
            if num in rings:
                other, other_order, _ = rings.pop(num)
                if order is not None and other_order is not None and order != other_order:
                    raise SmilesSyntaxError("conflicting ring bond orders", start)
                add_bond(other, prev, order if order is not None else other_order, start)
            else:
                rings[num] = (prev, order, start)
            continue
        if ch in "/\\@":
            raise SmilesSyntaxError("stereochemistry is not supported", pos)
        # atoms
        start = pos
        if ch == "[":
            atom, pos = _read_bracket(text, pos)
        elif ch in "BC" and text[pos : pos + 2] in ("Br", "Cl"):
            atom = Atom(text[pos : pos + 2])
            pos += 2
        elif ch in "BCNOPSFI":
            atom = Atom(ch)
            pos += 1
        elif ch in "bcnops":
            atom = Atom(ch.upper(), aromatic=True)
            pos += 1
        elif ch.isalpha():
            raise UnknownElement(f"unknown element {ch!r}", pos)
        else:
            raise SmilesSyntaxError(f"unexpected character {ch!r}", pos)
        atoms.append(atom)
        offsets.append(start)
        idx = len(atoms) - 1
        if prev is not None:
            add_bond(prev, idx, pending[0] if pending else None, start)
        elif pending is not None:
            raise SmilesSyntaxError("bond symbol without a preceding atom", pending[1])
        pending = None
        prev = idx
        last_open = None

    if pending is not None:
        raise SmilesSyntaxError("dangling bond symbol", pending[1])
    if branch_stack:
        raise UnbalancedParenthesis("unclosed '('", n)
    if rings:
        first = min(r[2] for r in rings.values())
        raise UnclosedRing("unclosed ring bond", first)
    if not atoms:
        raise SmilesSyntaxError("no atoms", 0)

    graph = MolecularGraph(tuple(atoms), tuple(Bond(i, j, o) for (i, j), o in bonds.items()))
    for i in range(len(atoms)):
        if not graph.valence_ok(i):
            raise ValenceViolation(f"valence exceeded on {atoms[i].element}", offsets[i])
    return graph


# ---------------------------------------------------------------------------
# canonical ranking and writing


def _dense_rank(keys: Sequence) -> list[int]:
    order = {k: r for r, k in enumerate(sorted(set(keys)))}
    return [order[k] for k in keys]


def _refine(g: MolecularGraph, ranks: list[int]) -> list[int]:
    n_classes = len(set(ranks))
    while True:
        keys = [
            (ranks[i], tuple(sorted((int(o), ranks[nb]) for nb, o in g.adjacency[i])))
            for i in range(len(ranks))
        ]
        new = _dense_rank(keys)
        n_new = len(set(new))
        if n_new == n_classes:
            return new
        ranks, n_classes = new, n_new


def atom_invariant(g: MolecularGraph, i: int) -> tuple[int, int, int, int, int]:
    a = g.atoms[i]
    return (ELEMENT_INDEX[a.element], a.formal_charge, int(a.aromatic), g.degree(i), g.hydrogen_counts[i])


def canonical_ranks(g: MolecularGraph) -> list[int]:
    """Distinct canonical rank per atom.

    Ranks start from atom invariants and are refined with neighbour ranks until
    stable. Remaining ties are broken by promoting the lowest-index atom of the
    lowest-ranked tied class, then refining again.
    """
    n = len(g.atoms)
    ranks = _refine(g, _dense_rank([atom_invariant(g, i) for i in range(n)]))
    while len(set(ranks)) < n:
        counts: dict[int, int] = {}
        for r in ranks:
            counts[r] = counts.get(r, 0) + 1
        tied = min(r for r, c in counts.items() if c > 1)
        chosen = min(i for i in range(n) if ranks[i] == tied)
        ranks = _refine(g, _dense_rank([(r, 0 if i == chosen else 1) for i, r in enumerate(ranks)]))
    return ranks


def refinement_classes(g: MolecularGraph) -> list[int]:
    """Symmetry classes from neighbourhood refinement alone (no tie breaking)."""
    return _refine(g, _dense_rank([atom_invariant(g, i) for i in range(len(g.atoms))]))


def _atom_symbol(g: MolecularGraph, i: int) -> str:
    atom = g.atoms[i]
    h = g.hydrogen_counts[i]
    sym = atom.element.lower() if atom.aromatic else atom.element
    if atom.element in ORGANIC_SUBSET and atom.formal_charge == 0 and g.implicit_hydrogens(i) == h:
        return sym
    out = "[" + sym
    if h:
        out += "H" if h == 1 else f"H{h}"
    if atom.formal_charge:
        c = atom.formal_charge
        out += ("+" if c > 0 else "-") + (str(abs(c)) if abs(c) > 1 else "")
    return out + "]"


def _bond_symbol(g: MolecularGraph, a: int, b: int, order: BondOrder) -> str:
    both_arom = g.atoms[a].aromatic and g.atoms[b].aromatic
    if order == BondOrder.SINGLE:
        return "-" if both_arom else ""
    if order == BondOrder.AROMATIC:
        return "" if both_arom else ":"
    return "=" if order == BondOrder.DOUBLE else "#"


def _ring_label(num: int) -> str:
    return str(num) if num < 10 else f"%{num:02d}"


def write_smiles(g: MolecularGraph) -> str:
    """Canonical SMILES; isomorphic graphs give identical strings."""
    if not g.atoms:
        return ""
    ranks = canonical_ranks(g)
    nbrs = [sorted((nb for nb, _ in g.adjacency[i]), key=lambda x: ranks[x]) for i in range(len(g.atoms))]
    limit = sys.getrecursionlimit()
    if limit < 4 * len(g.atoms) + 100:
        sys.setrecursionlimit(4 * len(g.atoms) + 100)

    seen: set[int] = set()
    on_stack: set[int] = set()
    children: dict[int, list[int]] = {}
    ring_edges: dict[int, list[tuple[int, int]]] = {}  # atom -> [(partner, edge_id)]

    def visit(a: int, parent: int | None):
        seen.add(a)
        on_stack.add(a)
        children[a] = []
        for nb in nbrs[a]:
            if nb == parent:
                continue
            if nb in seen:
                if nb in on_stack:
                    edge = len(ring_edge_list)
                    ring_edge_list.append((nb, a))
                    ring_edges.setdefault(nb, []).append((a, edge))
                    ring_edges.setdefault(a, []).append((nb, edge))
            else:
                children[a].append(nb)
                visit(nb, a)
        on_stack.discard(a)

    ring_edge_list: list[tuple[int, int]] = []
    free_digits: list[int] = []
    assigned: dict[int, int] = {}
    next_digit = [1]

    def take_digit() -> int:
        if free_digits:
            free_digits.sort()
            return free_digits.pop(0)
        d = next_digit[0]
        next_digit[0] += 1
        return d

    def emit(a: int) -> str:
        out = [_atom_symbol(g, a)]
        released = []
        for partner, edge in sorted(ring_edges.get(a, []), key=lambda pe: ranks[pe[0]]):
            if edge in assigned:
                d = assigned.pop(edge)
                out.append(_ring_label(d))
                released.append(d)
            else:
                d = take_digit()
                assigned[edge] = d
                out.append(_bond_symbol(g, a, partner, g.bond_lookup[a, partner]) + _ring_label(d))
        free_digits.extend(released)
        kids = children[a]
        for k, child in enumerate(kids):
            piece = _bond_symbol(g, a, child, g.bond_lookup[a, child]) + emit(child)
            out.append(piece if k == len(kids) - 1 else f"({piece})")
        return "".join(out)

    fragments = []
    for comp in sorted(g.components(), key=lambda c: min(ranks[i] for i in c)):
        start = min(comp, key=lambda i: ranks[i])
        visit(start, None)
        fragments.append(emit(start))
    return ".".join(fragments)


def canonical_smiles(text: str) -> str:
    return write_smiles(parse_smiles(text))


# ---------------------------------------------------------------------------
# validity


def aromatic_ok(g: MolecularGraph) -> bool:
    """Aromatic atoms/bonds must sit on rings of aromatic bonds."""
    for i, atom in enumerate(g.atoms):
        n_arom = sum(1 for _, o in g.adjacency[i] if o == BondOrder.AROMATIC)
        if atom.aromatic and (atom.element not in AROMATIC_ELEMENTS or n_arom < 2):
            return False
        if n_arom and not atom.aromatic:
            return False
    for b in g.bonds:
        if b.order == BondOrder.AROMATIC and not _connected_without(g, b, lambda o: o == BondOrder.AROMATIC):
            return False
    return True


def largest_component(g: MolecularGraph) -> MolecularGraph:
    comps = g.components()
    best = max(comps, key=lambda c: (len(c), -c[0]))
    return g.subgraph(best)


def is_valid(g: MolecularGraph) -> bool:
    """Largest connected component passes valence/aromatic rules and round-trips."""
    if not g.atoms:
        return False
    sub = largest_component(g)
    if not all(sub.valence_ok(i) for i in range(len(sub.atoms))):
        return False
    if not aromatic_ok(sub):
        return False
    try:
        text = write_smiles(sub)
        return write_smiles(parse_smiles(text)) == text
    except SmilesError:
        return False


# ---------------------------------------------------------------------------
# files


@dataclass(frozen=True)
class SmilesRecord:
    line: int
    smiles: str
    id: str


def iter_smiles_file(path: str | Path) -> Iterator[SmilesRecord]:
    """Yield records from a ``SMILES<TAB>optional-id`` file; ``#`` lines are skipped."""
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            smiles, _, ident = line.partition("\t")
            yield SmilesRecord(lineno, smiles.strip(), ident.strip() or f"L{lineno}")


def write_smiles_file(path: str | Path, records: Iterable[tuple[str, str]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for smiles, ident in records:
            fh.write(f"{smiles}\t{ident}\n" if ident else f"{smiles}\n")
