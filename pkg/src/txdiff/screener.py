"""Fingerprint database, exact Top-K min-max Tanimoto retrieval and screening metrics."""

from __future__ import annotations

import io
import logging
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .binio import CorruptFile, VersionMismatch, expect_end, open_sealed, seal, take, unpack
from .chem import N_BITS, morgan_fingerprint
from .molgraph import SmilesError, iter_smiles_file, parse_smiles, write_smiles

__all__ = [
    "BadK",
    "ClampWarning",
    "CorruptFile",
    "EmptyCorpus",
    "FingerprintDB",
    "ScreenRow",
    "UnknownGroundTruth",
    "VersionMismatch",
    "ZeroQuery",
    "build_db",
    "db_from_records",
    "linear_scan",
    "load_db",
    "query_topk",
    "save_db",
    "screen_eval",
]

log = logging.getLogger(__name__)

MAGIC = b"FPDB"
VERSION = 1
CHUNK = 256
# float sums can overshoot the analytic bound by rounding
_BOUND_SLACK = 1e-9


class EmptyCorpus(ValueError):
    pass


class BadK(ValueError):
    pass


class ZeroQuery(ValueError):
    pass


class UnknownGroundTruth(KeyError):
    pass


class DuplicateId(ValueError):
    pass


class ClampWarning(UserWarning):
    pass


@dataclass
class FingerprintDB:
    """Immutable records ``(id, canonical SMILES, count fingerprint)`` plus pruning indices."""

    ids: list[str]
    smiles: list[str]
    fps: np.ndarray
    skipped: int = 0
    sums: np.ndarray = field(init=False, repr=False)
    dim_max: np.ndarray = field(init=False, repr=False)
    _id_rank: np.ndarray = field(init=False, repr=False)
    _row: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.fps = np.ascontiguousarray(self.fps, dtype=np.float64)
        if self.fps.shape != (len(self.ids), N_BITS) or len(self.smiles) != len(self.ids):
            raise ValueError(f"fingerprints must be ({len(self.ids)}, {N_BITS}), got {self.fps.shape}")
        if len(set(self.ids)) != len(self.ids):
            raise DuplicateId("ids must be unique")
        self.fps.setflags(write=False)
        self.sums = self.fps.sum(1)
        self.dim_max = self.fps.max(0) if len(self.fps) else np.zeros(N_BITS)
        order = sorted(range(len(self.ids)), key=self.ids.__getitem__)
        self._id_rank = np.empty(len(self.ids), dtype=np.int64)
        self._id_rank[order] = np.arange(len(self.ids))
        self._row = {ident: k for k, ident in enumerate(self.ids)}

    def __len__(self) -> int:
        return len(self.ids)

    def row(self, ident: str) -> int:
        return self._row[ident]


def db_from_records(records: Iterable[tuple[str, str]]) -> FingerprintDB:
    """Build from ``(smiles, id)`` pairs; unparsable entries are skipped, duplicates keep the first id."""
    ids, smiles, fps, seen = [], [], [], set()
    skipped = 0
    for text, ident in records:
        try:
            g = parse_smiles(text)
            canon = write_smiles(g)
        except SmilesError as exc:
            skipped += 1
            log.warning("skipping %s: %s", ident, exc)
            continue
        if canon in seen:
            continue
        if ident in ids:
            raise DuplicateId(f"id {ident!r} used for two different molecules")
        seen.add(canon)
        ids.append(ident)
        smiles.append(canon)
        fps.append(morgan_fingerprint(g, check=False))
    if not ids:
        raise EmptyCorpus("no parsable molecules")
    if skipped:
        log.warning("skipped %d unparsable lines", skipped)
    return FingerprintDB(ids, smiles, np.stack(fps), skipped)


def build_db(smiles_file: str | Path) -> FingerprintDB:
    return db_from_records((r.smiles, r.id) for r in iter_smiles_file(smiles_file))


# ---------------------------------------------------------------------------
# file format


def db_bytes(db: FingerprintDB) -> bytes:
    if db.fps.max(initial=0) > np.iinfo(np.uint16).max:
        raise ValueError("fingerprint counts exceed u16")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<IQI", VERSION, len(db), N_BITS))
    for ident, smi, fp in zip(db.ids, db.smiles, db.fps):
        for text in (ident, smi):
            raw = text.encode()
            buf.write(struct.pack("<I", len(raw)))
            buf.write(raw)
        buf.write(fp.astype("<u2").tobytes())
    return seal(buf.getvalue())


def parse_db(data: bytes) -> FingerprintDB:
    buf = open_sealed(data, MAGIC, VERSION)
    count, dim = unpack(buf, "<QI")
    if dim != N_BITS:
        raise CorruptFile(f"dimension {dim}, expected {N_BITS}")
    ids, smiles = [], []
    fps = np.empty((count, dim))
    for k in range(count):
        for out in (ids, smiles):
            (n,) = unpack(buf, "<I")
            out.append(take(buf, n).decode())
        fps[k] = np.frombuffer(take(buf, 2 * dim), dtype="<u2")
    expect_end(buf)
    return FingerprintDB(ids, smiles, fps)


def save_db(path: str | Path, db: FingerprintDB) -> None:
    Path(path).write_bytes(db_bytes(db))


def load_db(path: str | Path) -> FingerprintDB:
    return parse_db(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# retrieval


def _check_query(db: FingerprintDB, query) -> np.ndarray:
    q = np.asarray(query, dtype=np.float64)
    if q.shape != (N_BITS,):
        raise ValueError(f"query must have length {N_BITS}, got {q.shape}")
    if not np.isfinite(q).all():
        raise ValueError("query must be finite")
    if (q < 0).any():
        warnings.warn(f"clamping {(q < 0).sum()} negative query entries to 0", ClampWarning, stacklevel=3)
        q = np.maximum(q, 0.0)
    if not q.any():
        raise ZeroQuery("query is all zero")
    return q


def _check_k(db: FingerprintDB, k) -> int:
    if isinstance(k, bool) or int(k) != k or not 1 <= k <= len(db):
        raise BadK(f"k must be an integer in 1..{len(db)}, got {k!r}")
    return int(k)


def _scores(q: np.ndarray, rows: np.ndarray) -> np.ndarray:
    mins = np.minimum(rows, q).sum(-1)
    maxs = np.maximum(rows, q).sum(-1)
    return mins / maxs


def _ranked(db: FingerprintDB, rows: np.ndarray, scores: np.ndarray, k: int) -> list[tuple[str, float]]:
    order = np.lexsort((db._id_rank[rows], -scores))[:k]
    return [(db.ids[rows[i]], float(scores[i])) for i in order]


def linear_scan(db: FingerprintDB, query, k: int) -> list[tuple[str, float]]:
    """Reference Top-K: score every record."""
    q = _check_query(db, query)
    k = _check_k(db, k)
    return _ranked(db, np.arange(len(db)), _scores(q, db.fps), k)


def query_topk(db: FingerprintDB, query, k: int) -> list[tuple[str, float]]:
    """Exact Top-K by min-max Tanimoto, ties by ascending id.

    Records are visited in order of an upper bound on their score
    (``sum min <= min(sum q, sum x, sum min(q, dim_max))`` over
    ``sum max >= max(sum q, sum x)``) and scanning stops once the bound
    falls strictly below the current k-th score.
    """
    q = _check_query(db, query)
    k = _check_k(db, k)
    sq = q.sum()
    cap = np.minimum(q, db.dim_max).sum()
    bound = np.minimum(np.minimum(sq, db.sums), cap) / np.maximum(sq, db.sums)
    bound = bound * (1 + _BOUND_SLACK) + _BOUND_SLACK
    visit = np.lexsort((db._id_rank, -bound))
    rows = np.empty(0, dtype=np.int64)
    scores = np.empty(0)
    step = max(CHUNK, k)
    for start in range(0, len(db), step):
        chunk = visit[start : start + step]
        rows = np.concatenate([rows, chunk])
        scores = np.concatenate([scores, _scores(q, db.fps[chunk])])
        if len(rows) >= k:
            kth = np.partition(scores, len(scores) - k)[len(scores) - k]
            nxt = start + step
            # equal bounds can still tie and win on id
            if nxt >= len(db) or bound[visit[nxt]] < kth:
                break
    return _ranked(db, rows, scores, k)


# ---------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class ScreenRow:
    k: int
    mean_similarity: float
    hit_rate: float


def screen_eval(db: FingerprintDB, queries: Sequence[tuple[np.ndarray, str]], ks: Sequence[int]) -> list[ScreenRow]:
    """Per k: mean over queries of the average top-k score, and the ground-truth hit rate."""
    if not queries:
        raise ValueError("no queries")
    for _, truth in queries:
        if truth not in db._row:
            raise UnknownGroundTruth(truth)
    ks = sorted({_check_k(db, k) for k in ks})
    kmax = ks[-1]
    sims = {k: [] for k in ks}
    hits = {k: 0 for k in ks}
    for query, truth in queries:
        ranked = query_topk(db, query, kmax)
        ids = [r[0] for r in ranked]
        scores = np.array([r[1] for r in ranked])
        for k in ks:
            sims[k].append(scores[:k].mean())
            hits[k] += truth in ids[:k]
    return [ScreenRow(k, float(np.mean(sims[k])), hits[k] / len(queries)) for k in ks]
