"""Categorical graph diffusion: schedules, forward noising, the analytic
posterior, guided reverse steps and the sampling loop.

States carry node rows ``(..., n, K_a)`` and edge tensors ``(..., n, n, K_b)``
with an optional leading batch axis. Edge category 0 is "no bond"; categories
1..4 follow :class:`txdiff.molgraph.BondOrder`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .molgraph import ELEMENT_INDEX, ELEMENTS, Atom, Bond, BondOrder, MolecularGraph

K_ATOM = len(ELEMENTS)
K_BOND = 5

ROW_TOL = 1e-9


class InvalidT(ValueError):
    pass


class StepOutOfRange(ValueError):
    pass


class ZeroNormalizer(ArithmeticError):
    pass


class NonFinite(ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# schedules


def _check_stochastic(q: np.ndarray, tol: float = 1e-12) -> None:
    if (q < 0).any():
        raise ValueError("transition matrix has negative entries")
    if not np.allclose(q.sum(-1), 1.0, atol=tol, rtol=0):
        raise ValueError("transition matrix rows must sum to 1")


@dataclass(frozen=True)
class TransitionMatrix:
    q: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.float64)
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise ValueError("transition matrix must be square")
        _check_stochastic(q)
        q.setflags(write=False)
        object.__setattr__(self, "q", q)


def cosine_alpha_bar(T: int, s: float = 0.008) -> np.ndarray:
    """Cumulative signal level ``alpha_bar[0..T]`` with ``alpha_bar[0] = 1``."""
    t = np.arange(T + 1) / T
    f = np.cos((t + s) / (1 + s) * math.pi / 2) ** 2
    ab = f / f[0]
    ab[-1] = max(ab[-1], 0.0)
    return np.clip(ab, 0.0, 1.0)


def _cumulative(qs: np.ndarray) -> np.ndarray:
    """``out[t] = qs[1] @ ... @ qs[t]``; ``out[0]`` is the identity."""
    out = np.empty_like(qs)
    out[0] = np.eye(qs.shape[1])
    for t in range(1, len(qs)):
        out[t] = out[t - 1] @ qs[t]
    return out


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step transition matrices indexed ``1..T``; index 0 holds the identity."""

    T: int
    kind: str
    node_q: np.ndarray          # (T+1, K_a, K_a)
    edge_q: np.ndarray          # (T+1, K_b, K_b)
    node_limit: np.ndarray      # (K_a,) prior over x_T
    edge_limit: np.ndarray      # (K_b,)
    alpha_bar: np.ndarray = field(default=None)
    node_qbar: np.ndarray = field(init=False, repr=False)
    edge_qbar: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.T < 1:
            raise InvalidT(f"T must be >= 1, got {self.T}")
        for name in ("node_q", "edge_q"):
            q = np.asarray(getattr(self, name), dtype=np.float64)
            if q.shape[0] != self.T + 1:
                raise ValueError(f"{name} must hold T+1 matrices")
            for t in range(1, self.T + 1):
                _check_stochastic(q[t])
            object.__setattr__(self, name, q)
        object.__setattr__(self, "node_qbar", _cumulative(self.node_q))
        object.__setattr__(self, "edge_qbar", _cumulative(self.edge_q))
        for name in ("node_q", "edge_q", "node_qbar", "edge_qbar", "node_limit", "edge_limit"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_matrices(cls, node_qs: Sequence[np.ndarray], edge_qs: Sequence[np.ndarray],
                      node_limit=None, edge_limit=None) -> "NoiseSchedule":
        """Schedule from explicit ``Q_1..Q_T`` lists (hand-set or random)."""
        if len(node_qs) != len(edge_qs) or not node_qs:
            raise InvalidT("need the same positive number of node and edge matrices")
        ka, kb = len(node_qs[0]), len(edge_qs[0])
        node = np.concatenate([np.eye(ka)[None], np.asarray(node_qs, dtype=np.float64)])
        edge = np.concatenate([np.eye(kb)[None], np.asarray(edge_qs, dtype=np.float64)])
        T = len(node_qs)
        return cls(
            T=T, kind="custom", node_q=node, edge_q=edge,
            node_limit=np.full(ka, 1 / ka) if node_limit is None else np.asarray(node_limit, float),
            edge_limit=np.full(kb, 1 / kb) if edge_limit is None else np.asarray(edge_limit, float),
        )

    def q(self, which: str) -> np.ndarray:
        return self.node_q if which == "node" else self.edge_q

    def qbar(self, which: str) -> np.ndarray:
        return self.node_qbar if which == "node" else self.edge_qbar

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {
            "node_q": np.array(self.node_q), "edge_q": np.array(self.edge_q),
            "node_limit": np.array(self.node_limit), "edge_limit": np.array(self.edge_limit),
            "alpha_bar": np.array(self.alpha_bar if self.alpha_bar is not None else []),
        }

    @classmethod
    def from_arrays(cls, T: int, kind: str, arrays: dict[str, np.ndarray]) -> "NoiseSchedule":
        ab = arrays.get("alpha_bar")
        return cls(T=T, kind=kind, node_q=arrays["node_q"], edge_q=arrays["edge_q"],
                   node_limit=arrays["node_limit"], edge_limit=arrays["edge_limit"],
                   alpha_bar=None if ab is None or ab.size == 0 else ab)


def build_schedule(T: int, kind: str = "uniform", n_atom: int = K_ATOM, n_bond: int = K_BOND,
                   node_marginal=None, edge_marginal=None) -> NoiseSchedule:
    """Mixing schedule ``Q_t = a_t I + (1 - a_t) 1 m^T`` with cosine ``alpha_bar``.

    ``kind="uniform"`` mixes toward ``m = 1/K``; ``kind="marginal"`` mixes
    toward the supplied category marginals.
    """
    if not isinstance(T, (int, np.integer)) or T < 1:
        raise InvalidT(f"T must be an integer >= 1, got {T!r}")
    if kind == "uniform":
        m_node, m_edge = np.full(n_atom, 1 / n_atom), np.full(n_bond, 1 / n_bond)
    elif kind == "marginal":
        if node_marginal is None or edge_marginal is None:
            raise ValueError("marginal schedule needs node and edge marginals")
        m_node = np.asarray(node_marginal, float) / np.sum(node_marginal)
        m_edge = np.asarray(edge_marginal, float) / np.sum(edge_marginal)
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    ab = cosine_alpha_bar(int(T))
    alpha = np.ones(T + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        alpha[1:] = np.where(ab[:-1] > 0, ab[1:] / ab[:-1], 0.0)
    alpha = np.clip(alpha, 0.0, 1.0)

    def stack(m):
        k = len(m)
        eye = np.eye(k)
        return alpha[:, None, None] * eye + (1 - alpha[:, None, None]) * np.broadcast_to(m, (k, k))

    node_q, edge_q = stack(m_node), stack(m_edge)
    node_q[0] = np.eye(n_atom)
    edge_q[0] = np.eye(n_bond)
    return NoiseSchedule(int(T), kind, node_q, edge_q, m_node, m_edge, alpha_bar=ab)


# ---------------------------------------------------------------------------
# states


@dataclass
class CategoricalGraphState:
    node_probs: np.ndarray      # (..., n, K_a)
    edge_probs: np.ndarray      # (..., n, n, K_b)
    node_mask: np.ndarray       # (..., n) True = real atom

    @property
    def n(self) -> int:
        return self.node_probs.shape[-2]

    @property
    def batched(self) -> bool:
        return self.node_probs.ndim == 3

    def check(self, tol: float = ROW_TOL) -> None:
        """Raise ``ValueError`` if a row or symmetry invariant fails."""
        nodes, edges, mask = self.node_probs, self.edge_probs, self.node_mask
        if (nodes < -tol).any() or (edges < -tol).any():
            raise ValueError("negative probabilities")
        if not np.allclose(nodes.sum(-1)[mask], 1.0, atol=tol, rtol=0):
            raise ValueError("node rows must sum to 1")
        pair = mask[..., :, None] & mask[..., None, :]
        if not np.allclose(edges.sum(-1)[pair], 1.0, atol=tol, rtol=0):
            raise ValueError("edge rows must sum to 1")
        if not np.array_equal(edges, np.swapaxes(edges, -2, -3)):
            raise ValueError("edge tensor must be symmetric")
        n = self.n
        diag = edges[..., np.arange(n), np.arange(n), :]
        if not (diag[..., 0] == 1).all():
            raise ValueError("diagonal must be the 'no bond' category")

    def categories(self) -> tuple[np.ndarray, np.ndarray]:
        return self.node_probs.argmax(-1), self.edge_probs.argmax(-1)

    def index(self, b: int) -> "CategoricalGraphState":
        return CategoricalGraphState(self.node_probs[b], self.edge_probs[b], self.node_mask[b])


def one_hot(idx: np.ndarray, k: int) -> np.ndarray:
    return np.eye(k)[np.asarray(idx)]


def state_from_categories(nodes: np.ndarray, edges: np.ndarray, mask: np.ndarray | None = None,
                          k_atom: int = K_ATOM, k_bond: int = K_BOND) -> CategoricalGraphState:
    nodes = np.asarray(nodes)
    mask = np.ones(nodes.shape, bool) if mask is None else np.asarray(mask, bool)
    return CategoricalGraphState(one_hot(nodes, k_atom), one_hot(edges, k_bond), mask)


def graph_to_state(g: MolecularGraph, n_max: int | None = None) -> CategoricalGraphState:
    """One-hot state of ``g`` padded to ``n_max`` nodes (padding masked out)."""
    n = len(g.atoms)
    n_max = n if n_max is None else n_max
    if n_max < n:
        raise ValueError(f"graph has {n} atoms, more than n_max={n_max}")
    nodes = np.zeros(n_max, dtype=np.int64)
    nodes[:n] = [ELEMENT_INDEX[a.element] for a in g.atoms]
    edges = np.zeros((n_max, n_max), dtype=np.int64)
    for b in g.bonds:
        edges[b.i, b.j] = edges[b.j, b.i] = int(b.order)
    mask = np.arange(n_max) < n
    return state_from_categories(nodes, edges, mask)


def state_to_graph(state: CategoricalGraphState) -> MolecularGraph:
    """Discretise by argmax; atoms are aromatic iff they carry an aromatic bond."""
    nodes, edges = state.categories()
    keep = np.flatnonzero(state.node_mask)
    pos = {int(i): k for k, i in enumerate(keep)}
    bonds = []
    aromatic = set()
    for a in keep:
        for b in keep:
            if a < b and edges[a, b] > 0:
                order = BondOrder(int(edges[a, b]))
                bonds.append(Bond(pos[int(a)], pos[int(b)], order))
                if order == BondOrder.AROMATIC:
                    aromatic.update((int(a), int(b)))
    atoms = tuple(Atom(ELEMENTS[int(nodes[i])], aromatic=int(i) in aromatic) for i in keep)
    return MolecularGraph(atoms, tuple(bonds))


# ---------------------------------------------------------------------------
# kernels


def _sample_rows(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF categorical draw per row given uniforms ``u`` (shape ``probs.shape[:-1]``)."""
    cdf = np.cumsum(probs, axis=-1)
    idx = (u[..., None] * cdf[..., -1:] >= cdf).sum(-1)
    return np.minimum(idx, probs.shape[-1] - 1)


def _as_rng(rng) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def _sample_state(node_p: np.ndarray, edge_p: np.ndarray, like: CategoricalGraphState,
                  rng: np.random.Generator) -> CategoricalGraphState:
    """Draw nodes and upper-triangle edges, mirror, keep masked positions from ``like``."""
    n = like.n
    node_idx = _sample_rows(node_p, rng.random(node_p.shape[:-1]))
    edge_idx = _sample_rows(edge_p, rng.random(edge_p.shape[:-1]))
    upper = np.triu(np.ones((n, n), bool), k=1)
    edge_idx = np.where(upper, edge_idx, np.swapaxes(edge_idx, -1, -2))
    edge_idx[..., np.arange(n), np.arange(n)] = 0
    k_atom, k_bond = node_p.shape[-1], edge_p.shape[-1]
    nodes = one_hot(node_idx, k_atom)
    edges = one_hot(edge_idx, k_bond)
    mask = like.node_mask
    pair = mask[..., :, None] & mask[..., None, :]
    nodes = np.where(mask[..., None], nodes, like.node_probs)
    edges = np.where(pair[..., None], edges, like.edge_probs)
    return CategoricalGraphState(nodes, edges, mask.copy())


def forward_sample(x0: CategoricalGraphState, t: int, sched: NoiseSchedule, rng=None) -> CategoricalGraphState:
    """Draw ``x_t ~ Cat(x0 Q̄_t)`` per node and per upper-triangle edge."""
    if not 1 <= t <= sched.T:
        raise StepOutOfRange(f"t={t} outside 1..{sched.T}")
    rng = _as_rng(rng)
    return _sample_state(x0.node_probs @ sched.node_qbar[t], x0.edge_probs @ sched.edge_qbar[t], x0, rng)


def forward_marginals(x0: CategoricalGraphState, t: int, sched: NoiseSchedule) -> tuple[np.ndarray, np.ndarray]:
    if not 0 <= t <= sched.T:
        raise StepOutOfRange(f"t={t} outside 0..{sched.T}")
    return x0.node_probs @ sched.node_qbar[t], x0.edge_probs @ sched.edge_qbar[t]


def _posterior_rows(x_t: np.ndarray, x0: np.ndarray, q_t: np.ndarray, qbar_prev: np.ndarray) -> np.ndarray:
    unnorm = (x_t @ q_t.T) * (x0 @ qbar_prev)
    z = unnorm.sum(-1, keepdims=True)
    if (z <= 0).any():
        raise ZeroNormalizer("x_t is unreachable from x0 under this schedule")
    return unnorm / z


def posterior(x_t, x0, t: int, sched: NoiseSchedule, which: str = "node") -> np.ndarray:
    """``q(x_{t-1} | x_t, x0)`` proportional to ``(x_t Q_t^T) * (x0 Q̄_{t-1})``.

    Rows may be stacked along leading axes. Valid for ``2 <= t <= T``.
    """
    if not 2 <= t <= sched.T:
        raise StepOutOfRange(f"posterior needs 2 <= t <= {sched.T}, got {t}")
    x_t = np.asarray(x_t, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    return _posterior_rows(x_t, x0, sched.q(which)[t], sched.qbar(which)[t - 1])


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(-1, keepdims=True)


def cfg_combine(logp_cond, logp_uncond, s: float) -> np.ndarray:
    """``softmax(logp_uncond + s (logp_cond - logp_uncond))`` along the last axis."""
    cond = np.asarray(logp_cond, dtype=np.float64)
    uncond = np.asarray(logp_uncond, dtype=np.float64)
    if cond.shape != uncond.shape:
        raise ValueError(f"shape mismatch {cond.shape} vs {uncond.shape}")
    if not (np.isfinite(cond).all() and np.isfinite(uncond).all() and math.isfinite(s)):
        raise NonFinite("guidance inputs must be finite")
    if s == 1:
        return _softmax(cond)
    if s == 0:
        return _softmax(uncond)
    out = _softmax(uncond + s * (cond - uncond))
    if not np.isfinite(out).all():
        raise NonFinite("guided distribution is not finite")
    return out


def reverse_mixture(x_t: np.ndarray, p_tilde: np.ndarray, q_t: np.ndarray, qbar_prev: np.ndarray) -> np.ndarray:
    """``sum_x~ q(x_{t-1} | x_t, x~) p(x~)`` for one-hot ``x_t`` rows.

    Candidates ``x~`` that cannot reach ``x_t`` (zero normaliser) are dropped
    and the result renormalised.
    """
    like = x_t @ q_t.T                       # p(x_t | x_{t-1} = j)
    reach = x_t @ (qbar_prev @ q_t).T        # p(x_t | x0 = x~)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(reach > 0, p_tilde / np.where(reach > 0, reach, 1.0), 0.0)
    out = like * (w @ qbar_prev)
    z = out.sum(-1, keepdims=True)
    if (z <= 0).any():
        raise ZeroNormalizer("no clean candidate can reach x_t")
    return out / z


def _symmetric_logits(edge_logits: np.ndarray) -> np.ndarray:
    return 0.5 * (edge_logits + np.swapaxes(edge_logits, -2, -3))


GUIDANCE_MODES = ("transition", "clean")


def guide_probs(p_cond: np.ndarray, p_uncond: np.ndarray, s: float) -> np.ndarray:
    """Guidance on probability rows: ``softmax(log p_u + s (log p_c - log p_u))`` over the shared support."""
    if s == 1:
        return p_cond
    if s == 0:
        return p_uncond
    support = (p_cond > 0) & (p_uncond > 0)
    with np.errstate(divide="ignore"):
        lc, lu = np.log(p_cond), np.log(p_uncond)
    logits = np.where(support, lu + s * (np.where(support, lc, 0.0) - np.where(support, lu, 0.0)), -np.inf)
    logits = logits - logits.max(-1, keepdims=True)
    out = np.exp(logits)
    out /= out.sum(-1, keepdims=True)
    if not np.isfinite(out).all():
        raise NonFinite("guided distribution is not finite")
    return out


def reverse_step(x_t: CategoricalGraphState, node_logits, edge_logits, t: int, sched: NoiseSchedule,
                 s: float = 1.0, uncond_node_logits=None, uncond_edge_logits=None, rng=None,
                 return_probs: bool = False, guidance: str = "transition"):
    """One guided ancestral step ``x_t -> x_{t-1}``; at ``t = 1`` samples ``x~`` directly.

    ``guidance="transition"`` extrapolates the log reverse transitions
    ``log p(x_{t-1} | x_t)``; ``"clean"`` extrapolates the ``x~`` logits before
    the posterior mixture. Both coincide at ``t = 1``.
    """
    if not 1 <= t <= sched.T:
        raise StepOutOfRange(f"t={t} outside 1..{sched.T}")
    if guidance not in GUIDANCE_MODES:
        raise ValueError(f"unknown guidance mode {guidance!r}")
    rng = _as_rng(rng)
    edge_logits = _symmetric_logits(np.asarray(edge_logits, dtype=np.float64))
    node_logits = np.asarray(node_logits, dtype=np.float64)

    def mix(p_node, p_edge):
        if t == 1:
            return p_node, p_edge
        return (reverse_mixture(x_t.node_probs, p_node, sched.node_q[t], sched.node_qbar[t - 1]),
                reverse_mixture(x_t.edge_probs, p_edge, sched.edge_q[t], sched.edge_qbar[t - 1]))

    if uncond_node_logits is None:
        p_node, p_edge = mix(cfg_combine(node_logits, node_logits, 1.0), cfg_combine(edge_logits, edge_logits, 1.0))
    elif guidance == "clean" or t == 1:
        uncond_edge = _symmetric_logits(np.asarray(uncond_edge_logits, float))
        p_node, p_edge = mix(cfg_combine(node_logits, uncond_node_logits, s), cfg_combine(edge_logits, uncond_edge, s))
    else:
        uncond_edge = _symmetric_logits(np.asarray(uncond_edge_logits, float))
        cn, ce = mix(cfg_combine(node_logits, node_logits, 1.0), cfg_combine(edge_logits, edge_logits, 1.0))
        un, ue = mix(cfg_combine(uncond_node_logits, uncond_node_logits, 1.0), cfg_combine(uncond_edge, uncond_edge, 1.0))
        p_node, p_edge = guide_probs(cn, un, s), guide_probs(ce, ue, s)
    out = _sample_state(p_node, p_edge, x_t, rng)
    return (out, p_node, p_edge) if return_probs else out


# ---------------------------------------------------------------------------
# sampling loop

Denoiser = Callable[[CategoricalGraphState, int, "np.ndarray | None"], tuple[np.ndarray, np.ndarray]]


def prior_state(n_atoms: Sequence[int], n_max: int, sched: NoiseSchedule,
                rngs: Sequence[np.random.Generator]) -> CategoricalGraphState:
    """Batched ``x_T`` drawn from the schedule's limit distribution; padding is "no atom"."""
    ka, kb = len(sched.node_limit), len(sched.edge_limit)
    b = len(n_atoms)
    nodes = np.zeros((b, n_max, ka))
    nodes[..., 0] = 1.0
    edges = np.zeros((b, n_max, n_max, kb))
    edges[..., 0] = 1.0
    mask = np.zeros((b, n_max), bool)
    for k, (n, rng) in enumerate(zip(n_atoms, rngs)):
        mask[k, :n] = True
        like = CategoricalGraphState(nodes[k, :n], edges[k, :n, :n], mask[k, :n])
        st = _sample_state(np.broadcast_to(sched.node_limit, (n, ka)),
                           np.broadcast_to(sched.edge_limit, (n, n, kb)), like, rng)
        nodes[k, :n], edges[k, :n, :n] = st.node_probs, st.edge_probs
    return CategoricalGraphState(nodes, edges, mask)


def molecule_rngs(seed: int, count: int, offset: int = 0) -> list[np.random.Generator]:
    """Generator for molecule ``offset + k`` depends only on ``(seed, offset + k)``."""
    return [np.random.default_rng([int(seed), offset + k]) for k in range(count)]


def sample_states(sched: NoiseSchedule, denoiser: Denoiser, conditions, n_atoms: Sequence[int],
                  s: float = 1.0, seed: int = 0, offset: int = 0,
                  guidance: str = "transition") -> CategoricalGraphState:
    """Run the reverse chain ``T -> 0`` for a batch; returns the final one-hot states.

    ``conditions`` is ``None`` (unconditional) or an array with one row per
    molecule. Every molecule owns its generator, so results do not depend on
    how molecules are grouped into batches.
    """
    n_atoms = [int(n) for n in n_atoms]
    if not n_atoms or min(n_atoms) < 1:
        raise ValueError("n_atoms must be >= 1")
    rngs = molecule_rngs(seed, len(n_atoms), offset)
    n_max = max(n_atoms)
    x = prior_state(n_atoms, n_max, sched, rngs)
    cond = None if conditions is None else np.asarray(conditions, dtype=np.float64)
    guided = cond is not None and s != 1
    for t in range(sched.T, 0, -1):
        if cond is None or s == 0:
            node_l, edge_l = denoiser(x, t, None)
            u_node = u_edge = None
        else:
            node_l, edge_l = denoiser(x, t, cond)
            u_node = u_edge = None
            if guided:
                u_node, u_edge = denoiser(x, t, None)
        nxt_nodes = x.node_probs.copy()
        nxt_edges = x.edge_probs.copy()
        # each molecule steps on its unpadded slice so draws do not depend on n_max
        for k, (n, rng) in enumerate(zip(n_atoms, rngs)):
            sub = CategoricalGraphState(x.node_probs[k, :n], x.edge_probs[k, :n, :n], x.node_mask[k, :n])
            step = reverse_step(
                sub, node_l[k, :n], edge_l[k, :n, :n], t, sched, s,
                None if u_node is None else u_node[k, :n], None if u_edge is None else u_edge[k, :n, :n], rng,
                guidance=guidance,
            )
            nxt_nodes[k, :n], nxt_edges[k, :n, :n] = step.node_probs, step.edge_probs
        x = CategoricalGraphState(nxt_nodes, nxt_edges, x.node_mask)
    return x


def sample_batch(sched: NoiseSchedule, denoiser: Denoiser, conditions, n_atoms: Sequence[int],
                 s: float = 1.0, seed: int = 0, offset: int = 0,
                 guidance: str = "transition") -> list[MolecularGraph]:
    final = sample_states(sched, denoiser, conditions, n_atoms, s, seed, offset, guidance)
    return [state_to_graph(final.index(k)) for k in range(len(n_atoms))]


def sample(sched: NoiseSchedule, denoiser: Denoiser, condition, n_atoms: int, s: float = 1.0,
           seed: int = 0, guidance: str = "transition") -> MolecularGraph:
    """Single molecule; may be chemically invalid (validity is judged downstream)."""
    cond = None if condition is None else np.asarray(condition, dtype=np.float64)[None]
    return sample_batch(sched, denoiser, cond, [n_atoms], s, seed, guidance=guidance)[0]


def size_histogram(sizes: Sequence[int]) -> np.ndarray:
    sizes = np.asarray(sizes, dtype=np.int64)
    hist = np.bincount(sizes).astype(np.float64)
    return hist / hist.sum()


def draw_sizes(hist: np.ndarray, count: int, seed: int) -> list[int]:
    rng = np.random.default_rng([int(seed), 0x51CE])
    return [int(n) for n in rng.choice(len(hist), size=count, p=hist)]
