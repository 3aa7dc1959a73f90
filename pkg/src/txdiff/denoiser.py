"""Graph denoising network with AdaLN conditioning, the diffusion training
loop and the checkpoint file format."""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeMismatch, Tensor
from .binio import CorruptFile, VersionMismatch, expect_end, open_sealed, seal
from .binio import take as _take
from .binio import unpack as _unpack
from .diffusion import K_ATOM, K_BOND, CategoricalGraphState, NoiseSchedule, forward_sample, graph_to_state
from .molgraph import MolecularGraph
from .nn import Adam, FeedForward, Linear, Module, MultiHeadAttention, param
from .tfe import condition_dropout

MAGIC = b"PDCK"
VERSION = 1


class NonFiniteLoss(ArithmeticError):
    pass


@dataclass
class DenoiserConfig:
    T: int = 500
    d: int = 128
    n_blocks: int = 2
    heads: int = 4
    d_z: int = 128
    d_pair: int = 64
    ffn_mult: int = 2
    k_atom: int = K_ATOM
    k_bond: int = K_BOND
    zero_heads: bool = True


def _sinusoidal(T: int, d: int) -> np.ndarray:
    pos = np.arange(T + 1)[:, None]
    freq = np.exp(-math.log(10_000.0) * np.arange(0, d, 2) / d)
    table = np.zeros((T + 1, d))
    table[:, 0::2] = np.sin(pos * freq)
    table[:, 1::2] = np.cos(pos * freq[: d // 2])
    return table


N_WALK_NODE = 5
N_WALK_EDGE = 2


def structure_features(edges: np.ndarray, pair_mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Closed-walk counts ``diag(A^k)``, k = 2..6, per node and ``(A^2, A^3)_ij`` per pair, log1p-scaled."""
    adj = (1.0 - edges[..., 0]) * pair_mask
    node, pair = [], []
    power = adj
    for k in range(2, 7):
        power = power @ adj
        node.append(np.diagonal(power, axis1=1, axis2=2))
        if k <= 1 + N_WALK_EDGE:
            pair.append(power * pair_mask)
    return np.log1p(np.stack(node, -1)), np.log1p(np.stack(pair, -1))


def adaln(h: Tensor, mod: Tensor) -> Tensor:
    """``layernorm(h) * (1 + gamma) + beta`` with ``(gamma, beta)`` split from ``mod``."""
    d = h.shape[-1]
    b = mod.shape[0]
    gamma = mod[:, :d].reshape(b, 1, d)
    beta = mod[:, d:].reshape(b, 1, d)
    return ad.layernorm(h) * (gamma + 1.0) + beta


class DenoiserBlock(Module):
    """AdaLN attention and feed-forward on nodes, then a symmetric edge-stream update."""

    def __init__(self, c: DenoiserConfig, rng: np.random.Generator):
        self.mod_attn = Linear(c.d, 2 * c.d, rng, zero=True)
        self.mod_ffn = Linear(c.d, 2 * c.d, rng, zero=True)
        self.edge_bias = Linear(c.d_pair, c.heads, rng)
        self.attn = MultiHeadAttention(c.d, c.heads, rng)
        self.ffn = FeedForward(c.d, c.ffn_mult * c.d, rng)
        self.edge_msg = Linear(c.d_pair, c.d, rng)
        self.node_to_edge = Linear(c.d, c.d_pair, rng)
        self.edge_self = Linear(c.d_pair, c.d_pair, rng)

    def __call__(self, h, e, c, pair_mask, mask):
        b, n, _ = h.shape
        dp = e.shape[-1]
        bias = ad.transpose(self.edge_bias(e), (0, 3, 1, 2))
        h = h + self.attn(adaln(h, self.mod_attn(c)), bias=bias, key_mask=mask)
        # masked mean of incident edge features
        deg = np.maximum(pair_mask.sum(2, keepdims=True), 1.0)
        h = h + self.edge_msg(ad.tsum(e * pair_mask[..., None], axis=2) * (1.0 / deg))
        h = h + self.ffn(adaln(h, self.mod_ffn(c)))
        u = self.node_to_edge(h)
        e = e + ad.relu(u.reshape(b, n, 1, dp) + u.reshape(b, 1, n, dp) + self.edge_self(e))
        return h, e


class Denoiser(Module):
    """Predicts clean node/edge category logits from a noisy state, a step and a condition.

    Conditions pass through an embedder; ``e_drop`` is the learned stand-in
    used when the condition is dropped or absent.
    """

    def __init__(self, config: DenoiserConfig | None = None, seed: int = 0):
        self.config = c = config or DenoiserConfig()
        rng = np.random.default_rng(seed)
        self.node_in = Linear(c.k_atom, c.d, rng)
        self.degree_in = Linear(c.k_bond, c.d, rng)
        self.edge_in = Linear(c.k_bond, c.d_pair, rng)
        self.walk_node_in = Linear(N_WALK_NODE, c.d, rng)
        self.walk_edge_in = Linear(N_WALK_EDGE, c.d_pair, rng)
        self.time_table = param(_sinusoidal(c.T, c.d))
        self.cond_embed = Linear(c.d_z, c.d, rng)
        self.e_drop = param(rng.normal(size=c.d) * 0.02)
        self.blocks = [DenoiserBlock(c, rng) for _ in range(c.n_blocks)]
        self.mod_out = Linear(c.d, 2 * c.d, rng, zero=True)
        self.node_head = Linear(c.d, c.k_atom, rng, zero=c.zero_heads)
        self.pair_a = Linear(c.d, c.d_pair, rng)
        self.pair_m = Linear(c.d, c.d_pair, rng)
        self.pair_e = Linear(c.d_pair, c.d_pair, rng)
        self.edge_head = Linear(c.d_pair, c.k_bond, rng, zero=c.zero_heads)

    # condition pipeline ---------------------------------------------------

    def embed_condition(self, z) -> Tensor:
        return self.cond_embed(z)

    def condition(self, z, batch: int) -> Tensor:
        """Sampling-time condition: ``E(z)`` or the dropout vector when ``z`` is None."""
        if z is None:
            return ad.reshape(self.e_drop, (1, self.config.d)) * np.ones((batch, 1))
        z = np.asarray(z, dtype=np.float64)
        if z.shape != (batch, self.config.d_z):
            raise ShapeMismatch(f"condition must be ({batch}, {self.config.d_z}), got {z.shape}")
        return self.embed_condition(z)

    # network --------------------------------------------------------------

    def forward(self, nodes: np.ndarray, edges: np.ndarray, mask: np.ndarray, t, C: Tensor) -> tuple[Tensor, Tensor]:
        c = self.config
        if nodes.ndim != 3 or nodes.shape[-1] != c.k_atom:
            raise ShapeMismatch(f"nodes must be (B, n, {c.k_atom}), got {nodes.shape}")
        b, n, _ = nodes.shape
        if edges.shape != (b, n, n, c.k_bond) or mask.shape != (b, n):
            raise ShapeMismatch(f"edges {edges.shape} / mask {mask.shape} do not match nodes {nodes.shape}")
        t = np.broadcast_to(np.asarray(t, dtype=np.int64), (b,))
        if (t < 0).any() or (t > c.T).any():
            raise ShapeMismatch(f"t outside 0..{c.T}")
        pair_mask = (mask[:, :, None] & mask[:, None, :]).astype(np.float64)
        pair_mask[:, np.arange(n), np.arange(n)] = 0.0
        walk_node, walk_edge = structure_features(edges, pair_mask)
        h = self.node_in(nodes) + self.degree_in((edges * pair_mask[..., None]).sum(2)) + self.walk_node_in(walk_node)
        e = self.edge_in(edges) + self.walk_edge_in(walk_edge)
        cvec = ad.silu(C + ad.embedding(self.time_table, t))
        for block in self.blocks:
            h, e = block(h, e, cvec, pair_mask, mask)
        h = adaln(h, self.mod_out(cvec))
        node_logits = self.node_head(h)
        a = self.pair_a(h)
        m = self.pair_m(h)
        dp = c.d_pair
        pair = (a.reshape(b, n, 1, dp) + a.reshape(b, 1, n, dp)
                + m.reshape(b, n, 1, dp) * m.reshape(b, 1, n, dp) + self.pair_e(e))
        edge_logits = self.edge_head(ad.relu(pair))
        edge_logits = (edge_logits + ad.swapaxes(edge_logits, 1, 2)) * 0.5
        return node_logits, edge_logits

    def denoise(self, state: CategoricalGraphState, t, cond=None) -> tuple[np.ndarray, np.ndarray]:
        """Logits over clean categories; accepts single or batched states."""
        single = not state.batched
        nodes, edges, mask = state.node_probs, state.edge_probs, state.node_mask
        if single:
            nodes, edges, mask = nodes[None], edges[None], mask[None]
            cond = None if cond is None else np.asarray(cond, dtype=np.float64).reshape(1, -1)
        with ad.no_grad():
            C = self.condition(cond, nodes.shape[0])
            nl, el = self.forward(nodes, edges, mask, t, C)
        if single:
            return nl.data[0], el.data[0]
        return nl.data, el.data

    __call__ = denoise


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 32
    lr: float = 2e-4
    p_drop: float = 0.1
    noise_sigma: float = 0.1
    edge_weight: float = 1.0
    grad_clip: float | None = 1.0
    seed: int = 0
    lr_decay: str = "constant"  # or "cosine": lr * (1 + cos(pi * step / steps)) / 2


def stack_states(graphs: Sequence[MolecularGraph], n_max: int | None = None) -> CategoricalGraphState:
    n_max = n_max or max(len(g.atoms) for g in graphs)
    states = [graph_to_state(g, n_max) for g in graphs]
    return CategoricalGraphState(
        np.stack([s.node_probs for s in states]),
        np.stack([s.edge_probs for s in states]),
        np.stack([s.node_mask for s in states]),
    )


def diffusion_loss(model: Denoiser, x0: CategoricalGraphState, z, sched: NoiseSchedule,
                   rng: np.random.Generator, cfg: TrainConfig) -> tuple[Tensor, dict[str, float]]:
    """Cross-entropy of the clean graph given a forward-noised copy at a random step.

    ``z`` is ``(B, d_z)`` or None; None trains the dropout vector only.
    """
    b, n = x0.node_mask.shape
    t = rng.integers(1, sched.T + 1, size=b)
    noisy = [forward_sample(x0.index(k), int(t[k]), sched, rng) for k in range(b)]
    nodes = np.stack([s.node_probs for s in noisy])
    edges = np.stack([s.edge_probs for s in noisy])
    if z is None:
        C = ad.reshape(model.e_drop, (1, model.config.d)) * np.ones((b, 1))
        C = C + rng.normal(size=C.shape) * cfg.noise_sigma
    else:
        C, _ = condition_dropout(np.asarray(z, dtype=np.float64), cfg.p_drop, model.e_drop, cfg.noise_sigma,
                                 rng, embedder=model.embed_condition)
    node_logits, edge_logits = model.forward(nodes, edges, x0.node_mask, t, C)
    node_t = x0.node_probs.argmax(-1)
    edge_t = x0.edge_probs.argmax(-1)
    upper = np.triu(np.ones((n, n), bool), k=1)
    pair_w = (x0.node_mask[:, :, None] & x0.node_mask[:, None, :] & upper).astype(np.float64)
    node_loss = ad.cross_entropy(node_logits, node_t, x0.node_mask.astype(np.float64))
    if pair_w.sum() > 0:
        edge_loss = ad.cross_entropy(edge_logits, edge_t, pair_w)
    else:
        edge_loss = ad.tensor(0.0)
    total = node_loss + edge_loss * cfg.edge_weight
    return total, {"node": node_loss.item(), "edge": edge_loss.item(), "total": total.item()}


def train_step(model: Denoiser, opt: Adam, x0: CategoricalGraphState, z, sched: NoiseSchedule,
               rng: np.random.Generator, cfg: TrainConfig) -> dict[str, float]:
    opt.zero_grad()
    loss, parts = diffusion_loss(model, x0, z, sched, rng, cfg)
    if not math.isfinite(parts["total"]):
        raise NonFiniteLoss(f"loss is not finite: {parts}")
    loss.backward()
    for name, p in opt.params.items():
        if p.grad is not None and not np.isfinite(p.grad).all():
            raise NonFiniteLoss(f"non-finite gradient in {name}")
    opt.step()
    return parts


def make_optimizer(model: Denoiser, cfg: TrainConfig) -> Adam:
    return Adam(model.parameters(), lr=cfg.lr, betas=(0.9, 0.999), eps=1e-8, grad_clip=cfg.grad_clip)


def train(model: Denoiser, graphs: Sequence[MolecularGraph], z: np.ndarray | None, sched: NoiseSchedule,
          cfg: TrainConfig, log=None, opt: Adam | None = None) -> list[dict[str, float]]:
    """Minibatch training; ``z[k]`` conditions ``graphs[k]`` (or None for unconditional)."""
    if not graphs:
        raise ValueError("no training graphs")
    rng = np.random.default_rng([cfg.seed, 0xD1FF])
    opt = opt or make_optimizer(model, cfg)
    n_max = max(len(g.atoms) for g in graphs)
    full = stack_states(graphs, n_max)
    history = []
    if cfg.lr_decay not in ("constant", "cosine"):
        raise ValueError(f"unknown lr_decay {cfg.lr_decay!r}")
    for step in range(cfg.steps):
        if cfg.lr_decay == "cosine":
            opt.lr = cfg.lr * 0.5 * (1.0 + math.cos(math.pi * step / cfg.steps))
        idx = rng.choice(len(graphs), size=min(cfg.batch_size, len(graphs)), replace=False)
        batch = CategoricalGraphState(full.node_probs[idx], full.edge_probs[idx], full.node_mask[idx])
        width = int(batch.node_mask.sum(1).max())
        batch = CategoricalGraphState(batch.node_probs[:, :width], batch.edge_probs[:, :width, :width],
                                      batch.node_mask[:, :width])
        parts = train_step(model, opt, batch, None if z is None else z[idx], sched, rng, cfg)
        history.append(parts)
        if log is not None and (step % 100 == 0 or step == cfg.steps - 1):
            log(step=step, **parts)
    return history


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    schedule: NoiseSchedule
    tensors: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)
    version: int = VERSION


def _write_tensor(buf: io.BytesIO, name: str, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    raw = name.encode()
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)
    buf.write(struct.pack("<B", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    buf.write(arr.tobytes())


def _read_tensor(buf: io.BytesIO) -> tuple[str, np.ndarray]:
    (name_len,) = _unpack(buf, "<H")
    name = _take(buf, name_len).decode()
    (ndim,) = _unpack(buf, "<B")
    shape = _unpack(buf, f"<{ndim}Q")
    count = int(np.prod(shape)) if ndim else 1
    arr = np.frombuffer(_take(buf, 8 * count), dtype="<f8").reshape(shape).astype(np.float64)
    return name, arr


def _write_table(buf: io.BytesIO, tensors: dict[str, np.ndarray]) -> None:
    buf.write(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        _write_tensor(buf, name, tensors[name])


def _read_table(buf: io.BytesIO) -> dict[str, np.ndarray]:
    (count,) = _unpack(buf, "<I")
    return dict(_read_tensor(buf) for _ in range(count))


def checkpoint_bytes(ck: Checkpoint) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", ck.version))
    kind = ck.schedule.kind.encode()
    buf.write(struct.pack("<IH", ck.schedule.T, len(kind)))
    buf.write(kind)
    _write_table(buf, ck.schedule.to_arrays())
    _write_table(buf, ck.tensors)
    meta = json.dumps(ck.metadata, sort_keys=True).encode()
    buf.write(struct.pack("<I", len(meta)))
    buf.write(meta)
    return seal(buf.getvalue())


def save_checkpoint(path: str | Path, ck: Checkpoint) -> None:
    Path(path).write_bytes(checkpoint_bytes(ck))


def parse_checkpoint(data: bytes) -> Checkpoint:
    buf = open_sealed(data, MAGIC, VERSION)
    T, kind_len = _unpack(buf, "<IH")
    kind = _take(buf, kind_len).decode()
    schedule = NoiseSchedule.from_arrays(T, kind, _read_table(buf))
    tensors = _read_table(buf)
    (meta_len,) = _unpack(buf, "<I")
    metadata = json.loads(_take(buf, meta_len).decode())
    expect_end(buf)
    return Checkpoint(schedule, tensors, metadata, VERSION)


def load_checkpoint(path: str | Path) -> Checkpoint:
    return parse_checkpoint(Path(path).read_bytes())


def model_checkpoint(model: Denoiser, sched: NoiseSchedule, tfe_model=None, metadata: dict | None = None) -> Checkpoint:
    tensors = {f"denoiser.{k}": v for k, v in model.state_dict().items()}
    meta = {"denoiser_config": asdict(model.config), **(metadata or {})}
    if tfe_model is not None:
        tensors.update({f"tfe.{k}": v for k, v in tfe_model.state_dict().items()})
        meta["tfe_config"] = asdict(tfe_model.config)
    return Checkpoint(sched, tensors, meta)


def denoiser_from_checkpoint(ck: Checkpoint) -> Denoiser:
    model = Denoiser(DenoiserConfig(**ck.metadata["denoiser_config"]))
    model.load_state_dict(ck.tensors, prefix="denoiser.")
    return model


def tfe_from_checkpoint(ck: Checkpoint):
    from .tfe import TFE, TFEConfig

    if "tfe_config" not in ck.metadata:
        return None
    model = TFE(TFEConfig(**ck.metadata["tfe_config"]))
    model.load_state_dict(ck.tensors, prefix="tfe.")
    return model
