"""Transcriptome perturbation feature extraction.

Three pieces: cycle-stratified aggregation of single-cell embeddings into a
fixed number of representative rows, a dual-stream attention encoder mapping
(pre, post) profiles to a perturbation embedding ``z``, and the alignment
losses that tie ``z`` to a graph-latent view and a fingerprint view.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeMismatch, Tensor
from .nn import LayerNorm, Linear, Module, MultiHeadAttention

PHASES = ("G1", "S", "G2M")
N_REPRESENTATIVES = 128
LAMBDA_KL = 0.1
TAU = 0.1
SPARSE_WEIGHT = 0.15
NEG_WEIGHT = 0.4
EPS = 1e-8


class EmptyPopulation(ValueError):
    pass


class NonPositiveVariance(ValueError):
    pass


class ZeroRow(ValueError):
    pass


# ---------------------------------------------------------------------------
# data types


@dataclass(frozen=True)
class ExpressionProfile:
    matrix: np.ndarray          # (N, d)
    resolution: str = "bulk"    # "bulk" | "single-cell"

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim == 1:
            m = m[None]
        if m.ndim != 2 or not np.isfinite(m).all():
            raise ValueError("profile must be a finite (N, d) matrix")
        if self.resolution not in ("bulk", "single-cell"):
            raise ValueError(f"unknown resolution {self.resolution!r}")
        object.__setattr__(self, "matrix", m)

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class CellPopulation:
    embeddings: np.ndarray
    phase_labels: tuple[str, ...]
    cluster_labels: tuple[int, ...]

    def __post_init__(self):
        emb = np.asarray(self.embeddings, dtype=np.float64)
        phases = tuple(self.phase_labels)
        clusters = tuple(int(c) for c in self.cluster_labels)
        if emb.ndim != 2 or not (len(emb) == len(phases) == len(clusters)):
            raise ShapeMismatch("embeddings, phases and clusters must share length n")
        bad = set(phases) - set(PHASES)
        if bad:
            raise ValueError(f"unknown phases {sorted(bad)}")
        object.__setattr__(self, "embeddings", emb)
        object.__setattr__(self, "phase_labels", phases)
        object.__setattr__(self, "cluster_labels", clusters)

    def __len__(self) -> int:
        return len(self.phase_labels)

    def phase_counts(self) -> np.ndarray:
        return np.array([sum(1 for p in self.phase_labels if p == ph) for ph in PHASES])


@dataclass(frozen=True)
class ConditionEmbedding:
    C: np.ndarray
    dropped: np.ndarray         # bool per row


def read_population(path: str | Path) -> CellPopulation:
    """Read ``id,phase,cluster,e0..eD`` rows."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:3] != ["id", "phase", "cluster"]:
            raise ValueError("population header must start with id,phase,cluster")
        phases, clusters, rows = [], [], []
        for row in reader:
            if not row:
                continue
            phases.append(row[1])
            clusters.append(int(row[2]))
            rows.append([float(x) for x in row[3:]])
    return CellPopulation(np.array(rows).reshape(len(rows), len(header) - 3), phases, clusters)


def write_population(path: str | Path, pop: CellPopulation) -> None:
    d = pop.embeddings.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "phase", "cluster"] + [f"e{k}" for k in range(d)])
        for i, (ph, cl, e) in enumerate(zip(pop.phase_labels, pop.cluster_labels, pop.embeddings)):
            w.writerow([f"cell{i}", ph, cl] + [repr(float(x)) for x in e])


# ---------------------------------------------------------------------------
# aggregation


def largest_remainder(counts: Sequence[int], total: int) -> np.ndarray:
    """Proportional integer allocation; leftover seats go to the largest
    remainders, ties broken by position."""
    counts = np.asarray(counts, dtype=np.int64)
    n = int(counts.sum())
    if n <= 0:
        raise EmptyPopulation("no items to allocate over")
    # exact integer arithmetic: quota = total * c / n
    floors = (total * counts) // n
    remainders = (total * counts) % n
    left = total - int(floors.sum())
    order = sorted(range(len(counts)), key=lambda k: (-remainders[k], k))
    out = floors.copy()
    for k in order[:left]:
        out[k] += 1
    return out


def aggregate(pop: CellPopulation, N: int = N_REPRESENTATIVES, rng=None) -> ExpressionProfile:
    """``N`` representative rows: (phase, cluster) group means, allotted to
    phases in proportion to their cell counts.

    Within a phase, group means are drawn without replacement when there are
    at least as many groups as allotted rows and with replacement otherwise.
    Rows are ordered by phase (G1, S, G2M).
    """
    if len(pop) == 0:
        raise EmptyPopulation("population has no cells")
    if N < 1:
        raise ValueError("N must be >= 1")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    alloc = largest_remainder(pop.phase_counts(), N)
    phases = np.array(pop.phase_labels)
    clusters = np.array(pop.cluster_labels)
    rows = []
    for ph, k in zip(PHASES, alloc):
        if k == 0:
            continue
        in_phase = phases == ph
        groups = sorted(set(clusters[in_phase].tolist()))
        means = np.stack([pop.embeddings[in_phase & (clusters == c)].mean(0) for c in groups])
        pick = rng.choice(len(groups), size=int(k), replace=len(groups) < k)
        rows.append(means[pick])
    return ExpressionProfile(np.concatenate(rows), "single-cell")


# ---------------------------------------------------------------------------
# interaction encoder


class _Residual(Module):
    """Pre-norm residual attention: ``x + Attn(LN(x), LN(context))``."""

    def __init__(self, d: int, heads: int, rng: np.random.Generator, zero_out: bool):
        self.norm_q = LayerNorm(d)
        self.norm_kv = LayerNorm(d)
        self.attn = MultiHeadAttention(d, heads, rng, zero_out=zero_out)

    def __call__(self, x, context=None):
        q = self.norm_q(x)
        kv = q if context is None else self.norm_kv(context)
        return x + self.attn(q, kv)


class InteractionBlock(Module):
    def __init__(self, d: int, heads: int, rng: np.random.Generator, zero_out: bool = False):
        self.cross_pre = _Residual(d, heads, rng, zero_out)
        self.cross_post = _Residual(d, heads, rng, zero_out)
        self.self_pre = _Residual(d, heads, rng, zero_out)
        self.self_post = _Residual(d, heads, rng, zero_out)

    def __call__(self, pre, post):
        new_pre = self.self_pre(self.cross_pre(pre, post))
        new_post = self.self_post(self.cross_post(post, pre))
        return new_pre, new_post


@dataclass
class TFEConfig:
    d_in: int = 128
    d_model: int = 128
    heads: int = 4
    d_z: int = 128
    n_blocks: int = 3
    d_latent: int = 32          # graph-latent view size
    fp_dim: int = 2048
    zero_out: bool = False


class TFE(Module):
    """Dual-stream encoder ``(T_pre, T_post) -> z`` with projection heads."""

    def __init__(self, config: TFEConfig | None = None, seed: int = 0):
        self.config = config or TFEConfig()
        c = self.config
        rng = np.random.default_rng(seed)
        self.embed = Linear(c.d_in, c.d_model, rng)
        self.blocks = [InteractionBlock(c.d_model, c.heads, rng, c.zero_out) for _ in range(c.n_blocks)]
        self.fuse = _Residual(c.d_model, c.heads, rng, c.zero_out)
        self.to_z = Linear(c.d_model, c.d_z, rng)
        self.g_proj = Linear(c.d_z, 2 * c.d_latent, rng, zero=True)
        self.h_proj = Linear(c.d_z, c.fp_dim, rng)

    def interact(self, t_pre, t_post) -> Tensor:
        """``(B, N, d)`` or ``(N, d)`` profiles -> ``(B, d_z)`` or ``(d_z,)``."""
        pre = ad.as_tensor(t_pre)
        post = ad.as_tensor(t_post)
        if pre.shape != post.shape:
            raise ShapeMismatch(f"pre {pre.shape} vs post {post.shape}")
        single = pre.ndim == 2
        if single:
            pre, post = pre.reshape(1, *pre.shape), post.reshape(1, *post.shape)
        if pre.ndim != 3 or pre.shape[-1] != self.config.d_in:
            raise ShapeMismatch(f"expected (B, N, {self.config.d_in}), got {pre.shape}")
        a, b = self.embed(pre), self.embed(post)
        for block in self.blocks:
            a, b = block(a, b)
        fused = self.fuse(ad.concat([a, b], axis=1))
        z = self.to_z(ad.mean(fused, axis=1))
        return z.reshape(z.shape[-1]) if single else z

    __call__ = interact

    def latent_stats(self, z) -> tuple[Tensor, Tensor]:
        """``(mu_f, var_f)`` for the graph-latent view; variance via ``exp``."""
        out = self.g_proj(z)
        d = self.config.d_latent
        return out[..., :d], ad.exp(out[..., d:])

    def fingerprint_head(self, z) -> Tensor:
        return self.h_proj(z)


def interact(t_pre: ExpressionProfile, t_post: ExpressionProfile, model: TFE) -> np.ndarray:
    """Perturbation embedding ``z`` for one (pre, post) profile pair."""
    if t_pre.matrix.shape != t_post.matrix.shape:
        raise ShapeMismatch(f"pre {t_pre.matrix.shape} vs post {t_post.matrix.shape}")
    with ad.no_grad():
        return model.interact(t_pre.matrix, t_post.matrix).data


# ---------------------------------------------------------------------------
# losses


def _row_reduce(sq: Tensor) -> Tensor:
    """Sum over the last axis, mean over any leading axes."""
    s = ad.tsum(sq, axis=-1)
    return ad.mean(s) if s.ndim else s


def global_loss(mu_enc, var_enc, mu_f, var_f, recon_term, kl_term, lambda_kl: float = LAMBDA_KL) -> Tensor:
    """``recon + lambda_kl * kl + ||mu_enc - mu_f||^2 + ||var_enc - var_f||^2``."""
    mu_enc, var_enc, mu_f, var_f = (ad.as_tensor(x) for x in (mu_enc, var_enc, mu_f, var_f))
    if mu_enc.shape != mu_f.shape or var_enc.shape != var_f.shape or mu_enc.shape != var_enc.shape:
        raise ShapeMismatch("encoder and projected statistics must share shape")
    if (var_enc.data <= 0).any() or (var_f.data <= 0).any():
        raise NonPositiveVariance("variances must be > 0")
    elbo = ad.as_tensor(recon_term) + ad.as_tensor(kl_term) * lambda_kl
    align = _row_reduce((mu_enc - mu_f) ** 2) + _row_reduce((var_enc - var_f) ** 2)
    return elbo + align


def _check_rows(x: np.ndarray, name: str) -> None:
    if (np.linalg.norm(x, axis=-1) == 0).any():
        raise ZeroRow(f"{name} has a zero-norm row")


def contrast_loss(A, B, labels: Sequence[str], tau: float = TAU, lam: float = SPARSE_WEIGHT) -> Tensor:
    """Masked InfoNCE between predicted rows ``A`` and fingerprints ``B``.

    Off-diagonal pairs sharing a label are removed from the negatives. The
    sparse penalty acts on the normalised ``A`` at positions where ``B`` is 0.
    """
    A = ad.as_tensor(A)
    B = np.asarray(B, dtype=np.float64)
    if A.shape != B.shape or A.ndim != 2 or len(labels) != A.shape[0]:
        raise ShapeMismatch(f"A {A.shape}, B {B.shape}, {len(labels)} labels")
    _check_rows(A.data, "A")
    _check_rows(B, "B")
    a = ad.l2_normalize(A)
    b = B / np.linalg.norm(B, axis=-1, keepdims=True)
    logits = ad.matmul(a, b.T) * (1.0 / tau)
    lab = np.asarray(labels, dtype=object)
    same = lab[:, None] == lab[None, :]
    np.fill_diagonal(same, False)
    if same.any():
        logits = ad.masked_fill(logits, same, -np.inf)
    loss = ad.cross_entropy(logits, np.arange(A.shape[0]))
    if lam > 0:
        loss = loss + ad.mean((a * (B == 0)) ** 2) * lam
    return loss


def regression_loss(A, B, alpha: float = NEG_WEIGHT, eps: float = EPS) -> Tensor:
    """Weighted squared error on non-zero fingerprint positions plus an
    ``alpha``-weighted activation penalty on zero positions."""
    A = ad.as_tensor(A)
    B = np.asarray(B, dtype=np.float64)
    if A.shape != B.shape:
        raise ShapeMismatch(f"A {A.shape} vs B {B.shape}")
    pos = B > 0
    neg = ~pos
    w = np.where(pos, np.log1p(np.where(pos, B, 0.0)), 0.0)
    l_pos = ad.tsum((A - B) ** 2 * w) * (1.0 / (pos.sum() + eps))
    l_neg = ad.tsum(A ** 2 * neg) * (1.0 / (neg.sum() + eps))
    return l_pos + l_neg * alpha


def local_loss(A, B, labels, tau: float = TAU, lam: float = SPARSE_WEIGHT, alpha: float = NEG_WEIGHT) -> Tensor:
    return regression_loss(A, B, alpha) + contrast_loss(A, B, labels, tau, lam)


def tfe_total_loss(global_term, local_term, gamma: float = 1.0):
    return global_term + local_term * gamma


def condition_dropout(z, p: float, e_drop, noise_sigma: float, rng=None, embedder=None):
    """Replace rows by ``e_drop`` with probability ``p``, then add Gaussian noise.

    Works on plain arrays (returns :class:`ConditionEmbedding`) and on tensors
    (returns ``(Tensor, dropped)`` so gradients reach the embedder and
    ``e_drop``). Input may be a single vector or a batch of rows.
    """
    if not 0 <= p <= 1:
        raise ValueError("p must lie in [0, 1]")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    emb = embedder(z) if embedder is not None else z
    is_tensor = isinstance(emb, Tensor) or isinstance(e_drop, Tensor)
    shape = emb.shape
    rows = 1 if len(shape) == 1 else shape[0]
    dropped = rng.random(rows) < p
    noise = rng.normal(size=shape) * noise_sigma if noise_sigma > 0 else np.zeros(shape)
    keep = (~dropped).astype(np.float64)
    drop = dropped.astype(np.float64)
    if len(shape) > 1:
        keep, drop = keep[:, None], drop[:, None]
    else:
        keep, drop = keep[0], drop[0]
    if is_tensor:
        out = ad.as_tensor(emb) * keep + ad.as_tensor(e_drop) * drop + noise
        return out, dropped
    emb = np.asarray(emb, dtype=np.float64)
    out = np.where(drop > 0, np.broadcast_to(np.asarray(e_drop, float), shape), emb) + noise
    return ConditionEmbedding(out, dropped)


# ---------------------------------------------------------------------------
# graph-latent view stand-in


def kl_gaussian(mu, var) -> Tensor:
    """``KL(N(mu, var) || N(0, I))`` summed over the last axis, mean over rows."""
    mu, var = ad.as_tensor(mu), ad.as_tensor(var)
    return _row_reduce((mu * mu + var - 1.0 - ad.log(var)) * 0.5)


class VAEStub(Module):
    """Small Gaussian VAE over fingerprint features standing in for a
    pretrained graph autoencoder."""

    def __init__(self, d_in: int = 2048, hidden: int = 128, d_latent: int = 32, seed: int = 0,
                 zero_decoder: bool = False):
        rng = np.random.default_rng(seed)
        self.enc = Linear(d_in, hidden, rng)
        self.enc_out = Linear(hidden, 2 * d_latent, rng, zero=True)
        self.dec = Linear(d_latent, hidden, rng, zero=zero_decoder)
        self.dec_out = Linear(hidden, d_in, rng, zero=zero_decoder)
        self.d_latent = d_latent

    def encode(self, x) -> tuple[Tensor, Tensor]:
        h = self.enc_out(ad.relu(self.enc(x)))
        d = self.d_latent
        return h[..., :d], ad.exp(h[..., d:])

    def decode(self, z) -> Tensor:
        return self.dec_out(ad.relu(self.dec(z)))


def vae_stub_elbo(features, vae: VAEStub, rng=None) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """``(recon, kl, mu_enc, var_enc)`` with a single reparameterised draw."""
    x = ad.as_tensor(np.asarray(features, dtype=np.float64) if not isinstance(features, Tensor) else features)
    if x.shape[-1] != vae.enc.weight.shape[0]:
        raise ShapeMismatch(f"expected {vae.enc.weight.shape[0]} features, got {x.shape[-1]}")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    mu, var = vae.encode(x)
    z = mu + ad.sqrt(var) * rng.normal(size=mu.shape)
    recon = _row_reduce((vae.decode(z) - x) ** 2)
    return recon, kl_gaussian(mu, var), mu, var


# ---------------------------------------------------------------------------
# training


@dataclass
class TFETrainConfig:
    steps: int = 30_000
    batch_size: int = 64
    lr: float = 1e-4
    gamma: float = 1.0
    lambda_kl: float = LAMBDA_KL
    tau: float = TAU
    sparse_weight: float = SPARSE_WEIGHT
    neg_weight: float = NEG_WEIGHT
    seed: int = 0


def fingerprint_features(fps: np.ndarray) -> np.ndarray:
    return np.log1p(np.asarray(fps, dtype=np.float64))


def tfe_step_loss(model: TFE, vae: VAEStub, pre, post, fps, labels, cfg: TFETrainConfig,
                  rng: np.random.Generator) -> tuple[Tensor, dict[str, float]]:
    """Combined global + gamma * local objective on one batch.

    The encoder statistics serve as fixed alignment targets for ``z``; the
    VAE itself is trained only through its ELBO.
    """
    z = model.interact(pre, post)
    mu_f, var_f = model.latent_stats(z)
    recon, kl, mu_enc, var_enc = vae_stub_elbo(fingerprint_features(fps), vae, rng)
    g = global_loss(mu_enc.data, var_enc.data, mu_f, var_f, recon, kl, cfg.lambda_kl)
    A = model.fingerprint_head(z)
    loc = local_loss(A, fps, labels, cfg.tau, cfg.sparse_weight, cfg.neg_weight)
    total = tfe_total_loss(g, loc, cfg.gamma)
    return total, {"global": g.item(), "local": loc.item(), "total": total.item()}


def train_tfe(model: TFE, vae: VAEStub, pre: np.ndarray, post: np.ndarray, fps: np.ndarray,
              labels: Sequence[str], cfg: TFETrainConfig, log=None) -> list[dict[str, float]]:
    """Adam on the combined objective; ``pre``/``post`` are ``(n, N, d)``."""
    from .nn import Adam

    rng = np.random.default_rng(cfg.seed)
    params = {**{f"tfe.{k}": v for k, v in model.parameters().items()},
              **{f"vae.{k}": v for k, v in vae.parameters().items()}}
    opt = Adam(params, lr=cfg.lr, grad_clip=1.0)
    labels = np.asarray(labels, dtype=object)
    history = []
    n = len(pre)
    for step in range(cfg.steps):
        idx = rng.choice(n, size=min(cfg.batch_size, n), replace=False)
        opt.zero_grad()
        loss, parts = tfe_step_loss(model, vae, pre[idx], post[idx], fps[idx], labels[idx].tolist(), cfg, rng)
        if not math.isfinite(parts["total"]):
            raise ArithmeticError(f"non-finite TFE loss at step {step}")
        loss.backward()
        opt.step()
        history.append(parts)
        if log is not None and (step % 50 == 0 or step == cfg.steps - 1):
            log(step=step, **parts)
    return history
