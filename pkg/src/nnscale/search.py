"""Desk-scale non-linearity search on MLP analogs of the restructurable block.

Each block carries one trainable scalar alpha shared by its two PReLU sites (the
first uses slope 1 - alpha, the second uses alpha), so alpha = 1 makes the block
linear and collapsible while alpha = 0 leaves it bottleneck-like. Training minimises
softmax cross-entropy plus lam * ||alpha - 1||^2 with plain SGD and hand-written
reverse-mode gradients; `finalize` then collapses the blocks whose alpha landed in
the configured band.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from .archspec import round_half_up
from .restructure import DEFAULT_BAND, afrb_decide
from .tensor import generator

VARIANTS = ("a1", "a2", "a3")


class SearchError(ValueError):
    pass


@dataclass
class AfrbMlpBlock:
    """x -> prelu(x; 1-alpha) -> expand -> prelu(.; alpha) -> project (+x for the
    residual variants). a1 is plain, a2 residual, a3 half-width residual."""

    alpha: float
    w_expand: np.ndarray   # [m, d_in]
    w_project: np.ndarray  # [d_out, m]
    variant: str = "a1"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise SearchError(f"unknown variant {self.variant!r}")
        if not math.isfinite(self.alpha):
            raise SearchError("alpha must be finite")
        if self.residual and self.w_project.shape[0] != self.w_expand.shape[1]:
            raise SearchError("residual variants require matching in/out width")
        if self.w_project.shape[1] != self.w_expand.shape[0]:
            raise SearchError("expand/project widths disagree")

    @property
    def residual(self) -> bool:
        return self.variant in ("a2", "a3")

    @property
    def expanded_width(self) -> int:
        return self.w_expand.shape[0]


@dataclass
class MlpModel:
    blocks: List[AfrbMlpBlock]
    w_head: np.ndarray  # [classes, d_last]
    b_head: np.ndarray  # [classes]

    @property
    def alphas(self) -> List[float]:
        return [b.alpha for b in self.blocks]


def make_model(
    layer_dims: Sequence[int],
    variants: Sequence[str],
    expansion: float = 4.0,
    classes: int = 2,
    seed: int = 0,
    alpha_init: float = 0.5,
) -> MlpModel:
    """Seeded model with He-scaled weights; a3 blocks shrink to half width."""
    if len(layer_dims) != len(variants) + 1:
        raise SearchError("need len(layer_dims) == len(variants) + 1")
    gen = generator(seed)
    blocks = []
    for i, variant in enumerate(variants):
        d_in, d_out = layer_dims[i], layer_dims[i + 1]
        e = 0.5 if variant == "a3" else expansion
        m = max(1, round_half_up(e * d_in))
        # prelu sites start at slope 0.5, so unit-gain init is stabler than He
        w_e = gen.standard_normal((m, d_in)) * math.sqrt(1.0 / d_in)
        w_p = gen.standard_normal((d_out, m)) * math.sqrt(1.0 / m)
        blocks.append(AfrbMlpBlock(alpha=alpha_init, w_expand=w_e, w_project=w_p, variant=variant))
    d_last = layer_dims[-1]
    w_head = gen.standard_normal((classes, d_last)) * math.sqrt(1.0 / d_last)
    b_head = np.zeros(classes)
    return MlpModel(blocks=blocks, w_head=w_head, b_head=b_head)


def make_dataset(kind: str, n: int, noise: float, seed: int):
    """Synthetic 2-class, 2-D datasets -> (inputs [n, 2], labels [n]).
    blobs stay linearly separable while noise <= 0.5 x the class-center distance."""
    if n < 8:
        raise SearchError("need n >= 8 samples")
    gen = generator(seed)
    n0 = n // 2
    n1 = n - n0
    if kind == "blobs":
        a = np.array([-2.0, 0.0]) + noise * gen.standard_normal((n0, 2))
        b = np.array([2.0, 0.0]) + noise * gen.standard_normal((n1, 2))
    elif kind == "moons":
        t0 = np.linspace(0.0, math.pi, n0)
        t1 = np.linspace(0.0, math.pi, n1)
        a = np.stack([np.cos(t0), np.sin(t0)], axis=1)
        b = np.stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)], axis=1)
        a = a + noise * gen.standard_normal(a.shape)
        b = b + noise * gen.standard_normal(b.shape)
    elif kind == "xor":
        x = gen.uniform(-1.0, 1.0, size=(n, 2))
        y = ((x[:, 0] > 0) != (x[:, 1] > 0)).astype(np.int64)
        x = x + noise * gen.standard_normal(x.shape)
        return x, y
    else:
        raise SearchError(f"unknown dataset kind {kind!r}")
    x = np.concatenate([a, b])
    y = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    perm = gen.permutation(n)
    return x[perm], y[perm]


def _prelu(x: np.ndarray, a: float) -> np.ndarray:
    return np.maximum(x, 0.0) + a * np.minimum(x, 0.0)


def _forward(model: MlpModel, x: np.ndarray):
    caches = []
    h = x
    for blk in model.blocks:
        x_in = h
        h0 = _prelu(x_in, 1.0 - blk.alpha)
        z = h0 @ blk.w_expand.T
        h1 = _prelu(z, blk.alpha)
        out = h1 @ blk.w_project.T
        if blk.residual:
            out = out + x_in
        caches.append((x_in, h0, z, h1))
        h = out
    logits = h @ model.w_head.T + model.b_head
    return logits, h, caches


def _softmax_ce(logits: np.ndarray, y: np.ndarray):
    shifted = logits - logits.max(axis=1, keepdims=True)
    expv = np.exp(shifted)
    probs = expv / expv.sum(axis=1, keepdims=True)
    n = len(y)
    ce = -np.log(probs[np.arange(n), y] + 1e-300).mean()
    grad = probs.copy()
    grad[np.arange(n), y] -= 1.0
    return ce, grad / n, probs


def forward_loss(model: MlpModel, batch, lam: float) -> dict:
    """Full objective on a batch -> {loss, accuracy, regularizer, cross_entropy}."""
    x, y = batch
    logits, _, _ = _forward(model, x)
    if not np.all(np.isfinite(logits)):
        raise SearchError("non-finite activations in forward pass")
    ce, _, probs = _softmax_ce(logits, y)
    reg = float(sum((b.alpha - 1.0) ** 2 for b in model.blocks))
    acc = float((np.argmax(probs, axis=1) == y).mean())
    return {
        "loss": float(ce + lam * reg),
        "accuracy": acc,
        "regularizer": reg,
        "cross_entropy": float(ce),
    }


@dataclass
class Grads:
    w_expand: List[np.ndarray]
    w_project: List[np.ndarray]
    alpha: List[float]
    w_head: np.ndarray
    b_head: np.ndarray


def backward(model: MlpModel, batch, lam: float) -> Grads:
    """Exact reverse-mode gradients of the full objective. The alpha gradient sums
    the first PReLU site (chain factor -1), the second site (+1), and 2 lam (a-1)."""
    x, y = batch
    logits, feats, caches = _forward(model, x)
    _, dlogits, _ = _softmax_ce(logits, y)
    g_wh = dlogits.T @ feats
    g_bh = dlogits.sum(axis=0)
    d_out = dlogits @ model.w_head
    g_we: List[np.ndarray] = [None] * len(model.blocks)
    g_wp: List[np.ndarray] = [None] * len(model.blocks)
    g_a: List[float] = [0.0] * len(model.blocks)
    for i in range(len(model.blocks) - 1, -1, -1):
        blk = model.blocks[i]
        x_in, h0, z, h1 = caches[i]
        d_res = d_out if blk.residual else 0.0
        g_wp[i] = d_out.T @ h1
        d_h1 = d_out @ blk.w_project
        # second PReLU site, slope alpha on the negative part
        d_z = d_h1 * np.where(z > 0, 1.0, blk.alpha)
        g_a[i] += float((d_h1 * np.minimum(z, 0.0)).sum())
        g_we[i] = d_z.T @ h0
        d_h0 = d_z @ blk.w_expand
        # first PReLU site, slope (1 - alpha) on the negative part
        d_x = d_h0 * np.where(x_in > 0, 1.0, 1.0 - blk.alpha)
        g_a[i] -= float((d_h0 * np.minimum(x_in, 0.0)).sum())
        g_a[i] += 2.0 * lam * (blk.alpha - 1.0)
        d_out = d_x + d_res
    return Grads(w_expand=g_we, w_project=g_wp, alpha=g_a, w_head=g_wh, b_head=g_bh)


@dataclass(frozen=True)
class SearchConfig:
    lam: float = 1e-3
    lr: float = 0.2
    epochs: int = 300
    batch: int = 8
    band: Tuple[float, float] = DEFAULT_BAND
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.lam < 1:
            raise SearchError("lam must lie in [0, 1)")
        if self.lr <= 0 or self.batch < 1 or self.epochs < 0:
            raise SearchError("bad optimizer settings")


@dataclass
class SearchTrace:
    """Per-epoch history; regularizer holds the penalty as it enters the loss,
    lam * sum((alpha_i - 1)^2), so it is identically zero at lam = 0."""

    loss: List[float] = field(default_factory=list)
    accuracy: List[float] = field(default_factory=list)
    alphas: List[List[float]] = field(default_factory=list)
    regularizer: List[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.loss)


def train_search(model: MlpModel, dataset, cfg: SearchConfig) -> SearchTrace:
    """Plain minibatch SGD on the joint objective; mutates the model in place and
    returns the per-epoch trace. Deterministic given cfg.seed."""
    x, y = dataset
    n = len(y)
    gen = generator(cfg.seed, index=1)
    trace = SearchTrace()
    for epoch in range(cfg.epochs):
        perm = gen.permutation(n)
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                for start in range(0, n, cfg.batch):
                    sel = perm[start:start + cfg.batch]
                    grads = backward(model, (x[sel], y[sel]), cfg.lam)
                    for i, blk in enumerate(model.blocks):
                        blk.w_expand -= cfg.lr * grads.w_expand[i]
                        blk.w_project -= cfg.lr * grads.w_project[i]
                        blk.alpha -= cfg.lr * grads.alpha[i]
                    model.w_head -= cfg.lr * grads.w_head
                    model.b_head -= cfg.lr * grads.b_head
            stats = forward_loss(model, (x, y), cfg.lam)
        except SearchError as exc:
            raise SearchError(f"training diverged at epoch {epoch}: {exc}") from exc
        if not math.isfinite(stats["loss"]):
            raise SearchError(f"training diverged at epoch {epoch}")
        trace.loss.append(stats["loss"])
        trace.accuracy.append(stats["accuracy"])
        trace.alphas.append(model.alphas)
        trace.regularizer.append(cfg.lam * stats["regularizer"])
    return trace


def nonlinearity_count(model: MlpModel, band: Tuple[float, float] = DEFAULT_BAND) -> int:
    """Non-linear units surviving restructuring: blocks inside the collapse band
    contribute nothing, the rest keep their expanded-width units."""
    total = 0
    for blk in model.blocks:
        if not afrb_decide(blk.alpha, band).collapse:
            total += blk.expanded_width
    return total


@dataclass
class CollapsedDense:
    """relu(x) -> single dense layer (+x when residual); product of the block's
    projection and expansion weights."""

    w: np.ndarray
    residual: bool


@dataclass
class ReinstatedIbn:
    """relu(x) -> expand -> relu -> project (+x when residual); the leading
    activation is brought back for blocks kept non-linear."""

    w_expand: np.ndarray
    w_project: np.ndarray
    residual: bool


@dataclass
class FinalizedModel:
    blocks: List
    w_head: np.ndarray
    b_head: np.ndarray

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = x
        for blk in self.blocks:
            x_in = h
            r = np.maximum(x_in, 0.0)
            if isinstance(blk, CollapsedDense):
                out = r @ blk.w.T
            else:
                out = np.maximum(r @ blk.w_expand.T, 0.0) @ blk.w_project.T
            if blk.residual:
                out = out + x_in
            h = out
        return h @ self.w_head.T + self.b_head


def finalize(model: MlpModel, band: Tuple[float, float] = DEFAULT_BAND) -> FinalizedModel:
    """Collapse in-band blocks to single dense layers and reinstate the leading ReLU
    on the rest."""
    blocks = []
    for blk in model.blocks:
        if afrb_decide(blk.alpha, band).collapse:
            blocks.append(CollapsedDense(w=blk.w_project @ blk.w_expand, residual=blk.residual))
        else:
            blocks.append(ReinstatedIbn(
                w_expand=blk.w_expand.copy(),
                w_project=blk.w_project.copy(),
                residual=blk.residual,
            ))
    return FinalizedModel(blocks=blocks, w_head=model.w_head.copy(), b_head=model.b_head.copy())


def block_forward(blk: AfrbMlpBlock, x: np.ndarray) -> np.ndarray:
    """Single-block forward at the block's current alpha."""
    h0 = _prelu(x, 1.0 - blk.alpha)
    h1 = _prelu(h0 @ blk.w_expand.T, blk.alpha)
    out = h1 @ blk.w_project.T
    return out + x if blk.residual else out
