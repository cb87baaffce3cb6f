"""Float64 numeric substrate: direct 2-D convolution, batch-norm folding, activation
functions, Gram-Jacobi singular values, and seeded tensor generation.

Tensors are plain C-contiguous float64 numpy arrays. Everything here is pure and
deterministic; the random generator is counter-based (Philox, 64-bit keyed) so draws
are reproducible and independently seedable by index.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .archspec import Activation


class TensorError(ValueError):
    pass


def _as_f64(a) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(a, dtype=np.float64))


@dataclass(frozen=True)
class ConvWeights:
    """kernel [C_out, C_in_per_group, k, k]; groups == C for depthwise."""

    kernel: np.ndarray
    bias: Optional[np.ndarray] = None
    stride: int = 1
    groups: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kernel", _as_f64(self.kernel))
        if self.kernel.ndim != 4:
            raise TensorError(f"kernel must be 4-D, got shape {self.kernel.shape}")
        if self.kernel.shape[2] != self.kernel.shape[3] or self.kernel.shape[2] < 1:
            raise TensorError("kernel spatial dims must be square and >= 1")
        if self.stride < 1:
            raise TensorError("stride must be >= 1")
        if self.groups < 1 or self.kernel.shape[0] % self.groups != 0:
            raise TensorError("C_out must be divisible by groups")
        if self.bias is not None:
            object.__setattr__(self, "bias", _as_f64(self.bias))
            if self.bias.shape != (self.kernel.shape[0],):
                raise TensorError("bias must have shape [C_out]")

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[1] * self.groups

    @property
    def kernel_size(self) -> int:
        return self.kernel.shape[2]


@dataclass(frozen=True)
class BNParams:
    mean: np.ndarray
    var: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    epsilon: float = 1e-5

    def __post_init__(self):
        for name in ("mean", "var", "gamma", "beta"):
            object.__setattr__(self, name, _as_f64(getattr(self, name)))
        c = self.mean.shape
        if not (self.var.shape == c and self.gamma.shape == c and self.beta.shape == c):
            raise TensorError("batch-norm parameter shapes disagree")
        if np.any(self.var < 0):
            raise TensorError("variance must be non-negative")
        if self.epsilon <= 0:
            raise TensorError("epsilon must be positive")


def conv2d(x: np.ndarray, w: ConvWeights, padding: str = "same") -> np.ndarray:
    """Direct convolution (cross-correlation) of x [C_in, H, W] -> [C_out, H', W'].
    Same-padding pads with zeros to give H' = ceil(H / stride)."""
    x = _as_f64(x)
    if x.ndim != 3:
        raise TensorError(f"input must be [C, H, W], got shape {x.shape}")
    c, h, wd = x.shape
    if c != w.in_channels:
        raise TensorError(f"input channels {c} != weight in_channels {w.in_channels}")
    k = w.kernel_size
    s = w.stride
    if padding == "same":
        ho = -(-h // s)
        wo = -(-wd // s)
        pad_h = max((ho - 1) * s + k - h, 0)
        pad_w = max((wo - 1) * s + k - wd, 0)
        pt, pl = pad_h // 2, pad_w // 2
        xp = np.pad(x, ((0, 0), (pt, pad_h - pt), (pl, pad_w - pl)))
    elif padding == "valid":
        if h < k or wd < k:
            raise TensorError(f"input {h}x{wd} smaller than kernel {k}")
        ho = (h - k) // s + 1
        wo = (wd - k) // s + 1
        xp = x
    else:
        raise TensorError(f"unknown padding {padding!r}")

    win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::s, ::s]
    win = win[:, :ho, :wo]
    g = w.groups
    cig = w.kernel.shape[1]
    win = win.reshape(g, cig, ho, wo, k, k)
    ker = w.kernel.reshape(g, w.out_channels // g, cig, k, k)
    out = np.einsum("gihwuv,goiuv->gohw", win, ker, optimize=True)
    out = out.reshape(w.out_channels, ho, wo)
    if w.bias is not None:
        out = out + w.bias[:, None, None]
    return out


def fold_bn(w: ConvWeights, bn: BNParams) -> ConvWeights:
    """Fold a following batch norm into the convolution:
    kernel' = kernel * g/sqrt(var+eps), bias' = (bias - mean) * g/sqrt(var+eps) + beta."""
    if bn.mean.shape != (w.out_channels,):
        raise TensorError(
            f"batch-norm channels {bn.mean.shape} != conv out channels {w.out_channels}"
        )
    denom_sq = bn.var + bn.epsilon
    if np.any(denom_sq <= 0):
        raise TensorError("var + epsilon must be positive")
    scale = bn.gamma / np.sqrt(denom_sq)
    kernel = w.kernel * scale[:, None, None, None]
    bias = w.bias if w.bias is not None else np.zeros(w.out_channels)
    bias = (bias - bn.mean) * scale + bn.beta
    return ConvWeights(kernel=kernel, bias=bias, stride=w.stride, groups=w.groups)


def activate(kind: Activation, t: np.ndarray) -> np.ndarray:
    """Elementwise non-linearity. exp_kernel clamps its input to [-clamp, clamp]
    before exponentiation so the result stays finite."""
    t = _as_f64(t)
    if not np.all(np.isfinite(t)):
        raise TensorError("activation input must be finite")
    k = kind.kind
    if k == "none":
        return t.copy()
    if k == "relu":
        return np.maximum(t, 0.0)
    if k == "relu6":
        return np.clip(t, 0.0, 6.0)
    if k == "prelu":
        return np.maximum(t, 0.0) + kind.alpha * np.minimum(t, 0.0)
    if k == "gelu":
        return 0.5 * t * (1.0 + erf(t / math.sqrt(2.0)))
    if k == "hswish":
        return t * np.clip(t + 3.0, 0.0, 6.0) / 6.0
    if k == "exp_kernel":
        return np.exp(np.clip(t, -kind.clamp, kind.clamp))
    raise TensorError(f"unknown activation {k!r}")


def _round_robin_pairs(n: int):
    """Tournament schedule covering all index pairs of 0..n-1 in rounds of disjoint
    pairs (circle method; odd n gets a bye slot)."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        p_idx, q_idx = [], []
        for i in range(m // 2):
            a, b = players[i], players[m - 1 - i]
            if a < n and b < n:
                p_idx.append(min(a, b))
                q_idx.append(max(a, b))
        rounds.append((np.array(p_idx), np.array(q_idx)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def _jacobi_eigvals_batch(a: np.ndarray, tol_scale: float = 1e-12, max_sweeps: int = 60) -> np.ndarray:
    """Eigenvalues of a batch of symmetric matrices [B, n, n] by cyclic Jacobi
    rotations in round-robin order (each round rotates disjoint pairs at once);
    sweeps stop once every matrix's off-diagonal Frobenius mass falls below
    tol_scale (scaled by the matrix norm when that exceeds one). Internally the
    batch axis sits last so pair gathers stay contiguous."""
    a = np.asarray(a, dtype=np.float64)
    _, n, _ = a.shape
    if n == 1:
        return a[:, :, 0].copy()
    w = np.ascontiguousarray(np.moveaxis(a, 0, 2))  # [n, n, B]
    norms = np.sqrt(np.einsum("ijb,ijb->b", w, w))
    tol = tol_scale * np.maximum(1.0, norms)
    idx = np.arange(n)
    rounds = _round_robin_pairs(n)
    off_mask = (~np.eye(n, dtype=bool))[:, :, None]
    for _ in range(max_sweeps):
        om = np.where(off_mask, w, 0.0)
        off = np.sqrt(np.einsum("ijb,ijb->b", om, om))
        if np.all(off <= tol):
            break
        for p_idx, q_idx in rounds:
            apq = w[p_idx, q_idx]
            app = w[p_idx, p_idx]
            aqq = w[q_idx, q_idx]
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                tau = (aqq - app) / (2.0 * apq)
                t = np.sign(tau) / (np.abs(tau) + np.sqrt(1.0 + tau * tau))
            t = np.where((apq != 0.0) & np.isfinite(t), t, 0.0)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            rp = w[p_idx]
            rq = w[q_idx]
            w[p_idx] = c[:, None, :] * rp - s[:, None, :] * rq
            w[q_idx] = s[:, None, :] * rp + c[:, None, :] * rq
            cp = w[:, p_idx]
            cq = w[:, q_idx]
            w[:, p_idx] = c[None, :, :] * cp - s[None, :, :] * cq
            w[:, q_idx] = s[None, :, :] * cp + c[None, :, :] * cq
            w[p_idx, q_idx] = 0.0
            w[q_idx, p_idx] = 0.0
    return np.ascontiguousarray(w[idx, idx].T)


def singular_values_batch(ms: np.ndarray) -> np.ndarray:
    """Singular values (descending) of a batch of equally-shaped matrices [B, r, c],
    via Jacobi eigendecomposition of the smaller Gram matrix."""
    ms = _as_f64(ms)
    if ms.ndim != 3:
        raise TensorError("expected a batch [B, r, c]")
    _, r, c = ms.shape
    if r <= c:
        gram = np.einsum("bij,bkj->bik", ms, ms)
    else:
        gram = np.einsum("bji,bjk->bik", ms, ms)
    eig = _jacobi_eigvals_batch(gram)
    sv = np.sqrt(np.maximum(eig, 0.0))
    return -np.sort(-sv, axis=1)


def singular_values(m: np.ndarray) -> np.ndarray:
    """Singular values of a single matrix, non-negative and descending. Sides are
    limited to 512 (desk scale)."""
    m = _as_f64(m)
    if m.ndim != 2:
        raise TensorError(f"expected a matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise TensorError("matrix entries must be finite")
    r, c = m.shape
    if r > 512 or c > 512:
        raise TensorError(f"matrix sides limited to 512, got {r}x{c}")
    return singular_values_batch(m[None])[0]


def generator(seed: int, index: int = 0) -> np.random.Generator:
    """Counter-based 64-bit generator (Philox), splittable by index."""
    return np.random.Generator(np.random.Philox(key=[seed, index]))


def rand_tensor(shape, dist: Tuple, seed: int, index: int = 0) -> np.ndarray:
    """Seeded random tensor. dist is ("normal", mean, var) or ("uniform", a, b)."""
    gen = generator(seed, index)
    kind = dist[0]
    if kind == "normal":
        _, mean, var = dist
        if var < 0:
            raise TensorError("variance must be >= 0")
        return mean + math.sqrt(var) * gen.standard_normal(shape)
    if kind == "uniform":
        _, a, b = dist
        return gen.uniform(a, b, size=shape).astype(np.float64)
    raise TensorError(f"unknown distribution {kind!r}")


_MAGIC = b"NNTENSR1"


def save_tensor(t: np.ndarray, path: str) -> None:
    """Raw little-endian float64 file: 16-byte header (8-byte magic, uint64 rank),
    then rank uint64 dims, then the row-major data."""
    t = _as_f64(t)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", t.ndim))
        fh.write(struct.pack(f"<{t.ndim}Q", *t.shape))
        fh.write(t.astype("<f8").tobytes(order="C"))


def load_tensor(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _MAGIC:
            raise TensorError(f"bad magic {magic!r}")
        (rank,) = struct.unpack("<Q", fh.read(8))
        dims = struct.unpack(f"<{rank}Q", fh.read(8 * rank))
        data = np.frombuffer(fh.read(), dtype="<f8")
    expected = 1
    for d in dims:
        expected *= d
    if data.size != expected:
        raise TensorError(f"data length {data.size} != product of dims {dims}")
    return data.reshape(dims).astype(np.float64)
