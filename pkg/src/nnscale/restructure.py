"""Analytic restructuring: collapse linear conv/norm sequences into a single regular
convolution, the alpha-band collapse decision for restructurable blocks, and the
ConvNext MLP branch split.

Collapse exactness: with all biases absent the collapsed conv matches the original
sequence everywhere under zero same-padding. With biases, border pixels of the
depthwise stage see padded zeros instead of the constant expansion bias, so equality
is exact on interior output pixels only (those whose receptive window stays in
bounds); `interior_slices` computes that region.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .archspec import (
    Activation,
    ArchDescriptor,
    ConvNextBlock,
    ConvNextSplitBlock,
    Ibn,
    NONE,
    RELU,
    RegularConv,
    convnext_arch,
    int_ceil,
    round_half_up,
)
from .tensor import ConvWeights, conv2d, fold_bn

DEFAULT_BAND = (0.8, 1.3)


class RestructureError(ValueError):
    pass


@dataclass(frozen=True)
class LinearSequence:
    """Activation-free chain of convolutions (each with an optional following batch
    norm). At most one element may be spatial (k > 1), and only that element may
    stride; channels must chain."""

    layers: Tuple

    def __post_init__(self):
        if not self.layers:
            raise RestructureError("sequence must contain at least one layer")
        spatial = 0
        c = self.layers[0][0].in_channels
        for i, (w, bn) in enumerate(self.layers):
            if w.in_channels != c:
                raise RestructureError(
                    f"layer {i}: in_channels {w.in_channels} != chained {c}"
                )
            if w.kernel_size > 1:
                spatial += 1
            elif w.stride != 1:
                raise RestructureError(f"layer {i}: pointwise layers must have stride 1")
            if bn is not None and bn.mean.shape != (w.out_channels,):
                raise RestructureError(f"layer {i}: batch-norm width mismatch")
            c = w.out_channels
        if spatial > 1:
            raise RestructureError("more than one spatial element in sequence")

    @property
    def has_expansion_1x1(self) -> bool:
        w0 = self.layers[0][0]
        return w0.kernel_size == 1 and w0.out_channels > w0.in_channels

    @property
    def has_depthwise(self) -> bool:
        return any(w.groups == w.in_channels > 1 for w, _ in self.layers)

    @property
    def has_projection_1x1(self) -> bool:
        wl = self.layers[-1][0]
        return wl.kernel_size == 1 and wl.out_channels < wl.in_channels

    @property
    def in_channels(self) -> int:
        return self.layers[0][0].in_channels

    @property
    def out_channels(self) -> int:
        return self.layers[-1][0].out_channels

    @property
    def stride(self) -> int:
        for w, _ in self.layers:
            if w.stride != 1:
                return w.stride
        return 1


def _folded(seq: LinearSequence):
    for w, bn in seq.layers:
        yield fold_bn(w, bn) if bn is not None else w


def collapse(seq: LinearSequence) -> ConvWeights:
    """Merge the sequence into one regular convolution. For the expansion/depthwise/
    projection pattern the kernel is W[o,i,u,v] = sum_c P2[o,c] D[c,u,v] P1[c,i] and
    the bias is b[o] = sum_c P2[o,c] (b1[c] sum_uv D[c,u,v] + bd[c]) + b2[o]."""
    kernel = None  # [cur, c_in] pointwise state or [cur, c_in, k, k] spatial state
    bias = None
    any_bias = False
    for w in _folded(seq):
        wb = w.bias if w.bias is not None else np.zeros(w.out_channels)
        any_bias = any_bias or w.bias is not None
        if kernel is None:
            if w.kernel_size == 1 and w.groups == 1:
                kernel = w.kernel[:, :, 0, 0].copy()
            else:
                k4 = w.kernel
                if w.groups > 1:
                    if w.groups != w.in_channels:
                        raise RestructureError("grouped convs other than depthwise unsupported")
                    c = w.in_channels
                    k = w.kernel_size
                    k4 = np.zeros((w.out_channels, c, k, k))
                    per = w.out_channels // c
                    for ch in range(c):
                        k4[ch * per:(ch + 1) * per, ch] = w.kernel[ch * per:(ch + 1) * per, 0]
                kernel = k4.copy()
            bias = wb.copy()
            continue
        if w.kernel_size == 1 and w.groups == 1:
            p = w.kernel[:, :, 0, 0]
            if kernel.ndim == 2:
                kernel = p @ kernel
            else:
                kernel = np.einsum("oc,cikl->oikl", p, kernel)
            bias = p @ bias + wb
        elif w.groups == w.in_channels and w.in_channels > 1:
            if kernel.ndim != 2:
                raise RestructureError("more than one spatial element in sequence")
            d = w.kernel[:, 0, :, :]  # [C, k, k]
            kernel = d[:, None, :, :] * kernel[:, :, None, None]
            bias = bias * d.sum(axis=(1, 2)) + wb
        else:
            if kernel.ndim != 2:
                raise RestructureError("more than one spatial element in sequence")
            kernel = np.einsum("ocuv,ci->oiuv", w.kernel, kernel)
            bias = w.kernel.sum(axis=(2, 3)) @ bias + wb
    if kernel.ndim == 2:
        kernel = kernel[:, :, None, None]
    out_bias = bias if any_bias or np.any(bias != 0) else None
    return ConvWeights(kernel=kernel, bias=out_bias, stride=seq.stride, groups=1)


def interior_slices(height: int, width: int, kernel: int, stride: int):
    """Output-pixel slices whose stride-s same-padded k x k window stays in bounds."""
    def side(n):
        no = -(-n // stride)
        pad = max((no - 1) * stride + kernel - n, 0)
        top = pad // 2
        lo = -(-top // stride)  # first i with i*stride - top >= 0
        hi = (n - kernel + top) // stride  # last i with window end in bounds
        return slice(lo, hi + 1)

    return side(height), side(width)


@dataclass(frozen=True)
class RestructureDecision:
    action: str  # "collapse" | "keep_ibn"
    alpha: float
    band: Tuple[float, float]

    @property
    def collapse(self) -> bool:
        return self.action == "collapse"


def afrb_decide(alpha: float, band: Tuple[float, float] = DEFAULT_BAND) -> RestructureDecision:
    """Collapse when alpha landed inside the band (inclusive), else keep the block
    as an inverted bottleneck."""
    lo, hi = band
    if lo > hi:
        raise RestructureError(f"band lower bound {lo} exceeds upper bound {hi}")
    if not math.isfinite(alpha):
        raise RestructureError("alpha must be finite")
    action = "collapse" if lo <= alpha <= hi else "keep_ibn"
    return RestructureDecision(action=action, alpha=alpha, band=(lo, hi))


def apply_afrb_decision(block: Ibn, decision: RestructureDecision):
    """Emit the searched block's final form: a regular convolution with ReLU for the
    collapse band, or the inverted bottleneck kept (its leading activation returns
    when the model is rebuilt for training)."""
    if decision.collapse:
        return RegularConv(
            kernel=block.dw_kernel,
            stride=block.stride,
            out_channels=block.out_channels,
            activation=RELU,
        )
    return block


def split_convnext_block(
    block: ConvNextBlock,
    fraction: float,
    branch_activation: Activation = NONE,
) -> ConvNextSplitBlock:
    """Split the block MLP: the non-linear branch keeps ceil(fraction * e * w1)
    channels, the remainder becomes a single linear 1x1 (optionally followed by
    branch_activation)."""
    if not 0 < fraction < 1:
        raise RestructureError(f"fraction must lie in (0, 1), got {fraction}")
    return ConvNextSplitBlock(
        expansion=block.expansion,
        dw_kernel=block.dw_kernel,
        nonlinear_fraction=fraction,
        branch_activation=branch_activation,
    )


def restructure_arch(
    arch: ArchDescriptor,
    fraction: float,
    branch_activation: Activation = NONE,
) -> ArchDescriptor:
    """Replace every ConvNext block by its split form across the whole network."""
    if arch.family != "convnext" or arch.stages is None:
        raise RestructureError("restructure_arch requires a stage-structured convnext family")
    if not 0 < fraction < 1:
        raise RestructureError(f"fraction must lie in (0, 1), got {fraction}")
    st = arch.stages
    for w in st.widths:
        mid = round_half_up(st.expansion * w)
        kept = int_ceil(fraction * st.expansion * w)
        if kept >= mid:
            raise RestructureError(
                f"fraction {fraction} keeps all {mid} expanded channels at width {w}"
            )
    return convnext_arch(
        arch.name,
        st.widths,
        st.depths,
        expansion=st.expansion,
        dw_kernel=st.dw_kernel,
        resolution=arch.input_resolution,
        input_channels=arch.input_channels,
        classes=st.classes,
        split_fraction=fraction,
        split_activation=branch_activation,
    )


def random_ibn_sequence(
    seed: int,
    c_in: int,
    expansion: float,
    kernel: int,
    stride: int,
    biased: bool,
    c_out: Optional[int] = None,
) -> LinearSequence:
    """Random expansion/depthwise/projection sequence for collapse verification."""
    from .tensor import rand_tensor

    c_out = c_in if c_out is None else c_out
    mid = max(1, round_half_up(expansion * c_in))
    p1 = rand_tensor((mid, c_in, 1, 1), ("normal", 0.0, 1.0 / c_in), seed, 0)
    d = rand_tensor((mid, 1, kernel, kernel), ("normal", 0.0, 1.0 / (kernel * kernel)), seed, 1)
    p2 = rand_tensor((c_out, mid, 1, 1), ("normal", 0.0, 1.0 / mid), seed, 2)
    def b(n, idx):
        return rand_tensor((n,), ("normal", 0.0, 0.25), seed, idx) if biased else None
    layers = (
        (ConvWeights(p1, b(mid, 3)), None),
        (ConvWeights(d, b(mid, 4), stride=stride, groups=mid), None),
        (ConvWeights(p2, b(c_out, 5)), None),
    )
    return LinearSequence(layers=layers)


def collapse_trial(
    seed: int,
    c_in: int,
    expansion: float,
    kernel: int,
    stride: int,
    size: int = 12,
    biased: bool = False,
) -> dict:
    """Two-path check: forward through the sequence vs. through the collapsed conv.
    Reports the max abs difference on the full map and on the interior region."""
    from .tensor import rand_tensor

    seq = random_ibn_sequence(seed, c_in, expansion, kernel, stride, biased)
    x = rand_tensor((c_in, size, size), ("normal", 0.0, 1.0), seed, 7)
    y = x
    for w, bn in seq.layers:
        w = fold_bn(w, bn) if bn is not None else w
        y = conv2d(y, w, padding="same")
    merged = collapse(seq)
    z = conv2d(x, merged, padding="same")
    diff = np.abs(y - z)
    rs, cs = interior_slices(size, size, kernel, stride)
    interior = diff[:, rs, cs]
    max_interior = float(interior.max()) if interior.size else 0.0
    max_full = float(diff.max())
    tol = 1e-10
    passed = max_full <= tol if not biased else max_interior <= tol
    return {
        "seed": seed,
        "dims": {"c_in": c_in, "expansion": expansion, "kernel": kernel,
                 "stride": stride, "size": size, "biased": biased},
        "max_abs_diff_interior": max_interior,
        "max_abs_diff_full": max_full,
        "pass": bool(passed),
    }
