"""Empirical checks of the gradient-isometry and expressivity theory at desk scale:
mean singular values of layerwise Jacobians for deep linear concatenation-skip MLPs,
and linear-region counting for tiny ReLU networks via lattice activation patterns.

Harness conventions: layers 0 and 1 have no skip inputs; every later layer
concatenates `skip_channels` channels drawn uniformly from outputs at distance >= 2.
The mass convention m := 2 * skip_channels makes the average degree w + m/2 equal
the skip layers' fan-in, which is what the isometry bound is stated over.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tensor import generator, singular_values_batch
from .topology import IsometryBounds, ldi_bounds


class VerifyError(ValueError):
    pass


@dataclass(frozen=True)
class LinearDensenetConfig:
    width: int
    depth: int
    skip_channels: int
    q: float
    seed: int = 0

    def __post_init__(self):
        if self.width < 2:
            raise VerifyError("width must be >= 2")
        if self.depth < 3:
            raise VerifyError("depth must be >= 3")
        if self.skip_channels < 0:
            raise VerifyError("skip_channels must be >= 0")
        if self.q <= 0:
            raise VerifyError("q must be positive")

    @property
    def k_hat(self) -> float:
        return self.width + self.skip_channels  # w + m/2 with m = 2 s


@dataclass(frozen=True)
class LinearDensenet:
    config: LinearDensenetConfig
    weights: tuple          # layer l: [w, w + s_l]
    skip_sources: tuple     # layer l: tuple of (source_layer, channel)


def build_linear_densenet(cfg: LinearDensenetConfig) -> LinearDensenet:
    """Seeded network; layer l >= 2 concatenates skip channels sampled uniformly
    over (source layer <= l-2, channel) pairs."""
    gen = generator(cfg.seed)
    w, s = cfg.width, cfg.skip_channels
    weights = []
    sources = []
    for layer in range(cfg.depth):
        s_l = s if layer >= 2 else 0
        weights.append(math.sqrt(cfg.q) * gen.standard_normal((w, w + s_l)))
        if s_l:
            src_layers = gen.integers(0, layer - 1, size=s_l)  # layers 0 .. l-2
            src_channels = gen.integers(0, w, size=s_l)
            sources.append(tuple(zip(src_layers.tolist(), src_channels.tolist())))
        else:
            sources.append(())
    return LinearDensenet(config=cfg, weights=tuple(weights), skip_sources=tuple(sources))


@dataclass(frozen=True)
class LdiReport:
    per_layer_mean_sv: tuple
    k_hat: float
    bounds: IsometryBounds
    fraction_within: float
    grand_mean: float
    trials: int
    vacuous: bool

    def to_json(self) -> str:
        obj = {
            "per_layer_mean_sv": list(self.per_layer_mean_sv),
            "k_hat": self.k_hat,
            "bounds": {"lower": self.bounds.lower, "upper": self.bounds.upper},
            "fraction_within": self.fraction_within,
            "grand_mean": self.grand_mean,
            "trials": self.trials,
            "vacuous": self.vacuous,
        }
        return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def ldi_report(cfg: LinearDensenetConfig, trials: int) -> LdiReport:
    """Monte-Carlo check of the singular-value bounds. The layerwise Jacobian of a
    linear layer is its weight matrix; each (layer, trial) pair contributes its mean
    singular value, and fraction_within counts how many fall inside the bounds."""
    if trials < 50:
        raise VerifyError("need at least 50 trials")
    bounds = ldi_bounds(cfg.q, cfg.width, cfg.k_hat)
    # group matrices by shape so each group can run as one Jacobi batch
    plain = []  # layers 0, 1 across trials: [w, w]
    skip = []   # layers >= 2: [w, w + s]
    for t in range(trials):
        net = build_linear_densenet(
            LinearDensenetConfig(cfg.width, cfg.depth, cfg.skip_channels, cfg.q, cfg.seed + t)
        )
        for layer, wmat in enumerate(net.weights):
            (plain if wmat.shape[1] == cfg.width else skip).append((t, layer, wmat))
    mean_sv = np.zeros((trials, cfg.depth))
    for group in (plain, skip):
        if not group:
            continue
        batch = np.stack([wmat for _, _, wmat in group])
        sv = singular_values_batch(batch)
        means = sv.mean(axis=1)
        for (t, layer, _), m in zip(group, means):
            mean_sv[t, layer] = m
    within = (mean_sv >= bounds.lower) & (mean_sv <= bounds.upper)
    return LdiReport(
        per_layer_mean_sv=tuple(mean_sv.mean(axis=0).tolist()),
        k_hat=cfg.k_hat,
        bounds=bounds,
        fraction_within=float(within.mean()),
        grand_mean=float(mean_sv.mean()),
        trials=trials,
        vacuous=cfg.skip_channels == 0,
    )


@dataclass(frozen=True)
class ReluNet:
    """Hidden ReLU layers then a linear readout to one output."""

    hidden: tuple   # tuple of (W, b)
    readout: tuple  # (W, b)

    @property
    def input_dim(self) -> int:
        return self.hidden[0][0].shape[1] if self.hidden else self.readout[0].shape[1]

    @property
    def relu_units(self) -> int:
        return sum(w.shape[0] for w, _ in self.hidden)


def random_relu_net(n0: int, n: int, layers: int, seed: int) -> ReluNet:
    gen = generator(seed)
    hidden = []
    d = n0
    for _ in range(layers):
        w = gen.standard_normal((n, d)) * math.sqrt(2.0 / d)
        b = gen.standard_normal(n) * 0.5
        hidden.append((w, b))
        d = n
    w = gen.standard_normal((1, d)) * math.sqrt(1.0 / d)
    return ReluNet(hidden=tuple(hidden), readout=(w, np.zeros(1)))


@dataclass(frozen=True)
class RegionCount:
    distinct_patterns: int
    grid_resolution: int
    relu_units: int
    log2_upper: float


def count_linear_regions(net: ReluNet, box_radius: float, grid: int) -> RegionCount:
    """Lower-bound region count: distinct ReLU sign patterns over a grid x grid
    lattice on [-r, r]^d. The count can never exceed 2^X for X ReLU units."""
    x_units = net.relu_units
    if x_units > 24:
        raise VerifyError(f"too many ReLU units for pattern counting: {x_units} > 24")
    if grid > 2048:
        raise VerifyError(f"grid limited to 2048, got {grid}")
    d = net.input_dim
    if d not in (1, 2):
        raise VerifyError("lattice evaluation supports 1- or 2-D inputs")
    axis = np.linspace(-box_radius, box_radius, grid)
    if d == 1:
        pts = axis[:, None]
    else:
        gx, gy = np.meshgrid(axis, axis, indexing="ij")
        pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    if x_units == 0:
        distinct = 1
    else:
        bits = np.empty((pts.shape[0], x_units), dtype=np.uint8)
        h = pts
        col = 0
        for w, b in net.hidden:
            pre = h @ w.T + b
            bits[:, col:col + w.shape[0]] = (pre > 0).astype(np.uint8)
            h = np.maximum(pre, 0.0)
            col += w.shape[0]
        packed = np.packbits(bits, axis=1)
        distinct = int(np.unique(packed, axis=0).shape[0])
    if distinct > 2 ** x_units:
        raise VerifyError("pattern count exceeded 2^X; counter is broken")
    return RegionCount(
        distinct_patterns=distinct,
        grid_resolution=grid,
        relu_units=x_units,
        log2_upper=float(x_units),
    )


def montufar_consistency(
    n: int,
    n0: int,
    layers: int,
    trials: int,
    grid: int = 256,
    box_radius: float = 2.0,
    seed: int = 0,
) -> dict:
    """Observed pattern counts of random (n0 -> n x layers -> 1) rectifier nets next
    to the 2^X ceiling and the constructive depth bound. The ceiling is asserted on
    every trial; depth trends are reported, not asserted."""
    from .topology import log2_montufar_bound

    counts = []
    for t in range(trials):
        net = random_relu_net(n0, n, layers, seed=seed * 100003 + t)
        rc = count_linear_regions(net, box_radius, grid)
        counts.append(rc.distinct_patterns)
    x_units = n * layers
    return {
        "n": n,
        "n0": n0,
        "layers": layers,
        "trials": trials,
        "grid": grid,
        "mean_patterns": float(np.mean(counts)),
        "max_patterns": int(np.max(counts)),
        "log2_upper": float(x_units),
        "log2_lower_bound": log2_montufar_bound(n, n0, layers),
        "depth_term_zero": n == n0,
    }


def montufar_trend(
    n: int,
    n0: int,
    layer_counts: Sequence[int],
    trials: int,
    grid: int = 256,
    box_radius: float = 2.0,
    seed: int = 0,
) -> dict:
    """Reports per-depth consistency plus whether mean observed patterns were
    non-decreasing in depth."""
    reports = [
        montufar_consistency(n, n0, layers, trials, grid, box_radius, seed)
        for layers in layer_counts
    ]
    means = [r["mean_patterns"] for r in reports]
    return {
        "reports": reports,
        "mean_patterns": means,
        "non_decreasing": all(b >= a for a, b in zip(means, means[1:])),
    }
