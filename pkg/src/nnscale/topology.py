"""Topological metrics: NN-Mass, cell density, non-linear unit counts, average degree,
gradient-isometry bounds, and linear-region expressivity bounds.

Closed forms for uniform residual families:
  bottleneck-ResNet block  i_b = (1+2e) w1, rho_b = 1/(2+e), mass = (1+2e)/(2+e) w1,
                           X = 2 e w1 per block, k_R = 2e(2+e)/(1+2e)
  ConvNext block           i_b = (2+e) w1, rho_b = 1/3, mass = (2+e)/3 w1,
                           X = e w1 per block, k_C = 3e/(2+e)
Only blocks with residual additions carry mass; stems, downsamplers, heads, and
non-residual inverted bottlenecks contribute zero.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction

from .archspec import (
    ArchDescriptor,
    ConvNextBlock,
    ConvNextSplitBlock,
    Ibn,
    RegularConv,
    ResNetBottleneckBlock,
    int_ceil,
    input_channels_per_block,
    round_half_up,
)


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class BlockMass:
    block_index: int
    input_channels: int      # i_b: total input channels over the block's layers
    cell_density: Fraction   # rho_b
    mass: float


@dataclass(frozen=True)
class MassReport:
    mass: float
    per_block: tuple
    nonlinear_units: int
    k: Fraction
    avg_degree: float

    def to_json(self) -> str:
        obj = {
            "mass": self.mass,
            "nonlinear_units": self.nonlinear_units,
            "k": float(self.k),
            "avg_degree": self.avg_degree,
            "per_block": [
                {
                    "block_index": b.block_index,
                    "input_channels": b.input_channels,
                    "cell_density": float(b.cell_density),
                    "mass": b.mass,
                }
                for b in self.per_block
            ],
        }
        return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def proportionality_constant(family: str, e) -> Fraction:
    """Exact ratio k = X / m for a uniform residual family."""
    ef = Fraction(e)
    if ef <= 0:
        raise TopologyError("expansion must be positive")
    if family == "resnet_bottleneck":
        return 2 * ef * (2 + ef) / (1 + 2 * ef)
    if family == "convnext":
        return 3 * ef / (2 + ef)
    raise TopologyError(f"unsupported family {family!r}")


def _block_units(block, c: int) -> int:
    """Non-linear activation sites contributed by one block at input width c."""
    if isinstance(block, Ibn):
        return 2 * round_half_up(block.expansion * c)
    if isinstance(block, ConvNextBlock):
        return round_half_up(block.expansion * c)
    if isinstance(block, ConvNextSplitBlock):
        mid = round_half_up(block.expansion * c)
        kept = int_ceil(block.nonlinear_fraction * block.expansion * c)
        units = kept
        if block.branch_activation.kind != "none":
            units += mid - kept
        return units
    if isinstance(block, ResNetBottleneckBlock):
        return 2 * round_half_up(block.expansion * c)
    if isinstance(block, RegularConv):
        return block.out_channels if block.activation.kind != "none" else 0
    return 0


def nonlinear_units(arch: ArchDescriptor) -> int:
    """Total count of scalar non-linear activation sites in the network."""
    chain = input_channels_per_block(arch)
    return sum(_block_units(b, c) for b, c in zip(arch.blocks, chain))


def nn_mass(arch: ArchDescriptor) -> MassReport:
    """NN-Mass report for a uniform-expansion ConvNext or bottleneck-ResNet family."""
    if arch.family not in ("convnext", "resnet_bottleneck"):
        raise TopologyError(
            f"nn_mass requires a convnext or resnet_bottleneck family, got {arch.family!r}"
        )
    chain = input_channels_per_block(arch)
    per_block = []
    expansions = set()
    mass = 0.0
    for i, (block, c) in enumerate(zip(arch.blocks, chain)):
        if isinstance(block, (ConvNextBlock, ConvNextSplitBlock)):
            e = Fraction(block.expansion)
            expansions.add(e)
            i_b = int((2 + e) * c)
            rho = Fraction(1, 3)
            bm = float(Fraction(i_b) * rho)
        elif isinstance(block, ResNetBottleneckBlock):
            e = Fraction(block.expansion)
            expansions.add(e)
            i_b = int((1 + 2 * e) * c)
            rho = 1 / (2 + e)
            bm = float(Fraction(i_b) * rho)
        else:
            i_b = 0
            rho = Fraction(0)
            bm = 0.0
        per_block.append(BlockMass(i, i_b, rho, bm))
        mass += bm
    if not expansions:
        raise TopologyError("no residual blocks; NN-Mass undefined")
    if len(expansions) > 1:
        raise TopologyError(
            "non-uniform structure: mixed expansion ratios "
            f"{sorted(float(e) for e in expansions)}"
        )
    e = expansions.pop()
    k = proportionality_constant(arch.family, e)
    units = nonlinear_units(arch)
    bearing = [(b, c) for b, c in zip(per_block, chain) if b.input_channels > 0]
    mean_w = sum(c for _, c in bearing) / len(bearing)
    return MassReport(
        mass=mass,
        per_block=tuple(per_block),
        nonlinear_units=units,
        k=k,
        avg_degree=average_degree(mean_w, mass),
    )


def average_degree(w: float, m: float) -> float:
    """Mean connections per channel: w + m/2."""
    if w <= 0:
        raise TopologyError("width must be positive")
    if m < 0:
        raise TopologyError("mass must be non-negative")
    return w + m / 2.0


@dataclass(frozen=True)
class IsometryBounds:
    lower: float
    upper: float


def ldi_bounds(q: float, w: float, k_hat: float) -> IsometryBounds:
    """Bounds on the mean singular value of a layerwise Jacobian at init variance q:
    sqrt(q k_hat) -/+ sqrt(q w). With q = 1/k_hat the bounds bracket 1."""
    if q <= 0:
        raise TopologyError("q must be positive")
    if not k_hat >= w > 0:
        raise TopologyError(f"need k_hat >= w > 0, got k_hat={k_hat}, w={w}")
    centre = math.sqrt(q * k_hat)
    spread = math.sqrt(q * w)
    return IsometryBounds(centre - spread, centre + spread)


def log2_region_upper_bound(x_units: int) -> float:
    """log2 of the activation-pattern upper bound 2^X on linear regions."""
    if x_units < 0:
        raise TopologyError("non-linear unit count must be >= 0")
    return float(x_units)


def log2_montufar_bound(n: int, n0: int, layers: int) -> float:
    """log2 of the constructive lower bound (n/n0)^((L-1) n0) * n^n0 on the maximal
    number of linear regions of an L-layer width-n rectifier network on R^n0."""
    if not (n >= n0 >= 1):
        raise TopologyError(f"need n >= n0 >= 1, got n={n}, n0={n0}")
    if layers < 1:
        raise TopologyError("layers must be >= 1")
    return (layers - 1) * n0 * math.log2(n / n0) + n0 * math.log2(n)


def corollary_exponent(n: int, n0: int, m: float) -> float:
    """Depth-term exponent (m - n) n0 / n of the region bound rewritten in terms of
    the mass m = n L of a uniform width-n residual stack."""
    if not (n >= n0 >= 1):
        raise TopologyError(f"need n >= n0 >= 1, got n={n}, n0={n0}")
    if m < n:
        raise TopologyError(f"mass {m} below single-layer mass {n}")
    return (m - n) * n0 / n
