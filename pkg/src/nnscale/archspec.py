"""Architecture descriptors: typed block specs, validation, JSON format, presets, rescaling.

A descriptor is an ordered list of block specs plus the input geometry. Stage-structured
families (convnext, resnet_bottleneck) additionally carry their stage widths/depths so
that width/depth multipliers can be applied; flat families (ran_e, generic) are plain
block lists and cannot be rescaled.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields
from typing import Optional, Union

FAMILIES = ("convnext", "resnet_bottleneck", "ran_e", "generic")
STAGE_FAMILIES = ("convnext", "resnet_bottleneck")

ACTIVATION_KINDS = ("none", "relu", "relu6", "prelu", "gelu", "hswish", "exp_kernel")


class ArchError(ValueError):
    """Raised for malformed architecture files or invariant violations."""


def round_half_up(x: float) -> int:
    """Round to nearest integer, halves away from zero toward +inf (96*0.666 -> 64)."""
    return int(math.floor(x + 0.5))


def int_ceil(x: float, eps: float = 1e-9) -> int:
    """Ceiling that forgives float noise within eps of an integer."""
    r = round(x)
    if abs(x - r) <= eps:
        return int(r)
    return int(math.ceil(x))


@dataclass(frozen=True)
class Activation:
    """Elementwise non-linearity tag. `alpha` is the prelu slope, `clamp` bounds the
    pre-exponential input of exp_kernel."""

    kind: str
    alpha: float = 0.0
    clamp: float = 10.0

    def __post_init__(self):
        if self.kind not in ACTIVATION_KINDS:
            raise ArchError(f"unknown activation kind {self.kind!r}")
        if not math.isfinite(self.alpha):
            raise ArchError("prelu alpha must be finite")
        if self.kind == "exp_kernel" and not self.clamp > 0:
            raise ArchError("exp_kernel clamp must be > 0")


NONE = Activation("none")
RELU = Activation("relu")
RELU6 = Activation("relu6")
GELU = Activation("gelu")
HSWISH = Activation("hswish")


def prelu(alpha: float) -> Activation:
    return Activation("prelu", alpha=alpha)


def exp_kernel(clamp: float = 10.0) -> Activation:
    return Activation("exp_kernel", clamp=clamp)


@dataclass(frozen=True)
class Stem:
    kernel: int
    stride: int
    out_channels: int


@dataclass(frozen=True)
class RegularConv:
    kernel: int
    stride: int
    out_channels: int
    activation: Activation = RELU


@dataclass(frozen=True)
class Ibn:
    """Inverted bottleneck: 1x1 expand -> depthwise k x k -> 1x1 project."""

    expansion: float
    dw_kernel: int
    stride: int
    out_channels: int
    residual: bool = False


@dataclass(frozen=True)
class ConvNextBlock:
    """Depthwise k x k -> norm -> 1x1 expand -> gelu -> 1x1 project, residual add."""

    expansion: float = 4.0
    dw_kernel: int = 7


@dataclass(frozen=True)
class ConvNextSplitBlock:
    """ConvNext block with the MLP split into a non-linear branch keeping
    ceil(nonlinear_fraction * expansion * w1) channels and a linear branch merged
    into a single 1x1 w1->w1 convolution (optionally followed by branch_activation)."""

    expansion: float
    dw_kernel: int
    nonlinear_fraction: float
    branch_activation: Activation = NONE


@dataclass(frozen=True)
class ResNetBottleneckBlock:
    """1x1 -> k x k -> 1x1 bottleneck with residual add; mid width = expansion * w1."""

    expansion: float
    mid_kernel: int = 3


@dataclass(frozen=True)
class Downsample:
    kernel: int
    stride: int
    out_channels: int


@dataclass(frozen=True)
class Head:
    """Classifier head. With hidden_channels set: 1x1 conv (+ optional depthwise
    dw_kernel conv) then global pool then linear. Without: norm-pool-linear."""

    classes: int
    hidden_channels: Optional[int] = None
    dw_kernel: Optional[int] = None


BlockSpec = Union[
    Stem,
    RegularConv,
    Ibn,
    ConvNextBlock,
    ConvNextSplitBlock,
    ResNetBottleneckBlock,
    Downsample,
    Head,
]

_KIND_TO_CLS = {
    "stem": Stem,
    "regular_conv": RegularConv,
    "ibn": Ibn,
    "convnext_block": ConvNextBlock,
    "convnext_split_block": ConvNextSplitBlock,
    "resnet_bottleneck": ResNetBottleneckBlock,
    "downsample": Downsample,
    "head": Head,
}
_CLS_TO_KIND = {v: k for k, v in _KIND_TO_CLS.items()}


def block_kind(block: BlockSpec) -> str:
    return _CLS_TO_KIND[type(block)]


@dataclass(frozen=True)
class StageConfig:
    """Per-stage widths/depths of a stage-structured family, with the shared block
    parameters needed to rebuild the flat block list."""

    widths: tuple
    depths: tuple
    expansion: float = 4.0
    dw_kernel: int = 7
    classes: int = 1000
    split_fraction: Optional[float] = None
    split_activation: Activation = NONE


@dataclass(frozen=True)
class ArchDescriptor:
    name: str
    family: str
    input_resolution: int
    input_channels: int
    blocks: tuple
    stages: Optional[StageConfig] = None


def _block_out_channels(block: BlockSpec, current: int) -> int:
    if isinstance(block, (Stem, RegularConv, Ibn, Downsample)):
        return block.out_channels
    if isinstance(block, Head):
        return block.classes
    return current


def input_channels_per_block(arch: ArchDescriptor) -> list:
    """In-channel count seen by each block, walking the main path."""
    chain = []
    c = arch.input_channels
    for block in arch.blocks:
        chain.append(c)
        c = _block_out_channels(block, c)
    return chain


def _stride_of(block: BlockSpec) -> int:
    if isinstance(block, (Stem, RegularConv, Ibn, Downsample)):
        return block.stride
    return 1


def validate_arch(arch: ArchDescriptor) -> None:
    """Check all structural invariants; raises ArchError naming block index and rule."""
    if arch.family not in FAMILIES:
        raise ArchError(f"unknown family {arch.family!r}")
    if arch.input_resolution <= 0 or arch.input_channels <= 0:
        raise ArchError("input_resolution and input_channels must be positive")
    if not arch.blocks:
        raise ArchError("blocks non-empty")

    c = arch.input_channels
    stride_product = 1
    for i, block in enumerate(arch.blocks):
        if isinstance(block, (Stem, RegularConv, Ibn, Downsample)):
            if block.out_channels <= 0:
                raise ArchError(f"block {i}: out_channels must be positive")
            if block.stride not in (1, 2, 4):
                raise ArchError(f"block {i}: stride must be one of 1, 2, 4")
            stride_product *= block.stride
        if isinstance(block, RegularConv):
            if block.kernel < 1 or block.kernel % 2 == 0:
                raise ArchError(f"block {i}: regular_conv kernel must be odd")
        if isinstance(block, Ibn):
            if block.expansion <= 0:
                raise ArchError(f"block {i}: expansion must be > 0")
            if block.dw_kernel < 1 or block.dw_kernel % 2 == 0:
                raise ArchError(f"block {i}: ibn depthwise kernel must be odd")
            if block.residual and (block.stride != 1 or block.out_channels != c):
                raise ArchError(
                    f"block {i}: residual ibn requires stride=1 and matching in/out "
                    f"channels (got stride={block.stride}, in={c}, out={block.out_channels})"
                )
        if isinstance(block, (ConvNextBlock, ConvNextSplitBlock)):
            if block.expansion <= 0:
                raise ArchError(f"block {i}: expansion must be > 0")
            if block.dw_kernel < 1 or block.dw_kernel % 2 == 0:
                raise ArchError(f"block {i}: depthwise kernel must be odd")
        if isinstance(block, ConvNextSplitBlock):
            if not 0 < block.nonlinear_fraction < 1:
                raise ArchError(f"block {i}: nonlinear_fraction must lie in (0, 1)")
        if isinstance(block, ResNetBottleneckBlock):
            if block.expansion <= 0:
                raise ArchError(f"block {i}: expansion must be > 0")
            if block.mid_kernel < 1 or block.mid_kernel % 2 == 0:
                raise ArchError(f"block {i}: mid kernel must be odd")
        if isinstance(block, Head):
            if block.classes <= 0:
                raise ArchError(f"block {i}: classes must be positive")
            if i != len(arch.blocks) - 1:
                raise ArchError(f"block {i}: head must be the final block")
        c = _block_out_channels(block, c)

    if arch.input_resolution % stride_product != 0:
        raise ArchError(
            f"input_resolution {arch.input_resolution} not divisible by total "
            f"stride {stride_product}"
        )
    if arch.stages is not None:
        if arch.family not in STAGE_FAMILIES:
            raise ArchError(f"family {arch.family!r} cannot carry stage structure")
        st = arch.stages
        if len(st.widths) != len(st.depths):
            raise ArchError("stage widths and depths must have equal length")
        if any(w <= 0 for w in st.widths) or any(d <= 0 for d in st.depths):
            raise ArchError("stage widths and depths must be positive")


def convnext_arch(
    name: str,
    widths,
    depths,
    expansion: float = 4.0,
    dw_kernel: int = 7,
    resolution: int = 224,
    input_channels: int = 3,
    classes: int = 1000,
    split_fraction: Optional[float] = None,
    split_activation: Activation = NONE,
) -> ArchDescriptor:
    """Stage-structured ConvNext-family descriptor: 4x4/s4 stem, 2x2/s2 downsamples
    between stages, norm-pool-linear head."""
    widths = tuple(int(w) for w in widths)
    depths = tuple(int(d) for d in depths)
    blocks = [Stem(kernel=4, stride=4, out_channels=widths[0])]
    if split_fraction is None:
        body = ConvNextBlock(expansion=expansion, dw_kernel=dw_kernel)
    else:
        body = ConvNextSplitBlock(
            expansion=expansion,
            dw_kernel=dw_kernel,
            nonlinear_fraction=split_fraction,
            branch_activation=split_activation,
        )
    for si, (w, d) in enumerate(zip(widths, depths)):
        if si > 0:
            blocks.append(Downsample(kernel=2, stride=2, out_channels=w))
        blocks.extend([body] * d)
    blocks.append(Head(classes=classes))
    arch = ArchDescriptor(
        name=name,
        family="convnext",
        input_resolution=resolution,
        input_channels=input_channels,
        blocks=tuple(blocks),
        stages=StageConfig(
            widths=widths,
            depths=depths,
            expansion=expansion,
            dw_kernel=dw_kernel,
            classes=classes,
            split_fraction=split_fraction,
            split_activation=split_activation,
        ),
    )
    validate_arch(arch)
    return arch


def resnet_bottleneck_arch(
    name: str,
    widths,
    depths,
    expansion: float = 0.25,
    mid_kernel: int = 3,
    resolution: int = 224,
    input_channels: int = 3,
    classes: int = 1000,
) -> ArchDescriptor:
    """Stage-structured bottleneck-ResNet-family descriptor (stem stride 4 stands in
    for conv+pool, 1x1/s2 projections between stages)."""
    widths = tuple(int(w) for w in widths)
    depths = tuple(int(d) for d in depths)
    blocks = [Stem(kernel=7, stride=4, out_channels=widths[0])]
    for si, (w, d) in enumerate(zip(widths, depths)):
        if si > 0:
            blocks.append(Downsample(kernel=1, stride=2, out_channels=w))
        blocks.extend([ResNetBottleneckBlock(expansion=expansion, mid_kernel=mid_kernel)] * d)
    blocks.append(Head(classes=classes))
    arch = ArchDescriptor(
        name=name,
        family="resnet_bottleneck",
        input_resolution=resolution,
        input_channels=input_channels,
        blocks=tuple(blocks),
        stages=StageConfig(
            widths=widths,
            depths=depths,
            expansion=expansion,
            dw_kernel=mid_kernel,
            classes=classes,
        ),
    )
    validate_arch(arch)
    return arch


# RAN-e SuperNet body rows as (expansion, stride, out_channels, residual).
# The published table lists the stem plus sixteen inverted-bottleneck rows; the
# accompanying text counts seventeen such blocks, so one 80-channel residual row at
# 14x14 is repeated (the reconstruction that reproduces the quoted ~4.7M parameter
# and ~590M MAC totals most closely).
_SUPERNET_ROWS = (
    (6, 1, 32, False),
    (6, 2, 48, False),
    (6, 2, 64, False),
    (6, 1, 80, False),
    (6, 2, 80, False),
    (6, 1, 80, True),
    (6, 1, 80, True),
    (4, 1, 96, False),
    (4, 1, 96, True),
    (6, 1, 128, False),
    (6, 1, 128, True),
    (6, 2, 160, False),
    (4, 1, 176, False),
    (4, 1, 176, True),
    (4, 1, 176, True),
    (6, 1, 224, False),
    (6, 1, 224, True),
)


def _ran_e_supernet() -> ArchDescriptor:
    blocks = [Stem(kernel=3, stride=2, out_channels=16)]
    for e, s, co, res in _SUPERNET_ROWS:
        blocks.append(
            Ibn(expansion=float(e), dw_kernel=3, stride=s, out_channels=co, residual=res)
        )
    blocks.append(Head(classes=1000, hidden_channels=1344, dw_kernel=7))
    arch = ArchDescriptor(
        name="ran-e-supernet",
        family="ran_e",
        input_resolution=224,
        input_channels=3,
        blocks=tuple(blocks),
    )
    validate_arch(arch)
    return arch


_CONVNEXT_CONFIGS = {
    "convnext-t": ((96, 192, 384, 768), (3, 3, 9, 3)),
    "convnext-s": ((96, 192, 384, 768), (3, 3, 27, 3)),
    "convnext-b": ((128, 256, 512, 1024), (3, 3, 27, 3)),
    "ran-i-t": ((64, 128, 256, 511), (5, 5, 15, 5)),
    "ran-i-s": ((76, 151, 303, 606), (5, 5, 15, 5)),
    "ran-i-b": ((87, 175, 350, 699), (7, 7, 21, 7)),
}

PRESET_NAMES = tuple(sorted(_CONVNEXT_CONFIGS) + ["ran-e-supernet"])


def preset(name: str) -> ArchDescriptor:
    """Built-in architectures: convnext-t/s/b, ran-i-t/s/b, ran-e-supernet."""
    if name == "ran-e-supernet":
        return _ran_e_supernet()
    if name in _CONVNEXT_CONFIGS:
        widths, depths = _CONVNEXT_CONFIGS[name]
        return convnext_arch(name, widths, depths)
    raise ArchError(f"unknown preset {name!r} (known: {', '.join(PRESET_NAMES)})")


def scale_arch(
    base: ArchDescriptor,
    w_m: float,
    d_m: float,
    channel_divisor: Optional[int] = None,
) -> ArchDescriptor:
    """Rescale a stage-structured descriptor: widths x w_m and depths x d_m, both
    rounded half-up (depths floored at 1). channel_divisor optionally snaps widths
    to a multiple (off by default; published configs use unsnapped widths)."""
    if w_m <= 0 or d_m <= 0:
        raise ArchError("multipliers must be positive")
    if base.family not in STAGE_FAMILIES or base.stages is None:
        raise ArchError(f"family {base.family!r} is not stage-structured; cannot scale")
    st = base.stages
    widths = []
    for w in st.widths:
        nw = round_half_up(w * w_m)
        if channel_divisor:
            nw = max(channel_divisor, channel_divisor * round_half_up(nw / channel_divisor))
        if nw < 8:
            raise ArchError(f"degenerate width {nw} (stage width {w} x {w_m})")
        widths.append(nw)
    depths = [max(1, round_half_up(d * d_m)) for d in st.depths]
    if base.family == "convnext":
        return convnext_arch(
            base.name,
            widths,
            depths,
            expansion=st.expansion,
            dw_kernel=st.dw_kernel,
            resolution=base.input_resolution,
            input_channels=base.input_channels,
            classes=st.classes,
            split_fraction=st.split_fraction,
            split_activation=st.split_activation,
        )
    return resnet_bottleneck_arch(
        base.name,
        widths,
        depths,
        expansion=st.expansion,
        mid_kernel=st.dw_kernel,
        resolution=base.input_resolution,
        input_channels=base.input_channels,
        classes=st.classes,
    )


# --- JSON file format ---------------------------------------------------------

def _activation_to_json(act: Activation):
    if act.kind == "prelu":
        return {"kind": "prelu", "alpha": act.alpha}
    if act.kind == "exp_kernel":
        return {"kind": "exp_kernel", "clamp": act.clamp}
    return act.kind


def _activation_from_json(obj) -> Activation:
    if isinstance(obj, str):
        if obj in ("prelu", "exp_kernel"):
            raise ArchError(f"activation {obj!r} requires its parameter field")
        return Activation(obj)
    if isinstance(obj, dict):
        kind = obj.get("kind")
        if kind == "prelu":
            _require_keys(obj, {"kind", "alpha"}, "activation")
            return Activation("prelu", alpha=float(obj["alpha"]))
        if kind == "exp_kernel":
            _require_keys(obj, {"kind", "clamp"}, "activation")
            return Activation("exp_kernel", clamp=float(obj["clamp"]))
        raise ArchError(f"unknown activation object kind {kind!r}")
    raise ArchError(f"bad activation value {obj!r}")


def _require_keys(obj: dict, allowed: set, where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ArchError(f"unknown field(s) in {where}: {', '.join(sorted(unknown))}")


def _block_to_json(block: BlockSpec) -> dict:
    out = {"kind": block_kind(block)}
    for f in fields(block):
        v = getattr(block, f.name)
        if isinstance(v, Activation):
            v = _activation_to_json(v)
        if v is not None:
            out[f.name] = v
    return out


def _block_from_json(obj: dict, index: int) -> BlockSpec:
    if not isinstance(obj, dict) or "kind" not in obj:
        raise ArchError(f"block {index}: expected an object with a 'kind' field")
    kind = obj["kind"]
    cls = _KIND_TO_CLS.get(kind)
    if cls is None:
        raise ArchError(f"block {index}: unknown block kind {kind!r}")
    allowed = {"kind"} | {f.name for f in fields(cls)}
    _require_keys(obj, allowed, f"block {index} ({kind})")
    kwargs = {}
    for f in fields(cls):
        if f.name in obj:
            v = obj[f.name]
            if f.name in ("activation", "branch_activation"):
                v = _activation_from_json(v)
            kwargs[f.name] = v
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ArchError(f"block {index} ({kind}): {exc}") from exc


_TOP_KEYS_FULL = {"name", "family", "input_resolution", "input_channels", "blocks"}
_TOP_KEYS_STAGE = {
    "name",
    "family",
    "input_resolution",
    "input_channels",
    "stage_widths",
    "stage_depths",
    "expansion",
    "dw_kernel",
    "classes",
    "split",
}


def parse_arch(text: str) -> ArchDescriptor:
    """Parse an architecture file (full block list or stage shorthand); validates."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ArchError(f"syntax error at line {exc.lineno} column {exc.colno}: {exc.msg}")
    if not isinstance(obj, dict):
        raise ArchError("architecture file must be a JSON object")
    for key in ("name", "family", "input_resolution", "input_channels"):
        if key not in obj:
            raise ArchError(f"missing required field {key!r}")

    if "stage_widths" in obj or "stage_depths" in obj:
        _require_keys(obj, _TOP_KEYS_STAGE, "architecture")
        family = obj["family"]
        if family not in STAGE_FAMILIES:
            raise ArchError(f"stage shorthand requires a stage-structured family, got {family!r}")
        split = obj.get("split")
        split_fraction = None
        split_act = NONE
        if split is not None:
            _require_keys(split, {"fraction", "branch_activation"}, "split")
            split_fraction = float(split["fraction"])
            split_act = _activation_from_json(split.get("branch_activation", "none"))
        kwargs = dict(
            resolution=int(obj["input_resolution"]),
            input_channels=int(obj["input_channels"]),
            classes=int(obj.get("classes", 1000)),
        )
        if family == "convnext":
            return convnext_arch(
                obj["name"],
                obj["stage_widths"],
                obj["stage_depths"],
                expansion=float(obj.get("expansion", 4.0)),
                dw_kernel=int(obj.get("dw_kernel", 7)),
                split_fraction=split_fraction,
                split_activation=split_act,
                **kwargs,
            )
        return resnet_bottleneck_arch(
            obj["name"],
            obj["stage_widths"],
            obj["stage_depths"],
            expansion=float(obj.get("expansion", 0.25)),
            mid_kernel=int(obj.get("dw_kernel", 3)),
            **kwargs,
        )

    _require_keys(obj, _TOP_KEYS_FULL, "architecture")
    blocks = obj.get("blocks")
    if not isinstance(blocks, list):
        raise ArchError("'blocks' must be a list")
    arch = ArchDescriptor(
        name=str(obj["name"]),
        family=str(obj["family"]),
        input_resolution=int(obj["input_resolution"]),
        input_channels=int(obj["input_channels"]),
        blocks=tuple(_block_from_json(b, i) for i, b in enumerate(blocks)),
    )
    validate_arch(arch)
    return arch


def serialize_arch(arch: ArchDescriptor) -> str:
    """Canonical JSON text; deterministic, round-trips through parse_arch."""
    if arch.stages is not None:
        st = arch.stages
        obj = {
            "name": arch.name,
            "family": arch.family,
            "input_resolution": arch.input_resolution,
            "input_channels": arch.input_channels,
            "stage_widths": list(st.widths),
            "stage_depths": list(st.depths),
            "expansion": st.expansion,
            "dw_kernel": st.dw_kernel,
            "classes": st.classes,
        }
        if st.split_fraction is not None:
            obj["split"] = {
                "fraction": st.split_fraction,
                "branch_activation": _activation_to_json(st.split_activation),
            }
    else:
        obj = {
            "name": arch.name,
            "family": arch.family,
            "input_resolution": arch.input_resolution,
            "input_channels": arch.input_channels,
            "blocks": [_block_to_json(b) for b in arch.blocks],
        }
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"
