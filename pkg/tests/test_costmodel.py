from fractions import Fraction

import pytest

import nnscale.archspec as A
import nnscale.costmodel as C


def rel_err(value, target):
    return abs(value - target) / target


# Table-stage to block-index mapping for the supernet preset: the duplicated
# 80-channel row sits at block 7, so stages 2..7 land on blocks 1..6 and
# stages 8..17 on blocks 8..17.
SUPERNET_STAGE_BLOCK = {s: s - 1 for s in range(2, 8)} | {s: s for s in range(8, 18)}


def test_supernet_shape_column():
    arch = A.preset("ran-e-supernet")
    shapes = C.propagate_shapes(arch, C.Shape(3, 224, 224))
    expected = {
        2: 112, 3: 112, 4: 56, 5: 28, 6: 28, 7: 14, 8: 14, 9: 14,
        10: 14, 11: 14, 12: 14, 13: 7, 14: 7, 15: 7, 16: 7, 17: 7,
    }
    for stage, side in expected.items():
        s = shapes[SUPERNET_STAGE_BLOCK[stage]]
        assert (s.height, s.width) == (side, side), f"stage {stage}"
    assert (shapes[0].height, shapes[0].width) == (224, 224)


def test_convnext_stage_resolutions():
    arch = A.preset("convnext-t")
    shapes = C.propagate_shapes(arch, C.Shape(3, 224, 224))
    sides = sorted({s.height for s, b in zip(shapes, arch.blocks)
                    if isinstance(b, A.ConvNextBlock)}, reverse=True)
    assert sides == [56, 28, 14, 7]


def test_stride1_conv_keeps_spatial():
    block = A.RegularConv(kernel=3, stride=1, out_channels=5)
    shapes = C.propagate_shapes(
        A.ArchDescriptor("x", "generic", 20, 4, (block,)), C.Shape(4, 20, 20))
    out = C._out_shape(block, shapes[0])
    assert (out.height, out.width) == (20, 20)


def test_non_integral_stride_errors():
    arch = A.ArchDescriptor(
        "x", "generic", 224, 3, (A.Stem(kernel=4, stride=4, out_channels=8),))
    with pytest.raises(C.CostError, match="not divisible"):
        C.propagate_shapes(arch, C.Shape(3, 225, 225))


def test_convnext_stem_macs_exact():
    macs, _ = C.count_block(A.Stem(kernel=4, stride=4, out_channels=96), C.Shape(3, 224, 224))
    assert macs == 56 * 56 * 4 * 4 * 3 * 96 == 14_450_688


def test_ibn_pointwise_approximation():
    assert C.ibn_pointwise_macs(64, 6, 14, 14) == 12 * 64 * 64 * 196 == 9_633_792


def test_minimal_regular_conv():
    macs, params = C.count_block(A.RegularConv(kernel=1, stride=1, out_channels=1),
                                 C.Shape(1, 1, 1))
    assert macs == 1


@pytest.mark.parametrize("name,params_t,macs_t,ptol,mtol", [
    ("convnext-t", 28.6e6, 4.47e9, 0.01, 0.02),
    ("ran-i-t", 20.76e6, 3.3e9, 0.01, 0.02),
    ("ran-i-s", 28.93e6, 4.59e9, 0.01, 0.02),
    ("ran-i-b", 52.89e6, 8.45e9, 0.01, 0.02),
    ("ran-e-supernet", 4.7e6, 590e6, 0.03, 0.03),
])
def test_cost_oracles(name, params_t, macs_t, ptol, mtol):
    report = C.count_arch(A.preset(name), 224)
    assert rel_err(report.total_params, params_t) <= ptol
    assert rel_err(report.total_macs, macs_t) <= mtol


def test_totals_equal_block_sums():
    for name in ("convnext-t", "ran-e-supernet"):
        report = C.count_arch(A.preset(name), 224)
        assert report.total_macs == sum(b.macs for b in report.per_block)
        assert report.total_params == sum(b.params for b in report.per_block)


def test_pointwise_macs_quadratic_in_width():
    # integer width multipliers avoid rounding, so 1x1 MACs scale exactly as c^2
    base = C.ibn_pointwise_macs(24, 6, 14, 14)
    for c in (2, 3, 4):
        assert C.ibn_pointwise_macs(24 * c, 6, 14, 14) == base * c * c


def test_ibn_to_conv_saving_exactly_25_percent():
    n, h, w = 80, 14, 14
    ibn = C.ibn_pointwise_macs(n, 6, h, w)
    conv, _ = C.count_block(A.RegularConv(kernel=3, stride=1, out_channels=n),
                            C.Shape(n, h, w))
    assert Fraction(ibn - conv, ibn) == Fraction(1, 4)


def test_ibn_equivalent_width_examples():
    assert C.ibn_equivalent_width(64, 6) == 74
    assert C.ibn_equivalent_width(96, 6) == 111
    assert C.ibn_equivalent_width(1, 6) == 1
    m = C.ibn_equivalent_width(64, 6)
    assert abs(9 * m * m - 12 * 64 * 64) / (12 * 64 * 64) <= 0.005


def test_ibn_equivalent_width_rejects_bad_e():
    with pytest.raises(C.CostError):
        C.ibn_equivalent_width(64, 0)


def test_split_block_channels_and_cost():
    block = A.ConvNextSplitBlock(expansion=4, dw_kernel=7, nonlinear_fraction=0.6)
    macs, params = C.count_block(block, C.Shape(96, 56, 56))
    kept = 231  # ceil(0.6 * 4 * 96)
    hw = 56 * 56
    assert macs == hw * (49 * 96 + 96 * kept + kept * 96 + 96 * 96)
    plain_macs, _ = C.count_block(A.ConvNextBlock(), C.Shape(96, 56, 56))
    assert macs < plain_macs


def test_split_block_keep_all_errors():
    block = A.ConvNextSplitBlock(expansion=4, dw_kernel=7, nonlinear_fraction=0.999)
    with pytest.raises(C.CostError, match="keeps all"):
        C.count_block(block, C.Shape(96, 56, 56))


def test_split_mlp_mac_ratio_exact():
    assert C.split_mlp_mac_ratio(Fraction(3, 5), 4) == Fraction(29, 40)
    assert float(C.split_mlp_mac_ratio(Fraction(3, 5), 4)) == 0.725


def test_csv_and_json_reports():
    report = C.count_arch(A.preset("convnext-t"), 224)
    csv_text = report.to_csv()
    header, first = csv_text.splitlines()[:2]
    assert header == "block_index,kind,in_c,in_h,in_w,macs,params"
    assert first.startswith("0,stem,3,224,224,")
    assert '"total_macs"' in report.to_json()
