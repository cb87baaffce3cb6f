"""Acceptance suite: one test per criterion, each printing a PASS line on success.

Run with `pytest -s tests/test_acceptance.py` to see the per-criterion lines.
"""

import copy
import itertools
import math
import time
from fractions import Fraction

import numpy as np

import nnscale.archspec as A
import nnscale.costmodel as C
import nnscale.restructure as R
import nnscale.scaler as SC
import nnscale.search as S
import nnscale.topology as T
import nnscale.verify as V


def rel(value, target):
    return abs(value - target) / target


def report(n, text):
    print(f"\nACCEPTANCE {n} PASS: {text}")


def test_criterion_1_convnext_cost_oracles():
    t0 = time.perf_counter()
    tiny = C.count_arch(A.preset("convnext-t"), 224)
    small = C.count_arch(A.preset("convnext-s"), 224)
    base = C.count_arch(A.preset("convnext-b"), 224)
    elapsed = time.perf_counter() - t0
    assert rel(tiny.total_params, 28.6e6) <= 0.01
    assert rel(tiny.total_macs, 4.47e9) <= 0.02
    assert rel(small.total_macs, 8.7e9) <= 0.02
    assert rel(base.total_macs, 15.4e9) <= 0.02
    assert elapsed < 1.0
    report(1, f"convnext-t {tiny.total_params/1e6:.2f}M/{tiny.total_macs/1e9:.3f}B, "
              f"convnext-s {small.total_macs/1e9:.3f}B, convnext-b "
              f"{base.total_macs/1e9:.3f}B in {elapsed:.2f}s")


def test_criterion_2_ran_i_reproduction():
    base = A.preset("convnext-t")
    targets = [
        ((0.666, 1.65), (64, 128, 256, 511), (5, 5, 15, 5), 20.76e6, 3.3e9),
        ((0.789, 1.65), (76, 151, 303, 606), (5, 5, 15, 5), 28.93e6, 4.59e9),
        ((0.9105, 2.30), (87, 175, 350, 699), (7, 7, 21, 7), 52.89e6, 8.45e9),
    ]
    lines = []
    for (w_m, d_m), widths, depths, params_t, macs_t in targets:
        scaled = A.scale_arch(base, w_m, d_m)
        assert scaled.stages.widths == widths
        assert scaled.stages.depths == depths
        r = C.count_arch(scaled, 224)
        assert rel(r.total_params, params_t) <= 0.01
        assert rel(r.total_macs, macs_t) <= 0.02
        lines.append(f"{w_m}/{d_m}->{r.total_params/1e6:.2f}M/{r.total_macs/1e9:.2f}B")
    report(2, "exact widths/depths for all three scaled configs; " + ", ".join(lines))


def test_criterion_3_supernet_oracle():
    arch = A.preset("ran-e-supernet")
    shapes = C.propagate_shapes(arch, C.Shape(3, 224, 224))
    # published table column; stages 2..7 sit at blocks 1..6, stages 8..17 at
    # blocks 8..17 (the repeated 80-channel row occupies block 7)
    stage_block = {s: s - 1 for s in range(2, 8)} | {s: s for s in range(8, 18)}
    column = {2: 112, 3: 112, 4: 56, 5: 28, 6: 28, 7: 14, 8: 14, 9: 14, 10: 14,
              11: 14, 12: 14, 13: 7, 14: 7, 15: 7, 16: 7, 17: 7}
    assert (shapes[0].height, shapes[0].width) == (224, 224)
    for stage, side in column.items():
        s = shapes[stage_block[stage]]
        assert (s.height, s.width) == (side, side), f"stage {stage}"
    r = C.count_arch(arch, 224)
    assert rel(r.total_params, 4.7e6) <= 0.03
    assert rel(r.total_macs, 590e6) <= 0.03
    report(3, f"all 17 table shapes exact; params {r.total_params/1e6:.3f}M "
              f"({100*rel(r.total_params, 4.7e6):.1f}% of 4.7M), macs "
              f"{r.total_macs/1e6:.0f}M ({100*rel(r.total_macs, 590e6):.1f}% of 590M)")


def test_criterion_4_width_algebra():
    # identity over the full range
    for n in range(16, 513):
        assert C.ibn_equivalent_width(n, 6) == round(1.1547 * n), n
    # the unrounded width balances the costs exactly: 9 (n*sqrt(12)/3)^2 = 12 n^2
    for n in (16, 64, 311, 512):
        m_exact = n * math.sqrt(12.0) / 3.0
        assert abs(9 * m_exact**2 - 12 * n * n) / (12 * n * n) <= 1e-9
    # after rounding, the 0.5% mismatch bound is attainable from n=153 up (the
    # relative effect of rounding scales as ~0.87/n, so small n provably exceed
    # 0.5%: n=16 lands at 5.1%); the published exemplar widths also satisfy it
    for n in list(range(153, 513)) + [64, 96]:
        m = C.ibn_equivalent_width(n, 6)
        assert abs(9 * m * m - 12 * n * n) / (12 * n * n) <= 0.005, n
    # unit count and collapse saving are exact at every width
    for n in (16, 64, 96, 511):
        blocks = (
            A.Stem(kernel=3, stride=2, out_channels=n),
            A.Ibn(expansion=6, dw_kernel=3, stride=1, out_channels=n, residual=True),
            A.Head(classes=10),
        )
        arch = A.ArchDescriptor("x", "ran_e", 32, 3, blocks)
        assert T.nonlinear_units(arch) == 12 * n
        ibn_pw = C.ibn_pointwise_macs(n, 6, 14, 14)
        conv, _ = C.count_block(A.RegularConv(kernel=3, stride=1, out_channels=n),
                                C.Shape(n, 14, 14))
        assert Fraction(ibn_pw - conv, ibn_pw) == Fraction(1, 4)
    report(4, "width identity on 16..512, exact-width MAC equality, 0.5% bound on "
              "its attainable range (n>=153 plus exemplars 64/96), 12n units and "
              "25% saving exact")


def test_criterion_5_proportionality_property():
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    checked = 0
    for _ in range(1000):
        family = rng.choice(["convnext", "resnet_bottleneck"])
        stages = int(rng.integers(1, 5))
        widths = (4 * rng.integers(2, 128, size=stages)).tolist()
        depths = rng.integers(1, 12, size=stages).tolist()
        if family == "convnext":
            e = float(rng.choice([1, 2, 3, 4, 6, 8]))
            arch = A.convnext_arch("r", widths, depths, expansion=e, resolution=32)
            k = T.proportionality_constant("convnext", Fraction(e))
            assert k == 3 * Fraction(e) / (2 + Fraction(e))
        else:
            e = float(rng.choice([0.25, 0.5, 1, 2, 4]))
            arch = A.resnet_bottleneck_arch("r", widths, depths, expansion=e,
                                            resolution=32)
            ef = Fraction(e)
            k = T.proportionality_constant("resnet_bottleneck", ef)
            assert k == 2 * ef * (2 + ef) / (1 + 2 * ef)
        rep = T.nn_mass(arch)
        x = rep.nonlinear_units
        assert abs(x - float(rep.k) * rep.mass) / x <= 1e-9
        checked += 1
    elapsed = time.perf_counter() - t0
    assert checked == 1000
    assert elapsed < 10.0
    report(5, f"X = k*m within 1e-9 on {checked} random archs in {elapsed:.2f}s")


def test_criterion_6_restructuring_costs():
    lines = []
    for act in (A.NONE, A.GELU, A.exp_kernel()):
        arch = R.restructure_arch(A.preset("convnext-t"), 0.6, act)
        r = C.count_arch(arch, 224)
        assert rel(r.total_params, 21.5e6) <= 0.01
        assert rel(r.total_macs, 3.32e9) <= 0.02
        lines.append(f"{act.kind}:{r.total_params/1e6:.2f}M/{r.total_macs/1e9:.2f}B")
    assert C.split_mlp_mac_ratio(Fraction(3, 5), 4) == Fraction(29, 40)
    assert float(C.split_mlp_mac_ratio(Fraction(3, 5), 4)) == 0.725
    report(6, "split models " + ", ".join(lines) + "; exact MLP ratio 29/40 = 0.725")


def test_criterion_7_collapse_equivalence():
    t0 = time.perf_counter()
    grid = list(itertools.product((2, 4, 8), (2, 4, 6), (3, 5, 7), (1, 2)))
    worst_free = 0.0
    worst_interior = 0.0
    for seed, (c_in, e, k, stride) in zip(range(200), itertools.cycle(grid)):
        free = R.collapse_trial(seed, c_in, e, k, stride, size=12, biased=False)
        biased = R.collapse_trial(seed, c_in, e, k, stride, size=12, biased=True)
        worst_free = max(worst_free, free["max_abs_diff_full"])
        worst_interior = max(worst_interior, biased["max_abs_diff_interior"])
    elapsed = time.perf_counter() - t0
    assert worst_free <= 1e-10
    assert worst_interior <= 1e-10
    assert elapsed < 60.0
    report(7, f"200 trials: bias-free max {worst_free:.2e}, biased interior max "
              f"{worst_interior:.2e} in {elapsed:.1f}s")


def test_criterion_8_toy_search():
    # exact gradients against central differences on 20 seeds
    worst = 0.0
    for seed in range(20):
        variants = (["a1", "a2"], ["a1", "a3"], ["a1", "a1", "a2"])[seed % 3]
        dims = [2] + [6] * len(variants)
        model = S.make_model(dims, variants, seed=seed, alpha_init=0.4 + 0.02 * seed)
        batch = S.make_dataset("moons" if seed % 2 else "blobs", 24, 0.2,
                               seed=seed + 50)
        grads = S.backward(model, batch, 1e-3)
        h = 1e-6
        for i in range(len(model.blocks)):
            m1, m2 = copy.deepcopy(model), copy.deepcopy(model)
            m1.blocks[i].alpha += h
            m2.blocks[i].alpha -= h
            fd = (S.forward_loss(m1, batch, 1e-3)["loss"] -
                  S.forward_loss(m2, batch, 1e-3)["loss"]) / (2 * h)
            denom = max(abs(fd), abs(grads.alpha[i]), 1e-8)
            worst = max(worst, abs(grads.alpha[i] - fd) / denom)
        flat = model.blocks[0].w_expand
        for r_i, c_i in ((0, 0), (1, 1)):
            m1, m2 = copy.deepcopy(model), copy.deepcopy(model)
            m1.blocks[0].w_expand[r_i, c_i] += h
            m2.blocks[0].w_expand[r_i, c_i] -= h
            fd = (S.forward_loss(m1, batch, 1e-3)["loss"] -
                  S.forward_loss(m2, batch, 1e-3)["loss"]) / (2 * h)
            g = grads.w_expand[0][r_i, c_i]
            worst = max(worst, abs(g - fd) / max(abs(fd), abs(g), 1e-8))
    assert worst <= 1e-5
    # end-to-end search on separable blobs
    model = S.make_model([2, 8, 8, 8], ["a1", "a1", "a1"], seed=0)
    data = S.make_dataset("blobs", 256, 0.4, seed=100)
    trace = S.train_search(model, data, S.SearchConfig(lam=1e-3, epochs=300, seed=0))
    in_band = sum(1 for a in model.alphas if 0.8 <= a <= 1.3)
    assert trace.accuracy[-1] >= 0.95
    assert in_band >= 2
    report(8, f"gradcheck worst rel err {worst:.2e}; search acc "
              f"{trace.accuracy[-1]:.3f} with {in_band}/3 blocks in [0.8, 1.3]")


def test_criterion_9_isometry_harness():
    t0 = time.perf_counter()
    cfg = V.LinearDensenetConfig(width=32, depth=16, skip_channels=32,
                                 q=1.0 / 64.0, seed=0)
    rep = V.ldi_report(cfg, trials=200)
    elapsed = time.perf_counter() - t0
    assert rep.fraction_within >= 0.99
    assert 0.85 <= rep.grand_mean <= 1.15
    assert elapsed < 30.0
    report(9, f"containment {rep.fraction_within:.3f}, grand mean "
              f"{rep.grand_mean:.3f} in {elapsed:.1f}s")


def test_criterion_10_expressivity():
    rng = np.random.default_rng(23)
    # the 2^X ceiling on 500 random tiny nets
    for i in range(500):
        n = int(rng.integers(2, 9))
        layers = int(rng.integers(1, 4))
        while n * layers > 24:
            layers -= 1
        net = V.random_relu_net(2, n, layers, seed=10_000 + i)
        rc = V.count_linear_regions(net, 2.0, 128)
        assert rc.distinct_patterns <= 2 ** rc.relu_units
    # linear networks compute a single region
    for seed in range(10):
        gen = np.random.default_rng(seed)
        net = V.ReluNet(hidden=(), readout=(gen.standard_normal((1, 2)), np.zeros(1)))
        assert V.count_linear_regions(net, 2.0, 256).distinct_patterns == 1
    # mean observed regions non-decreasing in depth
    trend = V.montufar_trend(4, 2, [2, 3, 4], trials=50, grid=256)
    assert trend["non_decreasing"], trend["mean_patterns"]
    report(10, f"2^X ceiling held on 500 nets; linear nets -> 1 region; mean "
               f"patterns over depth {trend['mean_patterns']}")


def test_criterion_11_scaling_search_end_to_end():
    base = A.preset("convnext-t")
    t0 = time.perf_counter()
    cands = SC.enumerate_candidates(base, SC.DEFAULT_GRID, 224)
    elapsed = time.perf_counter() - t0
    assert len(cands) == 800
    assert elapsed < 5.0
    budget_lines = []
    for macs_t, params_t in ((3.3e9, 21e6), (4.5e9, 28e6), (8.5e9, 50e6)):
        budget = SC.Budget(target_macs=int(macs_t), target_params=int(params_t),
                           tolerance=0.025)
        matches = SC.filter_budget(cands, budget)
        if not matches:
            budget_lines.append(f"{macs_t/1e9:g}B/{params_t/1e6:g}M:empty")
            continue
        chosen = SC.select_max_mass(matches)
        brute = max(reversed(matches),
                    key=lambda c: (c.mass, -c.macs, -c.params, -c.w_m))
        assert chosen == brute
        budget_lines.append(
            f"{macs_t/1e9:g}B/{params_t/1e6:g}M:{len(matches)} cands, "
            f"mass {chosen.mass:g}")
    # at least the first two budgets must be realisable on the default grid
    assert "empty" not in budget_lines[0] and "empty" not in budget_lines[1]
    for axis in ("macs", "params"):
        frontier = SC.pareto_frontier(cands, axis)
        pool = [c for c in cands if c.valid]
        oracle = []
        seen = set()
        for c in pool:
            cost = getattr(c, axis)
            dominated = any(
                (getattr(o, axis) <= cost and o.mass >= c.mass)
                and (getattr(o, axis) < cost or o.mass > c.mass)
                for o in pool
            )
            if not dominated and (cost, c.mass) not in seen:
                seen.add((cost, c.mass))
                oracle.append(c)
        oracle.sort(key=lambda c: getattr(c, axis))
        assert [(getattr(c, axis), c.mass) for c in frontier] == \
            [(getattr(c, axis), c.mass) for c in oracle]
    report(11, f"800 candidates in {elapsed:.2f}s; budgets "
               + "; ".join(budget_lines) + "; frontier matches the O(n^2) oracle")
