import numpy as np
import pytest

import nnscale.archspec as A
import nnscale.scaler as S


@pytest.fixture(scope="module")
def grid_800():
    return S.enumerate_candidates(A.preset("convnext-t"), S.DEFAULT_GRID, 224)


def brute_force_frontier(cands, axis):
    """O(n^2) domination oracle."""
    pool = [c for c in cands if c.valid]
    out = []
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
            out.append(c)
    out.sort(key=lambda c: getattr(c, axis))
    return out


def test_default_grid_has_800_samples(grid_800):
    assert S.DEFAULT_GRID.total == 800
    assert len(grid_800) == 800
    assert all(c.valid for c in grid_800)


def test_candidates_ordered_by_multipliers(grid_800):
    keys = [(c.w_m, c.d_m) for c in grid_800]
    assert keys == sorted(keys)


def test_single_point_grid_equals_base():
    import nnscale.costmodel as C
    import nnscale.topology as T
    base = A.preset("convnext-t")
    grid = S.MultiplierGrid(1.0, 1.0, 1, 1.0, 1.0, 1)
    (cand,) = S.enumerate_candidates(base, grid, 224)
    report = C.count_arch(base, 224)
    assert cand.macs == report.total_macs
    assert cand.params == report.total_params
    assert cand.mass == T.nn_mass(base).mass


def test_published_multiplier_costs():
    base = A.preset("convnext-t")
    cand = S.evaluate_candidate(base, 0.666, 1.65, 224)
    assert cand.widths == (64, 128, 256, 511)
    assert abs(cand.macs - 3.3e9) / 3.3e9 <= 0.02
    assert abs(cand.params - 20.76e6) / 20.76e6 <= 0.01


def test_degenerate_widths_marked_invalid():
    base = A.preset("convnext-t")
    grid = S.MultiplierGrid(0.01, 1.0, 3, 1.0, 1.0, 1)
    cands = S.enumerate_candidates(base, grid, 224)
    assert len(cands) == 3
    assert not cands[0].valid
    assert cands[-1].valid


def test_budget_validation():
    with pytest.raises(S.ScaleError):
        S.Budget()
    with pytest.raises(S.ScaleError):
        S.Budget(target_macs=10**9, tolerance=0.5)
    S.Budget(target_macs=10**9, tolerance=0.0)  # exact matching allowed


def test_filter_budget_h2_nonempty(grid_800):
    budget = S.Budget(target_macs=int(4.5e9), target_params=int(28e6), tolerance=0.025)
    matches = S.filter_budget(grid_800, budget)
    assert matches
    for c in matches:
        assert abs(c.macs - 4.5e9) / 4.5e9 <= 0.025
        assert abs(c.params - 28e6) / 28e6 <= 0.025


def test_filter_budget_zero_tolerance(grid_800):
    target = grid_800[123].macs
    matches = S.filter_budget(grid_800, S.Budget(target_macs=target, tolerance=0.0))
    assert all(c.macs == target for c in matches)
    assert grid_800[123] in matches


def test_filter_budget_impossible(grid_800):
    assert S.filter_budget(grid_800, S.Budget(target_macs=1)) == []


def test_select_max_mass_is_brute_force_argmax(grid_800):
    budget = S.Budget(target_macs=int(4.5e9), target_params=int(28e6), tolerance=0.025)
    matches = S.filter_budget(grid_800, budget)
    chosen = S.select_max_mass(matches)
    assert all(chosen.mass >= c.mass for c in matches)


def test_select_single_candidate(grid_800):
    assert S.select_max_mass([grid_800[5]]) is grid_800[5]


def test_select_tie_breaks_on_macs():
    a = S.ScaleCandidate(1.0, 1.0, (8,), (1,), macs=200, params=10, mass=5.0,
                         nonlinear_units=1)
    b = S.ScaleCandidate(1.1, 1.0, (8,), (1,), macs=100, params=10, mass=5.0,
                         nonlinear_units=1)
    assert S.select_max_mass([a, b]) is b


def test_select_invariant_under_permutation(grid_800):
    budget = S.Budget(target_macs=int(3.3e9), target_params=int(21e6), tolerance=0.025)
    matches = S.filter_budget(grid_800, budget)
    rng = np.random.default_rng(0)
    for _ in range(5):
        shuffled = list(matches)
        rng.shuffle(shuffled)
        assert S.select_max_mass(shuffled) == S.select_max_mass(matches)


def test_select_empty_errors():
    with pytest.raises(S.ScaleError):
        S.select_max_mass([])


def test_frontier_simple_domination():
    a = S.ScaleCandidate(1.0, 1.0, (8,), (1,), macs=1, params=1, mass=5.0,
                         nonlinear_units=1)
    b = S.ScaleCandidate(1.1, 1.0, (8,), (1,), macs=2, params=2, mass=4.0,
                         nonlinear_units=1)
    assert S.pareto_frontier([a, b]) == [a]


def test_frontier_equal_masses_single_cheapest():
    cands = [
        S.ScaleCandidate(1.0, 1.0, (8,), (1,), macs=m, params=m, mass=7.0,
                         nonlinear_units=1)
        for m in (30, 10, 20)
    ]
    frontier = S.pareto_frontier(cands)
    assert len(frontier) == 1
    assert frontier[0].macs == 10


@pytest.mark.parametrize("axis", ["macs", "params"])
def test_frontier_matches_quadratic_oracle(grid_800, axis):
    frontier = S.pareto_frontier(grid_800, axis)
    oracle = brute_force_frontier(grid_800, axis)
    assert [(getattr(c, axis), c.mass) for c in frontier] == \
        [(getattr(c, axis), c.mass) for c in oracle]
    costs = [getattr(c, axis) for c in frontier]
    masses = [c.mass for c in frontier]
    assert costs == sorted(costs)
    assert all(b > a for a, b in zip(masses, masses[1:]))


def test_mass_monotone_in_width_at_fixed_depth(grid_800):
    by_depth = {}
    for c in grid_800:
        by_depth.setdefault(c.d_m, []).append(c)
    for cands in by_depth.values():
        masses = [c.mass for c in sorted(cands, key=lambda c: c.w_m)]
        assert all(b >= a for a, b in zip(masses, masses[1:]))


def test_csv_roundtrip(grid_800):
    text = S.candidates_to_csv(grid_800[:10])
    back = S.candidates_from_csv(text)
    assert back == grid_800[:10]


def test_csv_reports_budget_and_selection(grid_800):
    budget = S.Budget(target_macs=int(4.5e9), target_params=int(28e6), tolerance=0.025)
    matches = S.filter_budget(grid_800, budget)
    chosen = S.select_max_mass(matches)
    text = S.candidates_to_csv(grid_800, matches, chosen)
    lines = text.splitlines()
    assert lines[0] == ",".join(S.CSV_COLUMNS)
    selected_rows = [l for l in lines[1:] if l.endswith(",1")]
    assert len(selected_rows) == 1
    assert sum(l.split(",")[-2] == "1" for l in lines[1:]) == len(matches)


def test_csv_rejects_malformed_row():
    text = ",".join(S.CSV_COLUMNS) + "\n1.0,1.0,8,1,abc,2,3.0,4,1,0,0\n"
    with pytest.raises(S.ScaleError, match="line 2"):
        S.candidates_from_csv(text)


def test_enumeration_runtime(grid_800):
    import time
    base = A.preset("convnext-t")
    t0 = time.time()
    S.enumerate_candidates(base, S.DEFAULT_GRID, 224)
    assert time.time() - t0 < 5.0
