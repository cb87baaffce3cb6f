"""Training-free scaling search: enumerate a width/depth multiplier grid, evaluate
cost and NN-Mass for every candidate, filter by MAC/parameter budgets, pick the
highest-mass survivor, and compute cost-mass Pareto frontiers.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence

from .archspec import ArchDescriptor, ArchError, scale_arch
from .costmodel import count_arch
from .topology import nn_mass, nonlinear_units


class ScaleError(ValueError):
    pass


@dataclass(frozen=True)
class MultiplierGrid:
    w_min: float
    w_max: float
    w_steps: int
    d_min: float
    d_max: float
    d_steps: int

    def __post_init__(self):
        if not 0 < self.w_min <= self.w_max:
            raise ScaleError("need 0 < w_min <= w_max")
        if not 0 < self.d_min <= self.d_max:
            raise ScaleError("need 0 < d_min <= d_max")
        if self.w_steps < 1 or self.d_steps < 1:
            raise ScaleError("steps must be >= 1")

    def width_values(self) -> List[float]:
        return _linspace(self.w_min, self.w_max, self.w_steps)

    def depth_values(self) -> List[float]:
        return _linspace(self.d_min, self.d_max, self.d_steps)

    @property
    def total(self) -> int:
        return self.w_steps * self.d_steps


def _linspace(lo: float, hi: float, n: int) -> List[float]:
    if n == 1:
        return [lo]
    step = (hi - lo) / (n - 1)
    return [lo + i * step for i in range(n)]


# 40 width x 20 depth samples over the published multiplier ranges = 800 models.
DEFAULT_GRID = MultiplierGrid(0.25, 1.6, 40, 0.6, 2.56, 20)


@dataclass(frozen=True)
class Budget:
    target_macs: Optional[int] = None
    target_params: Optional[int] = None
    tolerance: float = 0.025

    def __post_init__(self):
        if self.target_macs is None and self.target_params is None:
            raise ScaleError("budget needs at least one target")
        if not 0 <= self.tolerance <= 0.25:
            raise ScaleError("tolerance must lie in [0, 0.25]")

    def admits(self, macs: int, params: int) -> bool:
        if self.target_macs is not None:
            if abs(macs - self.target_macs) > self.tolerance * self.target_macs:
                return False
        if self.target_params is not None:
            if abs(params - self.target_params) > self.tolerance * self.target_params:
                return False
        return True


@dataclass(frozen=True)
class ScaleCandidate:
    w_m: float
    d_m: float
    widths: tuple
    depths: tuple
    macs: int
    params: int
    mass: float
    nonlinear_units: int
    valid: bool = True


def evaluate_candidate(base: ArchDescriptor, w_m: float, d_m: float, resolution: int) -> ScaleCandidate:
    """Scale, count, and measure one (w_m, d_m) sample; degenerate widths yield an
    invalid candidate rather than an exception."""
    try:
        arch = scale_arch(base, w_m, d_m)
    except ArchError:
        return ScaleCandidate(w_m, d_m, (), (), 0, 0, 0.0, 0, valid=False)
    report = count_arch(arch, resolution)
    mass = nn_mass(arch)
    return ScaleCandidate(
        w_m=w_m,
        d_m=d_m,
        widths=arch.stages.widths,
        depths=arch.stages.depths,
        macs=report.total_macs,
        params=report.total_params,
        mass=mass.mass,
        nonlinear_units=mass.nonlinear_units,
    )


def enumerate_candidates(
    base: ArchDescriptor,
    grid: MultiplierGrid = DEFAULT_GRID,
    resolution: int = 224,
) -> List[ScaleCandidate]:
    """All grid samples in (w_m, d_m) ascending order; deterministic."""
    if base.stages is None:
        raise ScaleError(f"base {base.name!r} is not stage-structured")
    out = []
    for w_m in grid.width_values():
        for d_m in grid.depth_values():
            out.append(evaluate_candidate(base, w_m, d_m, resolution))
    return out


def filter_budget(cands: Sequence[ScaleCandidate], budget: Budget) -> List[ScaleCandidate]:
    """Valid candidates within the budget's relative tolerance, order preserved."""
    return [c for c in cands if c.valid and budget.admits(c.macs, c.params)]


def select_max_mass(cands: Sequence[ScaleCandidate]) -> ScaleCandidate:
    """Argmax-mass candidate; ties broken by lower macs, lower params, lower w_m."""
    if not cands:
        raise ScaleError("cannot select from an empty candidate list")
    return min(cands, key=lambda c: (-c.mass, c.macs, c.params, c.w_m))


def pareto_frontier(cands: Sequence[ScaleCandidate], cost_axis: str = "macs") -> List[ScaleCandidate]:
    """Candidates not dominated in (cost down, mass up), sorted by cost ascending with
    strictly increasing mass; exact duplicates keep their first occurrence."""
    if cost_axis not in ("macs", "params"):
        raise ScaleError(f"cost_axis must be 'macs' or 'params', got {cost_axis!r}")
    pool = [c for c in cands if c.valid]
    pool.sort(key=lambda c: (getattr(c, cost_axis), -c.mass))
    frontier = []
    best_mass = None
    for c in pool:
        if best_mass is None or c.mass > best_mass:
            frontier.append(c)
            best_mass = c.mass
    return frontier


CSV_COLUMNS = [
    "w_m", "d_m", "widths", "depths", "params", "macs",
    "mass", "nonlinear_units", "valid", "in_budget", "selected",
]


def _fmt_ints(values) -> str:
    return "|".join(str(v) for v in values)


def candidates_to_csv(
    cands: Sequence[ScaleCandidate],
    in_budget: Optional[Sequence[ScaleCandidate]] = None,
    selected: Optional[ScaleCandidate] = None,
) -> str:
    budget_set = set(id(c) for c in (in_budget or []))
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(CSV_COLUMNS)
    for c in cands:
        w.writerow([
            repr(c.w_m), repr(c.d_m), _fmt_ints(c.widths), _fmt_ints(c.depths),
            c.params, c.macs, repr(c.mass), c.nonlinear_units,
            int(c.valid), int(id(c) in budget_set), int(c is selected),
        ])
    return buf.getvalue()


def candidates_from_csv(text: str) -> List[ScaleCandidate]:
    """Parse a scan CSV back into candidates (in_budget/selected flags dropped)."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != CSV_COLUMNS:
        raise ScaleError(f"unexpected CSV header {header!r}")
    out = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(CSV_COLUMNS):
            raise ScaleError(f"line {lineno}: expected {len(CSV_COLUMNS)} columns")
        try:
            out.append(ScaleCandidate(
                w_m=float(row[0]),
                d_m=float(row[1]),
                widths=tuple(int(v) for v in row[2].split("|") if v),
                depths=tuple(int(v) for v in row[3].split("|") if v),
                params=int(row[4]),
                macs=int(row[5]),
                mass=float(row[6]),
                nonlinear_units=int(row[7]),
                valid=bool(int(row[8])),
            ))
        except ValueError as exc:
            raise ScaleError(f"line {lineno}: {exc}") from exc
    return out


def candidates_to_json(
    cands: Sequence[ScaleCandidate],
    in_budget: Optional[Sequence[ScaleCandidate]] = None,
    selected: Optional[ScaleCandidate] = None,
) -> str:
    budget_set = set(id(c) for c in (in_budget or []))
    rows = []
    for c in cands:
        row = asdict(c)
        row["widths"] = list(c.widths)
        row["depths"] = list(c.depths)
        row["in_budget"] = id(c) in budget_set
        row["selected"] = c is selected
        rows.append(row)
    return json.dumps(rows, sort_keys=True, indent=2) + "\n"
