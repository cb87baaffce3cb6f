"""Command-line front end: validation, cost and mass summaries, scaling scans,
Pareto frontiers, collapse verification, restructuring, the toy non-linearity
search, and the theory harnesses.

Exit codes: 0 success, 1 domain error, 2 usage error. File outputs are written
to a temp file and renamed so partial files never appear.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile

from . import archspec, costmodel, restructure, scaler, search, topology, verify
from .archspec import ArchError, NONE, GELU, exp_kernel
from .costmodel import CostError
from .restructure import RestructureError
from .scaler import ScaleError
from .search import SearchError
from .tensor import TensorError, generator
from .topology import TopologyError
from .verify import VerifyError

DOMAIN_ERRORS = (
    ArchError, CostError, TopologyError, ScaleError,
    RestructureError, SearchError, TensorError, VerifyError,
    OSError,
)


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    directory = os.path.dirname(os.path.abspath(out)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".nnscale-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, out)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load_arch(args) -> archspec.ArchDescriptor:
    if getattr(args, "preset", None):
        return archspec.preset(args.preset)
    if getattr(args, "arch", None):
        with open(args.arch, "r", encoding="utf-8") as fh:
            return archspec.parse_arch(fh.read())
    raise ArchError("provide --preset or --arch")


def _add_arch_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=archspec.PRESET_NAMES, help="built-in architecture")
    p.add_argument("--arch", help="architecture JSON file")


def _add_grid_flags(p: argparse.ArgumentParser) -> None:
    g = scaler.DEFAULT_GRID
    p.add_argument("--wmin", type=float, default=g.w_min)
    p.add_argument("--wmax", type=float, default=g.w_max)
    p.add_argument("--wsteps", type=int, default=g.w_steps)
    p.add_argument("--dmin", type=float, default=g.d_min)
    p.add_argument("--dmax", type=float, default=g.d_max)
    p.add_argument("--dsteps", type=int, default=g.d_steps)


def _grid_from(args) -> scaler.MultiplierGrid:
    return scaler.MultiplierGrid(args.wmin, args.wmax, args.wsteps,
                                 args.dmin, args.dmax, args.dsteps)


def _human(v: float) -> str:
    for unit, div in (("B", 1e9), ("M", 1e6), ("K", 1e3)):
        if v >= div:
            return f"{v / div:.2f}{unit}"
    return str(int(v))


def _cmd_arch_validate(args) -> int:
    arch = _load_arch(args)
    archspec.validate_arch(arch)
    chain = archspec.input_channels_per_block(arch)
    print(f"{arch.name}: family={arch.family} blocks={len(arch.blocks)} "
          f"resolution={arch.input_resolution} channels={chain[0]}->{chain[-1]}")
    return 0


def _cmd_cost(args) -> int:
    arch = _load_arch(args)
    report = costmodel.count_arch(arch, args.resolution)
    summary = (f"{arch.name}@{args.resolution}: params={_human(report.total_params)} "
               f"macs={_human(report.total_macs)}\n")
    if args.out is None:
        sys.stdout.write(summary)
    if args.format == "json":
        _emit(report.to_json(), args.out)
    elif args.out is not None or args.per_block:
        _emit(report.to_csv(), args.out)
    return 0


def _cmd_mass(args) -> int:
    arch = _load_arch(args)
    report = topology.nn_mass(arch)
    line = (f"{arch.name}: m={report.mass:g} X={report.nonlinear_units} "
            f"k={float(report.k):g} k_hat={report.avg_degree:.2f}\n")
    sys.stdout.write(line)
    if args.out is not None or args.format == "json":
        _emit(report.to_json(), args.out)
    return 0


def _scan(args):
    base = _load_arch(args)
    grid = _grid_from(args)
    cands = scaler.enumerate_candidates(base, grid, args.resolution)
    in_budget = []
    selected = None
    if args.budget_macs or args.budget_params:
        budget = scaler.Budget(
            target_macs=int(args.budget_macs) if args.budget_macs else None,
            target_params=int(args.budget_params) if args.budget_params else None,
            tolerance=args.tol,
        )
        in_budget = scaler.filter_budget(cands, budget)
        if in_budget:
            selected = scaler.select_max_mass(in_budget)
    return cands, in_budget, selected


def _cmd_scale(args) -> int:
    cands, in_budget, selected = _scan(args)
    if args.format == "json":
        _emit(scaler.candidates_to_json(cands, in_budget, selected), args.out)
    else:
        _emit(scaler.candidates_to_csv(cands, in_budget, selected), args.out)
    if selected is not None:
        sys.stderr.write(
            f"selected w_m={selected.w_m:g} d_m={selected.d_m:g} "
            f"widths={list(selected.widths)} depths={list(selected.depths)} "
            f"macs={_human(selected.macs)} params={_human(selected.params)} "
            f"mass={selected.mass:g}\n"
        )
    return 0


def _cmd_pareto(args) -> int:
    cands, in_budget, selected = _scan(args)
    frontier = scaler.pareto_frontier(cands, args.cost_axis)
    if args.format == "json":
        _emit(scaler.candidates_to_json(frontier, in_budget, selected), args.out)
    else:
        _emit(scaler.candidates_to_csv(frontier, in_budget, selected), args.out)
    return 0


def _cmd_collapse_verify(args) -> int:
    gen = generator(args.seed)
    reports = []
    for _ in range(args.trials):
        c_in = int(gen.choice([2, 4, 8]))
        e = float(gen.choice([2, 4, 6]))
        k = int(gen.choice([3, 5, 7]))
        stride = int(gen.choice([1, 2]))
        seed = int(gen.integers(0, 2**31))
        reports.append(restructure.collapse_trial(
            seed, c_in, e, k, stride, size=args.size, biased=args.biased))
    ok = all(r["pass"] for r in reports)
    out = {
        "trials": len(reports),
        "all_pass": ok,
        "max_abs_diff_full": max(r["max_abs_diff_full"] for r in reports),
        "max_abs_diff_interior": max(r["max_abs_diff_interior"] for r in reports),
        "reports": reports,
    }
    _emit(json.dumps(out, sort_keys=True, indent=2) + "\n", args.out)
    return 0 if ok else 1


def _cmd_restructure(args) -> int:
    arch = _load_arch(args)
    act = {"none": NONE, "gelu": GELU, "exp": exp_kernel()}[args.activation]
    new = restructure.restructure_arch(arch, args.fraction, act)
    report = costmodel.count_arch(new, args.resolution)
    sys.stdout.write(
        f"{new.name} split(keep={args.fraction:g}, psi={args.activation}): "
        f"params={_human(report.total_params)} macs={_human(report.total_macs)}\n"
    )
    if args.out:
        _emit(archspec.serialize_arch(new), args.out)
    return 0


def _cmd_afrb_search(args) -> int:
    variants = args.variants.split(",")
    dims = [2] + [args.width] * len(variants)
    model = search.make_model(dims, variants, seed=args.seed)
    data = search.make_dataset(args.dataset, args.samples, args.noise, seed=args.seed + 1)
    cfg = search.SearchConfig(lam=args.lam, lr=args.lr, epochs=args.epochs,
                              batch=args.batch, seed=args.seed)
    trace = search.train_search(model, data, cfg)
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["epoch", "loss", "acc", "reg"] +
               [f"alpha_{i}" for i in range(len(model.blocks))])
    for i in range(len(trace)):
        w.writerow([i, repr(trace.loss[i]), repr(trace.accuracy[i]),
                    repr(trace.regularizer[i])] + [repr(a) for a in trace.alphas[i]])
    _emit(buf.getvalue(), args.out)
    decisions = [restructure.afrb_decide(a, cfg.band).action for a in model.alphas]
    summary = {
        "alphas": model.alphas,
        "decisions": decisions,
        "collapsed": sum(d == "collapse" for d in decisions),
        "final_accuracy": trace.accuracy[-1] if len(trace) else None,
        "nonlinear_units_left": search.nonlinearity_count(model, cfg.band),
    }
    sys.stdout.write(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    return 0


def _cmd_ldi(args) -> int:
    cfg = verify.LinearDensenetConfig(
        width=args.width, depth=args.depth, skip_channels=args.skips,
        q=args.q, seed=args.seed)
    report = verify.ldi_report(cfg, args.trials)
    _emit(report.to_json(), args.out)
    return 0


def _cmd_regions(args) -> int:
    layer_counts = [int(v) for v in args.layers.split(",")]
    trend = verify.montufar_trend(
        args.n, args.n0, layer_counts, args.trials,
        grid=args.grid, box_radius=args.radius, seed=args.seed)
    _emit(json.dumps(trend, sort_keys=True, indent=2) + "\n", args.out)
    return 0


def _parse_budgets(specs, tol: float):
    budgets = []
    seen = set()
    for spec in specs:
        parts = spec.split(":")
        if len(parts) != 2:
            raise ScaleError(f"budget {spec!r} must be MACS:PARAMS")
        key = (float(parts[0]), float(parts[1]))
        if key in seen:
            sys.stderr.write(f"warning: duplicate budget {spec} ignored\n")
            continue
        seen.add(key)
        budgets.append(scaler.Budget(
            target_macs=int(key[0]), target_params=int(key[1]), tolerance=tol))
    return budgets


def _cmd_report(args) -> int:
    with open(args.scan, "r", encoding="utf-8") as fh:
        cands = scaler.candidates_from_csv(fh.read())
    budgets = _parse_budgets(args.budget, args.tol)
    lines = [f"scan: {args.scan} candidates={len(cands)} "
             f"valid={sum(c.valid for c in cands)}"]
    for b in budgets:
        matches = scaler.filter_budget(cands, b)
        lines.append(f"budget macs={_human(b.target_macs)} "
                     f"params={_human(b.target_params)} tol={b.tolerance:g}: "
                     f"{len(matches)} candidates")
        if not matches:
            lines.append("  no candidates")
            continue
        sel = scaler.select_max_mass(matches)
        lines.append(
            f"  selected w_m={sel.w_m:g} d_m={sel.d_m:g} "
            f"widths={list(sel.widths)} depths={list(sel.depths)} "
            f"macs={_human(sel.macs)} params={_human(sel.params)} mass={sel.mass:g}"
        )
    sys.stdout.write("\n".join(lines) + "\n")
    if args.frontier_out:
        frontier = scaler.pareto_frontier(cands, "macs")
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["macs", "mass"])
        for c in frontier:
            w.writerow([c.macs, repr(c.mass)])
        _emit(buf.getvalue(), args.frontier_out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nnscale", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("arch-validate", help="validate an architecture file or preset")
    _add_arch_flags(p)
    p.set_defaults(fn=_cmd_arch_validate)

    p = sub.add_parser("cost", help="MAC/parameter report")
    _add_arch_flags(p)
    p.add_argument("--resolution", type=int, default=224)
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("--per-block", action="store_true")
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_cost)

    p = sub.add_parser("mass", help="NN-Mass summary")
    _add_arch_flags(p)
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_mass)

    for name, fn in (("scale", _cmd_scale), ("pareto", _cmd_pareto)):
        p = sub.add_parser(name, help=f"{name} over a multiplier grid")
        _add_arch_flags(p)
        _add_grid_flags(p)
        p.add_argument("--resolution", type=int, default=224)
        p.add_argument("--budget-macs", type=float)
        p.add_argument("--budget-params", type=float)
        p.add_argument("--tol", type=float, default=0.025)
        p.add_argument("--format", choices=["csv", "json"], default="csv")
        p.add_argument("--out")
        if name == "pareto":
            p.add_argument("--cost-axis", choices=["macs", "params"], default="macs")
        p.set_defaults(fn=fn)

    p = sub.add_parser("collapse-verify", help="two-path collapse equivalence trials")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=12)
    p.add_argument("--biased", action="store_true")
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_collapse_verify)

    p = sub.add_parser("restructure", help="split every ConvNext block MLP")
    _add_arch_flags(p)
    p.add_argument("--fraction", type=float, default=0.6,
                   help="fraction of expanded channels kept non-linear")
    p.add_argument("--activation", choices=["none", "gelu", "exp"], default="none")
    p.add_argument("--resolution", type=int, default=224)
    p.add_argument("--out", help="write the restructured architecture file here")
    p.set_defaults(fn=_cmd_restructure)

    p = sub.add_parser("afrb-search", help="toy non-linearity search on 2-D data")
    p.add_argument("--dataset", choices=["blobs", "moons", "xor"], default="blobs")
    p.add_argument("--samples", type=int, default=256)
    p.add_argument("--noise", type=float, default=0.4)
    p.add_argument("--variants", default="a1,a1,a1", help="comma list of a1/a2/a3")
    p.add_argument("--width", type=int, default=8)
    p.add_argument("--lam", type=float, default=1e-3)
    p.add_argument("--lr", type=float, default=0.2)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_afrb_search)

    p = sub.add_parser("ldi", help="layerwise isometry Monte-Carlo report")
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--depth", type=int, default=16)
    p.add_argument("--skips", type=int, default=32)
    p.add_argument("--q", type=float, default=1.0 / 64.0)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_ldi)

    p = sub.add_parser("regions", help="linear-region counting trend report")
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--n0", type=int, default=2)
    p.add_argument("--layers", default="2,3,4", help="comma list of depths")
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--grid", type=int, default=256)
    p.add_argument("--radius", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_regions)

    p = sub.add_parser("report", help="budget sections + frontier data from a scan CSV")
    p.add_argument("--scan", required=True, help="CSV produced by the scale command")
    p.add_argument("--budget", action="append", default=[],
                   help="MACS:PARAMS, repeatable")
    p.add_argument("--tol", type=float, default=0.025)
    p.add_argument("--frontier-out")
    p.set_defaults(fn=_cmd_report)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except DOMAIN_ERRORS as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
