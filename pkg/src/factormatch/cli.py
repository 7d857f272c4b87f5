"""Command line interface.

Every command reads the global options (or a ``--config`` file), runs over
the requested seeds and writes its artifacts below ``--out``.  The exit code
is 0 only when every check performed by the command passed; 1 means a check
failed and 2 a usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import harness
from .config import ConfigError, RunConfig, load_config
from .flow import FlowNetwork, brute_min_cut, decompose_paths, max_flow
from .lattice import Configuration, generate
from .matcher3d import run3d
from .matching import MatchingError, run2d
from .partitions import build_chain, export_chain, pseudocube_report
from .render import render_svg

__all__ = ["main", "build_parser"]

_FLAG_KEYS = {
    "dim": "dim",
    "side": "side",
    "seeds": "seeds",
    "balanced": "balanced",
    "schedule": "schedule",
    "epsilon": "epsilon",
    "k": "k",
    "center_source": "center_source",
    "out": "out",
    "matcher": "matcher",
    "stage_budget": "stage_budget",
    "initial": "initial",
    "lift_rule": "lift_rule",
    "level": "level",
}


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("run options")
    g.add_argument("--config", help="flat key = value file with run options")
    g.add_argument("--dim", type=int)
    g.add_argument("--side", type=int)
    g.add_argument("--seed", dest="seed", type=int, action="append", help="single seed (repeatable)")
    g.add_argument("--seeds", help="seed list, e.g. 0-49 or 1,5,9")
    g.add_argument("--balanced", action="store_const", const=True, help="replace seed s by the s-th balanced seed")
    g.add_argument("--schedule", help="schedule string or a file holding one")
    g.add_argument("--epsilon", type=float)
    g.add_argument("--k", type=int)
    g.add_argument("--center-source", choices=("hash", "bulb"))
    g.add_argument("--matcher", choices=("2d", "3d"))
    g.add_argument("--stage-budget", type=int)
    g.add_argument("--initial", choices=("single", "multiscale"))
    g.add_argument("--lift-rule", choices=("lex", "nearest"))
    g.add_argument("--level", type=int, help="chain level (render)")
    g.add_argument("--out", help="output directory")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    ap = argparse.ArgumentParser(prog="factormatch", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", parents=[common], help="write configurations")
    sub.add_parser("centers", parents=[common], help="write center sets of every schedule level")
    sub.add_parser("partition", parents=[common], help="build and export the partition chain")
    sub.add_parser("match2d", parents=[common], help="greedy multiscale matching")
    sub.add_parser("match3d", parents=[common], help="staged flow matching")
    t = sub.add_parser("tail", parents=[common], help="pooled tail histogram and slope fit")
    t.add_argument("--r-min", type=int, default=4)
    t.add_argument("--r-max", type=int, default=64)
    t.add_argument("--min-events", type=int, default=100)
    t.add_argument("--slope-range", type=float, nargs=2, metavar=("LO", "HI"), help="fail unless the slope lies in [LO, HI]")
    v = sub.add_parser("verify", parents=[common], help="equivariance and lemma suites")
    v.add_argument("--translations", type=int, default=10)
    v.add_argument("--surface-instances", type=int, default=500)
    v.add_argument("--chernoff-samples", type=int, default=10_000)
    f = sub.add_parser("flow-debug", parents=[common], help="dump or solve stage networks")
    f.add_argument("--input", help="DIMACS file to solve instead of running a stage")
    sub.add_parser("render", parents=[common], help="SVG of a partition level and matching (d = 2)")
    return ap


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    data = {}
    for flag, key in _FLAG_KEYS.items():
        val = getattr(args, flag, None)
        if val is not None:
            data[key] = val
    if args.seed:
        data["seeds"] = list(args.seed)
    if "schedule" in data and Path(data["schedule"]).is_file():
        data["schedule"] = Path(data["schedule"]).read_text().strip()
    merged = {**{k: v for k, v in cfg.__dict__.items()}, **data}
    return RunConfig.from_mapping(merged).validate()


def _emit(line: str) -> None:
    print(line, flush=True)


def _seeds_and_configs(rc: RunConfig):
    for s in rc.resolved_seeds():
        yield s, generate(rc.dim, rc.side, s)


def _run_matcher(rc: RunConfig, c: Configuration, **kw):
    if rc.matcher == "2d":
        m, chain, stats = run2d(c, schedule=rc.schedule_obj())
        return m, chain, None
    res = run3d(
        c,
        schedule=rc.schedule_obj(),
        k=rc.k_value(),
        epsilon=rc.epsilon,
        form=rc.form,
        c_sep=rc.c_sep,
        stage_budget=rc.stage_budget,
        initial=rc.initial,
        lift_rule=rc.lift_rule,
        **kw,
    )
    return res.matching, res.chain, res


def cmd_gen(rc: RunConfig, args, out: Path) -> bool:
    for s, c in _seeds_and_configs(rc):
        path = out / f"config-{s}.fmcfg"
        c.save(path)
        _emit(f"seed={s} blue={c.n_blue} surplus={c.surplus} -> {path}")
    return True


def cmd_centers(rc: RunConfig, args, out: Path) -> bool:
    ok = True
    for s, c in _seeds_and_configs(rc):
        chain = build_chain(c, rc.schedule_obj())
        for i, (cs, lv) in enumerate(zip(chain.centers, chain.schedule.levels)):
            (out / f"centers-{s}-{i}.json").write_text(cs.to_json() + "\n")
            sep_ok = True
            if len(cs) > 1 and lv.source in ("hash", "bulb"):
                pts = cs.sites
                dist = c.torus.distance(np.repeat(pts, pts.size), np.tile(pts, pts.size)).reshape(pts.size, pts.size)
                np.fill_diagonal(dist, c.torus.L)
                sep_ok = int(dist.min()) >= 2 * lv.a
            ok &= sep_ok
            _emit(f"seed={s} level={i} source={cs.source} centers={len(cs)} separated={sep_ok}")
    return ok


def cmd_partition(rc: RunConfig, args, out: Path) -> bool:
    ok = True
    for s, c in _seeds_and_configs(rc):
        chain = build_chain(c, rc.schedule_obj())
        export_chain(chain, out / f"partition-{s}", seed=s)
        nested = all(a.refines(b) for a, b in zip(chain.levels, chain.levels[1:]))
        bad = 0
        for p, size, g in zip(chain.levels, chain.sizes, chain.good):
            cells = np.unique(p.ids[g])
            bad += int((~pseudocube_report(p, size).ok[cells]).sum())
        good_frac = [round(float(g.mean()), 4) for g in chain.good]
        ok &= nested and bad == 0
        _emit(f"seed={s} levels={len(chain.levels)} sizes={chain.sizes} nested={nested} good_fraction={good_frac} good_cells_failing_pseudocube={bad}")
    return ok


def _match_cmd(rc: RunConfig, out: Path, tag: str) -> bool:
    ok = True
    hists = []
    for s, c in _seeds_and_configs(rc):
        m, chain, res = _run_matcher(rc, c)
        try:
            m.validate(c)
            valid = True
        except MatchingError as exc:
            valid = False
            _emit(f"seed={s} invalid matching: {exc}")
        (out / f"matching{tag}-{s}.fmm").write_bytes(m.to_bytes())
        free = int((m.partner < 0).sum())
        line = f"seed={s} pairs={m.n_pairs} unmatched={free} surplus={c.surplus} valid={valid}"
        good = valid
        if res is None:
            good &= free == c.surplus
        else:
            (out / f"events-{s}.jsonl").write_text(res.event_log())
            statuses = {}
            for e in res.events:
                statuses[e.status] = statuses.get(e.status, 0) + 1
            failures = statuses.get("lift_failure", 0) + statuses.get("verify_failure", 0)
            good &= res.stabilization_violations == 0 and failures == 0
            line += f" residue={res.shortfall_residue()} stabilization_violations={res.stabilization_violations} events={json.dumps(statuses, sort_keys=True)}"
        ok &= good
        _emit(line)
        hists.append(harness.estimate_tail(m, [s]))
    if hists:
        h = hists[0]
        for x in hists[1:]:
            h = h.merge(x)
        (out / f"tail{tag}.csv").write_text(h.to_csv())
        (out / f"tail{tag}.json").write_text(h.to_json() + "\n")
    return ok


def cmd_match2d(rc: RunConfig, args, out: Path) -> bool:
    rc.matcher = "2d"
    return _match_cmd(rc, out, "2d")


def cmd_match3d(rc: RunConfig, args, out: Path) -> bool:
    rc.matcher = "3d"
    rc.validate()
    return _match_cmd(rc, out, "3d")


def cmd_tail(rc: RunConfig, args, out: Path) -> bool:
    h = None
    for s, c in _seeds_and_configs(rc):
        m = _run_matcher(rc, c)[0]
        part = harness.estimate_tail(m, [s])
        h = part if h is None else h.merge(part)
    if h is None:
        _emit("no seeds")
        return False
    fit = h.slope(args.r_min, args.r_max, args.min_events)
    (out / "tail.csv").write_text(h.to_csv())
    (out / "tail.json").write_text(h.to_json() + "\n")
    (out / "slope.json").write_text(json.dumps(fit, sort_keys=True) + "\n")
    ok = True
    if args.slope_range:
        lo, hi = args.slope_range
        ok = bool(lo <= fit["slope"] <= hi)
    _emit(f"replicas={h.replicas} matched={h.total} unmatched={h.unmatched} slope={fit['slope']:.4f} radii={fit['n_radii']} ok={ok}")
    return ok


def cmd_verify(rc: RunConfig, args, out: Path) -> bool:
    seeds = rc.resolved_seeds()
    if not seeds:
        _emit("no seeds")
        return True
    configs = [generate(rc.dim, rc.side, s) for s in seeds]
    sched = rc.schedule_obj()
    k = rc.k_value()
    eq = harness.equivariance_suite(configs[0], args.translations, schedule=sched, k=k if k in build_chain(configs[0], sched).sizes else None, epsilon=rc.epsilon, rng_seed=seeds[0])
    _emit(f"{'PASS' if eq.passed else 'FAIL'} equivariance: translations={eq.n_translations} objects={eq.n_objects} failures={len(eq.failures)}")
    for fail in eq.failures[:5]:
        _emit(f"  first divergent object {fail['object']} at shift {fail['shift']}")
    lem = harness.lemma_suite(configs, schedule=sched, k=rc.k, epsilon=rc.epsilon, surface_instances=args.surface_instances, chernoff_samples=args.chernoff_samples, seed=seeds[0])
    for line in lem.lines():
        _emit(line)
    doc = {"equivariance": json.loads(eq.to_json()), "lemmas": json.loads(lem.to_json())}
    (out / "verify.json").write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
    return eq.passed and lem.passed


def _solve_and_check(net: FlowNetwork, label: str, sigma: int | None = None) -> bool:
    res = max_flow(net)
    paths = decompose_paths(net, res.flow, res.value)
    recount = np.zeros(net.n_arcs, dtype=np.int64)
    for p in paths:
        recount[p.arcs] += p.amount
    ok = bool(np.all(recount <= res.flow)) and sum(p.amount for p in paths) == res.value
    line = f"{label}: nodes={net.n_nodes} arcs={net.n_arcs} value={res.value}"
    if sigma is not None:
        line += f" sigma={sigma}"
    if net.n_nodes - 2 <= 20:
        cut, _ = brute_min_cut(net)
        ok &= cut == res.value
        line += f" brute_min_cut={cut}"
    _emit(line + f" ok={ok}")
    return ok


def cmd_flow_debug(rc: RunConfig, args, out: Path) -> bool:
    if args.input:
        net = FlowNetwork.from_dimacs(Path(args.input).read_text())
        return _solve_and_check(net, Path(args.input).name)
    ok = True
    for s, c in _seeds_and_configs(rc):
        cells = []

        def hook(stage, anchor, cc):
            cells.append((stage, anchor, cc))

        _run_matcher(RunConfig.from_mapping({**rc.__dict__, "matcher": "3d"}), c, on_network=hook)
        for stage, anchor, cc in cells:
            name = f"flow-{s}-s{stage}-" + "_".join(str(x) for x in anchor)
            text = cc.network.to_dimacs(f"seed {s} stage {stage} cell {list(anchor)} sigma {cc.sigma}")
            (out / f"{name}.dimacs").write_text(text)
            ok &= _solve_and_check(cc.network, name, cc.sigma)
        if not cells:
            _emit(f"seed={s}: no stage networks were built")
    return ok


def cmd_render(rc: RunConfig, args, out: Path) -> bool:
    if rc.dim != 2:
        _emit("render supports d = 2 only")
        return False
    for s, c in _seeds_and_configs(rc):
        m, chain, _ = _run_matcher(rc, c)
        lvl = rc.level if rc.level is not None else 0
        if not 0 <= lvl < len(chain.levels):
            _emit(f"level {lvl} out of range 0..{len(chain.levels) - 1}")
            return False
        svg = render_svg(chain.levels[lvl], m, c, title=f"seed {s} level {lvl} ({chain.levels[lvl].name})")
        path = out / f"render-{s}-{lvl}.svg"
        path.write_text(svg)
        _emit(f"seed={s} level={lvl} -> {path}")
    return True


COMMANDS = {
    "gen": cmd_gen,
    "centers": cmd_centers,
    "partition": cmd_partition,
    "match2d": cmd_match2d,
    "match3d": cmd_match3d,
    "tail": cmd_tail,
    "verify": cmd_verify,
    "flow-debug": cmd_flow_debug,
    "render": cmd_render,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        rc = resolve_config(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = Path(rc.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        ok = COMMANDS[args.command](rc, args, out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
