"""Command-line experiments on the simulated GPU implementation space.

Every command takes a config (a JSON file or the name of a shipped
config) and writes its artifacts under the config's output directory.
Exit codes: 0 success, 1 replay mismatch, 2 config error, 3 no
implementation found.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

from . import __version__
from . import config as C
from .bound import bound
from .estimate import CandidateTree, TreeTooLarge, chen_estimate, exact_count, knuth_estimate, tighter
from .experiments import enumerate_costs, order_compare
from .gpu import build_space
from .kernels import KernelError, build_kernel
from .loopnest import emit_source, reconstruct
from .search import (DEADEND, DecisionOrder, Search, SearchConfig, children, deadend_rate,
                     decision_label, explore, replay_path)
from .simulate import evaluate_candidate
from .space import DefinitionError

log = logging.getLogger("implspace")

EXIT_OK, EXIT_MISMATCH, EXIT_CONFIG, EXIT_NONE = 0, 1, 2, 3


class CommandError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _dump(obj, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _header(command: str, cfg: C.ExperimentConfig) -> dict:
    # the output directory is left out so that logs compare equal wherever they are written
    d = cfg.to_dict()
    d.pop("out")
    return {"command": command, "config": d, "version": __version__}


def _space(cfg: C.ExperimentConfig):
    try:
        kernel = build_kernel(cfg.kernel)
        _, root = build_space(kernel, cfg.machine)
    except KernelError as e:
        raise CommandError(EXIT_CONFIG, str(e)) from None
    except DefinitionError as e:
        raise CommandError(EXIT_NONE, str(e)) from None
    return root


def _order(cfg: C.ExperimentConfig, root) -> DecisionOrder:
    order = DecisionOrder(cfg.order)
    try:
        order.next(root)
    except ValueError as e:
        raise CommandError(EXIT_CONFIG, str(e)) from None
    return order


def _read_jsonl(path: Path):
    header, events = None, []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            rec = json.loads(line)
            if "header" in rec:
                header = rec["header"]
            else:
                events.append(rec)
    return header, events


def _resumable(d: dict) -> dict:
    """A config without the knobs a resumed search may change."""
    d = json.loads(json.dumps(d))
    for k in ("budget", "max_iterations"):
        d["explore"].pop(k, None)
    return d


def _candidate_file(cfg, root, path):
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        c = replay_path(root, data["path"])
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise CommandError(EXIT_CONFIG, f"cannot read candidate {path}: {e}") from None
    if c is None:
        raise CommandError(EXIT_CONFIG, f"candidate {path} is a dead end in this space")
    return c, data


# -- commands ------------------------------------------------------------------

def cmd_explore(cfg: C.ExperimentConfig, args) -> int:
    root = _space(cfg)
    order = _order(cfg, root)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    opts = cfg.explore
    scfg = SearchConfig(budget=opts.budget, seed=cfg.seed, bucket=opts.bucket, delta=opts.delta,
                        prune=opts.prune, max_iterations=opts.max_iterations)
    log_path = out / "explore.jsonl"
    header = _header("explore", cfg)
    search = Search(root, cfg.machine, order, scfg)
    if args.resume:
        old_header, old_events = _read_jsonl(log_path)
        if old_header is None or _resumable(old_header["config"]) != _resumable(header["config"]):
            raise CommandError(EXIT_CONFIG, f"{log_path} was written with a different config")
        try:
            search.fast_forward(old_events)
        except ValueError as e:
            raise CommandError(EXIT_MISMATCH, str(e)) from None
        log.info("resumed after %d iterations", len(old_events))
        f = open(log_path, "a", encoding="utf-8")
    else:
        f = open(log_path, "w", encoding="utf-8")
        f.write(json.dumps({"header": header}, sort_keys=True) + "\n")
    with f:
        search.on_event = lambda ev: f.write(json.dumps(ev, sort_keys=True) + "\n")
        result = search.run()
    with open(out / "explore_costs.csv", "w", newline="", encoding="utf-8") as fc:
        w = csv.writer(fc)
        w.writerow(["iteration", "evaluations", "cost", "best"])
        for ev in result.events:
            if ev["cost"] != DEADEND:
                w.writerow([ev["iteration"], ev["evaluations"], ev["cost"], ev["best"]])
    summary = {"evaluations": result.evaluations, "iterations": result.iterations,
               "exhausted": result.exhausted, "best_cost": result.best_cost}
    if not result.found:
        _dump(dict(summary, status="no implementation found"), out / "best.json")
        print(f"explore {cfg.name}: no implementation found after {result.iterations} iterations")
        return EXIT_NONE
    best_ev = next(ev for ev in result.events if ev["cost"] == result.best_cost)
    nest = reconstruct(result.best)
    report = evaluate_candidate(result.best, cfg.machine)
    _dump(dict(summary, path=best_ev["path"], digest=result.best.digest(), report=report.to_dict()),
          out / "best.json")
    (out / "best_kernel.txt").write_text(emit_source(nest), encoding="utf-8")
    print(f"explore {cfg.name}: best cost {result.best_cost:g} after {result.evaluations} evaluations "
          f"({result.iterations} iterations)")
    return EXIT_OK


def cmd_estimate(cfg: C.ExperimentConfig, args) -> int:
    root = _space(cfg)
    tree = CandidateTree(root, _order(cfg, root))
    opts = cfg.estimate
    k = knuth_estimate(tree, opts.knuth_iterations, cfg.seed, ci_scale=opts.ci_scale)
    c = chen_estimate(tree, opts.chen_iterations, seed=cfg.seed, ci_scale=opts.ci_scale)
    best = tighter(k, c)
    report = {"header": _header("estimate", cfg), "knuth": k.to_dict(), "chen": c.to_dict(),
              "tighter": best.method}
    if args.exact:
        try:
            e = exact_count(tree, cfg.enumerate.budget)
            report["exact"] = {"leaves": e.leaves, "nodes": e.nodes, "per_depth": list(e.per_depth)}
        except TreeTooLarge as err:
            report["exact"] = {"refused": str(err)}
    _dump(report, cfg.out_dir / "estimate.json")
    for e in (k, c):
        flag = " *" if e is best else ""
        print(f"{e.method}: {e.value:.4g} [{e.ci[0]:.4g}, {e.ci[1]:.4g}] ({e.iterations} iterations){flag}")
    if "exact" in report and "leaves" in report["exact"]:
        print(f"exact: {report['exact']['leaves']}")
    return EXIT_OK


def cmd_deadend(cfg: C.ExperimentConfig, args) -> int:
    root = _space(cfg)
    r = deadend_rate(root, cfg.deadend.trials, cfg.seed, _order(cfg, root))
    _dump({"header": _header("deadend", cfg), "ratio": r.ratio, "ci": list(r.ci), "dead": r.dead,
           "trials": r.trials}, cfg.out_dir / "deadend.json")
    print(f"dead ends: {r.dead}/{r.trials} = {r.ratio:.4f} [{r.ci[0]:.4f}, {r.ci[1]:.4f}]")
    return EXIT_OK


def cmd_order_compare(cfg: C.ExperimentConfig, args) -> int:
    root = _space(cfg)
    order = _order(cfg, root)
    opts = cfg.order_compare
    threshold = opts.threshold
    if threshold is None:
        r = explore(root, cfg.machine, opts.threshold_budget, order, cfg.seed,
                    max_iterations=10 * opts.threshold_budget)
        if not r.found:
            print("order-compare: no implementation found to set the threshold")
            return EXIT_NONE
        threshold = r.best_cost
    try:
        cmp = order_compare(root, cfg.machine, threshold, opts.min_nodes, order, opts.max_nodes)
    except RuntimeError as e:
        raise CommandError(EXIT_CONFIG, str(e)) from None
    _dump({"header": _header("order-compare", cfg), **cmp.to_dict()}, cfg.out_dir / "order_compare.json")
    with open(cfg.out_dir / "order_compare.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["order", "depth", "nodes", "pruned", "fraction"])
        for name in ("default", "reversed"):
            s = getattr(cmp, name)
            w.writerow([name, s.depth, s.nodes, s.pruned, s.fraction])
    print(f"threshold {threshold:g}: default prunes {cmp.default.fraction:.4f} at depth {cmp.default.depth}, "
          f"reversed {cmp.reversed.fraction:.4f} at depth {cmp.reversed.depth}")
    return EXIT_OK


def cmd_enumerate(cfg: C.ExperimentConfig, args) -> int:
    root = _space(cfg)
    order = _order(cfg, root)
    opts = cfg.enumerate
    try:
        e = exact_count(CandidateTree(root, order), opts.budget)
        report = {"header": _header("enumerate", cfg), "leaves": e.leaves, "nodes": e.nodes,
                  "per_depth": list(e.per_depth)}
        if opts.optimum or args.optimum:
            report["optimum"] = enumerate_costs(root, cfg.machine, order, opts.budget).to_dict()
    except TreeTooLarge as err:
        raise CommandError(EXIT_CONFIG, f"refusing to enumerate: {err}") from None
    _dump(report, cfg.out_dir / "enumerate.json")
    print(f"{e.leaves} implementations, {e.nodes} nodes")
    if "optimum" in report:
        print(f"optimum cost {report['optimum']['best_cost']:g}")
    return EXIT_OK


def cmd_codegen(cfg: C.ExperimentConfig, args) -> int:
    root = _space(cfg)
    path = args.candidate or cfg.out_dir / "best.json"
    c, _ = _candidate_file(cfg, root, path)
    if not c.is_fully_specified:
        raise CommandError(EXIT_CONFIG, f"candidate {path} is not fully specified")
    src = emit_source(reconstruct(c))
    if args.output:
        Path(args.output).write_text(src, encoding="utf-8")
    else:
        sys.stdout.write(src)
    return EXIT_OK


def cmd_bound(cfg: C.ExperimentConfig, args) -> int:
    root = _space(cfg)
    order = _order(cfg, root)
    c = root
    if args.candidate:
        c, _ = _candidate_file(cfg, root, args.candidate)
    b = bound(c, cfg.machine)
    idx, kids = children(c, order)
    rows = []
    for mask, k in kids:
        label = decision_label(c, idx, mask)
        rows.append({"decision": label, "bound": None if k is None else bound(k, cfg.machine).value})
    report = {"header": _header("bound", cfg), "bound": b.value, "compute": b.compute,
              "memory": b.memory, "binding": b.binding, "children": rows}
    _dump(report, cfg.out_dir / "bound.json")
    print(f"bound {b.value:g} (compute {b.compute:g}, memory {b.memory:g})")
    for r in rows:
        choice, a, value = r["decision"]
        shown = "dead end" if r["bound"] is None else f"{r['bound']:g}"
        print(f"  {choice}({', '.join(a)}) = {value}: {shown}")
    return EXIT_OK


def cmd_replay(args) -> int:
    header, events = _read_jsonl(Path(args.log))
    if header is None:
        raise CommandError(EXIT_CONFIG, f"{args.log} has no header")
    try:
        cfg = C.from_dict(header["config"])
    except C.ConfigError as e:
        raise CommandError(EXIT_CONFIG, f"bad config in log header: {e}") from None
    root = _space(cfg)
    bad, checked, best = 0, 0, math.inf
    for ev in events:
        if ev["cost"] == DEADEND:
            continue
        checked += 1
        c = replay_path(root, ev["path"])
        if c is None or not c.is_fully_specified:
            log.error("iteration %s: path does not lead to an implementation", ev["iteration"])
            bad += 1
            continue
        cost = evaluate_candidate(c, cfg.machine).total
        best = min(best, cost)
        if cost != ev["cost"] or ev["best"] != best:
            log.error("iteration %s: logged cost %s best %s, recomputed %s best %s",
                      ev["iteration"], ev["cost"], ev["best"], cost, best)
            bad += 1
    print(f"replayed {checked} evaluations, {bad} mismatches")
    return EXIT_MISMATCH if bad else EXIT_OK


COMMANDS = {
    "explore": cmd_explore,
    "estimate": cmd_estimate,
    "deadend": cmd_deadend,
    "order-compare": cmd_order_compare,
    "enumerate": cmd_enumerate,
    "codegen": cmd_codegen,
    "bound": cmd_bound,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="implspace", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("-v", "--verbose", action="store_true")
        s.add_argument("config", help="config file or shipped config name")
        s.add_argument("--seed", type=int)
        s.add_argument("--budget", type=int, help="evaluation budget of explore")
        s.add_argument("--order", help="comma-separated decision order")
        s.add_argument("--out", help="output directory")
        if name == "explore":
            s.add_argument("--resume", action="store_true", help="continue the existing log")
        if name == "estimate":
            s.add_argument("--exact", action="store_true", help="also count the tree exactly")
        if name == "enumerate":
            s.add_argument("--optimum", action="store_true", help="also evaluate every implementation")
        if name in ("codegen", "bound"):
            s.add_argument("--candidate", help="JSON file with a decision path (default: best.json)")
        if name == "codegen":
            s.add_argument("-o", "--output", help="write the source here instead of stdout")
    r = sub.add_parser("replay", help="re-verify every cost of an explore log")
    r.add_argument("log")
    r.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "replay":
            return cmd_replay(args)
        cfg = C.load(args.config)
        order = args.order.split(",") if args.order else None
        if args.budget is not None and args.budget < 0:
            raise C.ConfigError("--budget must be non-negative")
        cfg = cfg.with_overrides(seed=args.seed, budget=args.budget, order=order, out=args.out)
        return COMMANDS[args.command](cfg, args)
    except C.ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except CommandError as e:
        print(f"{args.command}: {e}", file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())
