"""Per-kernel summary: space size estimate, dead-end rate and the best
cost found by MCTS and by random sampling at the same budget.

    python3 scripts/summary_table.py --out results/summary.csv
"""
import argparse
import csv
import sys
import time

from implspace.config import load, shipped_configs
from implspace.estimate import CandidateTree, chen_estimate, knuth_estimate, tighter
from implspace.gpu import build_space
from implspace.kernels import build_kernel
from implspace.search import DecisionOrder, deadend_rate, explore, random_search


def row(name, budget, walks, seed):
    cfg = load(name)
    _, root = build_space(build_kernel(cfg.kernel), cfg.machine)
    order = DecisionOrder(cfg.order)
    tree = CandidateTree(root, order)
    t0 = time.perf_counter()
    est = tighter(knuth_estimate(tree, cfg.estimate.knuth_iterations, seed, ci_scale="log"),
                  chen_estimate(tree, cfg.estimate.chen_iterations, seed=seed, ci_scale="log"))
    dead = deadend_rate(root, walks, seed, order)
    mcts = explore(root, cfg.machine, budget, order, seed, max_iterations=20 * budget)
    rand = random_search(root, cfg.machine, budget, order, seed)
    return {"kernel": name, "size": f"{est.value:.3g}", "size_ci": f"{est.ci[0]:.3g}..{est.ci[1]:.3g}",
            "size_method": est.method, "dead_ends": f"{dead.ratio:.3f}",
            "dead_ends_ci": f"{dead.ci[0]:.3f}..{dead.ci[1]:.3f}",
            "mcts_best": mcts.best_cost, "mcts_evals": mcts.evaluations,
            "random_best": rand.best_cost, "random_evals": rand.evaluations,
            "seconds": round(time.perf_counter() - t0, 1)}


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("kernels", nargs="*", help="shipped config names (default: all)")
    p.add_argument("--budget", type=int, default=200, help="evaluations per search")
    p.add_argument("--walks", type=int, default=2000, help="random descents for the dead-end rate")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV file (default: stdout)")
    args = p.parse_args(argv)
    rows = [row(k, args.budget, args.walks, args.seed) for k in args.kernels or shipped_configs()]
    f = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    w = csv.DictWriter(f, fieldnames=list(rows[0]))
    w.writeheader()
    w.writerows(rows)
    if args.out:
        f.close()


if __name__ == "__main__":
    main()
