"""Prune fraction of the default decision order against its reverse, at
the first depth holding at least --min-nodes nodes.

    python3 scripts/order_compare.py toy_matmul matmul256
"""
import argparse
import csv
import sys

from implspace.config import load
from implspace.experiments import enumerate_costs, order_compare
from implspace.gpu import build_space
from implspace.kernels import build_kernel
from implspace.search import DecisionOrder, explore


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("kernels", nargs="+", help="shipped config names or config files")
    p.add_argument("--min-nodes", type=int, default=1000)
    p.add_argument("--budget", type=int, default=100, help="explore budget setting the threshold")
    p.add_argument("--exact-threshold", action="store_true",
                   help="use the exhaustive optimum as threshold (small spaces only)")
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)
    w = csv.writer(sys.stdout)
    w.writerow(["kernel", "threshold", "order", "depth", "nodes", "pruned", "fraction", "ratio"])
    for name in args.kernels:
        cfg = load(name)
        _, root = build_space(build_kernel(cfg.kernel), cfg.machine)
        order = DecisionOrder(cfg.order)
        if args.exact_threshold:
            threshold = enumerate_costs(root, cfg.machine, order).best_cost
        else:
            threshold = explore(root, cfg.machine, args.budget, order, args.seed,
                                max_iterations=10 * args.budget).best_cost
        cmp = order_compare(root, cfg.machine, threshold, args.min_nodes, order)
        for label in ("default", "reversed"):
            s = getattr(cmp, label)
            w.writerow([cfg.name, threshold, label, s.depth, s.nodes, s.pruned, f"{s.fraction:.4f}",
                        "" if cmp.ratio is None else f"{cmp.ratio:.3f}"])


if __name__ == "__main__":
    main()
