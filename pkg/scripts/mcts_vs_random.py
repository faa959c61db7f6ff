"""Evaluations needed to reach the optimum of the toy matmul space, MCTS
against uniform random sampling, over many seeds.

    python3 scripts/mcts_vs_random.py --seeds 100 --out results/mcts_vs_random.csv
"""
import argparse
import csv
import statistics
import sys

from scipy.stats import wilcoxon

from implspace import kernels as K
from implspace.experiments import enumerate_costs
from implspace.gpu import MachineParams, build_space
from implspace.search import explore, random_search


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, default=40)
    p.add_argument("--budget", type=int, default=2000)
    p.add_argument("--no-prune", action="store_true", help="run MCTS without bound pruning")
    p.add_argument("--out", help="per-seed CSV (default: stdout)")
    args = p.parse_args(argv)
    mp = MachineParams()
    _, root = build_space(K.matmul(4, 4, 4, {"m": [[2]], "n": [[2]]}), mp)
    optimum = enumerate_costs(root, mp).best_cost
    miss = args.budget + 1
    rows = []
    for s in range(args.seeds):
        m = explore(root, mp, args.budget, seed=s, prune=not args.no_prune).first_hit.get(optimum, miss)
        r = random_search(root, mp, args.budget, seed=s, target=optimum).first_hit.get(optimum, miss)
        rows.append((s, m, r))
    f = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    w = csv.writer(f)
    w.writerow(["seed", "mcts_evals", "random_evals"])
    w.writerows(rows)
    if args.out:
        f.close()
    a, b = [x[1] for x in rows], [x[2] for x in rows]
    hits = sum(x <= args.budget for x in a)
    print(f"optimum {optimum:g}: MCTS hit in {hits}/{len(a)} runs, median evaluations "
          f"{statistics.median(a)} vs random {statistics.median(b)}", file=sys.stderr)
    if a != b:
        print(f"Wilcoxon one-sided p = {wilcoxon(a, b, alternative='less').pvalue:.3g}", file=sys.stderr)


if __name__ == "__main__":
    main()
