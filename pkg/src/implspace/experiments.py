"""Tree-level experiments: how much of each depth the bound can prune
under a given decision order, and the comparison between two orders."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

from .bound import bound
from .gpu import MachineParams
from .search import DecisionOrder, children
from .space import Candidate


@dataclass(frozen=True)
class LevelStats:
    depth: int
    nodes: int
    pruned: int

    @property
    def fraction(self) -> float:
        return self.pruned / self.nodes if self.nodes else 0.0


def level_nodes(root: Candidate, order: DecisionOrder, min_nodes: int, max_nodes: int = 10 ** 5):
    """Breadth-first levels until one holds at least `min_nodes` nodes.

    Returns (depth, nodes) of that level, or of the last level when the
    tree runs out first. Refuses levels above `max_nodes`.
    """
    level, depth = [root], 0
    while len(level) < min_nodes:
        nxt = []
        for c in level:
            _, kids = children(c, order)
            nxt.extend(k for _, k in kids if k is not None)
        if not nxt:
            break
        if len(nxt) > max_nodes:
            raise RuntimeError(f"level {depth + 1} has {len(nxt)} nodes, above {max_nodes}")
        level, depth = nxt, depth + 1
    return depth, level


def prune_fraction(nodes, mp: MachineParams, threshold: float, depth: int = 0) -> LevelStats:
    """How many of `nodes` have a bound strictly above `threshold`: those
    provably hold nothing as good as an implementation of that cost."""
    pruned = sum(1 for c in nodes if bound(c, mp).value > threshold)
    return LevelStats(depth, len(nodes), pruned)


@dataclass(frozen=True)
class OrderComparison:
    threshold: float
    min_nodes: int
    default: LevelStats
    reversed: LevelStats

    @property
    def ratio(self) -> Optional[float]:
        if self.reversed.fraction == 0:
            return None
        return self.default.fraction / self.reversed.fraction

    def to_dict(self) -> dict:
        out = {"threshold": self.threshold, "min_nodes": self.min_nodes, "ratio": self.ratio}
        for name in ("default", "reversed"):
            s = getattr(self, name)
            out[name] = dict(asdict(s), fraction=s.fraction)
        return out


def order_compare(root: Candidate, mp: MachineParams, threshold: float, min_nodes: int = 1000,
                  order: Optional[DecisionOrder] = None, max_nodes: int = 10 ** 5) -> OrderComparison:
    """Prune fractions of an order and of its reverse, each at its first
    depth holding `min_nodes` nodes."""
    order = order or DecisionOrder()
    stats = []
    for o in (order, order.reversed()):
        depth, nodes = level_nodes(root, o, min_nodes, max_nodes)
        stats.append(prune_fraction(nodes, mp, threshold, depth))
    return OrderComparison(threshold, min_nodes, stats[0], stats[1])


@dataclass
class Enumeration:
    implementations: int
    best_cost: Optional[float]
    best_path: Optional[list]
    costs: dict  # cost -> number of implementations

    def to_dict(self) -> dict:
        return {"implementations": self.implementations, "best_cost": self.best_cost,
                "best_path": self.best_path,
                "costs": [[c, n] for c, n in sorted(self.costs.items())]}


def enumerate_costs(root: Candidate, mp: MachineParams, order: Optional[DecisionOrder] = None,
                    budget: int = 10 ** 6) -> Enumeration:
    """Evaluate every implementation of the tree; the exhaustive optimum
    (first in tree order on ties) and the cost histogram."""
    from .estimate import TreeTooLarge
    from .search import decision_label
    from .simulate import evaluate_candidate
    order = order or DecisionOrder()
    costs: dict = {}
    best, best_path, count, nodes = None, None, 0, 0
    stack = [(root, [])]
    while stack:
        c, path = stack.pop()
        nodes += 1
        if nodes > budget:
            raise TreeTooLarge(f"tree has more than {budget} nodes")
        idx, kids = children(c, order)
        if idx is None:
            count += 1
            cost = evaluate_candidate(c, mp).total
            costs[cost] = costs.get(cost, 0) + 1
            if best is None or cost < best:
                best, best_path = cost, path
            continue
        for mask, k in reversed(kids):
            if k is not None:
                stack.append((k, path + [decision_label(c, idx, mask)]))
    return Enumeration(count, best, best_path, costs)
