"""Monte-Carlo tree search over implementation candidates.

The tree is defined by a fixed decision order: a node's children are the
values of its next open choice instance, each propagated. Selection uses
Threshold Ascent on Graphs (reward = rollout cost ranked in the global
best-k bucket), children whose lower bound reaches the best cost are
ignored, and rollouts pick values with probability proportional to
``max(best - bound, 0)``.
"""
from __future__ import annotations

import bisect
import json
import math
import random
from dataclasses import dataclass, field
from typing import Callable, Optional

from .bound import bound, rollout_weight
from .gpu import MachineParams
from .propagate import apply_decision, apply_mask
from .simulate import evaluate_candidate
from .space import Candidate, bits

DEFAULT_ORDER = ("size", "dim_kind", "thread_level", "transfer", "mem_space", "order", "cache")
DEADEND = "DEADEND"


# -- decision order ------------------------------------------------------------

class DecisionOrder:
    """Which open choice instance a node decides next.

    Choices missing from `names` come afterwards in definition order;
    quotient flags always come last since propagation usually fixes them.
    """

    def __init__(self, names=DEFAULT_ORDER):
        self.names = tuple(names)
        if len(set(self.names)) != len(self.names):
            raise ValueError("decision order lists a choice twice")
        self._ranks: dict = {}

    def reversed(self) -> "DecisionOrder":
        return DecisionOrder(tuple(reversed(self.names)))

    def _slots(self, model) -> list[int]:
        r = self._ranks.get(id(model))
        if r is None:
            flags = {q.flag for q in model.defn.quotients}
            rank = {n: i for i, n in enumerate(self.names)}
            names = list(model.ranges)
            unknown = set(self.names) - set(names)
            if unknown:
                raise ValueError(f"decision order names unknown choices {sorted(unknown)}")
            key = {}
            for pos, n in enumerate(names):
                key[n] = (2, pos) if n in flags else (0, rank[n]) if n in rank else (1, pos)
            r = sorted(range(len(model.instances)),
                       key=lambda i: (key[model.instances[i].choice], i))
            if len(self._ranks) > 64:
                self._ranks.clear()
            self._ranks[id(model)] = (model, r)
        else:
            r = r[1]
        return r

    def next(self, c: Candidate) -> Optional[int]:
        """Slot index of the next open instance, None when fully specified."""
        doms = c.doms
        for i in self._slots(c.model):
            d = doms[i]
            if d & (d - 1):
                return i
        return None


def children(c: Candidate, order: DecisionOrder):
    """(slot, [(value mask, child or None)]) for the next decision."""
    idx = order.next(c)
    if idx is None:
        return None, []
    return idx, [(1 << b, apply_mask(c, idx, 1 << b)) for b in bits(c.doms[idx])]


def decision_label(c: Candidate, idx: int, mask: int) -> list:
    """[choice, args, value]: enough to re-apply the decision with `replay_path`."""
    inst = c.model.instances[idx]
    return [inst.choice, list(inst.args), inst.values[mask.bit_length() - 1]]


def replay_path(root: Candidate, path) -> Optional[Candidate]:
    """Re-apply logged decisions in order; None if one of them dead-ends."""
    c = root
    for choice, args, value in path:
        c = apply_decision(c, (choice, tuple(args)), [value])
        if c is None:
            return None
    return c


# -- uniform random walks ------------------------------------------------------

def wilson(successes: int, n: int, z: float = 1.96) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    p = successes / n
    den = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return max(0.0, centre - half), min(1.0, centre + half)


def random_walk(root: Candidate, order: DecisionOrder, rng: random.Random):
    """Uniform descent; returns the leaf, or None on a dead end."""
    c = root
    while True:
        idx = order.next(c)
        if idx is None:
            return c
        b = rng.choice(list(bits(c.doms[idx])))
        c = apply_mask(c, idx, 1 << b)
        if c is None:
            return None


@dataclass(frozen=True)
class DeadEndReport:
    ratio: float
    ci: tuple[float, float]
    dead: int
    trials: int


def deadend_rate(root: Candidate, trials: int, seed: int, order: Optional[DecisionOrder] = None) -> DeadEndReport:
    """Fraction of uniform random descents that hit a failing decision."""
    order = order or DecisionOrder()
    rng = random.Random(seed)
    dead = sum(random_walk(root, order, rng) is None for _ in range(trials))
    return DeadEndReport(dead / trials if trials else 0.0, wilson(dead, trials), dead, trials)


def exact_deadend_probability(root: Candidate, order: Optional[DecisionOrder] = None) -> float:
    """Probability that a uniform descent fails, by full enumeration."""
    order = order or DecisionOrder()

    def rec(c):
        idx, kids = children(c, order)
        if idx is None:
            return 0.0
        return sum(1.0 if k is None else rec(k) for _, k in kids) / len(kids)

    return rec(root)


# -- MCTS ------------------------------------------------------------------------

@dataclass
class SearchNode:
    cand: Candidate
    bound: float
    decision: Optional[list] = None  # [choice, args, value] leading here
    t: int = 0
    costs: list = field(default_factory=list)  # sorted rollout costs through this node
    kids: Optional[list] = None  # None until expanded; entries SearchNode or None (dead end)
    exhausted: bool = False
    evaluated: bool = False

    @property
    def digest(self) -> str:
        return self.cand.digest()


@dataclass
class SearchConfig:
    budget: int = 2000  # evaluations
    seed: int = 0
    bucket: int = 20
    delta: float = 0.05
    prune: bool = True
    max_iterations: Optional[int] = None  # rollouts incl. dead ends; default 20 x budget


@dataclass
class SearchResult:
    best_cost: Optional[float]
    best: Optional[Candidate]
    evaluations: int
    iterations: int
    events: list
    exhausted: bool
    first_hit: dict = field(default_factory=dict)  # cost -> evaluation count when first seen

    @property
    def found(self) -> bool:
        return self.best is not None


class Search:
    def __init__(self, root: Candidate, mp: MachineParams, order: Optional[DecisionOrder] = None,
                 config: Optional[SearchConfig] = None, on_event: Optional[Callable] = None,
                 cost_fn: Optional[Callable] = None):
        self.mp = mp
        self.order = order or DecisionOrder()
        self.cfg = config or SearchConfig()
        self.rng = random.Random(self.cfg.seed)
        self.cost_fn = cost_fn or (lambda c: evaluate_candidate(c, mp).total)
        self.on_event = on_event
        self.best = math.inf
        self.best_cand = None
        self.top: list[float] = []  # best `bucket` costs, ascending
        self.evaluations = 0
        self.iterations = 0
        self.events: list = []
        self.first_hit: dict = {}
        self.root = SearchNode(root, self._bound(root))

    # -- helpers -------------------------------------------------------------------
    def _bound(self, c: Candidate) -> float:
        return bound(c, self.mp).value

    def _threshold(self) -> float:
        if len(self.top) < self.cfg.bucket:
            return math.inf
        return self.top[self.cfg.bucket - 1]

    def _pruned(self, n: SearchNode) -> bool:
        return self.cfg.prune and n.bound >= self.best

    def _live(self, node: SearchNode) -> list[int]:
        return [i for i, k in enumerate(node.kids)
                if k is not None and not k.exhausted and not self._pruned(k)]

    def _evaluate(self, c: Candidate) -> float:
        cost = float(self.cost_fn(c))
        self.evaluations += 1
        if cost < self.best:
            self.best = cost
            self.best_cand = c
        self.first_hit.setdefault(cost, self.evaluations)
        bisect.insort(self.top, cost)
        del self.top[self.cfg.bucket:]
        return cost

    def _expand(self, node: SearchNode):
        idx, kids = children(node.cand, self.order)
        node.kids = []
        for mask, child in kids:
            if child is None:
                node.kids.append(None)
            else:
                node.kids.append(SearchNode(child, self._bound(child), decision_label(node.cand, idx, mask)))

    def _select(self, node: SearchNode, live: list[int]) -> int:
        for i in live:
            if node.kids[i].t == 0:
                return i
        n = max(1, self.iterations)
        alpha = math.log(2 * n * len(live) / self.cfg.delta)
        thr = self._threshold()
        best_i, best_score = live[0], -1.0
        for i in live:
            k = node.kids[i]
            s = bisect.bisect_right(k.costs, thr)
            score = (s + alpha + math.sqrt(2 * s * alpha + alpha * alpha)) / k.t
            if score > best_score:
                best_i, best_score = i, score
        return best_i

    def _refresh(self, path: list[SearchNode]):
        """Mark nodes whose subtrees have nothing left to explore."""
        for node in reversed(path):
            if node.kids is not None and not self._live(node):
                node.exhausted = True
            else:
                break

    # -- one iteration ----------------------------------------------------------
    def rollout(self, c: Candidate) -> tuple[Optional[float], list, list]:
        """Weighted descent to an implementation; (cost or None, path, bounds)."""
        path, bounds = [], []
        while True:
            idx, kids = children(c, self.order)
            if idx is None:
                return self._evaluate(c), path, bounds
            live = [(m, k, self._bound(k)) for m, k in kids if k is not None]
            if not live:
                return None, path, bounds
            if self.cfg.prune and self.best < math.inf:
                weights = [rollout_weight(self.best, b) for _, _, b in live]
            else:
                weights = [1.0] * len(live)
            if not any(weights):
                return None, path, bounds
            m, child, b = self.rng.choices(live, weights=weights)[0]
            path.append(decision_label(c, idx, m))
            bounds.append(b)
            c = child

    def step(self) -> bool:
        """One selection/expansion/rollout/backpropagation round; False when done."""
        root = self.root
        if root.exhausted:
            return False
        path = [root]
        node = root
        while True:
            if node.kids is None:
                if node.cand.is_fully_specified:
                    break
                self._expand(node)
                live = self._live(node)
                if live:
                    node = node.kids[self._select(node, live)]
                    path.append(node)
                break
            live = self._live(node)
            if not live:
                break
            node = node.kids[self._select(node, live)]
            path.append(node)
        self.iterations += 1
        leaf = path[-1]
        cost, tail, bounds = None, [], []
        if leaf.cand.is_fully_specified:
            leaf.kids = []
            if not leaf.evaluated:
                leaf.evaluated = True
                cost = self._evaluate(leaf.cand)
        elif leaf.kids is None or self._live(leaf):
            cost, tail, bounds = self.rollout(leaf.cand)
        for n in path:
            n.t += 1
            if cost is not None:
                bisect.insort(n.costs, cost)
        self._refresh(path)
        ev = {
            "iteration": self.iterations,
            "seed": self.cfg.seed,
            "path": [n.decision for n in path[1:]] + tail,
            "bounds": [n.bound for n in path] + bounds,
            "cost": DEADEND if cost is None else cost,
            "best": None if self.best == math.inf else self.best,
            "evaluations": self.evaluations,
        }
        self.events.append(ev)
        if self.on_event:
            self.on_event(ev)
        return True

    def fast_forward(self, logged: list):
        """Resume from a log: redo its iterations (the search is
        deterministic) and check each one against the record."""
        hook, self.on_event = self.on_event, None
        try:
            for i, ev in enumerate(logged):
                if not self.step() or json.loads(json.dumps(self.events[-1])) != ev:
                    raise ValueError(f"log diverges from the search at iteration {i + 1}")
        finally:
            self.on_event = hook

    def run(self) -> SearchResult:
        cap = self.cfg.max_iterations or 20 * self.cfg.budget + 100
        while self.evaluations < self.cfg.budget and self.iterations < cap:
            if not self.step():
                break
        return self.result()

    def result(self) -> SearchResult:
        return SearchResult(None if self.best_cand is None else self.best, self.best_cand,
                            self.evaluations, self.iterations, self.events, self.root.exhausted,
                            dict(self.first_hit))


def explore(root: Candidate, mp: MachineParams, budget: int, order: Optional[DecisionOrder] = None,
            seed: int = 0, prune: bool = True, on_event=None, **kw) -> SearchResult:
    cfg = SearchConfig(budget=budget, seed=seed, prune=prune, **kw)
    return Search(root, mp, order, cfg, on_event).run()


def random_search(root: Candidate, mp: MachineParams, budget: int, order: Optional[DecisionOrder] = None,
                  seed: int = 0, target: Optional[float] = None) -> SearchResult:
    """Uniform random descents, dead ends retried; the baseline for MCTS.
    Stops early once a cost at or below `target` is seen."""
    order = order or DecisionOrder()
    rng = random.Random(seed)
    best, best_c, evals, its, first = math.inf, None, 0, 0, {}
    while evals < budget and its < 20 * budget + 100:
        its += 1
        c = random_walk(root, order, rng)
        if c is None:
            continue
        evals += 1
        cost = evaluate_candidate(c, mp).total
        first.setdefault(cost, evals)
        if cost < best:
            best, best_c = cost, c
        if target is not None and cost <= target:
            break
    return SearchResult(None if best_c is None else best, best_c, evals, its, [], False, first)


def write_jsonl(events, path, header: Optional[dict] = None):
    with open(path, "w", encoding="utf-8") as f:
        if header is not None:
            f.write(json.dumps({"header": header}, sort_keys=True) + "\n")
        for ev in events:
            f.write(json.dumps(ev, sort_keys=True) + "\n")
