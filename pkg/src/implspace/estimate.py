"""Search-tree size estimation: Knuth's random probing, Chen's heuristic
sampling with strata, and exact counting for small trees.

A tree is any object with ``root``, ``children(node) -> list`` and
optionally ``leaf_value(node)`` (1 by default) which lets leaves that are
not solutions, such as dead ends, count for nothing.
"""
from __future__ import annotations

import math
import random
import statistics
from dataclasses import dataclass
from typing import Callable, Optional

from .search import DecisionOrder, children as candidate_children
from .space import Candidate

Z95 = 1.959963984540054


class StratifierError(ValueError):
    """A child's stratum is not strictly below its parent's."""


class TreeTooLarge(RuntimeError):
    pass


@dataclass(frozen=True)
class Estimate:
    value: float
    ci: tuple[float, float]
    method: str
    iterations: int
    seed: int

    @property
    def width(self) -> float:
        return self.ci[1] - self.ci[0]

    def to_dict(self) -> dict:
        return {"value": self.value, "ci": list(self.ci), "method": self.method,
                "iterations": self.iterations, "seed": self.seed}


class CandidateTree:
    """The search tree of a space: children are the propagation-surviving
    values of the next decision."""

    def __init__(self, root: Candidate, order: Optional[DecisionOrder] = None):
        self.root = root
        self.order = order or DecisionOrder()

    def children(self, c: Candidate) -> list:
        _, kids = candidate_children(c, self.order)
        return [k for _, k in kids if k is not None]

    def leaf_value(self, c: Candidate) -> int:
        return 1 if c.is_fully_specified else 0

    def remaining(self, c: Candidate) -> int:
        return sum(1 for d in c.doms if d & (d - 1))


class ExplicitTree:
    """A tree given as nested lists; a leaf is an empty list."""

    def __init__(self, root):
        self.root = root

    def children(self, node) -> list:
        return node


def _leaf_value(tree, node) -> float:
    f = getattr(tree, "leaf_value", None)
    return 1 if f is None else f(node)


def _ci(samples: list[float], scale: str = "normal") -> tuple[float, float]:
    n = len(samples)
    mean = statistics.fmean(samples)
    if n < 2:
        return mean, mean
    sd = statistics.stdev(samples)
    if sd == 0:
        return mean, mean
    if scale == "log" and mean > 0:
        # delta method on log(mean): asymmetric, never below zero
        h = Z95 * sd / (mean * math.sqrt(n))
        return mean * math.exp(-h), mean * math.exp(h)
    h = Z95 * sd / math.sqrt(n)
    return mean - h, mean + h


def knuth_estimate(tree, iterations: int, seed: int = 0, count: str = "leaves",
                   ci_scale: str = "normal") -> Estimate:
    """Mean over random descents of the product of branching factors."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if count not in ("leaves", "nodes"):
        raise ValueError("count is 'leaves' or 'nodes'")
    rng = random.Random(seed)
    samples = []
    for _ in range(iterations):
        node, weight, total = tree.root, 1, 0
        while True:
            if count == "nodes":
                total += weight
            kids = tree.children(node)
            if not kids:
                if count == "leaves":
                    total = weight * _leaf_value(tree, node)
                break
            weight *= len(kids)
            node = kids[rng.randrange(len(kids))]
        samples.append(total)
    mean = statistics.fmean(samples)
    return Estimate(mean, _ci(samples, ci_scale), "knuth", iterations, seed)


def default_stratifier(tree) -> Callable:
    """(-depth, remaining open decisions): strictly decreasing along edges."""
    remaining = getattr(tree, "remaining", None)

    def key(node, depth):
        return (-depth, remaining(node) if remaining else 0)
    return key


def _chen_probe(tree, stratifier, rng, count) -> float:
    queue = {stratifier(tree.root, 0): (tree.root, 0, 1.0)}
    total = 0.0
    while queue:
        k = max(queue)
        node, depth, w = queue.pop(k)
        kids = tree.children(node)
        if count == "nodes":
            total += w
        elif not kids:
            total += w * _leaf_value(tree, node)
        for child in kids:
            ck = stratifier(child, depth + 1)
            if not ck < k:
                raise StratifierError(f"stratum {ck!r} of a child is not below its parent's {k!r}")
            hit = queue.get(ck)
            if hit is None:
                queue[ck] = (child, depth + 1, w)
            else:
                rep, rdepth, rw = hit
                nw = rw + w
                if rng.random() < w / nw:
                    rep, rdepth = child, depth + 1
                queue[ck] = (rep, rdepth, nw)
    return total


def chen_estimate(tree, iterations: int, stratifier: Optional[Callable] = None, seed: int = 0,
                  count: str = "leaves", ci_scale: str = "normal") -> Estimate:
    """Heuristic sampling: one representative per stratum carries the
    weight of every node merged into it; the estimate is the total weight
    reaching leaves. `iterations` independent probes are averaged."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    stratifier = stratifier or default_stratifier(tree)
    rng = random.Random(seed)
    samples = [_chen_probe(tree, stratifier, rng, count) for _ in range(iterations)]
    return Estimate(statistics.fmean(samples), _ci(samples, ci_scale), "chen", iterations, seed)


@dataclass(frozen=True)
class ExactCount:
    leaves: int
    nodes: int
    per_depth: tuple[int, ...]


def exact_count(tree, budget: int = 10 ** 6) -> ExactCount:
    """Count leaves (weighted by leaf_value) and nodes; refuses past `budget` nodes."""
    leaves = nodes = 0
    per_depth: list[int] = []
    stack = [(tree.root, 0)]
    while stack:
        node, depth = stack.pop()
        nodes += 1
        if nodes > budget:
            raise TreeTooLarge(f"tree has more than {budget} nodes")
        if depth == len(per_depth):
            per_depth.append(0)
        per_depth[depth] += 1
        kids = tree.children(node)
        if not kids:
            leaves += _leaf_value(tree, node)
        for k in reversed(kids):
            stack.append((k, depth + 1))
    return ExactCount(leaves, nodes, tuple(per_depth))


def tighter(a: Estimate, b: Estimate) -> Estimate:
    """The estimate with the narrower relative confidence interval."""
    def rel(e):
        return e.width / e.value if e.value else math.inf
    return a if rel(a) <= rel(b) else b
