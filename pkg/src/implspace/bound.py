"""Lower bound on the simulated cost of every implementation below a candidate.

Each term of the simulator cost is minimized over the remaining domains:
a dimension only multiplies an instruction's trip count once it is known
to enclose it and to be sequential, sizes take their smallest remaining
value, loop overhead is only charged to dimensions that must stay loops,
and memory accesses take the cheapest remaining table entry. Dimensions
that might still be merged with an earlier dimension are not counted, so
the counted ones are always distinct loops. Every term only grows as
domains shrink, which makes the bound monotone along a descent.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .gpu import MachineParams
from .space import Candidate


@dataclass(frozen=True)
class BoundReport:
    value: float
    compute: float
    memory: float
    per_instruction: dict = field(default_factory=dict)

    @property
    def binding(self) -> str:
        return "compute" if self.compute >= self.memory else "memory"


def rollout_weight(best: float, bound_value: float) -> float:
    """Sampling weight of a child: how much room its bound leaves under `best`."""
    if best <= 0:
        raise ValueError("best cost must be positive")
    return max(best - bound_value, 0.0)


class _View:
    def __init__(self, c: Candidate):
        self.c = c
        b = c.model.backbone
        self.k = b.payload
        self.insts = b.sets["Insts"]
        self.dims = b.sets["Dimensions"]
        self.static = b.sets["StaticDims"]
        self.key = b.key
        self.size_doms = {d: c.domain("size", (d,)) for d in self.static}
        self.kind = {d: frozenset(c.domain("dim_kind", (d,))) for d in self.dims}
        self._size = {}

    def order(self, a, b):
        return self.c.domain("order", (a, b))

    def min_size(self, d):
        s = self._size.get(d)
        if s is None:
            s = self._size[d] = self.k.dim_size_range(d, self.size_doms)[0]
        return s

    def counted(self, d) -> bool:
        """No earlier dimension of the same class can still be merged with d."""
        cls = self.k.dim_class(d)
        kd = self.key(d)
        return all("MERGED" not in self.order(d, e) for e in self.dims
                   if self.key(e) < kd and self.k.dim_class(e) == cls)

    def seq_min(self, s, counted) -> int:
        out = 1
        for d in self.dims:
            if d != s and counted[d] and self.kind[d] <= {"LOOP", "UNROLL"} \
                    and self.order(d, s) == ("OUTER",):
                out *= self.min_size(d)
        return out


def bound(c: Candidate, mp: MachineParams) -> BoundReport:
    if c.is_fully_specified:
        return exact_bound(c, mp)
    v = _View(c)
    k = v.k
    costs = mp.costs
    counted = {d: v.counted(d) for d in v.dims}
    blocks = 1
    for d in v.dims:
        if counted[d] and v.kind[d] == {"BLOCK"}:
            blocks *= v.min_size(d)
    bf = math.ceil(blocks / mp.block_slots)
    tf = math.ceil(c.counter_bounds("num_threads")[0] / mp.warp_lanes)
    lanes = mp.block_slots * mp.warp_lanes * mp.vector_width
    compute = memory = 0.0
    per = {}
    for i in v.insts:
        inst = k[i]
        runs = max(bf * tf * v.seq_min(i, counted), k.iteration_count(i) / lanes)
        ci = runs * costs.latency(inst.op)
        mi = 0.0
        if inst.is_mem:
            spaces = c.domain("mem_space", (inst.access.region,))
            caches = c.domain("cache", (i,))
            mi = runs * costs.min_access(spaces, caches)
        per[i] = (ci, mi)
        compute += ci
        memory += mi
    overhead = 0
    for d in v.dims:
        if counted[d] and v.kind[d] == {"LOOP"}:
            overhead += v.min_size(d) * v.seq_min(d, counted)
    compute += bf * tf * overhead * costs.loop_overhead
    return BoundReport(max(compute, memory), compute, memory, per)


def exact_bound(c: Candidate, mp: MachineParams) -> BoundReport:
    from .loopnest import reconstruct
    from .simulate import evaluate
    r = evaluate(reconstruct(c), mp)
    return BoundReport(max(r.compute, r.memory), r.compute, r.memory, {})
