"""Deterministic analytic cost of a loop nest, in abstract cycles.

Per instruction, the sequential trip count is the product of the sizes of
its LOOP and UNROLL ancestors; block and thread dimensions spread the
work over `block_slots` concurrent blocks of `warp_lanes` lanes, and a
vector dimension issues one instruction for all its lanes. Memory accesses
cost a table entry per (memory space, cache, coalesced). Loops add a fixed
overhead per iteration and barriers a fixed cost per execution.

    total = max(compute, memory) + sync
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from .gpu import MachineParams
from .loopnest import Barrier, DimNode, InstNode, LoopNest


@dataclass(frozen=True)
class CostReport:
    total: float
    compute: float
    global_memory: float
    shared_memory: float
    sync: float
    block_factor: int
    thread_factor: int

    @property
    def memory(self) -> float:
        return self.global_memory + self.shared_memory

    def to_dict(self) -> dict:
        return asdict(self)


SEQUENTIAL = ("LOOP", "UNROLL")


def occupancy(nest: LoopNest, mp: MachineParams) -> tuple[int, int]:
    """(block waves, thread steps) multiplying every sequential cost."""
    bf = math.ceil(nest.num_blocks / mp.block_slots)
    tf = math.ceil(nest.num_threads / mp.warp_lanes)
    return bf, tf


def seq_count(ancestors) -> int:
    out = 1
    for a in ancestors:
        if a.kind in SEQUENTIAL:
            out *= a.size
    return out


def is_coalesced(nest: LoopNest, inst_id: str, ancestors) -> bool:
    """Whether the lanes of the innermost hardware thread level touch
    consecutive (or identical) elements."""
    lane = next((a for a in ancestors if a.kind == "THREAD" and a.level == 0), None)
    if lane is None:
        return True
    strides = nest.kernel.dim_strides(inst_id, nest.sizes)
    stride = max((abs(strides.get(d, 0)) for d in lane.dims), default=0)
    return stride <= 1


def evaluate(nest: LoopNest, mp: MachineParams) -> CostReport:
    k = nest.kernel
    costs = mp.costs
    compute = 0
    glob = 0
    shared = 0
    sync = 0
    for node, anc in nest.walk():
        if isinstance(node, InstNode):
            inst = k[node.inst]
            seq = seq_count(anc)
            compute += seq * costs.latency(inst.op)
            if inst.is_mem:
                space = nest.mem_space[inst.access.region]
                per = costs.access(space, nest.cache[node.inst], is_coalesced(nest, node.inst, anc))
                if space == "SHARED":
                    shared += seq * per
                else:
                    glob += seq * per
        elif isinstance(node, DimNode):
            if node.kind == "LOOP":
                compute += seq_count(anc) * node.size * costs.loop_overhead
        elif isinstance(node, Barrier):
            sync += seq_count(anc) * costs.barrier
    bf, tf = occupancy(nest, mp)
    compute *= bf * tf
    glob *= bf * tf
    shared *= bf * tf
    sync *= bf
    total = max(compute, glob + shared) + sync
    return CostReport(float(total), float(compute), float(glob), float(shared), float(sync), bf, tf)


def evaluate_candidate(c, mp: MachineParams) -> CostReport:
    from .loopnest import reconstruct
    return evaluate(reconstruct(c), mp)
