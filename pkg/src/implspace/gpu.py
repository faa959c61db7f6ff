"""The GPU implementation space: definition files, machine limits, and the
bridge from a `Kernel` to the backbone the definition quantifies over."""
from __future__ import annotations

import functools
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from typing import Optional

from . import kernels as K
from .dsl import ir, parse
from .propagate import propagate
from .space import Backbone, Candidate, DefinitionError, instantiate_vector


@dataclass(frozen=True)
class CostTable:
    """Abstract cycle costs used by the simulator and the bound."""
    op_latency: tuple = (("Add", 1), ("Cast", 1), ("Load", 1), ("Mad", 1), ("Mul", 1), ("Store", 1))
    loop_overhead: int = 2
    barrier: int = 20
    # (mem_space, cache, coalesced) -> cycles per access
    memory: tuple = (
        ("GLOBAL", "L1", True, 4), ("GLOBAL", "L1", False, 32),
        ("GLOBAL", "L2", True, 8), ("GLOBAL", "L2", False, 48),
        ("GLOBAL", "READ_ONLY", True, 3), ("GLOBAL", "READ_ONLY", False, 24),
        ("GLOBAL", "NONE", True, 16), ("GLOBAL", "NONE", False, 128),
        ("SHARED", "NONE", True, 2), ("SHARED", "NONE", False, 4),
    )

    def latency(self, op: str) -> int:
        return dict(self.op_latency)[op]

    def access(self, space: str, cache: str, coalesced: bool) -> int:
        for s, c, co, cost in self.memory:
            if (s, c, co) == (space, cache, coalesced):
                return cost
        raise KeyError((space, cache, coalesced))

    def min_access(self, spaces, caches, coalesced_options=(True, False)) -> Optional[int]:
        vals = [cost for s, c, co, cost in self.memory
                if s in spaces and c in caches and co in coalesced_options]
        return min(vals) if vals else None


@dataclass(frozen=True)
class MachineParams:
    max_threads: int = 1024
    max_thread_levels: int = 3
    max_block_levels: int = 3
    shared_mem_bytes: int = 48 * 1024
    vector_width: int = 4
    warp_lanes: int = 32  # threads of a block that run in one step
    block_slots: int = 16  # blocks that run concurrently
    costs: CostTable = field(default_factory=CostTable)

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, int) and v <= 0:
                raise ValueError(f"machine parameter {f.name} must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "MachineParams":
        d = dict(d or {})
        costs = d.pop("costs", None)
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown machine parameters: {sorted(extra)}")
        if costs is not None:
            c = dict(costs)
            if "op_latency" in c:
                c["op_latency"] = tuple(sorted(dict(c["op_latency"]).items()))
            if "memory" in c:
                c["memory"] = tuple(tuple(x) for x in c["memory"])
            d["costs"] = CostTable(**c)
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["costs"] = {"op_latency": [list(x) for x in self.costs.op_latency],
                      "loop_overhead": self.costs.loop_overhead, "barrier": self.costs.barrier,
                      "memory": [list(x) for x in self.costs.memory]}
        return d


# -- definition ------------------------------------------------------------------

def space_source(name: str) -> str:
    return resources.files("implspace").joinpath("spaces", name).read_text(encoding="utf-8")


@functools.lru_cache(maxsize=None)
def order_definition() -> ir.SpaceDefinition:
    return parse(space_source("order.space"))


@functools.lru_cache(maxsize=None)
def gpu_definition() -> ir.SpaceDefinition:
    return order_definition() + parse(space_source("gpu.space"))


# -- providers -------------------------------------------------------------------

def _cls(k: K.Kernel, d: str):
    return k.dim_class(d)


def _forbids_nesting(k: K.Kernel, i: str, d: str) -> bool:
    loop = _cls(k, d)[0]
    inst = k[i]
    red = k.reduction_of(i)
    if red is not None and loop not in inst.loops:
        return True
    for r, loops in k.reduced_loops().items():
        if loop not in loops:
            continue
        if k.reduction_of(r).inst == i:
            return True
        if r in k.producers(i):
            return True
    return False


def _is_reduction_dim(k: K.Kernel, d: str) -> bool:
    loop = _cls(k, d)[0]
    for r, loops in k.reduced_loops().items():
        if loop in loops and d in k.inst_dims(r):
            return True
    return False


def _depends_on(k: K.Kernel, b: str, a: str) -> bool:
    inst = k[b]
    return any(o.inst == a for o in inst.operands if o.kind in ("Produced", "Mapped", "Reduce"))


def _vectorizable(k: K.Kernel, i: str, v: str) -> bool:
    if v not in k.inst_dims(i):
        return False
    dim = k[v]
    ld = k[dim.logical]
    if ld.dims[-1] != v:
        return False
    inst = k[i]
    if inst.access is None:
        return True
    return dict(inst.access.strides).get(ld.loop, 0) == 1


def make_providers(mp: MachineParams) -> dict:
    return {
        "{0}.possible_sizes()": lambda k, d: k[d].universe,
        "{0}.iterates({1})": lambda k, i, d: d in k.inst_dims(i),
        "{0}.forbids_nesting_in({1})": _forbids_nesting,
        "{0}.is_reduction()": lambda k, i: k.reduction_of(i) is not None,
        "{0}.same_class({1})": lambda k, d, e: k.dim_class(d) == k.dim_class(e),
        "{0}.depends_on({1})": _depends_on,
        "{0}.is_static()": lambda k, d: k[d].is_static,
        "{0}.is_reduction_dim()": _is_reduction_dim,
        "{0}.vectorizable_in({1})": _vectorizable,
        "{0}.bytes()": lambda k, m: k[m].extent * k[m].elem_bytes,
        "{0}.is_input()": lambda k, m: k[m].is_input,
        "{0}.is_store()": lambda k, i: k[i].op == "Store",
        "{0}.is_reduce_init()": lambda k, x: k[x].reduce_init,
        "{0}.pairs({1}, {2})": lambda k, x, p, c: (p, c) in k[x].pairs,
        "gpu.vector_width": lambda k: mp.vector_width,
        "gpu.max_threads": lambda k: mp.max_threads,
        "gpu.max_thread_levels": lambda k: mp.max_thread_levels,
        "gpu.max_block_levels": lambda k: mp.max_block_levels,
        "gpu.shared_mem_bytes": lambda k: mp.shared_mem_bytes,
    }


def _lower_mapped_callback(b: Backbone, op: str) -> Backbone:
    k = b.payload
    nk = K.lower_mapped(k, op)
    st, ld, tmp = f"st[{op}]", f"ld[{op}]", f"tmp[{op}]"
    return b.extend(
        objects=(st, ld, tmp),
        sets={"Statements": (st, ld), "Insts": (st, ld), "MemInsts": (st, ld), "MemRegions": (tmp,)},
        param_sets={"AccessedRegions": {st: (tmp,), ld: (tmp,)}},
        payload=nk,
    )


CALLBACKS = {"lower_mapped": _lower_mapped_callback}


@functools.lru_cache(maxsize=64)
def _providers_for(mp: MachineParams) -> dict:
    return make_providers(mp)


def to_backbone(k: K.Kernel, mp: Optional[MachineParams] = None) -> Backbone:
    mp = mp or MachineParams()
    insts = tuple(i.id for i in k.instructions)
    dims = tuple(d.id for d in k.dims)
    mems = tuple(i.id for i in k.instructions if i.is_mem)
    regions = tuple(r.id for r in k.regions)
    mapped = tuple(x.id for x in k.mapped)
    return Backbone(
        objects=insts + dims + regions + mapped,
        sets={
            "Statements": insts + dims,
            "Insts": insts,
            "Dimensions": dims,
            "StaticDims": tuple(d.id for d in k.dims if d.is_static),
            "MemInsts": mems,
            "MemRegions": regions,
            "Mapped": mapped,
        },
        param_sets={"AccessedRegions": {i: (k[i].access.region,) for i in mems}},
        providers=_providers_for(mp),
        callbacks=CALLBACKS,
        payload=k,
    )


def build_space(kernel: K.Kernel, mp: Optional[MachineParams] = None,
                defn: Optional[ir.SpaceDefinition] = None) -> tuple[ir.SpaceDefinition, Candidate]:
    """Definition and propagated root candidate for a kernel."""
    defn = defn or gpu_definition()
    b = to_backbone(kernel, mp)
    root = propagate(instantiate_vector(defn, b))
    if root is None:
        raise DefinitionError(f"kernel {kernel.name} has no valid implementation")
    return defn, root


def kernel_of(c: Candidate) -> K.Kernel:
    return c.model.backbone.payload
