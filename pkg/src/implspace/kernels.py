"""Dense linear-algebra kernels as instructions over iteration dimensions.

A kernel lists scalar instructions; each iterates a set of logical
dimensions (loops of the original code). A logical dimension is split
by strip-mining into an optional dynamic "tiled" dimension followed by
static dimensions whose size is chosen from a small universe. Memory
accesses address their region through a linear combination of logical
indices, so every choice of tile sizes touches the same elements.

Two layouts are supported. In the shared layout all instructions of a
kernel iterate the same dimension objects. In the separate layout each
instruction gets its own copy of the dimensions it iterates ("its own
loop nest") and values cross nests through mapped operands, which pair
dimensions of the same original loop.
"""
from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional

OPS = ("Add", "Mul", "Mad", "Cast", "Load", "Store")


class KernelError(ValueError):
    pass


@dataclass(frozen=True)
class Dim:
    id: str
    logical: str
    level: int  # 0 = outermost piece of its logical dimension
    universe: Optional[tuple[int, ...]] = None  # None: dynamic (size derived)

    @property
    def is_static(self) -> bool:
        return self.universe is not None


@dataclass(frozen=True)
class LogicalDim:
    id: str
    loop: str  # name of the loop in the original code, e.g. "m"
    nest: str  # "" in the shared layout
    extent: int
    dims: tuple[str, ...]  # outer to inner


@dataclass(frozen=True)
class Region:
    id: str
    elem_bytes: int
    extent: int  # elements
    is_input: bool = True


@dataclass(frozen=True)
class Access:
    """address = offset + sum(stride * index(logical)) in elements of `region`."""
    region: str
    strides: tuple[tuple[str, int], ...]  # (loop name, stride)
    offset: int = 0


@dataclass(frozen=True)
class Operand:
    kind: str  # Constant | Input | InductionVar | Produced | Reduce | Mapped
    value: object = None  # constant value or input name
    inst: Optional[str] = None  # producer (Produced, Reduce init, Mapped)
    loops: tuple[str, ...] = ()  # Reduce: loops reduced over
    mapped: Optional[str] = None  # id of the MappedOp carrying this operand


@dataclass(frozen=True)
class Instruction:
    id: str
    op: str
    operands: tuple[Operand, ...]
    loops: tuple[str, ...]  # loop names iterated
    nest: str = ""
    access: Optional[Access] = None
    text: str = ""  # human-readable form, e.g. "a = load A[i_m]"

    @property
    def is_mem(self) -> bool:
        return self.op in ("Load", "Store")


@dataclass(frozen=True)
class MappedOp:
    """Value transfer between two nests: iteration i of each producer dim
    feeds iteration i of the paired consumer dim."""
    id: str
    producer: str
    consumer: str
    operand: int
    pairs: tuple[tuple[str, str], ...]  # (producer dim, consumer dim)
    reduce_init: bool = False


@dataclass(frozen=True)
class Kernel:
    name: str
    params: tuple[tuple[str, object], ...]
    instructions: tuple[Instruction, ...]
    logicals: tuple[LogicalDim, ...]
    dims: tuple[Dim, ...]
    regions: tuple[Region, ...]
    mapped: tuple[MappedOp, ...] = ()
    lowered: tuple[str, ...] = ()  # mapped ops turned into memory transfers
    _index: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        idx = {}
        for coll in (self.instructions, self.logicals, self.dims, self.regions, self.mapped):
            for x in coll:
                if x.id in idx:
                    raise KernelError(f"duplicate id {x.id}")
                idx[x.id] = x
        object.__setattr__(self, "_index", idx)

    def __getitem__(self, key):
        return self._index[key]

    def get(self, key):
        return self._index.get(key)

    def fingerprint(self) -> str:
        def canon(xs):
            return sorted(repr(x) for x in xs)
        data = [self.name, repr(self.params), canon(self.instructions), canon(self.logicals),
                canon(self.dims), canon(self.regions), canon(self.mapped), sorted(self.lowered)]
        return hashlib.sha256(json.dumps(data).encode()).hexdigest()

    # -- structure queries -------------------------------------------------
    def logical_of(self, inst: Instruction, loop: str) -> LogicalDim:
        for ld in self.logicals:
            if ld.loop == loop and ld.nest == inst.nest:
                return ld
        raise KernelError(f"{inst.id} has no logical dimension {loop}")

    def inst_dims(self, inst_id: str) -> tuple[str, ...]:
        inst = self[inst_id]
        out = []
        for loop in inst.loops:
            out.extend(self.logical_of(inst, loop).dims)
        return tuple(out)

    def dim_class(self, dim_id: str) -> tuple[str, int]:
        d = self[dim_id]
        return self[d.logical].loop, d.level

    def static_dims(self):
        return tuple(d.id for d in self.dims if d.is_static)

    def dim_size(self, dim_id: str, sizes: dict) -> int:
        """Size of a dimension given the chosen sizes of static dims."""
        d = self[dim_id]
        if d.is_static:
            return sizes[dim_id]
        ld = self[d.logical]
        prod = 1
        for o in ld.dims:
            if self[o].is_static:
                prod *= sizes[o]
        return ld.extent // prod

    def dim_size_range(self, dim_id: str, domains: dict) -> tuple[int, int]:
        """(min, max) size of a dimension given remaining size domains."""
        d = self[dim_id]
        if d.is_static:
            vals = domains[dim_id]
            return min(vals), max(vals)
        ld = self[d.logical]
        lo = hi = 1
        for o in ld.dims:
            if self[o].is_static:
                vals = domains[o]
                lo *= min(vals)
                hi *= max(vals)
        return ld.extent // hi, ld.extent // lo

    def dim_strides(self, inst_id: str, sizes: dict) -> dict[str, int]:
        """Element stride of every iterated dimension in the instruction's access."""
        inst = self[inst_id]
        if inst.access is None:
            return {}
        out = {}
        for loop, stride in inst.access.strides:
            ld = self.logical_of(inst, loop)
            inner = 1
            for o in reversed(ld.dims):
                out[o] = stride * inner
                inner *= self.dim_size(o, sizes)
        for loop in inst.loops:
            for o in self.logical_of(inst, loop).dims:
                out.setdefault(o, 0)
        return out

    def addresses(self, inst_id: str, sizes: dict) -> list[int]:
        """Addresses touched, in nest order (outer dims vary slowest)."""
        inst = self[inst_id]
        dims = self.inst_dims(inst_id)
        strides = self.dim_strides(inst_id, sizes)
        ranges = [range(self.dim_size(d, sizes)) for d in dims]
        base = inst.access.offset if inst.access else 0
        return [base + sum(strides[d] * i for d, i in zip(dims, idx))
                for idx in itertools.product(*ranges)]

    def iteration_count(self, inst_id: str) -> int:
        inst = self[inst_id]
        return math.prod(self.logical_of(inst, loop).extent for loop in inst.loops)

    def producers(self, inst_id: str) -> list[str]:
        """Instructions whose value this one reads in the same iteration."""
        return [o.inst for o in self[inst_id].operands if o.kind in ("Produced", "Mapped")]

    def reduction_of(self, inst_id: str) -> Optional[Operand]:
        for o in self[inst_id].operands:
            if o.kind == "Reduce":
                return o
        return None

    def reduced_loops(self) -> dict[str, set[str]]:
        """reduction inst -> loops it reduces over."""
        out = {}
        for inst in self.instructions:
            r = self.reduction_of(inst.id)
            if r is not None:
                out[inst.id] = set(r.loops)
        return out


# -- strip-mining ------------------------------------------------------------

def strip_mine(k: Kernel, logical_id: str, universe, level: Optional[int] = None) -> Kernel:
    """Add one static dimension, innermost, to a logical dimension.

    The logical dimension keeps its dynamic outer piece (if any), whose
    size becomes the extent divided by the product of static sizes.
    """
    ld = k[logical_id]
    universe = tuple(sorted(set(int(u) for u in universe)))
    if not universe or universe[0] < 1:
        raise KernelError("strip-mining factors must be positive")
    new_level = len(ld.dims)
    if level is not None and level != new_level:
        raise KernelError(f"{logical_id} is already mined at level {level}")
    static = [k[d].universe for d in ld.dims if k[d].is_static] + [universe]
    for combo in itertools.product(*static):
        if ld.extent % math.prod(combo):
            raise KernelError(f"factors {combo} do not divide extent {ld.extent} of {logical_id}")
    dim = Dim(f"{logical_id}.{new_level}", logical_id, new_level, universe)
    new_ld = replace(ld, dims=ld.dims + (dim.id,))
    logicals = tuple(new_ld if x.id == logical_id else x for x in k.logicals)
    return replace(k, logicals=logicals, dims=k.dims + (dim,), _index=None)


def divisor_range(lo: int, hi: int, extent: int) -> tuple[int, ...]:
    """Values of the integer interval [lo, hi] that divide `extent`."""
    return tuple(v for v in range(lo, hi + 1) if extent % v == 0)


# -- builders ------------------------------------------------------------------

@dataclass(frozen=True)
class KernelSpec:
    """What to build. `factors` maps a loop name to a list of universes,
    one per strip-mining level, each either a list of sizes or a
    ``[lo, hi]`` interval (expanded to the divisors of the extent)."""
    kernel: str
    sizes: dict = field(default_factory=dict)
    factors: dict = field(default_factory=dict)
    a_stride: int = 1
    nests: str = "shared"  # or "separate"
    intervals: bool = True  # read two-element factor lists as intervals

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        known = {"kernel", "sizes", "factors", "a_stride", "nests", "intervals"}
        extra = set(d) - known
        if extra:
            raise KernelError(f"unknown kernel spec keys: {sorted(extra)}")
        if "kernel" not in d:
            raise KernelError("kernel spec needs a 'kernel' name")
        return cls(**d)

    def to_dict(self) -> dict:
        return {"kernel": self.kernel, "sizes": dict(self.sizes), "factors": dict(self.factors),
                "a_stride": self.a_stride, "nests": self.nests, "intervals": self.intervals}


class _Builder:
    def __init__(self, name, params, loops: dict[str, int], nests: str):
        if nests not in ("shared", "separate"):
            raise KernelError(f"unknown nest layout {nests!r}")
        for loop, extent in loops.items():
            if not isinstance(extent, int) or extent <= 0:
                raise KernelError(f"size of {loop} must be a positive integer")
        self.name = name
        self.params = params
        self.loops = loops
        self.separate = nests == "separate"
        self.insts: list[Instruction] = []
        self.regions: list[Region] = []
        self.logicals: list[LogicalDim] = []
        self.dims: list[Dim] = []
        self.mapped: list[MappedOp] = []

    def region(self, rid, extent, elem_bytes=4):
        self.regions.append(Region(rid, elem_bytes, extent, True))

    def inst(self, iid, op, operands, loops, access=None, text=""):
        nest = iid if self.separate else ""
        for loop in loops:
            lid = f"{loop}@{nest}" if nest else loop
            if not any(ld.id == lid for ld in self.logicals):
                self.logicals.append(LogicalDim(lid, loop, nest, self.loops[loop], (f"{lid}.0",)))
                self.dims.append(Dim(f"{lid}.0", lid, 0, None))
        self.insts.append(Instruction(iid, op, tuple(operands), tuple(loops), nest, access, text))

    def produced(self, src, loops):
        """Operand reading `src`; a mapped operand in the separate layout."""
        if not self.separate:
            return Operand("Produced", inst=src)
        return Operand("Mapped", inst=src, loops=tuple(loops))

    def reduce(self, init, loops):
        return Operand("Reduce", inst=init, loops=tuple(loops))

    def finish(self, factors: dict, intervals: bool) -> Kernel:
        k = Kernel(self.name, self.params, tuple(self.insts), tuple(self.logicals),
                   tuple(self.dims), tuple(self.regions))
        for loop, levels in (factors or {}).items():
            if loop not in self.loops:
                raise KernelError(f"no loop {loop} to strip-mine")
            for lvl in levels:
                uni = _universe(lvl, self.loops[loop], intervals)
                for ld in [x for x in k.logicals if x.loop == loop]:
                    k = strip_mine(k, ld.id, uni)
        # Every dimension gets its own tiled piece only when the loop is
        # mined; an unmined loop stays a single dynamic dimension.
        return _wire_mapped(k)


def _universe(level, extent, intervals) -> tuple[int, ...]:
    if isinstance(level, int):
        return (level,)
    level = list(level)
    if intervals and len(level) == 2 and level[0] < level[1]:
        uni = divisor_range(level[0], level[1], extent)
        if not uni:
            raise KernelError(f"no factor in [{level[0]}, {level[1]}] divides {extent}")
        return uni
    return tuple(level)


def _wire_mapped(k: Kernel) -> Kernel:
    """Create MappedOp objects for operands crossing nests."""
    mapped = []
    insts = []
    for inst in k.instructions:
        ops = []
        for pos, o in enumerate(inst.operands):
            crossing = (o.kind == "Mapped") or (o.kind == "Reduce" and inst.nest)
            if not crossing:
                ops.append(o)
                continue
            src = k[o.inst]
            shared_loops = [l for l in src.loops if l in inst.loops]
            pairs = []
            for loop in shared_loops:
                pd = k.logical_of(src, loop).dims
                cd = k.logical_of(inst, loop).dims
                pairs.extend(zip(pd, cd))
            mid = f"x:{inst.id}.{pos}"
            mapped.append(MappedOp(mid, src.id, inst.id, pos, tuple(pairs), o.kind == "Reduce"))
            ops.append(replace(o, mapped=mid))
        insts.append(replace(inst, operands=tuple(ops)))
    return replace(k, instructions=tuple(insts), mapped=tuple(mapped), _index=None)


def axpy(n: int, factors=None, nests="shared", intervals=True) -> Kernel:
    """z = alpha * x + y over vectors of size n."""
    b = _Builder("axpy", (("n", n),), {"i": n}, nests)
    b.region("x", n)
    b.region("y", n)
    b.region("z", n)
    b.inst("ld_x", "Load", [Operand("InductionVar")], ["i"], Access("x", (("i", 1),)), "x_i = load x[i]")
    b.inst("ld_y", "Load", [Operand("InductionVar")], ["i"], Access("y", (("i", 1),)), "y_i = load y[i]")
    b.inst("mad", "Mad", [Operand("Input", "alpha"), b.produced("ld_x", ["i"]), b.produced("ld_y", ["i"])],
           ["i"], None, "z_i = alpha * x_i + y_i")
    b.inst("st_z", "Store", [Operand("InductionVar"), b.produced("mad", ["i"])], ["i"],
           Access("z", (("i", 1),)), "store z[i] <- z_i")
    return b.finish(factors, intervals)


def outer_product(m: int, n: int, factors=None, nests="shared", intervals=True) -> Kernel:
    """C[i_m * n + i_n] = A[i_m] * B[i_n]."""
    b = _Builder("outer_product", (("m", m), ("n", n)), {"m": m, "n": n}, nests)
    b.region("A", m)
    b.region("B", n)
    b.region("C", m * n)
    b.inst("ld_a", "Load", [Operand("InductionVar")], ["m"], Access("A", (("m", 1),)), "a = load A[i_m]")
    b.inst("ld_b", "Load", [Operand("InductionVar")], ["n"], Access("B", (("n", 1),)), "b = load B[i_n]")
    b.inst("mul", "Mul", [b.produced("ld_a", ["m"]), b.produced("ld_b", ["n"])], ["m", "n"], None, "c = a * b")
    b.inst("st_c", "Store", [Operand("InductionVar"), b.produced("mul", ["m", "n"])], ["m", "n"],
           Access("C", (("m", n), ("n", 1))), "store C[i_m * n + i_n] <- c")
    return b.finish(factors, intervals)


def matmul(m: int, n: int, k: int, factors=None, a_stride: int = 1, nests="shared", intervals=True) -> Kernel:
    """C = A . B with column-major A (m x k), B (k x n), C (m x n).

    Consecutive elements of A are `a_stride` elements apart.
    """
    if a_stride < 1:
        raise KernelError("a_stride must be positive")
    name = "matmul" if a_stride == 1 else "strided_matmul"
    b = _Builder(name, (("m", m), ("n", n), ("k", k), ("a_stride", a_stride)), {"m": m, "n": n, "k": k}, nests)
    b.region("A", m * k * a_stride)
    b.region("B", k * n)
    b.region("C", m * n)
    b.inst("init", "Cast", [Operand("Constant", 0)], ["m", "n"], None, "acc = 0.0")
    b.inst("ld_a", "Load", [Operand("InductionVar")], ["m", "k"],
           Access("A", (("m", a_stride), ("k", m * a_stride))), "a = load A[i_m, i_k]")
    b.inst("ld_b", "Load", [Operand("InductionVar")], ["k", "n"],
           Access("B", (("k", 1), ("n", k))), "b = load B[i_k, i_n]")
    b.inst("mad", "Mad", [b.produced("ld_a", ["m", "k"]), b.produced("ld_b", ["k", "n"]), b.reduce("init", ["k"])],
           ["m", "n", "k"], None, "acc = a * b + acc")
    b.inst("st_c", "Store", [Operand("InductionVar"), b.produced("mad", ["m", "n"])], ["m", "n"],
           Access("C", (("m", 1), ("n", m))), "store C[i_m, i_n] <- acc")
    return b.finish(factors, intervals)


def copy_scale(m: int, n: int, factors=None, nests="separate", intervals=True) -> Kernel:
    """y = 4 * A[i][j], with the load and the multiply in separate nests."""
    b = _Builder("copy_scale", (("m", m), ("n", n)), {"m": m, "n": n}, nests)
    b.region("A", m * n)
    b.region("Y", m * n)
    b.inst("ld_a", "Load", [Operand("InductionVar")], ["m", "n"], Access("A", (("m", n), ("n", 1))),
           "x = load A[i][j]")
    b.inst("scale", "Mul", [Operand("Constant", 4), b.produced("ld_a", ["m", "n"])], ["m", "n"], None, "y = 4 * x")
    b.inst("st_y", "Store", [Operand("InductionVar"), b.produced("scale", ["m", "n"])], ["m", "n"],
           Access("Y", (("m", n), ("n", 1))), "store Y[i][j] <- y")
    return b.finish(factors, intervals)


def build_kernel(spec: KernelSpec) -> Kernel:
    s = spec.sizes
    try:
        if spec.kernel == "axpy":
            return axpy(s["n"], spec.factors, spec.nests, spec.intervals)
        if spec.kernel == "outer_product":
            return outer_product(s["m"], s["n"], spec.factors, spec.nests, spec.intervals)
        if spec.kernel in ("matmul", "strided_matmul"):
            stride = spec.a_stride if spec.kernel == "matmul" else (spec.a_stride if spec.a_stride != 1 else 32)
            return matmul(s["m"], s["n"], s["k"], spec.factors, stride, spec.nests, spec.intervals)
        if spec.kernel == "copy_scale":
            return copy_scale(s["m"], s["n"], spec.factors, spec.nests, spec.intervals)
    except KeyError as e:
        raise KernelError(f"kernel {spec.kernel} needs size {e.args[0]}") from None
    raise KernelError(f"unknown kernel {spec.kernel!r}")


# -- lowering of a mapped operand through memory -----------------------------

def lower_mapped(k: Kernel, mapped_id: str) -> Kernel:
    """Replace a mapped operand by a store to and a load from a temporary array.

    The store runs in the producer's nest, the load in the consumer's.
    The array covers the full extent of the paired loops.
    """
    x = k[mapped_id]
    if mapped_id in k.lowered:
        return k
    if x.reduce_init:
        raise KernelError("reduction initial values cannot go through memory")
    src, dst = k[x.producer], k[x.consumer]
    loops = [l for l in src.loops if l in dst.loops]
    extents = [k.logical_of(src, l).extent for l in loops]
    strides, acc = [], 1
    for loop, ext in zip(reversed(loops), reversed(extents)):
        strides.append((loop, acc))
        acc *= ext
    strides = tuple(reversed(strides))
    tmp = Region(f"tmp[{mapped_id}]", 4, max(1, math.prod(extents)), False)
    st = Instruction(f"st[{mapped_id}]", "Store", (Operand("InductionVar"), Operand("Produced", inst=src.id)),
                     tuple(loops), src.nest, Access(tmp.id, strides), f"store {tmp.id} <- {src.id}")
    ld = Instruction(f"ld[{mapped_id}]", "Load", (Operand("InductionVar"), Operand("Produced", inst=st.id)),
                     tuple(loops), dst.nest, Access(tmp.id, strides), f"load {tmp.id}")
    ops = list(dst.operands)
    ops[x.operand] = Operand("Produced", inst=ld.id)
    insts = tuple(replace(i, operands=tuple(ops)) if i.id == dst.id else i for i in k.instructions)
    return replace(k, instructions=insts + (st, ld), regions=k.regions + (tmp,),
                   lowered=k.lowered + (mapped_id,), _index=None)
