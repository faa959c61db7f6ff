"""Loop-nest trees rebuilt from fully specified candidates, and their
pseudo-GPU source text."""
from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass, field
from typing import Optional, Union

from . import kernels as K
from .space import Candidate

LEVEL_NAMES = ("x", "y", "z")


class ReconstructionError(RuntimeError):
    """The order decisions do not describe a loop nest (an engine bug)."""


@dataclass
class DimNode:
    dims: tuple[str, ...]  # merged dimensions, first is the representative
    kind: str
    size: int
    children: list = field(default_factory=list)
    level: Optional[int] = None  # hardware level of THREAD dims, 0 = innermost

    @property
    def name(self) -> str:
        return self.dims[0]


@dataclass
class InstNode:
    inst: str


@dataclass
class Barrier:
    pass


Node = Union[DimNode, InstNode, Barrier]


@dataclass
class LoopNest:
    kernel: K.Kernel
    roots: list
    sizes: dict  # every dimension -> concrete size
    kinds: dict  # every dimension -> dim_kind
    mem_space: dict
    cache: dict
    thread_shape: tuple[int, ...]  # sizes of the hardware thread levels, innermost first
    blocks: tuple[int, ...]  # sizes of the block levels, outermost first

    def walk(self):
        """Yield (node, ancestors) in program order."""
        def rec(nodes, anc):
            for n in nodes:
                yield n, anc
                if isinstance(n, DimNode):
                    yield from rec(n.children, anc + (n,))
        yield from rec(self.roots, ())

    @property
    def num_threads(self) -> int:
        out = 1
        for s in self.thread_shape:
            out *= s
        return out

    @property
    def num_blocks(self) -> int:
        out = 1
        for s in self.blocks:
            out *= s
        return out


def _orders(c: Candidate, stmts):
    out = {}
    for a, b in itertools.combinations(stmts, 2):
        out[(a, b)] = c.value("order", (a, b))
        out[(b, a)] = {"BEFORE": "AFTER", "AFTER": "BEFORE", "INNER": "OUTER",
                       "OUTER": "INNER"}.get(out[(a, b)], out[(a, b)])
    return out


def reconstruct(c: Candidate) -> LoopNest:
    """Build the loop-nest tree selected by a fully specified candidate."""
    if not c.is_fully_specified:
        raise ValueError("candidate is not fully specified")
    b = c.model.backbone
    k: K.Kernel = b.payload
    insts = list(b.sets["Insts"])
    dims = list(b.sets["Dimensions"])
    stmts = insts + dims
    order = _orders(c, stmts)
    static = set(b.sets.get("StaticDims", ()))
    sizes = {d: c.value("size", (d,)) for d in dims if d in static}
    sizes.update({d: k.dim_size(d, sizes) for d in dims if d not in static})
    kinds = {d: c.value("dim_kind", (d,)) for d in dims}

    # merged dimensions form one node
    group: dict[str, tuple[str, ...]] = {}
    for d in dims:
        if d not in group:
            g = tuple([d] + [e for e in dims if e != d and order[(d, e)] == "MERGED"])
            for e in g:
                group[e] = g
    reps = []
    for d in dims:
        if group[d][0] == d:
            reps.append(d)
    units = insts + reps
    anc = {s: [d for d in reps if d != s and order[(d, s)] == "OUTER"] for s in units}
    nodes = {}
    for d in reps:
        nodes[d] = DimNode(group[d], kinds[d], sizes[d])
    for i in insts:
        nodes[i] = InstNode(i)
    children: dict[Optional[str], list[str]] = {None: []}
    for d in reps:
        children[d] = []
    for s in units:
        parent = None
        for a in anc[s]:
            if parent is None or len(anc[a]) > len(anc[parent]):
                parent = a
        if parent is not None and set(anc[s]) != set(anc[parent]) | {parent}:
            raise ReconstructionError(f"ancestors of {s} are not a chain")
        children[parent].append(s)

    def cmp(x, y):
        o = order[(x, y)]
        if o == "BEFORE":
            return -1
        if o == "AFTER":
            return 1
        raise ReconstructionError(f"siblings {x} and {y} are ordered {o}")

    for p, kids in children.items():
        kids.sort(key=functools.cmp_to_key(cmp))
        for x, y in zip(kids, kids[1:]):
            if order[(x, y)] != "BEFORE":
                raise ReconstructionError("sibling order is not total")
        if p is not None:
            nodes[p].children = [nodes[s] for s in kids]
    roots = [nodes[s] for s in children[None]]

    # hardware thread levels: one per class of MAPPED thread dimensions
    threads = [d for d in dims if kinds[d] == "THREAD"]
    classes: list[list[str]] = []
    for t in threads:
        for cl in classes:
            if c.value("thread_level", (t, cl[0])) == "MAPPED":
                cl.append(t)
                break
        else:
            classes.append([t])

    def inner_first(x, y):
        v = c.value("thread_level", (x[0], y[0]))
        return -1 if v == "INNER" else 1

    classes.sort(key=functools.cmp_to_key(inner_first))
    level = {t: li for li, cl in enumerate(classes) for t in cl}
    for d in reps:
        n = nodes[d]
        if n.kind == "THREAD":
            n.level = level[d]
    thread_shape = tuple(sizes[cl[0]] for cl in classes)
    block_nodes = [nodes[d] for d in reps if kinds[d] == "BLOCK"]
    block_nodes.sort(key=lambda n: len(anc[n.name]))
    regions = b.sets["MemRegions"]
    nest = LoopNest(
        kernel=k, roots=_with_barriers(roots), sizes=sizes, kinds=kinds,
        mem_space={r: c.value("mem_space", (r,)) for r in regions},
        cache={i: c.value("cache", (i,)) for i in b.sets["MemInsts"]},
        thread_shape=thread_shape, blocks=tuple(n.size for n in block_nodes),
    )
    if derive_orders(nest) != order:
        raise ReconstructionError("tree does not reproduce the order decisions")
    return nest


def _has_threads(n) -> bool:
    if isinstance(n, DimNode):
        return n.kind == "THREAD" or any(_has_threads(x) for x in n.children)
    return False


def _with_barriers(nodes: list) -> list:
    """Insert a barrier before every sibling nest using threads that follows
    another such nest."""
    out = []
    seen = False
    for n in nodes:
        if isinstance(n, DimNode):
            n.children = _with_barriers(n.children)
        cur = _has_threads(n)
        if cur and seen:
            out.append(Barrier())
        seen = seen or cur
        out.append(n)
    return out


def derive_orders(nest: LoopNest) -> dict:
    """Pairwise order of every two statements as laid out in the tree."""
    pre, anc, node_of = {}, {}, {}

    def rec(nodes, ancestors):
        for n in nodes:
            if isinstance(n, Barrier):
                continue
            ids = n.dims if isinstance(n, DimNode) else (n.inst,)
            for s in ids:
                pre[s] = len(pre)
                anc[s] = ancestors
                node_of[s] = id(n)
            if isinstance(n, DimNode):
                rec(n.children, ancestors | set(ids))

    rec(nest.roots, frozenset())
    out = {}
    for a, b in itertools.permutations(pre, 2):
        if node_of[a] == node_of[b]:
            v = "MERGED"
        elif a in anc[b]:
            v = "OUTER"
        elif b in anc[a]:
            v = "INNER"
        elif pre[a] < pre[b]:
            v = "BEFORE"
        else:
            v = "AFTER"
        out[(a, b)] = v
    return out


# -- source emission -------------------------------------------------------------

UNROLL_REPLICATE = 8


def _value_name(k: K.Kernel, inst_id: str) -> str:
    red = k.reduction_of(inst_id)
    return red.inst if red is not None else inst_id


def _addr(nest: LoopNest, inst_id: str, env: dict) -> str:
    k = nest.kernel
    inst = k[inst_id]
    strides = k.dim_strides(inst_id, nest.sizes)
    const = inst.access.offset
    terms = []
    for d in k.inst_dims(inst_id):
        s = strides.get(d, 0)
        if not s:
            continue
        if d in env:
            const += s * env[d]
        else:
            terms.append(f"{d}" if s == 1 else f"{s}*{d}")
    if const or not terms:
        terms.append(str(const))
    return " + ".join(terms)


def _inst_line(nest: LoopNest, inst_id: str, env: dict, vec: Optional[int]) -> str:
    k = nest.kernel
    inst = k[inst_id]
    v = f".v{vec}" if vec else ""
    names = []
    for o in inst.operands:
        if o.kind == "Constant":
            names.append(repr(o.value))
        elif o.kind == "Input":
            names.append(str(o.value))
        elif o.kind in ("Produced", "Mapped", "Reduce"):
            names.append(_value_name(k, o.inst))
    dst = _value_name(k, inst_id)
    if inst.op == "Load":
        region = inst.access.region
        space = nest.mem_space[region].lower()
        return f"{dst} = load{v}.{space}.{nest.cache[inst_id].lower()} {region}[{_addr(nest, inst_id, env)}]"
    if inst.op == "Store":
        region = inst.access.region
        space = nest.mem_space[region].lower()
        return (f"store{v}.{space}.{nest.cache[inst_id].lower()} {region}[{_addr(nest, inst_id, env)}]"
                f" <- {names[-1]}")
    if inst.op == "Cast":
        return f"{dst} = cast{v}({names[0]})"
    if inst.op == "Mad":
        return f"{dst} = fma{v}({', '.join(names)})"
    sym = {"Add": "+", "Mul": "*"}[inst.op]
    return f"{dst} = " + f" {sym}{v} ".join(names)


def emit_source(nest: LoopNest) -> str:
    """Readable pseudo-kernel text; deterministic for a given tree."""
    k = nest.kernel
    lines = []
    params = ", ".join(f"{a}={b}" for a, b in k.params)
    lines.append(f"kernel {k.name}({params})")
    if nest.blocks:
        lines.append(f"  // grid: {' x '.join(map(str, nest.blocks))} blocks")
    if nest.thread_shape:
        lines.append(f"  // block: {' x '.join(map(str, nest.thread_shape))} threads")
    block_level = [0]

    def emit(nodes, depth, env, vec):
        pad = "  " * depth
        for n in nodes:
            if isinstance(n, Barrier):
                lines.append(pad + "__syncthreads()")
            elif isinstance(n, InstNode):
                lines.append(pad + _inst_line(nest, n.inst, env, vec))
            elif n.kind == "BLOCK":
                lines.append(pad + f"// {n.name} <- block.{LEVEL_NAMES[min(block_level[0], 2)]} (size {n.size})")
                block_level[0] += 1
                emit(n.children, depth, env, vec)
            elif n.kind == "THREAD":
                lines.append(pad + f"// {n.name} <- thread.{LEVEL_NAMES[n.level]} (size {n.size})")
                emit(n.children, depth, env, vec)
            elif n.kind == "VECTOR":
                lines.append(pad + f"vectorize {n.name} in 0..{n.size}:")
                emit(n.children, depth + 1, env, n.size)
            elif n.kind == "UNROLL" and n.size <= UNROLL_REPLICATE:
                lines.append(pad + f"// unrolled {n.name} in 0..{n.size}")
                for i in range(n.size):
                    env2 = dict(env)
                    for d in n.dims:
                        env2[d] = i
                    emit(n.children, depth, env2, vec)
            else:
                word = "unroll" if n.kind == "UNROLL" else "for"
                lines.append(pad + f"{word} {n.name} in 0..{n.size}:")
                emit(n.children, depth + 1, env, vec)

    emit(nest.roots, 1, {}, None)
    return "\n".join(lines) + "\n"
