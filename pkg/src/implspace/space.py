"""Objects, choice instances and the decision vector.

A `Backbone` is the kernel seen as sets of opaque object ids. A `Model`
pairs a definition with a backbone and fixes one slot per choice
instance. A `Candidate` is an immutable vector of bit-mask domains over
those slots plus counter intervals. Nothing here knows about
constraints; see `propagate`.
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Optional

from .dsl import ir
from .dsl.printer import pretty_print


class DefinitionError(Exception):
    """The definition and backbone do not fit together."""


class UsageError(Exception):
    """An operation was called with an argument that does not exist."""


class DecodeError(ValueError):
    pass


# -- providers -------------------------------------------------------------

_VAR_RE = re.compile(r"\$([A-Za-z_][A-Za-z_0-9]*)")


def code_pattern(code: str) -> tuple[str, tuple[str, ...]]:
    """`"$d.same_class($e)"` -> (`"{0}.same_class({1})"`, ("d", "e"))."""
    names: list[str] = []

    def sub(m):
        n = m.group(1)
        if n not in names:
            names.append(n)
        return "{%d}" % names.index(n)

    return _VAR_RE.sub(sub, code), tuple(names)


# -- backbone --------------------------------------------------------------

def _sha(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(p if isinstance(p, bytes) else str(p).encode())
        h.update(b"\x00")
    return h.hexdigest()


@dataclass(frozen=True, eq=False)
class Backbone:
    """Kernel objects grouped into the sets a definition quantifies over.

    `objects` lists builder-created ids in creation order; `extra` holds
    ids added later by trigger callbacks. Providers are called as
    ``fn(payload, *objects)``, callbacks as ``fn(backbone, *objects)``
    and must return a backbone that only adds objects and set members.
    """
    objects: tuple[str, ...]
    sets: Mapping[str, tuple[str, ...]]
    param_sets: Mapping[str, Mapping[str, tuple[str, ...]]] = field(default_factory=dict)
    providers: Mapping[str, Callable] = field(default_factory=dict)
    callbacks: Mapping[str, Callable] = field(default_factory=dict)
    payload: Any = None
    extra: tuple[str, ...] = ()
    base_fingerprint: Optional[str] = None
    fingerprint: str = field(init=False)
    keys: dict = field(init=False)

    def __post_init__(self):
        keys = {o: (0, i) for i, o in enumerate(self.objects)}
        for o in self.extra:
            if o in keys:
                raise DefinitionError(f"object {o} created twice")
            keys[o] = (1, o)
        if len(keys) != len(self.objects) + len(self.extra):
            raise DefinitionError("duplicate object ids")
        for name, members in self.sets.items():
            for o in members:
                if o not in keys:
                    raise DefinitionError(f"set {name} holds unknown object {o}")
        payload_fp = self.payload.fingerprint() if hasattr(self.payload, "fingerprint") else repr(self.payload)
        # Member order is canonicalized so that callbacks applied in any
        # order produce the same fingerprint.
        srt = lambda xs: sorted(xs, key=keys.__getitem__)  # noqa: E731
        fp = _sha(json.dumps({
            "objects": list(self.objects),
            "extra": sorted(self.extra),
            "sets": {k: srt(v) for k, v in sorted(self.sets.items())},
            "param_sets": {k: {a: srt(b) for a, b in sorted(v.items())}
                           for k, v in sorted(self.param_sets.items())},
        }, sort_keys=True), payload_fp)
        object.__setattr__(self, "keys", keys)
        object.__setattr__(self, "fingerprint", fp)
        if self.base_fingerprint is None:
            object.__setattr__(self, "base_fingerprint", fp)

    def key(self, obj):
        return self.keys[obj]

    def members(self, ref_name: str, arg: Optional[str] = None) -> tuple[str, ...]:
        if arg is None:
            if ref_name not in self.sets:
                raise DefinitionError(f"backbone has no set {ref_name}")
            return self.sets[ref_name]
        if ref_name not in self.param_sets:
            raise DefinitionError(f"backbone has no parametrized set {ref_name}")
        return self.param_sets[ref_name].get(arg, ())

    def provider(self, code: str) -> tuple[Callable, tuple[str, ...]]:
        pattern, names = code_pattern(code)
        fn = self.providers.get(pattern)
        if fn is None:
            raise DefinitionError(f"no provider registered for {pattern!r}")
        return fn, names

    def call(self, code: str, binding: Mapping[str, str]):
        fn, names = self.provider(code)
        try:
            objs = [binding[n] for n in names]
        except KeyError as e:
            raise DefinitionError(f"{code!r} uses unbound ${e.args[0]}") from None
        return fn(self.payload, *objs)

    def extend(self, *, objects=(), sets=None, param_sets=None, payload=None) -> "Backbone":
        """Copy with new objects and set members appended (never removed)."""
        new_sets = {k: tuple(v) for k, v in self.sets.items()}
        for k, v in (sets or {}).items():
            new_sets[k] = new_sets.get(k, ()) + tuple(o for o in v if o not in new_sets.get(k, ()))
        new_params = {k: dict(v) for k, v in self.param_sets.items()}
        for k, v in (param_sets or {}).items():
            d = new_params.setdefault(k, {})
            for a, ms in v.items():
                d[a] = d.get(a, ()) + tuple(o for o in ms if o not in d.get(a, ()))
        return Backbone(
            objects=self.objects, sets=new_sets, param_sets=new_params,
            providers=self.providers, callbacks=self.callbacks,
            payload=self.payload if payload is None else payload,
            extra=self.extra + tuple(objects), base_fingerprint=self.base_fingerprint,
        )

    def is_extension_of(self, other: "Backbone") -> bool:
        if not set(other.keys) <= set(self.keys):
            return False
        for k, v in other.sets.items():
            if not set(v) <= set(self.sets.get(k, ())):
                return False
        for k, v in other.param_sets.items():
            mine = self.param_sets.get(k, {})
            for a, ms in v.items():
                if not set(ms) <= set(mine.get(a, ())):
                    return False
        return True


# -- model -----------------------------------------------------------------

@dataclass(frozen=True)
class Instance:
    choice: str
    args: tuple[str, ...]
    values: tuple  # enum names or integers, bit i <-> values[i]

    @property
    def full(self) -> int:
        return (1 << len(self.values)) - 1

    def label(self) -> str:
        return f"{self.choice}({', '.join(self.args)})"


def popcount(m: int) -> int:
    return bin(m).count("1")


def bits(m: int):
    i = 0
    while m:
        if m & 1:
            yield i
        m >>= 1
        i += 1


def is_antisymmetric(decl: ir.ChoiceDecl) -> bool:
    return (isinstance(decl.domain, ir.EnumDomain) and bool(decl.domain.antisymmetric)
            and len(decl.params) == 2)


def enumerate_bindings(backbone: Backbone, foralls: Iterable[ir.Forall], start=None):
    """Yield dicts var -> object over the quantifiers, objects pairwise distinct."""
    foralls = tuple(foralls)
    binding = dict(start or {})
    used = set(binding.values())

    def rec(i):
        if i == len(foralls):
            yield dict(binding)
            return
        f = foralls[i]
        if f.set.args:
            members = backbone.members(f.set.name, binding[f.set.args[0]])
        else:
            members = backbone.members(f.set.name)
        for o in sorted(members, key=backbone.key):
            if o in used:
                continue
            binding[f.var] = o
            used.add(o)
            yield from rec(i + 1)
            used.discard(o)
            del binding[f.var]

    yield from rec(0)


class Model:
    """Slot layout of the decision vector for one (definition, backbone)."""

    _cache: dict = {}

    @classmethod
    def compile(cls, defn: ir.SpaceDefinition, backbone: Backbone) -> "Model":
        # Providers are not part of the fingerprint; the cached model keeps
        # them alive, so their identity is a safe key.
        key = (definition_digest(defn), backbone.fingerprint, id(backbone.providers), id(backbone.callbacks))
        m = cls._cache.get(key)
        if m is None:
            if len(cls._cache) > 256:
                cls._cache.clear()
            m = cls._cache[key] = cls(defn, backbone)
        return m

    def __init__(self, defn: ir.SpaceDefinition, backbone: Backbone):
        self.defn = defn
        self.backbone = backbone
        self.defn_digest = definition_digest(defn)
        self.decls = ir.all_choices(defn)
        self.instances: list[Instance] = []
        self.index: dict[tuple, tuple[int, bool]] = {}
        self.ranges: dict[str, tuple[int, int]] = {}
        self.swap: dict[str, Optional[list[int]]] = {}
        self.counters: list[tuple[str, tuple]] = []
        self.counter_index: dict[tuple, int] = {}
        self.engine = None  # filled in by the propagation module
        for name, decl in self.decls.items():
            if decl.domain is None:
                raise DefinitionError(f"choice {name} has an elided body")
            if decl.kind == "counter":
                for b in enumerate_bindings(backbone, decl.params):
                    args = tuple(b[p.var] for p in decl.params)
                    self.counter_index[(name, args)] = len(self.counters)
                    self.counters.append((name, args))
                continue
            self._add_choice(name, decl)

    def _add_choice(self, name, decl):
        start = len(self.instances)
        anti = is_antisymmetric(decl)
        if decl.kind == "enum":
            values = decl.domain.values
            if anti:
                perm = list(range(len(values)))
                for a, b in decl.domain.antisymmetric:
                    ia, ib = values.index(a), values.index(b)
                    perm[ia], perm[ib] = ib, ia
                table = []
                for m in range(1 << len(values)):
                    t = 0
                    for i in bits(m):
                        t |= 1 << perm[i]
                    table.append(t)
                self.swap[name] = table
            else:
                self.swap[name] = None
        else:
            self.swap[name] = None
        for b in enumerate_bindings(self.backbone, decl.params):
            args = tuple(b[p.var] for p in decl.params)
            if anti and self.backbone.key(args[0]) > self.backbone.key(args[1]):
                continue
            if decl.kind == "integer":
                universe = self.backbone.call(decl.domain.universe, b)
                values = tuple(sorted(set(int(v) for v in universe)))
            idx = len(self.instances)
            self.instances.append(Instance(name, args, values))
            self.index[(name, args)] = (idx, False)
            if anti:
                self.index[(name, (args[1], args[0]))] = (idx, True)
        self.ranges[name] = (start, len(self.instances))

    # -- lookups -------------------------------------------------------------
    def lookup(self, choice: str, args) -> tuple[int, bool]:
        try:
            return self.index[(choice, tuple(args))]
        except KeyError:
            raise UsageError(f"no choice instance {choice}({', '.join(args)})") from None

    def swap_mask(self, idx: int, mask: int) -> int:
        return self.swap[self.instances[idx].choice][mask]

    def value_mask(self, idx: int, values, swapped=False) -> int:
        inst = self.instances[idx]
        m = 0
        for v in values:
            try:
                m |= 1 << inst.values.index(v)
            except ValueError:
                raise UsageError(f"{inst.label()} has no value {v!r}") from None
        return self.swap_mask(idx, m) if swapped else m

    def root(self) -> "Candidate":
        return instantiate_model(self)


def definition_digest(defn: ir.SpaceDefinition) -> str:
    return _sha(pretty_print(defn))


# -- candidates ------------------------------------------------------------

class Candidate:
    """Immutable decision vector; build new ones through `restrict`."""

    __slots__ = ("model", "doms", "counters", "fired", "depth", "_digest")

    def __init__(self, model: Model, doms: tuple, counters: tuple = (), fired: frozenset = frozenset(),
                 depth: int = 0):
        self.model = model
        self.doms = doms
        self.counters = counters
        self.fired = fired
        self.depth = depth
        self._digest = None

    # reads
    def lookup(self, choice, args):
        return self.model.lookup(choice, args)

    def mask(self, choice, args) -> int:
        idx, swapped = self.model.lookup(choice, args)
        m = self.doms[idx]
        return self.model.swap_mask(idx, m) if swapped else m

    def domain(self, choice, args=()) -> tuple:
        """Remaining values of an instance, read with the given argument order."""
        args = tuple(args)
        ci = self.model.counter_index.get((choice, args))
        if ci is not None:
            return self.counters[ci]
        idx, _ = self.model.lookup(choice, args)
        vals = self.model.instances[idx].values
        return tuple(vals[i] for i in bits(self.mask(choice, args)))

    def value(self, choice, args=()):
        d = self.domain(choice, args)
        if len(d) != 1:
            raise UsageError(f"{choice}{tuple(args)} is not decided: {d}")
        return d[0]

    def counter_bounds(self, name, args=()) -> tuple[int, int]:
        ci = self.model.counter_index.get((name, tuple(args)))
        if ci is None:
            raise UsageError(f"unknown counter {name}")
        return self.counters[ci]

    @property
    def is_fully_specified(self) -> bool:
        return all(d & (d - 1) == 0 for d in self.doms)

    @property
    def backbone(self) -> Backbone:
        return self.model.backbone

    def digest(self) -> str:
        if self._digest is None:
            h = hashlib.sha256()
            h.update(self.model.defn_digest.encode())
            h.update(self.model.backbone.fingerprint.encode())
            h.update(_encode_ints(self.doms))
            h.update(_encode_ints([x for lh in self.counters for x in lh], signed=True))
            self._digest = h.hexdigest()
        return self._digest

    def with_doms(self, doms, counters=None, depth=None) -> "Candidate":
        return Candidate(self.model, tuple(doms), self.counters if counters is None else tuple(counters),
                         self.fired, self.depth if depth is None else depth)

    def __eq__(self, other):
        return isinstance(other, Candidate) and self.digest() == other.digest()

    def __hash__(self):
        return hash(self.digest())

    def __repr__(self):
        return f"<Candidate depth={self.depth} open={sum(1 for d in self.doms if d & (d - 1))} {self.digest()[:12]}>"


def instantiate_model(model: Model) -> Candidate:
    doms = tuple(inst.full for inst in model.instances)
    return Candidate(model, doms, model_engine(model).counter_intervals(doms))


def model_engine(model: Model):
    if model.engine is None:
        from .propagate import Engine
        model.engine = Engine(model)
    return model.engine


def instantiate_vector(defn: ir.SpaceDefinition, backbone: Backbone) -> Candidate:
    """Full-domain candidate with one slot per choice instance; no propagation."""
    return instantiate_model(Model.compile(defn, backbone))


def restrict(c: Candidate, instance: tuple, subset) -> Optional[Candidate]:
    """Intersect one domain; returns None when it becomes empty."""
    choice, args = instance
    args = tuple(args)
    if (choice, args) in c.model.counter_index:
        raise UsageError(f"counter {choice} cannot be restricted directly")
    idx, swapped = c.model.lookup(choice, args)
    mask = c.model.value_mask(idx, subset, swapped)
    return restrict_index(c, idx, mask)


def restrict_index(c: Candidate, idx: int, mask: int) -> Optional[Candidate]:
    old = c.doms[idx]
    new = old & mask
    if new == 0:
        return None
    if new == old:
        return c
    doms = list(c.doms)
    doms[idx] = new
    return Candidate(c.model, tuple(doms), c.counters, c.fired, c.depth)


def open_choices(c: Candidate) -> list[tuple[tuple, tuple]]:
    out = []
    for idx, d in enumerate(c.doms):
        if d & (d - 1):
            inst = c.model.instances[idx]
            out.append(((inst.choice, inst.args), tuple(inst.values[i] for i in bits(d))))
    return out


def dump(c: Candidate) -> str:
    lines = []
    for inst, d in zip(c.model.instances, c.doms):
        vals = ", ".join(str(inst.values[i]) for i in bits(d))
        lines.append(f"{inst.label()} = {{{vals}}}")
    for (name, args), (lo, hi) in zip(c.model.counters, c.counters):
        lines.append(f"{name}({', '.join(args)}) in [{lo}, {hi}]")
    return "\n".join(lines) + ("\n" if lines else "")


# -- binary format ---------------------------------------------------------

MAGIC = b"ISPC"
VERSION = 1


def _varint(n: int, out: bytearray):
    if n < 0:
        raise ValueError("negative varint")
    while True:
        b = n & 0x7F
        n >>= 7
        if n:
            out.append(b | 0x80)
        else:
            out.append(b)
            return


def _encode_ints(xs, signed=False) -> bytes:
    out = bytearray()
    _varint(len(xs), out)
    for x in xs:
        _varint((x << 1) ^ (x >> 63) if signed else x, out)
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n) -> bytes:
        if self.pos + n > len(self.data):
            raise DecodeError("truncated candidate")
        b = self.data[self.pos:self.pos + n]
        self.pos += n
        return b

    def varint(self) -> int:
        shift = n = 0
        while True:
            b = self.take(1)[0]
            n |= (b & 0x7F) << shift
            if not b & 0x80:
                return n
            shift += 7
            if shift > 700:
                raise DecodeError("varint too long")

    def zigzag(self) -> int:
        n = self.varint()
        return (n >> 1) ^ -(n & 1)

    def string(self) -> str:
        try:
            return self.take(self.varint()).decode("utf-8")
        except UnicodeDecodeError as e:
            raise DecodeError(str(e)) from None


def _put_str(s: str, out: bytearray):
    b = s.encode("utf-8")
    _varint(len(b), out)
    out += b


def serialize(c: Candidate) -> bytes:
    out = bytearray(MAGIC)
    out.append(VERSION)
    out += bytes.fromhex(c.model.defn_digest)
    out += bytes.fromhex(c.model.backbone.base_fingerprint)
    fired = sorted(c.fired)
    _varint(len(fired), out)
    for name, objs in fired:
        _put_str(name, out)
        _varint(len(objs), out)
        for o in objs:
            _put_str(o, out)
    out += _encode_ints(c.doms)
    out += _encode_ints([x for lh in c.counters for x in lh], signed=True)
    _varint(c.depth, out)
    return bytes(out)


def deserialize(data: bytes, base: Model) -> Candidate:
    """Decode against the root model the candidate descends from."""
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise DecodeError("bad magic")
    if r.take(1)[0] != VERSION:
        raise DecodeError("unsupported version")
    if r.take(32).hex() != base.defn_digest:
        raise DecodeError("definition digest mismatch")
    if r.take(32).hex() != base.backbone.base_fingerprint:
        raise DecodeError("backbone digest mismatch")
    fired = []
    for _ in range(r.varint()):
        name = r.string()
        fired.append((name, tuple(r.string() for _ in range(r.varint()))))
    model = base
    if fired:
        from .propagate import replay_triggers
        model = replay_triggers(base, fired)
    n = r.varint()
    doms = tuple(r.varint() for _ in range(n))
    if n != len(model.instances):
        raise DecodeError("domain count does not match the model")
    for d, inst in zip(doms, model.instances):
        if d & ~inst.full:
            raise DecodeError(f"domain of {inst.label()} out of range")
    m = r.varint()
    flat = [r.zigzag() for _ in range(m)]
    if m != 2 * len(model.counters):
        raise DecodeError("counter count does not match the model")
    counters = tuple(zip(flat[0::2], flat[1::2]))
    depth = r.varint()
    if r.pos != len(data):
        raise DecodeError("trailing bytes")
    return Candidate(model, doms, counters, frozenset(fired), depth)
