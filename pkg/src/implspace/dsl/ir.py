"""Intermediate representation of a space definition.

A definition is a flat list of declarations. Every node is a frozen
dataclass so definitions can be compared structurally (the round-trip
tests rely on ``==``) and hashed into digests.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union


@dataclass(frozen=True)
class SetRef:
    name: str
    args: tuple[str, ...] = ()  # quantified variable names, without sigil


@dataclass(frozen=True)
class Forall:
    var: str
    set: SetRef


@dataclass(frozen=True)
class ChoiceRef:
    name: str
    args: tuple[str, ...] = ()


# -- atoms -----------------------------------------------------------------

@dataclass(frozen=True)
class BoolAtom:
    value: bool


@dataclass(frozen=True)
class CodeAtom:
    """Opaque host snippet, resolved through the provider registry."""
    code: str
    negated: bool = False


@dataclass(frozen=True)
class IsAtom:
    ref: ChoiceRef
    values: tuple[str, ...]
    negated: bool = False


@dataclass(frozen=True)
class IntLit:
    value: int


Operand = Union[ChoiceRef, CodeAtom, IntLit]


@dataclass(frozen=True)
class CmpAtom:
    lhs: ChoiceRef
    op: str  # one of == != < <= > >=
    rhs: Operand


@dataclass(frozen=True)
class BareRefAtom:
    """A choice reference used as a condition with no value test.

    Appears in printed listings with elided text; parses, but does not
    validate.
    """
    ref: ChoiceRef


Atom = Union[BoolAtom, CodeAtom, IsAtom, CmpAtom, BareRefAtom]

CMP_OPS = ("==", "!=", "<=", ">=", "<", ">")


# -- declarations ----------------------------------------------------------

@dataclass(frozen=True)
class SetDecl:
    name: str
    param: Optional[Forall] = None
    superset: Optional[str] = None
    keys: tuple[tuple[str, Optional[str]], ...] = ()  # None value = elided
    elided: bool = False
    inline: bool = False  # `set X: ...` with no body and no `end`
    line: int = field(default=0, compare=False, repr=False)


@dataclass(frozen=True)
class EnumDomain:
    values: tuple[str, ...]
    antisymmetric: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class IntegerDomain:
    universe: str  # provider code


@dataclass(frozen=True)
class CounterDomain:
    op: str  # "sum" or "mul"
    foralls: tuple[Forall, ...]
    term: Union[ChoiceRef, CodeAtom, IntLit]
    guard: tuple[Atom, ...]  # conjunction; empty means always counted
    colon: bool = False  # `when:` as printed in some listings


Domain = Union[EnumDomain, IntegerDomain, CounterDomain]


@dataclass(frozen=True)
class ChoiceDecl:
    name: str
    kind: str  # "enum", "integer" or "counter"
    params: tuple[Forall, ...]
    domain: Optional[Domain]  # None when the body is elided
    elided: bool = False
    inline: bool = False
    line: int = field(default=0, compare=False, repr=False)


@dataclass(frozen=True)
class ConstraintDecl:
    foralls: tuple[Forall, ...]
    body: tuple[Atom, ...]  # disjunction
    line: int = field(default=0, compare=False, repr=False)


@dataclass(frozen=True)
class QuotientDecl:
    name: str
    param: Optional[Forall]
    var: str
    base: SetRef
    flag: Optional[str]
    member: tuple[Atom, ...]  # conjunction
    equiv_choice: Optional[str]
    equiv_value: Optional[str]
    elided: bool = False
    of_in: bool = True  # `of $x in Set` vs the `of $x Set` printed form
    line: int = field(default=0, compare=False, repr=False)


@dataclass(frozen=True)
class TriggerDecl:
    name: str
    foralls: tuple[Forall, ...]
    when: tuple[Atom, ...]  # conjunction
    callback: str
    line: int = field(default=0, compare=False, repr=False)


Decl = Union[SetDecl, ChoiceDecl, ConstraintDecl, QuotientDecl, TriggerDecl]


@dataclass(frozen=True)
class SpaceDefinition:
    decls: tuple[Decl, ...] = ()

    def _of(self, kind):
        return [d for d in self.decls if isinstance(d, kind)]

    @property
    def sets(self) -> dict[str, SetDecl]:
        return {d.name: d for d in self._of(SetDecl)}

    @property
    def choices(self) -> dict[str, ChoiceDecl]:
        return {d.name: d for d in self._of(ChoiceDecl)}

    @property
    def constraints(self) -> list[ConstraintDecl]:
        return self._of(ConstraintDecl)

    @property
    def quotients(self) -> list[QuotientDecl]:
        return self._of(QuotientDecl)

    @property
    def triggers(self) -> list[TriggerDecl]:
        return self._of(TriggerDecl)

    def __add__(self, other: "SpaceDefinition") -> "SpaceDefinition":
        return SpaceDefinition(self.decls + other.decls)

    def choice_refs(self):
        """Yield every ChoiceRef used in a condition or term."""
        for d in self.decls:
            atoms: tuple = ()
            if isinstance(d, ConstraintDecl):
                atoms = d.body
            elif isinstance(d, QuotientDecl):
                atoms = d.member
            elif isinstance(d, TriggerDecl):
                atoms = d.when
            elif isinstance(d, ChoiceDecl) and isinstance(d.domain, CounterDomain):
                atoms = d.domain.guard
                if isinstance(d.domain.term, ChoiceRef):
                    yield d.domain.term
            for a in atoms:
                yield from atom_refs(a)


def atom_refs(a: Atom):
    if isinstance(a, (IsAtom, BareRefAtom)):
        yield a.ref
    elif isinstance(a, CmpAtom):
        yield a.lhs
        if isinstance(a.rhs, ChoiceRef):
            yield a.rhs


FLAG_VALUES = ("FALSE", "TRUE")


def flag_choice(q: QuotientDecl) -> ChoiceDecl:
    """The representative-flag choice a quotient declaration introduces."""
    params = ((q.param,) if q.param else ()) + (Forall(q.var, q.base),)
    return ChoiceDecl(q.flag, "enum", params, EnumDomain(FLAG_VALUES), line=q.line)


def all_choices(defn: SpaceDefinition) -> dict[str, ChoiceDecl]:
    """Declared choices plus the flag choices of quotients, in declaration order."""
    out: dict[str, ChoiceDecl] = {}
    for d in defn.decls:
        if isinstance(d, ChoiceDecl):
            out.setdefault(d.name, d)
        elif isinstance(d, QuotientDecl) and d.flag is not None:
            out.setdefault(d.flag, flag_choice(d))
    return out


def to_data(node):
    """Plain JSON-ready form of an IR node, tagged with class names."""
    if isinstance(node, tuple):
        return [to_data(x) for x in node]
    if hasattr(node, "__dataclass_fields__"):
        out = {"_": type(node).__name__}
        for name, f in node.__dataclass_fields__.items():
            if f.compare:
                out[name] = to_data(getattr(node, name))
        return out
    return node
