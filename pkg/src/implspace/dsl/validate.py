"""Static checks on a parsed definition.

Each problem becomes one Diagnostic with a stable code. The position is
the line of the offending declaration (0 for IR built in code).
"""
from __future__ import annotations

from . import ir
from .parser import Diagnostic

CODES = (
    "UNKNOWN_SET", "UNKNOWN_CHOICE", "UNKNOWN_VALUE", "ARITY_MISMATCH",
    "SET_TYPE", "SET_CYCLE", "DUPLICATE", "UNBOUND_VAR", "BAD_ANTISYMMETRY",
    "QUOTIENT_EQUIV", "INCOMPLETE_CONDITION", "INCOMPLETE_DECL", "TYPE_MISMATCH",
)


class _Checker:
    def __init__(self, defn: ir.SpaceDefinition):
        self.defn = defn
        self.sets = defn.sets
        self.choices = ir.all_choices(defn)
        self.out: list[Diagnostic] = []

    def report(self, decl, code, msg):
        self.out.append(Diagnostic(getattr(decl, "line", 0), 0, code, msg))

    # -- sets ----------------------------------------------------------------
    def ancestors(self, name):
        """Names reachable through `subsetof`, including `name`; stops on cycles."""
        seen = [name]
        cur = self.sets.get(name)
        while cur is not None and cur.superset is not None and cur.superset not in seen:
            seen.append(cur.superset)
            cur = self.sets.get(cur.superset)
        return seen

    def is_subset(self, sub, sup) -> bool:
        return sup in self.ancestors(sub)

    def check_sets(self):
        for d in self.sets.values():
            if d.superset is not None and d.superset not in self.sets:
                self.report(d, "UNKNOWN_SET", f"set {d.name}: unknown superset {d.superset}")
            if d.param is not None:
                self.check_setref(d, d.param.set, {})
        reported = set()
        for name, d in self.sets.items():
            chain = [name]
            cur = d
            while cur is not None and cur.superset is not None:
                if cur.superset in chain:
                    cycle = frozenset(chain[chain.index(cur.superset):])
                    if cycle not in reported:
                        reported.add(cycle)
                        self.report(d, "SET_CYCLE", "subset cycle through " + " < ".join(sorted(cycle)))
                    break
                chain.append(cur.superset)
                cur = self.sets.get(cur.superset)

    def check_setref(self, decl, ref: ir.SetRef, scope: dict[str, str]):
        sd = self.sets.get(ref.name)
        if sd is None:
            self.report(decl, "UNKNOWN_SET", f"unknown set {ref.name}")
            return
        want = 1 if sd.param is not None else 0
        if len(ref.args) != want:
            self.report(decl, "ARITY_MISMATCH", f"set {ref.name} takes {want} argument(s)")
            return
        for a in ref.args:
            if a not in scope:
                self.report(decl, "UNBOUND_VAR", f"${a} is not bound")
            elif not self.is_subset(scope[a], sd.param.set.name):
                self.report(decl, "SET_TYPE", f"${a} in {scope[a]} is not in {sd.param.set.name}")

    def bind(self, decl, foralls, scope):
        scope = dict(scope)
        for f in foralls:
            if f.var in scope:
                self.report(decl, "DUPLICATE", f"${f.var} bound twice")
            self.check_setref(decl, f.set, scope)
            scope[f.var] = f.set.name
        return scope

    # -- choices and conditions ---------------------------------------------
    def choice_of(self, decl, ref: ir.ChoiceRef, scope):
        c = self.choices.get(ref.name)
        if c is None:
            self.report(decl, "UNKNOWN_CHOICE", f"unknown choice {ref.name}")
            return None
        if len(ref.args) != len(c.params):
            self.report(decl, "ARITY_MISMATCH",
                        f"{ref.name} takes {len(c.params)} argument(s), got {len(ref.args)}")
            return c
        for a, p in zip(ref.args, c.params):
            if a not in scope:
                self.report(decl, "UNBOUND_VAR", f"${a} is not bound")
            elif p.set.name in self.sets and not self.is_subset(scope[a], p.set.name):
                self.report(decl, "SET_TYPE", f"{ref.name}: ${a} in {scope[a]} is not in {p.set.name}")
        return c

    def check_values(self, decl, c: ir.ChoiceDecl, values):
        if c.kind != "enum":
            self.report(decl, "TYPE_MISMATCH", f"{c.name} is not an enum choice")
            return
        if c.domain is None:
            return  # elided body, values cannot be checked
        for v in values:
            if v not in c.domain.values:
                self.report(decl, "UNKNOWN_VALUE", f"{c.name} has no value {v}")

    def check_atom(self, decl, a, scope):
        if isinstance(a, ir.IsAtom):
            c = self.choice_of(decl, a.ref, scope)
            if c is not None:
                self.check_values(decl, c, a.values)
        elif isinstance(a, ir.CmpAtom):
            c = self.choice_of(decl, a.lhs, scope)
            rhs = None
            if isinstance(a.rhs, ir.ChoiceRef):
                rhs = self.choice_of(decl, a.rhs, scope)
            if c is not None and a.op not in ("==", "!=") and c.kind == "enum":
                self.report(decl, "TYPE_MISMATCH", f"ordering comparison on enum choice {c.name}")
            if c is not None and rhs is not None and (c.kind == "enum") != (rhs.kind == "enum"):
                self.report(decl, "TYPE_MISMATCH", f"cannot compare {c.name} with {rhs.name}")
        elif isinstance(a, ir.BareRefAtom):
            self.choice_of(decl, a.ref, scope)
            self.report(decl, "INCOMPLETE_CONDITION",
                        f"{a.ref.name}(...) is used as a condition without a value test")

    def check_choices(self):
        for d in self.defn.decls:
            if not isinstance(d, ir.ChoiceDecl):
                continue
            scope = self.bind(d, d.params, {})
            dom = d.domain
            if dom is None:
                self.report(d, "INCOMPLETE_DECL", f"choice {d.name} has an elided body")
                continue
            if isinstance(dom, ir.EnumDomain):
                if len(set(dom.values)) != len(dom.values):
                    self.report(d, "DUPLICATE", f"{d.name}: repeated value")
                self.check_antisymmetry(d, dom)
            elif isinstance(dom, ir.CounterDomain):
                inner = self.bind(d, dom.foralls, scope)
                if isinstance(dom.term, ir.ChoiceRef):
                    c = self.choice_of(d, dom.term, inner)
                    if c is not None and c.kind == "enum":
                        self.report(d, "TYPE_MISMATCH", f"counter term {c.name} is an enum")
                for a in dom.guard:
                    self.check_atom(d, a, inner)

    def check_antisymmetry(self, d, dom: ir.EnumDomain):
        if not dom.antisymmetric:
            return
        if len(d.params) != 2 or d.params[0].set != d.params[1].set:
            self.report(d, "BAD_ANTISYMMETRY", f"{d.name}: needs two arguments over one set")
        seen = set()
        for a, b in dom.antisymmetric:
            for v in (a, b):
                if v not in dom.values:
                    self.report(d, "UNKNOWN_VALUE", f"{d.name} has no value {v}")
                if v in seen or a == b:
                    self.report(d, "BAD_ANTISYMMETRY", f"{d.name}: {v} swapped more than once")
                seen.add(v)

    # -- other declarations ---------------------------------------------------
    def check_constraints(self):
        for d in self.defn.constraints:
            scope = self.bind(d, d.foralls, {})
            for a in d.body:
                self.check_atom(d, a, scope)

    def check_quotients(self):
        for q in self.defn.quotients:
            scope = self.bind(q, ((q.param,) if q.param else ()) + (ir.Forall(q.var, q.base),), {})
            if q.flag is None:
                self.report(q, "INCOMPLETE_DECL", f"quotient {q.name} has no flag definition")
                continue
            if q.flag in self.defn.choices:
                self.report(q, "DUPLICATE", f"flag {q.flag} clashes with a declared choice")
            for a in q.member:
                self.check_atom(q, a, scope)
            eq = self.choices.get(q.equiv_choice)
            if eq is None:
                self.report(q, "UNKNOWN_CHOICE", f"unknown choice {q.equiv_choice}")
            elif eq.kind != "enum" or len(eq.params) != 2:
                self.report(q, "QUOTIENT_EQUIV", f"{q.equiv_choice} must be a binary enum choice")
            else:
                self.check_values(q, eq, (q.equiv_value,))
                if not all(self.is_subset(q.base.name, p.set.name) for p in eq.params):
                    self.report(q, "SET_TYPE", f"{q.equiv_choice} does not range over {q.base.name}")

    def check_triggers(self):
        for t in self.defn.triggers:
            scope = self.bind(t, t.foralls, {})
            for a in t.when:
                self.check_atom(t, a, scope)

    def run(self):
        self.check_sets()
        self.check_choices()
        self.check_constraints()
        self.check_quotients()
        self.check_triggers()
        return self.out


def validate(defn: ir.SpaceDefinition) -> list[Diagnostic]:
    return _Checker(defn).run()
