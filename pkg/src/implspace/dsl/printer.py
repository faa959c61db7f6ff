"""Pretty-printer; `parse(pretty_print(d)) == d` for every definition."""
from __future__ import annotations

import json

from . import ir


def _str(s: str) -> str:
    return json.dumps(s)


def _setref(r: ir.SetRef) -> str:
    if r.args:
        return f"{r.name}({', '.join('$' + a for a in r.args)})"
    return r.name


def _binding(f: ir.Forall) -> str:
    return f"${f.var} in {_setref(f.set)}"


def _ref(r: ir.ChoiceRef) -> str:
    return f"{r.name}({', '.join('$' + a for a in r.args)})"


def _operand(o) -> str:
    if isinstance(o, ir.ChoiceRef):
        return _ref(o)
    if isinstance(o, ir.IntLit):
        return str(o.value)
    return _atom(o)


def _atom(a) -> str:
    if isinstance(a, ir.BoolAtom):
        return "true" if a.value else "false"
    if isinstance(a, ir.CodeAtom):
        return ("!" if a.negated else "") + _str(a.code)
    if isinstance(a, ir.IsAtom):
        neg = " not" if a.negated else ""
        return f"{_ref(a.ref)} is{neg} {' | '.join(a.values)}"
    if isinstance(a, ir.CmpAtom):
        return f"{_ref(a.lhs)} {a.op} {_operand(a.rhs)}"
    if isinstance(a, ir.BareRefAtom):
        return _ref(a.ref)
    raise TypeError(a)


def _foralls(foralls, indent) -> tuple[list[str], str]:
    lines = []
    for f in foralls:
        lines.append(f"{indent}forall {_binding(f)}:")
        indent += "  "
    return lines, indent


def _set(d: ir.SetDecl) -> list[str]:
    head = f"set {d.name}"
    if d.param:
        head += f"({_binding(d.param)})"
    if d.superset:
        head += f" subsetof {d.superset}"
    if d.inline:
        return [head + ": ..."]
    lines = [head + ":"]
    for k, v in d.keys:
        lines.append(f"  {k} = {'...' if v is None else _str(v)}")
    if d.elided:
        lines.append("  ...")
    return lines + ["end"]


def _choice(d: ir.ChoiceDecl) -> list[str]:
    head = f"choice {d.kind} {d.name}({', '.join(_binding(p) for p in d.params)}):"
    if d.inline:
        return [head + " ..."]
    lines = [head]
    dom = d.domain
    if isinstance(dom, ir.EnumDomain):
        lines += [f"  value {v}:" for v in dom.values]
        if dom.antisymmetric:
            lines.append("  antisymmetric:")
            lines += [f"    {a} -> {b}" for a, b in dom.antisymmetric]
    elif isinstance(dom, ir.IntegerDomain):
        lines.append("  " + _str(dom.universe))
    elif isinstance(dom, ir.CounterDomain):
        fl, ind = _foralls(dom.foralls, "  ")
        lines += fl
        s = f"{ind}{dom.op} {_operand(dom.term)}"
        if dom.guard:
            s += " when" + (":" if dom.colon else "") + " " + " && ".join(_atom(a) for a in dom.guard)
        lines.append(s)
    if d.elided:
        lines.append("  ...")
    return lines + ["end"]


def _require(d: ir.ConstraintDecl) -> list[str]:
    if not d.foralls:
        return ["require " + " || ".join(_atom(a) for a in d.body)]
    fl, ind = _foralls(d.foralls, "  ")
    fl[0] = "require " + fl[0].strip()
    return fl + [ind + " || ".join(_atom(a) for a in d.body)]


def _quotient(d: ir.QuotientDecl) -> list[str]:
    head = f"quotient {d.name}"
    if d.param:
        head += f"({_binding(d.param)})"
    head += f" of ${d.var} {'in ' if d.of_in else ''}{_setref(d.base)}:"
    lines = [head]
    if d.flag is not None:
        cond = " && ".join(_atom(a) for a in d.member)
        lines.append(f"  {d.flag} = {cond} / {d.equiv_choice} is {d.equiv_value}")
    if d.elided:
        lines.append("  ...")
    return lines + ["end"]


def _trigger(d: ir.TriggerDecl) -> list[str]:
    lines = [f"trigger {d.name}:"]
    fl, ind = _foralls(d.foralls, "  ")
    lines += fl
    lines.append(ind + "when " + " && ".join(_atom(a) for a in d.when))
    lines.append(ind + "call " + _str(d.callback))
    return lines + ["end"]


_PRINTERS = {
    ir.SetDecl: _set,
    ir.ChoiceDecl: _choice,
    ir.ConstraintDecl: _require,
    ir.QuotientDecl: _quotient,
    ir.TriggerDecl: _trigger,
}


def pretty_print(defn: ir.SpaceDefinition) -> str:
    blocks = ["\n".join(_PRINTERS[type(d)](d)) for d in defn.decls]
    return "\n\n".join(blocks) + ("\n" if blocks else "")
