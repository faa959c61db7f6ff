"""Constraint propagation over candidates.

The definition is interpreted, not compiled to source. For each model
the engine instantiates every constraint over its quantifier bindings,
folds provider constants, and turns what is left into clauses over
unary and binary literals on choice slots:

* clauses over the same slots are merged into one table propagator that
  enforces arc consistency on their conjunction (memoized per domain
  tuple and shared between structurally identical groups);
* groups too large to tabulate fall back to per-clause arc consistency;
* counters, quotient flags and triggers get dedicated propagators.

All propagators are monotone, so the fixpoint does not depend on the
order in which the FIFO worklist runs them.
"""
from __future__ import annotations

import itertools
import operator
from collections import deque
from typing import Optional

from .dsl import ir
from .space import (Candidate, DefinitionError, Model, UsageError, bits, enumerate_bindings,
                    model_engine, restrict)

TABLE_LIMIT = 4096

_CMP = {
    "==": operator.eq, "!=": operator.ne, "<": operator.lt,
    "<=": operator.le, ">": operator.gt, ">=": operator.ge,
}

FALSE_BIT, TRUE_BIT = 1, 2


def _low(m):
    return (m & -m).bit_length() - 1


def _high(m):
    return m.bit_length() - 1


# -- literals ----------------------------------------------------------------
# ("U", idx, mask)           slot idx takes a value in mask
# ("B", i, j, rows)          (a, b) allowed iff rows[a] has bit b, with i < j
# ("C", counter, op, const)  counter bound


class _Table:
    """Allowed tuples for one group shape, with a shared result memo."""

    __slots__ = ("allowed", "memo")

    def __init__(self, fulls, clauses):
        choices = [[1 << b for b in bits(f)] for f in fulls]
        allowed = []
        for t in itertools.product(*choices):
            if all(_clause_holds(cl, t) for cl in clauses):
                allowed.append(t)
        self.allowed = allowed
        self.memo = {}


def _clause_holds(clause, t):
    for lit in clause:
        if lit[0] == "U":
            if t[lit[1]] & lit[2]:
                return True
        else:
            if lit[3][_low(t[lit[1]])] & t[lit[2]]:
                return True
    return False


_TABLES: dict = {}


class TableProp:
    __slots__ = ("vars", "table", "cause")

    def __init__(self, vars_, table, cause):
        self.vars = vars_
        self.table = table
        self.cause = cause

    def run(self, doms, counters):
        v = self.vars
        cur = tuple([doms[i] for i in v])
        memo = self.table.memo
        r = memo.get(cur)
        if r is None:
            k = len(cur)
            acc = [0] * k
            for t in self.table.allowed:
                for x in range(k):
                    if not t[x] & cur[x]:
                        break
                else:
                    for x in range(k):
                        acc[x] |= t[x]
            r = memo[cur] = tuple(acc) if acc[0] else False
        if r is False:
            return None
        return [(v[x], r[x]) for x in range(len(v)) if r[x] != cur[x]]


class ClauseProp:
    """Arc consistency for one disjunction of unary/binary literals."""

    __slots__ = ("lits", "vars", "cause")

    def __init__(self, lits, cause):
        self.lits = lits
        vs = set()
        for lit in lits:
            vs.add(lit[1])
            if lit[0] == "B":
                vs.add(lit[2])
        self.vars = tuple(sorted(vs))
        self.cause = cause

    def run(self, doms, counters):
        possible = []
        for lit in self.lits:
            if lit[0] == "U":
                d = doms[lit[1]]
                if not d & lit[2]:
                    continue
                if not d & ~lit[2]:
                    return []
            else:
                di, dj, rows = doms[lit[1]], doms[lit[2]], lit[3]
                any_ok, all_ok = False, True
                for a in bits(di):
                    r = rows[a] & dj
                    if r:
                        any_ok = True
                    if r != dj:
                        all_ok = False
                if not any_ok:
                    continue
                if all_ok:
                    return []
            possible.append(lit)
        if not possible:
            return None
        common = None
        for lit in possible:
            s = {lit[1]} if lit[0] == "U" else {lit[1], lit[2]}
            common = s if common is None else common & s
        out = []
        for x in sorted(common or ()):
            sup = 0
            for lit in possible:
                if lit[0] == "U":
                    sup |= doms[x] & lit[2]
                elif lit[1] == x:
                    dj, rows = doms[lit[2]], lit[3]
                    for a in bits(doms[x]):
                        if rows[a] & dj:
                            sup |= 1 << a
                else:
                    rows = lit[3]
                    for a in bits(doms[lit[1]]):
                        sup |= rows[a]
                    sup &= doms[x]
            out.append((x, sup))
        return out


class CounterProp:
    """Interval of a guarded sum/product and the bounds required on it."""

    __slots__ = ("ci", "mul", "terms", "lo_bound", "hi_bound", "values", "vars", "cause")

    def __init__(self, ci, mul, terms, values, cause):
        self.ci = ci
        self.mul = mul
        self.terms = terms  # (const or None, var idx or None, guard lits)
        self.values = values  # slot -> values tuple, for integer term slots
        self.lo_bound = None
        self.hi_bound = None
        self.cause = cause
        vs = set()
        for _, var, guard in terms:
            if var is not None:
                vs.add(var)
            vs.update(g[0] for g in guard)
        self.vars = tuple(sorted(vs))

    def _term_range(self, doms, const, var):
        if var is None:
            return const, const
        d = doms[var]
        vals = self.values[var]
        return vals[_low(d)], vals[_high(d)]

    def _status(self, doms, guard):
        """1 forced in, 0 open, -1 forced out."""
        forced = True
        for idx, mask in guard:
            d = doms[idx]
            if not d & mask:
                return -1
            if d & ~mask:
                forced = False
        return 1 if forced else 0

    def interval(self, doms):
        mul = self.mul
        lo = hi = 1 if mul else 0
        for const, var, guard in self.terms:
            st = self._status(doms, guard)
            if st < 0:
                continue
            tlo, thi = self._term_range(doms, const, var)
            if mul:
                if st > 0:
                    lo *= tlo
                hi *= max(1, thi)
            else:
                if st > 0:
                    lo += tlo
                hi += thi
        return lo, hi

    def run(self, doms, counters):
        lo, hi = self.interval(doms)
        if lo > hi:
            return None
        counters[self.ci] = (lo, hi)
        U, L = self.hi_bound, self.lo_bound
        if U is not None and lo > U:
            return None
        if L is not None and hi < L:
            return None
        out = []
        if U is None and L is None:
            return out
        mul = self.mul
        for const, var, guard in self.terms:
            st = self._status(doms, guard)
            if st < 0:
                continue
            tlo, thi = self._term_range(doms, const, var)
            if st == 0:
                if U is not None and (lo * tlo if mul else lo + tlo) > U:
                    pending = [(i, m) for i, m in guard if doms[i] & ~m]
                    if len(pending) == 1:
                        i, m = pending[0]
                        out.append((i, ~m))
                if L is not None and (hi // max(1, thi) if mul else hi - thi) < L:
                    out.extend(guard)
            elif var is not None:
                vals = self.values[var]
                d = doms[var]
                keep = 0
                lo_o = lo // tlo if mul else lo - tlo
                hi_o = hi // max(1, thi) if mul else hi - thi
                for b in bits(d):
                    v = vals[b]
                    if U is not None and (lo_o * v if mul else lo_o + v) > U:
                        continue
                    if L is not None and (hi_o * v if mul else hi_o + v) < L:
                        continue
                    keep |= 1 << b
                if keep != d:
                    out.append((var, keep))
        return out


class QuotientProp:
    """Representative flags: one TRUE per class of equivalent members.

    A member's flag is TRUE iff it satisfies the membership condition and
    no member with a smaller object key is equivalent to it.
    """

    __slots__ = ("flags", "member", "equiv", "vars", "cause")

    def __init__(self, flags, member, equiv, cause):
        self.flags = flags  # per member: flag slot
        self.member = member  # per member: tuple of unary lits, or None if never a member
        self.equiv = equiv  # per member k: list over j < k of (slot, mask) or None
        self.cause = cause
        vs = set(flags)
        for m in member:
            if m:
                vs.update(i for i, _ in m)
        for row in equiv:
            vs.update(e[0] for e in row if e is not None)
        self.vars = tuple(sorted(vs))

    @staticmethod
    def _poss(doms, lits):
        if lits is None:
            return False
        return all(doms[i] & m for i, m in lits)

    @staticmethod
    def _ent(doms, lits):
        if lits is None:
            return False
        return all(not doms[i] & ~m for i, m in lits)

    def run(self, doms, counters):
        out = []
        poss, ent = self._poss, self._ent
        for k, f in enumerate(self.flags):
            fd = doms[f]
            mk = self.member[k]
            mposs = poss(doms, mk)
            if not mposs:
                if fd & FALSE_BIT != fd:
                    out.append((f, FALSE_BIT))
                continue
            row = self.equiv[k]
            ment = ent(doms, mk)
            if fd == TRUE_BIT:
                out.extend(mk)
            smaller_poss = []
            shadowed = False
            for j in range(k):
                e = row[j]
                if e is None or not poss(doms, self.member[j]):
                    continue
                ei, em = e
                if not doms[ei] & em:
                    continue
                if ent(doms, self.member[j]) and not doms[ei] & ~em:
                    shadowed = True
                smaller_poss.append(j)
                if fd == TRUE_BIT:
                    # a smaller equivalent member would be the representative
                    if ent(doms, self.member[j]):
                        out.append((ei, ~em))
                    elif not doms[ei] & ~em and len(self.member[j]) == 1:
                        i, m = self.member[j][0]
                        out.append((i, ~m))
            if shadowed:
                out.append((f, FALSE_BIT))
            elif ment and not smaller_poss:
                out.append((f, TRUE_BIT))
            elif ment and fd == FALSE_BIT:
                if len(smaller_poss) == 1:
                    j = smaller_poss[0]
                    out.extend(self.member[j])
                    out.append(row[j])
        return out


class TriggerInst:
    __slots__ = ("key", "lits", "callback", "objs")

    def __init__(self, key, lits, callback, objs):
        self.key = key
        self.lits = lits
        self.callback = callback
        self.objs = objs

    def entailed(self, doms):
        return all(not doms[i] & ~m for i, m in self.lits)


# -- engine ----------------------------------------------------------------

class Engine:
    def __init__(self, model: Model):
        self.model = model
        self.backbone = model.backbone
        n = len(model.instances)
        self.full = [inst.full for inst in model.instances]
        self.props: list = []
        self.root_unary: dict[int, int] = {}
        self.inconsistent: Optional[str] = None
        self.clauses: list[tuple] = []  # every clause, for post-hoc checking
        self.counter_props: list[CounterProp] = []
        self.quotients: list[QuotientProp] = []
        self.triggers: list[TriggerInst] = []
        self._masks: dict = {}
        self._compile_counters()
        self._compile_constraints()
        self._compile_quotients()
        self._compile_triggers()
        self.watch = [[] for _ in range(n)]
        for p, prop in enumerate(self.props):
            for v in prop.vars:
                self.watch[v].append(p)

    # -- compilation -------------------------------------------------------
    def _ref(self, ref: ir.ChoiceRef, binding):
        try:
            args = tuple(binding[a] for a in ref.args)
        except KeyError as e:
            raise DefinitionError(f"${e.args[0]} is not bound in {ref.name}") from None
        return ref.name, args

    def _const(self, operand, binding):
        if isinstance(operand, ir.IntLit):
            return operand.value
        if isinstance(operand, ir.CodeAtom):
            v = self.backbone.call(operand.code, binding)
            return (not v) if operand.negated else v
        raise DefinitionError(f"not a constant: {operand}")

    def _slot(self, name, args):
        try:
            return self.model.lookup(name, args)
        except UsageError:
            raise DefinitionError(f"no instance {name}({', '.join(args)}) for this backbone") from None

    def literal(self, atom, binding):
        """True, False, or a literal tuple."""
        m = self.model
        if isinstance(atom, ir.BoolAtom):
            return atom.value
        if isinstance(atom, ir.CodeAtom):
            return bool(self._const(atom, binding))
        if isinstance(atom, ir.BareRefAtom):
            raise DefinitionError(f"condition on {atom.ref.name} has no value test")
        if isinstance(atom, ir.IsAtom):
            idx, sw = self._slot(*self._ref(atom.ref, binding))
            inst = m.instances[idx]
            # Enum instances of one choice share their values, so the mask
            # only depends on the atom and the read orientation.
            key = (id(atom), inst.choice, sw) if m.decls[inst.choice].kind == "enum" else (id(atom), idx, sw)
            mask = self._masks.get(key)
            if mask is None:
                try:
                    mask = m.value_mask(idx, atom.values, sw)
                except UsageError as e:
                    raise DefinitionError(str(e)) from None
                if atom.negated:
                    mask = self.full[idx] & ~mask
                self._masks[key] = mask
            return self._unary(idx, mask)
        if isinstance(atom, ir.CmpAtom):
            name, args = self._ref(atom.lhs, binding)
            cmp = _CMP[atom.op]
            if (name, args) in m.counter_index:
                if isinstance(atom.rhs, ir.ChoiceRef):
                    raise DefinitionError("counters can only be compared with constants")
                return ("C", m.counter_index[(name, args)], atom.op, self._const(atom.rhs, binding))
            i, swi = self._slot(name, args)
            vi = self._read_values(i, swi)
            if isinstance(atom.rhs, ir.ChoiceRef):
                j, swj = self._slot(*self._ref(atom.rhs, binding))
                vj = self._read_values(j, swj)
                if i == j:
                    mask = sum(1 << a for a in range(len(vi)) if cmp(vi[a], vj[a]))
                    return self._unary(i, mask)
                rows = [sum(1 << b for b in range(len(vj)) if cmp(vi[a], vj[b])) for a in range(len(vi))]
                return self._binary(i, j, rows)
            k = self._const(atom.rhs, binding)
            mask = sum(1 << a for a in range(len(vi)) if cmp(vi[a], k))
            return self._unary(i, mask)
        raise TypeError(atom)

    def _read_values(self, idx, swapped):
        """Values indexed by stored bit, as seen through the read orientation."""
        inst = self.model.instances[idx]
        if not swapped:
            return inst.values
        table = self.model.swap[inst.choice]
        return tuple(inst.values[_low(table[1 << b])] for b in range(len(inst.values)))

    def _unary(self, idx, mask):
        full = self.full[idx]
        mask &= full
        if mask == full:
            return True
        if mask == 0:
            return False
        return ("U", idx, mask)

    def _binary(self, i, j, rows):
        if i > j:
            t = [0] * len(self.model.instances[j].values)
            for a, r in enumerate(rows):
                for b in bits(r):
                    t[b] |= 1 << a
            i, j, rows = j, i, t
        fi, fj = self.full[i], self.full[j]
        rows = tuple(r & fj for r in rows)
        if all(rows[a] == fj for a in bits(fi)):
            return True
        if not any(rows[a] for a in bits(fi)):
            return False
        return ("B", i, j, rows)

    def _clause(self, lits):
        """Fold constants and merge literals; None means always true."""
        unary: dict[int, int] = {}
        binary: dict[tuple, list] = {}
        for lit in lits:
            if lit is True:
                return None
            if lit is False:
                continue
            if lit[0] == "U":
                unary[lit[1]] = unary.get(lit[1], 0) | lit[2]
            elif lit[0] == "B":
                key = (lit[1], lit[2])
                if key in binary:
                    binary[key] = [a | b for a, b in zip(binary[key], lit[3])]
                else:
                    binary[key] = list(lit[3])
            else:
                raise DefinitionError("counter comparisons must stand alone in a constraint")
        out = []
        for idx, mask in sorted(unary.items()):
            u = self._unary(idx, mask)
            if u is True:
                return None
            out.append(u)
        for (i, j), rows in sorted(binary.items()):
            b = self._binary(i, j, rows)
            if b is True:
                return None
            if b is not False:
                out.append(b)
        return tuple(out)

    def _compile_constraints(self):
        groups: dict[tuple, list] = {}
        causes: dict[tuple, str] = {}
        for ci, decl in enumerate(self.model.defn.constraints):
            cause = f"constraint#{ci}@{decl.line}"
            for binding in enumerate_bindings(self.backbone, decl.foralls):
                lits = [self.literal(a, binding) for a in decl.body]
                counter_lits = [x for x in lits if isinstance(x, tuple) and x[0] == "C"]
                if counter_lits:
                    if len(lits) != 1:
                        raise DefinitionError("counter comparisons must stand alone in a constraint")
                    self._counter_bound(*counter_lits[0][1:])
                    continue
                clause = self._clause(lits)
                if clause is None:
                    continue
                self.clauses.append(clause)
                if not clause:
                    self.inconsistent = f"{cause} is violated by every candidate"
                    continue
                if len(clause) == 1 and clause[0][0] == "U":
                    _, idx, mask = clause[0]
                    self.root_unary[idx] = self.root_unary.get(idx, self.full[idx]) & mask
                    continue
                vs = set()
                for lit in clause:
                    vs.add(lit[1])
                    if lit[0] == "B":
                        vs.add(lit[2])
                key = tuple(sorted(vs))
                groups.setdefault(key, []).append(clause)
                causes.setdefault(key, cause)
        for key, clauses in groups.items():
            size = 1
            for v in key:
                size *= len(self.model.instances[v].values)
            if size <= TABLE_LIMIT:
                pos = {v: p for p, v in enumerate(key)}
                local = frozenset(
                    frozenset(("U", pos[l[1]], l[2]) if l[0] == "U" else ("B", pos[l[1]], pos[l[2]], l[3])
                              for l in cl)
                    for cl in clauses)
                fulls = tuple(self.full[v] for v in key)
                sig = (fulls, local)
                table = _TABLES.get(sig)
                if table is None:
                    if len(_TABLES) > 20000:
                        _TABLES.clear()
                    table = _TABLES[sig] = _Table(fulls, [tuple(cl) for cl in local])
                self.props.append(TableProp(key, table, causes[key]))
            else:
                for cl in clauses:
                    self.props.append(ClauseProp(cl, causes[key]))

    def _counter_bound(self, ci, op, k):
        p = self.counter_props[ci]
        k = int(k)
        hi = {"<": k - 1, "<=": k, "==": k}.get(op)
        lo = {">": k + 1, ">=": k, "==": k}.get(op)
        if op == "!=":
            raise DefinitionError("counter bounds cannot use !=")
        if hi is not None:
            p.hi_bound = hi if p.hi_bound is None else min(p.hi_bound, hi)
        if lo is not None:
            p.lo_bound = lo if p.lo_bound is None else max(p.lo_bound, lo)

    def _guard(self, atoms, binding):
        lits = []
        for a in atoms:
            lit = self.literal(a, binding)
            if lit is True:
                continue
            if lit is False:
                return None
            if lit[0] != "U":
                raise DefinitionError("counter guards and trigger conditions must be unary")
            lits.append((lit[1], lit[2]))
        return tuple(lits)

    def _compile_counters(self):
        m = self.model
        for ci, (name, args) in enumerate(m.counters):
            decl = m.decls[name]
            dom = decl.domain
            start = {p.var: a for p, a in zip(decl.params, args)}
            terms, values = [], {}
            for binding in enumerate_bindings(self.backbone, dom.foralls, start):
                guard = self._guard(dom.guard, binding)
                if guard is None:
                    continue
                if isinstance(dom.term, ir.ChoiceRef):
                    tname, targs = self._ref(dom.term, binding)
                    if (tname, targs) in m.counter_index:
                        raise DefinitionError("counters of counters are not supported")
                    idx, _ = self._slot(tname, targs)
                    vals = m.instances[idx].values
                    if any(not isinstance(v, int) or v < (1 if dom.op == "mul" else 0) for v in vals):
                        raise DefinitionError(f"counter {name}: term values must be non-negative integers")
                    values[idx] = vals
                    terms.append((None, idx, guard))
                else:
                    c = int(self._const(dom.term, binding))
                    if c < (1 if dom.op == "mul" else 0):
                        raise DefinitionError(f"counter {name}: term {c} out of range")
                    terms.append((c, None, guard))
            prop = CounterProp(ci, dom.op == "mul", terms, values, f"counter {name}")
            self.counter_props.append(prop)
            self.props.append(prop)

    def _compile_quotients(self):
        m = self.model
        for q in m.defn.quotients:
            params = [{}] if q.param is None else list(enumerate_bindings(self.backbone, (q.param,)))
            for pb in params:
                base = ir.Forall(q.var, q.base)
                members = [b[q.var] for b in enumerate_bindings(self.backbone, (base,), pb)]
                pargs = (pb[q.param.var],) if q.param else ()
                flags, member, equiv = [], [], []
                for k, d in enumerate(members):
                    binding = dict(pb)
                    binding[q.var] = d
                    flags.append(self._slot(q.flag, pargs + (d,))[0])
                    member.append(self._guard(q.member, binding))
                    row = []
                    for d2 in members[:k]:
                        if (q.equiv_choice, (d, d2)) not in m.index:
                            row.append(None)
                            continue
                        idx, sw = m.index[(q.equiv_choice, (d, d2))]
                        lit = self._unary(idx, m.value_mask(idx, (q.equiv_value,), sw))
                        row.append(None if lit is False else
                                   (idx, self.full[idx]) if lit is True else (lit[1], lit[2]))
                    equiv.append(row)
                prop = QuotientProp(tuple(flags), member, equiv, f"quotient {q.name}")
                self.quotients.append(prop)
                self.props.append(prop)

    def _compile_triggers(self):
        for t in self.model.defn.triggers:
            if t.callback not in self.backbone.callbacks:
                raise DefinitionError(f"no callback registered for {t.callback!r}")
            for binding in enumerate_bindings(self.backbone, t.foralls):
                lits = self._guard(t.when, binding)
                if lits is None:
                    continue
                objs = tuple(binding[f.var] for f in t.foralls)
                self.triggers.append(TriggerInst((t.name, objs), lits, t.callback, objs))

    # -- running ---------------------------------------------------------------
    def counter_intervals(self, doms) -> tuple:
        return tuple(p.interval(doms) for p in self.counter_props)

    def fixpoint(self, doms: list, counters: list, queue_props, trace=None) -> bool:
        props, watch = self.props, self.watch
        inq = bytearray(len(props))
        queue = deque()
        for p in queue_props:
            if not inq[p]:
                inq[p] = 1
                queue.append(p)
        while queue:
            p = queue.popleft()
            inq[p] = 0
            prop = props[p]
            res = prop.run(doms, counters)
            if res is None:
                if trace is not None:
                    trace.append((None, (), prop.cause))
                return False
            for idx, mask in res:
                old = doms[idx]
                new = old & mask
                if new == old:
                    continue
                if trace is not None:
                    inst = self.model.instances[idx]
                    trace.append((inst.label(), tuple(inst.values[b] for b in bits(old & ~new)), prop.cause))
                if new == 0:
                    return False
                doms[idx] = new
                for q in watch[idx]:
                    if not inq[q]:
                        inq[q] = 1
                        queue.append(q)
        return True

    def all_props(self):
        return range(len(self.props))

    def start(self, doms: list) -> Optional[list]:
        """Apply root-level unit clauses; returns dirtied slots or None."""
        if self.inconsistent:
            return None
        dirty = []
        for idx, mask in self.root_unary.items():
            new = doms[idx] & mask
            if new == 0:
                return None
            if new != doms[idx]:
                doms[idx] = new
                dirty.append(idx)
        return dirty

    def check(self, c: Candidate) -> bool:
        """Whether a fully specified candidate satisfies every constraint."""
        doms = c.doms
        if self.inconsistent or not c.is_fully_specified:
            return False
        for idx, mask in self.root_unary.items():
            if not doms[idx] & mask:
                return False
        for cl in self.clauses:
            if not _clause_holds(cl, doms):
                return False
        for p in self.counter_props:
            lo, hi = p.interval(doms)
            if lo != hi:
                return False
            if p.hi_bound is not None and lo > p.hi_bound:
                return False
            if p.lo_bound is not None and lo < p.lo_bound:
                return False
        for q in self.quotients:
            for k, f in enumerate(q.flags):
                mk = q.member[k]
                rep = q._ent(doms, mk) and not any(
                    q.equiv[k][j] is not None and q._ent(doms, q.member[j])
                    and not doms[q.equiv[k][j][0]] & ~q.equiv[k][j][1]
                    for j in range(k))
                if (doms[f] == TRUE_BIT) != rep:
                    return False
        for t in self.triggers:
            if t.entailed(doms) and t.key not in c.fired:
                return False
        return True


# -- public API ------------------------------------------------------------

def _run(c: Candidate, queue_props, dirty_doms=None, trace=None) -> Optional[Candidate]:
    model = c.model
    engine = model_engine(model)
    doms = list(c.doms if dirty_doms is None else dirty_doms)
    counters = list(c.counters)
    fired = c.fired
    if not engine.fixpoint(doms, counters, queue_props, trace):
        return None
    while True:
        pending = [t for t in engine.triggers if t.key not in fired and t.entailed(doms)]
        if not pending:
            break
        backbone = model.backbone
        for t in sorted(pending, key=lambda t: t.key):
            nb = backbone.callbacks[t.callback](backbone, *t.objs)
            if not nb.is_extension_of(backbone):
                raise RuntimeError(f"trigger {t.key[0]} removed objects from the backbone")
            backbone = nb
        fired = fired | {t.key for t in pending}
        new_model = Model.compile(model.defn, backbone)
        doms = _remap(model, new_model, doms)
        model = new_model
        engine = model_engine(model)
        counters = list(engine.counter_intervals(doms))
        dirty = engine.start(doms)
        if dirty is None or not engine.fixpoint(doms, counters, engine.all_props(), trace):
            return None
    return Candidate(model, tuple(doms), tuple(counters), fired, c.depth)


def _remap(old: Model, new: Model, doms) -> list:
    out = []
    for inst in new.instances:
        hit = old.index.get((inst.choice, inst.args))
        if hit is None:
            out.append(inst.full)
        else:
            idx, swapped = hit
            d = doms[idx]
            out.append(old.swap_mask(idx, d) if swapped else d)
    return out


def propagate(c: Candidate, trace: Optional[list] = None) -> Optional[Candidate]:
    """Run every propagator to a fixpoint; None on a dead end.

    `trace`, when given, collects (instance, removed values, cause) records.
    """
    engine = model_engine(c.model)
    doms = list(c.doms)
    if engine.start(doms) is None:
        return None
    return _run(c, engine.all_props(), doms, trace)


def apply_decision(c: Candidate, instance, subset, trace=None) -> Optional[Candidate]:
    """Restrict one instance, then propagate from the changed slot.

    `c` must already be at a propagation fixpoint.
    """
    r = restrict(c, instance, subset)
    if r is None:
        return None
    if r is c:
        return c
    idx, _ = c.model.lookup(*instance)
    out = _run(r, model_engine(c.model).watch[idx], trace=trace)
    if out is not None:
        out.depth = c.depth + 1
    return out


def apply_mask(c: Candidate, idx: int, mask: int) -> Optional[Candidate]:
    """`apply_decision` by slot index and stored-orientation mask."""
    old = c.doms[idx]
    new = old & mask
    if new == 0:
        return None
    if new == old:
        return c
    doms = list(c.doms)
    doms[idx] = new
    out = _run(c, model_engine(c.model).watch[idx], doms)
    if out is not None:
        out.depth = c.depth + 1
    return out


def fire_triggers(c: Candidate) -> Optional[Candidate]:
    """Fire every entailed trigger of a fixpoint candidate (and re-propagate)."""
    return _run(c, ())


def counter_bounds(c: Candidate, name: str, args=()) -> tuple[int, int]:
    return c.counter_bounds(name, args)


def check_implementation(c: Candidate) -> bool:
    return model_engine(c.model).check(c)


def root(defn: ir.SpaceDefinition, backbone) -> Optional[Candidate]:
    """Instantiate and propagate once."""
    from .space import instantiate_vector
    return propagate(instantiate_vector(defn, backbone))


def replay_triggers(base: Model, fired) -> Model:
    backbone = base.backbone
    for name, objs in sorted(fired):
        decl = next((t for t in base.defn.triggers if t.name == name), None)
        if decl is None:
            raise UsageError(f"unknown trigger {name}")
        backbone = backbone.callbacks[decl.callback](backbone, *objs)
    return Model.compile(base.defn, backbone)
