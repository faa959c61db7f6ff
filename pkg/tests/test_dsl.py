import json
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from implspace import gpu
from implspace.dsl import ParseError, SpaceDefinition, ir, parse, pretty_print, validate

DSL = Path(__file__).parent / "fixtures" / "dsl"
FIRST_SIX = ["set_declarations", "cache_choice", "instruction_order", "order_transitivity",
             "local_mem_counter", "thread_counter"]


def fixture(name):
    return (DSL / f"{name}.space").read_text(encoding="utf-8")


def codes(defn):
    return sorted({d.code for d in validate(defn)})


@pytest.mark.parametrize("path", sorted(DSL.glob("*.space")), ids=lambda p: p.stem)
def test_printed_sources_parse_and_round_trip(path):
    d = parse(path.read_text(encoding="utf-8"))
    assert d.decls
    assert parse(pretty_print(d)) == d


def test_golden_ir():
    gold = json.loads((DSL / "golden_ir.json").read_text(encoding="utf-8"))
    for path in sorted(DSL.glob("*.space")):
        assert ir.to_data(parse(path.read_text(encoding="utf-8"))) == gold[path.stem], path.stem
    text = "".join(fixture(n) + "\n" for n in FIRST_SIX)
    assert ir.to_data(parse(text)) == gold["_first_six_concatenated"]


def test_cache_choice():
    d = parse(fixture("cache_choice"))
    c = d.choices["cache"]
    assert c.kind == "enum"
    assert c.domain.values == ("L1", "L2", "READ_ONLY", "NONE")
    assert [(p.var, p.set.name) for p in c.params] == [("inst", "MemAccesses")]


def test_empty_source():
    d = parse("")
    assert d == SpaceDefinition()
    assert validate(d) == []
    assert pretty_print(d) == ""


def test_comments_and_whitespace_only():
    assert parse("// nothing here\n\n   // still nothing\n") == SpaceDefinition()


def test_syntax_error_has_position():
    with pytest.raises(ParseError) as e:
        parse("choice enum c($x in S):\n  value A\nend\n")
    diag = e.value.diagnostics[0]
    assert diag.code == "SYNTAX"
    assert diag.line == 3


def test_duplicate_declaration():
    with pytest.raises(ParseError) as e:
        parse("set S: ...\nset S: ...\n")
    assert e.value.diagnostics[0].code == "DUPLICATE"


def test_unknown_choice_diagnostic():
    d = parse("set S: ...\nrequire forall $x in S:\n  foo($x) is A\n")
    assert codes(d) == ["UNKNOWN_CHOICE"]


def test_subset_cycle_diagnostic():
    d = parse("set A subsetof B: ...\nset B subsetof A: ...\n")
    assert "SET_CYCLE" in codes(d)


def test_transitivity_over_instruction_order_validates():
    d = parse("set Instructions: ...\n" + fixture("instruction_order") + fixture("order_transitivity"))
    assert validate(d) == []


def test_unknown_value_and_arity():
    d = parse("set S: ...\nchoice enum c($x in S):\n  value A:\nend\n"
              "require forall $x in S:\n  c($x) is B\n"
              "require forall $x in S:\n  forall $y in S:\n    c($x, $y) is A\n")
    assert codes(d) == ["ARITY_MISMATCH", "UNKNOWN_VALUE"]


def test_bad_antisymmetry():
    d = parse("set S: ...\nchoice enum c($x in S):\n  value A:\n  value B:\n  antisymmetric: A -> B\nend\n")
    assert "BAD_ANTISYMMETRY" in codes(d)


def test_shipped_spaces_validate_and_round_trip():
    for name in ("order.space", "gpu.space"):
        d = parse(gpu.space_source(name))
        assert parse(pretty_print(d)) == d
    full = gpu.gpu_definition()
    assert validate(full) == []
    assert parse(pretty_print(full)) == full


def test_elided_bodies_are_kept():
    d = parse(fixture("thread_counter"))
    assert d.choices["fused"].domain is None
    assert d.choices["fused"].elided
    q = d.quotients[0]
    assert (q.flag, q.equiv_choice, q.equiv_value) == ("is_thread_dim", "fused", "TRUE")


# -- random definitions ----------------------------------------------------------

upper = st.text("ABCDEFGH", min_size=1, max_size=3)
lower = st.text("abcdefgh", min_size=1, max_size=3)
set_names = upper.map(lambda s: "S" + s)
choice_names = lower.map(lambda s: "c_" + s)
values = upper.map(lambda s: "V" + s)
variables = st.sampled_from(["x", "y", "z", "w"])
code = st.text("abcdefxyz.$() _", min_size=1, max_size=12)


@st.composite
def foralls(draw, max_size=2):
    vs = draw(st.lists(variables, max_size=max_size, unique=True))
    return tuple(ir.Forall(v, ir.SetRef(draw(set_names))) for v in vs)


@st.composite
def refs(draw):
    return ir.ChoiceRef(draw(choice_names), tuple(draw(st.lists(variables, max_size=2))))


@st.composite
def atoms(draw):
    kind = draw(st.sampled_from(["bool", "code", "is", "cmp"]))
    if kind == "bool":
        return ir.BoolAtom(draw(st.booleans()))
    if kind == "code":
        return ir.CodeAtom(draw(code), draw(st.booleans()))
    if kind == "is":
        vals = tuple(draw(st.lists(values, min_size=1, max_size=3, unique=True)))
        return ir.IsAtom(draw(refs()), vals, draw(st.booleans()))
    rhs = draw(st.one_of(refs(), code.map(ir.CodeAtom), st.integers(0, 10 ** 6).map(ir.IntLit)))
    return ir.CmpAtom(draw(refs()), draw(st.sampled_from(ir.CMP_OPS)), rhs)


@st.composite
def choice_decls(draw):
    kind = draw(st.sampled_from(["enum", "integer", "counter"]))
    name = draw(choice_names)
    params = draw(foralls())
    if kind == "enum":
        vals = draw(st.lists(values, min_size=1, max_size=5, unique=True))
        pairs = []
        if len(vals) >= 2 and draw(st.booleans()):
            pairs.append((vals[0], vals[1]))
        dom = ir.EnumDomain(tuple(vals), tuple(pairs))
    elif kind == "integer":
        dom = ir.IntegerDomain(draw(code))
    else:
        guard = tuple(draw(st.lists(atoms(), max_size=2)))
        term = draw(st.one_of(refs(), code.map(ir.CodeAtom), st.integers(0, 99).map(ir.IntLit)))
        dom = ir.CounterDomain(draw(st.sampled_from(["sum", "mul"])), draw(foralls()), term, guard,
                               bool(guard) and draw(st.booleans()))
    return ir.ChoiceDecl(name, kind, params, dom, draw(st.booleans()))


@st.composite
def decls(draw):
    kind = draw(st.sampled_from(["set", "choice", "require", "quotient", "trigger"]))
    if kind == "set":
        inline = draw(st.booleans())
        param = draw(st.none() | foralls(1).filter(bool).map(lambda f: f[0]))
        keys = () if inline else tuple(draw(st.lists(
            st.tuples(st.sampled_from(["type", "iterator"]), st.none() | code), max_size=2, unique_by=lambda k: k[0])))
        return ir.SetDecl(draw(set_names), param, draw(st.none() | set_names), keys,
                          inline or draw(st.booleans()), inline)
    if kind == "choice":
        return draw(choice_decls())
    if kind == "require":
        return ir.ConstraintDecl(draw(foralls(3)), tuple(draw(st.lists(atoms(), min_size=1, max_size=3))))
    if kind == "quotient":
        has_flag = draw(st.booleans())
        return ir.QuotientDecl(
            draw(set_names).lower().replace("s", "q", 1), None, draw(variables), ir.SetRef(draw(set_names)),
            draw(choice_names) if has_flag else None,
            tuple(draw(st.lists(atoms(), min_size=1, max_size=2))) if has_flag else (),
            draw(choice_names) if has_flag else None, draw(values) if has_flag else None,
            elided=not has_flag or draw(st.booleans()), of_in=draw(st.booleans()))
    return ir.TriggerDecl(draw(choice_names), draw(foralls()), tuple(draw(st.lists(atoms(), min_size=1, max_size=2))),
                          draw(code))


@st.composite
def definitions(draw):
    out, seen = [], set()
    for d in draw(st.lists(decls(), max_size=6)):
        key = (type(d).__name__, getattr(d, "name", None))
        if key[1] is not None and key in seen:
            continue
        seen.add(key)
        out.append(d)
    return SpaceDefinition(tuple(out))


@settings(max_examples=300, deadline=None)
@given(definitions())
def test_random_definitions_round_trip(d):
    assert parse(pretty_print(d)) == d
