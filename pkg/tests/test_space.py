import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from conftest import order_backbone, order_defn, toy_space
from implspace import gpu
from implspace import kernels as K
from implspace.dsl import parse
from implspace.space import (Candidate, DecodeError, DefinitionError, Model, UsageError, bits, deserialize,
                             dump, instantiate_vector, open_choices, restrict, serialize)

ORDER_VALUES = ("BEFORE", "AFTER", "INNER", "OUTER", "MERGED")


def outer_product_vector():
    return instantiate_vector(order_defn(), order_backbone(["ld_a", "ld_b", "mul", "st_c"], ["d_m", "d_n"]))


def test_outer_product_order_instances():
    c = outer_product_vector()
    assert len(c.model.instances) == 15
    assert all(inst.values == ORDER_VALUES for inst in c.model.instances)
    # 30 ordered pairs are all readable
    stmts = ["ld_a", "ld_b", "mul", "st_c", "d_m", "d_n"]
    pairs = [(a, b) for a in stmts for b in stmts if a != b]
    assert len(pairs) == 30
    assert all(c.domain("order", p) == ORDER_VALUES for p in pairs)


def test_empty_backbone_is_fully_specified():
    c = instantiate_vector(order_defn(), order_backbone([], []))
    assert c.doms == ()
    assert c.is_fully_specified


def test_axpy_instance_count_matches_set_enumeration():
    k = K.axpy(2 ** 26, {"i": [[2, 4], [2, 1024]]})
    b = gpu.to_backbone(k)
    c = instantiate_vector(gpu.gpu_definition(), b)
    # count by hand from the kernel's own object lists
    insts = [i.id for i in k.instructions]
    dims = [d.id for d in k.dims]
    static = [d.id for d in k.dims if d.is_static]
    mems = [i.id for i in k.instructions if i.is_mem]
    stmts = insts + dims
    expected = {
        "order": math.comb(len(stmts), 2),
        "dim_kind": len(dims),
        "size": len(static),
        "mem_space": len(k.regions),
        "cache": len(mems),
        "thread_level": math.comb(len(static), 2),
        "transfer": len(k.mapped),
        "is_iteration_dim": len(insts) * len(dims),
        "is_thread_dim": len(static),
        "is_block_dim": len(dims),
    }
    got = {}
    for inst in c.model.instances:
        got[inst.choice] = got.get(inst.choice, 0) + 1
    assert {n: v for n, v in got.items()} == {n: v for n, v in expected.items() if v}
    assert len(c.doms) == sum(expected.values())


def test_unknown_set_is_a_definition_error():
    defn = parse("set Things: ...\nchoice enum pick($t in Things):\n  value A:\n  value B:\nend\n")
    from implspace.space import Backbone
    with pytest.raises(DefinitionError, match="Things"):
        instantiate_vector(defn, Backbone(objects=(), sets={}))


def test_unregistered_provider_is_a_definition_error():
    defn = parse('set Dims: ...\nchoice integer size($d in Dims):\n  "$d.sizes()"\nend\n')
    from implspace.space import Backbone
    with pytest.raises(DefinitionError, match="sizes"):
        instantiate_vector(defn, Backbone(objects=("d",), sets={"Dims": ("d",)}))


def test_restrict_updates_antisymmetric_twin():
    c = outer_product_vector()
    r = restrict(c, ("order", ("ld_a", "ld_b")), ["BEFORE"])
    assert r.domain("order", ("ld_a", "ld_b")) == ("BEFORE",)
    assert r.domain("order", ("ld_b", "ld_a")) == ("AFTER",)
    r2 = restrict(c, ("order", ("d_n", "d_m")), ["INNER", "MERGED"])
    assert r2.domain("order", ("d_m", "d_n")) == ("OUTER", "MERGED")


def test_restrict_to_full_domain_is_identity():
    c = outer_product_vector()
    r = restrict(c, ("order", ("ld_a", "ld_b")), ORDER_VALUES)
    assert r.digest() == c.digest()


def test_restrict_disjoint_is_empty():
    c = restrict(outer_product_vector(), ("order", ("ld_a", "ld_b")), ["BEFORE"])
    assert restrict(c, ("order", ("ld_a", "ld_b")), ["AFTER"]) is None


def test_restrict_unknown_instance():
    c = outer_product_vector()
    with pytest.raises(UsageError):
        restrict(c, ("order", ("ld_a", "nope")), ["BEFORE"])
    with pytest.raises(UsageError):
        restrict(c, ("order", ("ld_a", "ld_a")), ["BEFORE"])


def test_open_choices():
    c = outer_product_vector()
    assert len(open_choices(c)) == 15
    for inst in list(c.model.instances):
        c = restrict(c, (inst.choice, inst.args), ["BEFORE"])
    assert open_choices(c) == []


def test_open_choices_after_forcing_order_keeps_dim_kind():
    _, root = toy_space()
    c = root
    for idx, inst in enumerate(root.model.instances):
        if inst.choice == "order" and c.doms[idx] & (c.doms[idx] - 1):
            low = c.doms[idx] & -c.doms[idx]
            c = c.with_doms(c.doms[:idx] + (low,) + c.doms[idx + 1:])
    names = {inst[0] for inst, _ in open_choices(c)}
    assert "order" not in names
    n_dims = len(root.model.backbone.sets["Dimensions"])
    kinds = [inst for inst, _ in open_choices(c) if inst[0] == "dim_kind"]
    assert len(kinds) == sum(1 for d in root.model.backbone.sets["Dimensions"]
                             if len(root.domain("dim_kind", (d,))) > 1)
    assert 0 < len(kinds) <= n_dims


def test_open_choices_order_is_declaration_order():
    _, root = toy_space()
    slots = [root.model.index[inst] for inst, _ in open_choices(root)]
    assert [i for i, _ in slots] == sorted(i for i, _ in slots)


def random_candidate(root: Candidate, rng: random.Random, steps: int) -> Candidate:
    c = root
    for _ in range(steps):
        idx = rng.randrange(len(c.doms))
        d = c.doms[idx]
        sub = 0
        for b in bits(d):
            if rng.random() < 0.5:
                sub |= 1 << b
        if sub:
            c = c.with_doms(c.doms[:idx] + (sub,) + c.doms[idx + 1:])
    return c


def test_serialize_round_trip_100_random():
    _, root = toy_space()
    rng = random.Random(7)
    for _ in range(100):
        c = random_candidate(root, rng, rng.randrange(40))
        back = deserialize(serialize(c), root.model)
        assert back.doms == c.doms and back.counters == c.counters
        assert back.digest() == c.digest()


def test_serialize_round_trip_after_trigger():
    from implspace.propagate import apply_decision
    _, root = gpu.build_space(K.copy_scale(4, 4))
    mapped = root.model.backbone.sets["Mapped"][0]
    c = apply_decision(root, ("transfer", (mapped,)), ["MEMORY"])
    assert c.fired
    back = deserialize(serialize(c), root.model)
    assert back.digest() == c.digest()
    assert len(back.model.instances) > len(root.model.instances)


def test_decode_errors():
    _, root = toy_space()
    data = serialize(root)
    with pytest.raises(DecodeError):
        deserialize(b"XXXX" + data[4:], root.model)
    with pytest.raises(DecodeError):
        deserialize(data + b"\x00", root.model)
    with pytest.raises(DecodeError):
        deserialize(data[:-3], root.model)
    other = outer_product_vector()
    with pytest.raises(DecodeError):
        deserialize(data, other.model)


def test_digest_changes_with_one_domain():
    _, root = toy_space()
    idx = next(i for i, d in enumerate(root.doms) if d & (d - 1))
    low = root.doms[idx] & -root.doms[idx]
    c = root.with_doms(root.doms[:idx] + (low,) + root.doms[idx + 1:])
    assert c.digest() != root.digest()


def test_digest_stable_across_reload():
    k = K.axpy(2 ** 26, {"i": [[2, 4], [2, 1024]]})
    _, a = gpu.build_space(k)
    Model._cache.clear()
    defn = parse(gpu.space_source("order.space") + "\n" + gpu.space_source("gpu.space"))
    _, b = gpu.build_space(k, defn=defn)
    assert a.model is not b.model
    assert a.digest() == b.digest()


def test_dump_lines():
    c = restrict(outer_product_vector(), ("order", ("ld_a", "ld_b")), ["BEFORE"])
    text = dump(c)
    assert "order(ld_a, ld_b) = {BEFORE}\n" in text
    assert text.count("\n") == 15


@settings(max_examples=50, deadline=None)
@given(st.data())
def test_restrict_chain_is_monotone_and_coherent(data):
    c = outer_product_vector()
    stmts = ["ld_a", "ld_b", "mul", "st_c", "d_m", "d_n"]
    for _ in range(data.draw(st.integers(0, 12))):
        a, b = data.draw(st.sampled_from([(x, y) for x in stmts for y in stmts if x != y]))
        vals = data.draw(st.sets(st.sampled_from(ORDER_VALUES), min_size=1))
        r = restrict(c, ("order", (a, b)), vals)
        if r is None:
            break
        for x in range(len(c.doms)):
            assert r.doms[x] & ~c.doms[x] == 0
        swap = {"BEFORE": "AFTER", "AFTER": "BEFORE", "INNER": "OUTER", "OUTER": "INNER", "MERGED": "MERGED"}
        for x in stmts:
            for y in stmts:
                if x < y:
                    assert set(r.domain("order", (y, x))) == {swap[v] for v in r.domain("order", (x, y))}
        c = r


def test_no_instance_repeats_an_object():
    _, root = toy_space()
    for inst in root.model.instances:
        assert len(set(inst.args)) == len(inst.args)
