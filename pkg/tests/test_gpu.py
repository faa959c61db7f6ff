import itertools

import pytest

from conftest import full_vector, leaves, order_backbone, order_defn, toy_space
from oracles import nest_orders
from implspace import gpu
from implspace import kernels as K
from implspace.estimate import CandidateTree, exact_count
from implspace.propagate import apply_decision, check_implementation, propagate
from implspace.space import instantiate_vector

# Frozen from the brute-force oracle in tests/oracles.py (see test_acceptance).
TOY_IMPLEMENTATIONS = 33792


def test_value_sets():
    defn = gpu.gpu_definition()
    values = {name: d.domain.values for name, d in defn.choices.items() if d.kind == "enum"}
    assert values["order"] == ("BEFORE", "AFTER", "INNER", "OUTER", "MERGED")
    assert values["dim_kind"] == ("LOOP", "BLOCK", "THREAD", "UNROLL", "VECTOR")
    assert values["mem_space"] == ("GLOBAL", "SHARED")
    assert values["cache"] == ("L1", "L2", "READ_ONLY", "NONE")
    assert values["thread_level"] == ("MAPPED", "INNER", "OUTER", "NOT_THREADS")
    assert defn.choices["size"].kind == "integer"
    counters = {n for n, d in defn.choices.items() if d.kind == "counter"}
    assert counters == {"num_threads", "thread_levels", "block_levels", "shared_mem_bytes"}


def test_machine_params_validation():
    mp = gpu.MachineParams()
    assert (mp.max_threads, mp.max_thread_levels, mp.max_block_levels) == (1024, 3, 3)
    assert mp.shared_mem_bytes == 48 * 2 ** 10 and mp.vector_width == 4
    assert gpu.MachineParams.from_dict(mp.to_dict()) == mp
    with pytest.raises(ValueError):
        gpu.MachineParams(max_threads=0)
    with pytest.raises(ValueError):
        gpu.MachineParams.from_dict({"warp": 32})


def test_outer_product_iteration_dims_are_outer():
    _, root = gpu.build_space(K.outer_product(1024, 1024))
    assert root.domain("order", ("m.0", "ld_a")) == ("OUTER",)
    assert root.domain("order", ("n.0", "ld_b")) == ("OUTER",)
    assert root.domain("is_iteration_dim", ("ld_a", "m.0")) == ("TRUE",)
    # ld_a runs before the multiply consuming it
    assert root.domain("order", ("ld_a", "mul")) == ("BEFORE",)


def single_store_kernel():
    region = K.Region("R", 4, 1, is_input=False)
    st = K.Instruction("st", "Store", (K.Operand("InductionVar"), K.Operand("Constant", 1)), (),
                       access=K.Access("R", ()))
    return K.Kernel("single", (), (st,), (), (), (region,))


def test_single_instruction_without_dims():
    _, root = gpu.build_space(single_store_kernel())
    names = {inst.choice for inst in root.model.instances}
    assert names == {"cache", "mem_space"}
    # only READ_ONLY is ruled out, for a store
    assert root.domain("cache", ("st",)) == ("L1", "L2", "NONE")
    found = list(leaves(root))
    assert all(check_implementation(c) for c in found)
    # SHARED forces cache NONE: 3 global + 1 shared
    assert len(found) == 4


def test_toy_matmul_implementation_count():
    _, root = toy_space()
    assert exact_count(CandidateTree(root)).leaves == TOY_IMPLEMENTATIONS


def test_instructions_admit_nothing_inside():
    defn = order_defn()
    root = propagate(instantiate_vector(defn, order_backbone(["a", "b", "c"], [])))
    for x, y in itertools.permutations("abc", 2):
        assert set(root.domain("order", (x, y))) == {"BEFORE", "AFTER"}


def test_after_after_is_after():
    root = propagate(instantiate_vector(order_defn(), order_backbone(["a", "b", "c"], [])))
    c = apply_decision(root, ("order", ("a", "b")), ["AFTER"])
    c = apply_decision(c, ("order", ("b", "c")), ["AFTER"])
    assert c.domain("order", ("a", "c")) == ("AFTER",)


def test_block_dims_are_not_nested_in_other_kinds():
    _, root = toy_space()
    d = "m.0"
    c = apply_decision(root, ("dim_kind", (d,)), ["BLOCK"])
    b = c.model.backbone
    for s in b.sets["Insts"]:
        assert c.domain("order", (d, s)) == ("OUTER",)
    for s in b.sets["Dimensions"]:
        if s != d and "BLOCK" not in c.domain("dim_kind", (s,)):
            assert "INNER" not in c.domain("order", (d, s))
    # every implementation below agrees
    for leaf in leaves(c):
        for s in b.sets["Dimensions"]:
            if s != d and leaf.domain("dim_kind", (s,)) != ("BLOCK",):
                assert leaf.domain("order", (d, s)) != ("INNER",)


def test_losing_thread_collapses_thread_level():
    _, root = gpu.build_space(K.copy_scale(4, 4, {"m": [[2]], "n": [[2]]}))
    x, y = "m@ld_a.1", "n@ld_a.1"
    c = apply_decision(root, ("dim_kind", (x,)), ["LOOP", "UNROLL"])
    assert c.domain("thread_level", (x, y)) == ("NOT_THREADS",)
    assert c.domain("thread_level", (y, x)) == ("NOT_THREADS",)


def test_shared_region_disables_cache():
    _, root = gpu.build_space(K.copy_scale(4, 4, nests="shared"))
    assert root.domain("mem_space", ("A",)) == ("GLOBAL",)
    assert "READ_ONLY" not in root.domain("cache", ("st_y",))
    assert "READ_ONLY" in root.domain("cache", ("ld_a",))


def test_transfer_lowering_adds_temporary():
    _, root = gpu.build_space(K.copy_scale(4, 4))
    op = root.model.backbone.sets["Mapped"][0]
    c = apply_decision(root, ("transfer", (op,)), ["MEMORY"])
    k = gpu.kernel_of(c)
    assert op in k.lowered
    tmp = f"tmp[{op}]"
    assert "SHARED" in c.domain("mem_space", (tmp,))
    c = apply_decision(c, ("mem_space", (tmp,)), ["SHARED"])
    assert c.domain("cache", (f"ld[{op}]",)) == ("NONE",)
    assert c.counter_bounds("shared_mem_bytes")[0] == 64


def test_fusion_still_possible_keeps_registers():
    _, root = gpu.build_space(K.copy_scale(4, 4))
    op = root.model.backbone.sets["Mapped"][0]
    x = root.model.backbone.payload[op]
    p, q = x.pairs[0]
    c = apply_decision(root, ("order", (p, q)), ["MERGED"])
    assert not c.fired
    assert "REGISTERS" in c.domain("transfer", (op,))


def test_separate_layout_requires_merge_without_memory():
    _, root = gpu.build_space(K.copy_scale(4, 4))
    op = root.model.backbone.sets["Mapped"][0]
    x = root.model.backbone.payload[op]
    c = apply_decision(root, ("transfer", (op,)), ["REGISTERS"])
    for p, q in x.pairs:
        assert c.domain("order", (p, q)) == ("MERGED",)


@pytest.mark.parametrize("insts,dims", [
    (["a", "b"], []), (["a"], ["d"]), (["a", "b"], ["d"]), (["a"], ["d", "e"]), ([], ["d", "e", "f"]),
    (["a", "b", "c"], ["d"]), (["a", "b"], ["d", "e"]), (["a"], ["d", "e", "f"]),
])
def test_order_space_is_realizable(insts, dims):
    root = propagate(instantiate_vector(order_defn(), order_backbone(insts, dims)))
    got = set()
    for leaf in leaves(root):
        got.add(frozenset((inst.args, v) for inst, v in zip(leaf.model.instances, full_vector(leaf))))
    assert got == nest_orders(insts, dims)


def test_full_candidates_respect_limits_and_check(mp):
    _, root = gpu.build_space(K.outer_product(4, 4, {"m": [[2]], "n": [[2]]}))
    n = 0
    for leaf in itertools.islice(leaves(root), 1000):
        assert check_implementation(leaf)
        lo, hi = leaf.counter_bounds("num_threads")
        assert lo == hi <= mp.max_threads
        n += 1
    assert n == 1000
