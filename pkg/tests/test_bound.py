import random

import pytest
from hypothesis import given, settings, strategies as st

from conftest import leaves, mid_space, toy_space
from implspace import gpu
from implspace import kernels as K
from implspace.bound import bound, exact_bound, rollout_weight
from implspace.propagate import apply_decision, apply_mask
from implspace.simulate import evaluate_candidate
from implspace.space import bits, open_choices


def test_rollout_weights():
    ws = [rollout_weight(10, b) for b in (4, 8, 12)]
    assert ws == [6, 2, 0]
    assert [w / sum(ws) for w in ws] == [0.75, 0.25, 0]


def test_rollout_weight_boundaries():
    assert rollout_weight(10, 10) == 0
    assert rollout_weight(10, 11.5) == 0
    with pytest.raises(ValueError):
        rollout_weight(0, 1)


def test_exact_at_leaves(toy, mp):
    for n, c in enumerate(leaves(toy)):
        if n % 50:
            continue
        r = evaluate_candidate(c, mp)
        b = bound(c, mp)
        assert b.value == max(r.compute, r.memory)
        assert b.value == exact_bound(c, mp).value
        assert b.value <= r.total


def test_binding_resource(toy, mp):
    b = bound(toy, mp)
    assert b.binding in ("compute", "memory")
    assert b.value == max(b.compute, b.memory) >= 0
    assert set(b.per_instruction) == set(toy.model.backbone.sets["Insts"])


def test_root_bound_is_admissible(toy, mp):
    best = min(evaluate_candidate(c, mp).total for c in leaves(toy))
    assert bound(toy, mp).value <= best


def walk_checks(c, mp, n_steps, rng):
    """Random descent; the bound never decreases along it."""
    steps = 0
    while steps < n_steps:
        cur = c
        b = bound(cur, mp).value
        while steps < n_steps:
            oc = open_choices(cur)
            if not oc:
                break
            inst, vals = rng.choice(oc)
            sub = rng.sample(vals, rng.randrange(1, len(vals)) if len(vals) > 1 else 1)
            nxt = apply_decision(cur, inst, sub)
            steps += 1
            if nxt is None:
                break
            nb = bound(nxt, mp).value
            assert nb >= b - 1e-9, (inst, sub)
            cur, b = nxt, nb


def test_bound_monotone_on_1000_steps(mp):
    _, root = toy_space()
    walk_checks(root, mp, 1000, random.Random(11))


def test_bound_monotone_on_mid_space(mp):
    _, root = mid_space()
    walk_checks(root, mp, 300, random.Random(5))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_subtree_admissibility(seed):
    mp = gpu.MachineParams()
    _, root = gpu.build_space(K.axpy(16, {"i": [[2, 4]]}))
    rng = random.Random(seed)
    c = root
    for _ in range(rng.randrange(0, 5)):
        oc = open_choices(c)
        if not oc:
            break
        inst, vals = rng.choice(oc)
        nxt = apply_decision(c, inst, [rng.choice(vals)])
        if nxt is None:
            break
        c = nxt
    b = bound(c, mp).value
    for leaf in leaves(c):
        assert b <= evaluate_candidate(leaf, mp).total


def test_children_bounds_cover_parent(mp):
    _, root = toy_space()
    idx = next(i for i, d in enumerate(root.doms) if d & (d - 1))
    b = bound(root, mp).value
    for bit in bits(root.doms[idx]):
        child = apply_mask(root, idx, 1 << bit)
        if child is not None:
            assert bound(child, mp).value >= b
