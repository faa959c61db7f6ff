import hashlib
import json
import math

import pytest
from scipy.stats import binomtest

from conftest import toy_space
from implspace import gpu
from implspace import kernels as K
from implspace.dsl import parse
from implspace.propagate import apply_decision, propagate
from implspace.search import (DEADEND, DEFAULT_ORDER, DecisionOrder, Search, SearchConfig, SearchNode,
                              deadend_rate, exact_deadend_probability, explore, random_search, replay_path,
                              wilson)
from implspace.simulate import evaluate_candidate
from implspace.space import Backbone, instantiate_vector, open_choices


class FlatSearch(Search):
    """Search on a synthetic space without a cost model bound."""

    def _bound(self, c):
        return 0.0


def synthetic_root(arms=2, depth=8, width=4):
    text = "set Arms: ...\nchoice enum arm():\n" + "".join(f"  value A{i}:\n" for i in range(arms)) + "end\n"
    for j in range(depth):
        text += f"choice enum x{j}():\n" + "".join(f"  value V{v}:\n" for v in range(width)) + "end\n"
    return propagate(instantiate_vector(parse(text), Backbone(objects=(), sets={"Arms": ()})))


def leaf_key(c):
    return "".join(inst.values[d.bit_length() - 1] for inst, d in zip(c.model.instances, c.doms))


def noise(c, span):
    h = int(hashlib.sha256(leaf_key(c).encode()).hexdigest(), 16)
    return (h % 1000) / 1000 * span


def test_default_order():
    assert DEFAULT_ORDER == ("size", "dim_kind", "thread_level", "transfer", "mem_space", "order", "cache")
    with pytest.raises(ValueError):
        DecisionOrder(("size", "size"))
    _, root = toy_space()
    with pytest.raises(ValueError):
        DecisionOrder(("layout",)).next(root)
    assert DecisionOrder().reversed().names == tuple(reversed(DEFAULT_ORDER))


def test_tag_prefers_dominating_child():
    _, root = toy_space()
    s = Search(root, gpu.MachineParams(), config=SearchConfig(bucket=5))
    s.top = [1.0] * 5
    s.iterations = 20
    parent = SearchNode(root, 0.0)
    a = SearchNode(root, 0.0, t=10, costs=[1.0] * 5 + [9.0] * 5)
    b = SearchNode(root, 0.0, t=10, costs=[9.0] * 10)
    parent.kids = [a, b]
    assert s._select(parent, [0, 1]) == 0
    parent.kids = [b, a]
    assert s._select(parent, [0, 1]) == 1


def test_unvisited_child_goes_first():
    _, root = toy_space()
    s = Search(root, gpu.MachineParams())
    parent = SearchNode(root, 0.0)
    parent.kids = [SearchNode(root, 0.0, t=3, costs=[1.0] * 3), SearchNode(root, 0.0)]
    assert s._select(parent, [0, 1]) == 1


def test_pruned_child_is_not_live():
    _, root = toy_space()
    s = Search(root, gpu.MachineParams())
    s.best = 30.0
    parent = SearchNode(root, 0.0)
    parent.kids = [SearchNode(root, 30.0), SearchNode(root, 29.0), None]
    assert s._live(parent) == [1]
    s.cfg.prune = False
    assert s._live(parent) == [0, 1]


def test_bandit_concentrates_on_better_arm():
    root = synthetic_root()

    def cost(c):
        arm = c.value("arm", ())
        return (0.0 if arm == "A0" else 5.0) + noise(c, 10.0)

    s = FlatSearch(root, gpu.MachineParams(), DecisionOrder(("arm",)),
                   SearchConfig(budget=10 ** 4, seed=1, prune=False), cost_fn=cost)
    s.run()
    t = [k.t for k in s.root.kids]
    assert sum(t) == s.iterations == 10 ** 4
    # far more visits than a fair split would give
    assert binomtest(t[0], sum(t), 0.5, alternative="greater").pvalue < 1e-6


def test_single_implementation_found_in_one_rollout(mp):
    _, root = toy_space()
    c = root
    while open_choices(c):
        inst, vals = open_choices(c)[0]
        c = apply_decision(c, inst, [vals[0]])
    r = explore(c, mp, budget=10)
    assert r.evaluations == 1 and r.iterations == 1
    assert r.best.digest() == c.digest()
    assert r.best_cost == evaluate_candidate(c, mp).total
    assert r.exhausted


def test_zero_budget_finds_nothing(toy, mp):
    r = explore(toy, mp, budget=0)
    assert not r.found and r.best_cost is None and r.events == []


def test_same_seed_same_log(toy, mp):
    a = explore(toy, mp, budget=150, seed=4)
    b = explore(toy, mp, budget=150, seed=4)
    assert json.dumps(a.events) == json.dumps(b.events)
    c = explore(toy, mp, budget=150, seed=5)
    assert json.dumps(a.events) != json.dumps(c.events)


def test_log_contents(toy, mp):
    r = explore(toy, mp, budget=300, seed=2)
    best = math.inf
    for ev in r.events:
        assert set(ev) == {"iteration", "seed", "path", "bounds", "cost", "best", "evaluations"}
        if ev["cost"] != DEADEND:
            # every bound along the path is below the cost reached
            assert all(b <= ev["cost"] + 1e-9 for b in ev["bounds"])
            best = min(best, ev["cost"])
        if ev["best"] is not None:
            assert ev["best"] == best
    bests = [ev["best"] for ev in r.events if ev["best"] is not None]
    assert bests == sorted(bests, reverse=True)
    assert r.evaluations <= 300


def test_replay_path_reaches_the_logged_cost(toy, mp):
    r = explore(toy, mp, budget=100, seed=8)
    done = [ev for ev in r.events if ev["cost"] != DEADEND]
    for ev in done[:20]:
        leaf = replay_path(toy, ev["path"])
        assert leaf.is_fully_specified
        assert evaluate_candidate(leaf, mp).total == ev["cost"]
    best = next(ev for ev in done if ev["cost"] == r.best_cost)
    assert replay_path(toy, best["path"]).digest() == r.best.digest()


def test_fast_forward_resumes_identically(toy, mp):
    cfg = dict(budget=10 ** 6, seed=3, max_iterations=60)
    full = Search(toy, mp, config=SearchConfig(**cfg))
    full.run()
    first = Search(toy, mp, config=SearchConfig(**{**cfg, "max_iterations": 35}))
    first.run()
    logged = json.loads(json.dumps(first.events))
    resumed = Search(toy, mp, config=SearchConfig(**cfg))
    resumed.fast_forward(logged)
    resumed.run()
    assert json.dumps(resumed.events) == json.dumps(full.events)


def test_fast_forward_detects_divergence(toy, mp):
    s = Search(toy, mp, config=SearchConfig(seed=3, max_iterations=10))
    s.run()
    logged = json.loads(json.dumps(s.events))
    logged[4]["cost"] = 1.0
    with pytest.raises(ValueError, match="iteration 5"):
        Search(toy, mp, config=SearchConfig(seed=3)).fast_forward(logged)


def test_rollout_with_zero_weights_is_a_dead_end(toy, mp):
    s = Search(toy, mp)
    s.best = 1.0  # below every bound
    cost, path, bounds = s.rollout(toy)
    assert cost is None and path == []


def test_rollout_from_leaf_only_evaluates(toy, mp):
    c = replay_path(toy, explore(toy, mp, budget=5).events[0]["path"])
    s = Search(toy, mp)
    cost, path, bounds = s.rollout(c)
    assert cost == evaluate_candidate(c, mp).total and path == [] and s.evaluations == 1


def test_pruning_keeps_the_optimum(mp):
    _, root = gpu.build_space(K.axpy(16, {"i": [[2, 4]]}))
    on = explore(root, mp, budget=10 ** 6, prune=True, seed=0)
    off = explore(root, mp, budget=10 ** 6, prune=False, seed=0)
    assert on.exhausted and off.exhausted
    assert on.best_cost == off.best_cost
    assert on.evaluations < off.evaluations


def test_random_search_baseline(toy, mp):
    r = random_search(toy, mp, 50, seed=1)
    assert r.evaluations == 50 and r.best_cost >= 28


def test_wilson():
    assert wilson(0, 0) == (0.0, 1.0)
    lo, hi = wilson(14, 100)
    assert lo < 0.14 < hi
    assert wilson(0, 100)[0] == 0.0


def test_unconstrained_space_has_no_dead_ends():
    root = synthetic_root(depth=3)
    r = deadend_rate(root, 200, seed=0, order=DecisionOrder(()))
    assert r.ratio == 0.0 and r.dead == 0
    assert exact_deadend_probability(root, DecisionOrder(())) == 0.0


def test_deadend_rate_matches_exact_probability(toy):
    exact = exact_deadend_probability(toy)
    r = deadend_rate(toy, 2000, seed=0)
    assert r.ci[0] <= exact <= r.ci[1]


def test_random_search_stops_at_target(toy, mp):
    full = random_search(toy, mp, 300, seed=6)
    target = sorted(full.first_hit)[len(full.first_hit) // 2]
    early = random_search(toy, mp, 300, seed=6, target=target)
    assert early.best_cost <= target
    assert early.evaluations == full.first_hit[early.best_cost] == min(
        n for cost, n in full.first_hit.items() if cost <= target)
