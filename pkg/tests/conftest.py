import functools
from pathlib import Path

import pytest

from implspace import gpu
from implspace import kernels as K
from implspace.dsl import parse
from implspace.space import Backbone, bits
from implspace.propagate import apply_mask

FIXTURES = Path(__file__).parent / "fixtures"


def order_backbone(insts, dims, **extra_sets):
    objs = tuple(insts) + tuple(dims)
    sets = {"Statements": objs, "Insts": tuple(insts), "Dimensions": tuple(dims)}
    sets.update(extra_sets)
    return Backbone(objects=objs, sets=sets)


@functools.lru_cache(maxsize=None)
def order_defn():
    return parse(gpu.space_source("order.space"))


def toy_kernel():
    return K.matmul(4, 4, 4, {"m": [[2]], "n": [[2]]})


@functools.lru_cache(maxsize=None)
def toy_space():
    return gpu.build_space(toy_kernel())


@functools.lru_cache(maxsize=None)
def mid_space():
    return gpu.build_space(K.matmul(256, 256, 256, {"m": [[2, 32], [2, 4]], "n": [[2, 32], [2, 4]]}))


def leaves(c):
    """Every fully specified candidate below c, in slot order (no pruning)."""
    for idx, d in enumerate(c.doms):
        if d & (d - 1):
            break
    else:
        yield c
        return
    for b in bits(d):
        k = apply_mask(c, idx, 1 << b)
        if k is not None:
            yield from leaves(k)


def full_vector(c):
    return tuple(inst.values[d.bit_length() - 1] for inst, d in zip(c.model.instances, c.doms))


@pytest.fixture(scope="session")
def toy():
    return toy_space()[1]


@pytest.fixture(scope="session")
def mp():
    return gpu.MachineParams()
