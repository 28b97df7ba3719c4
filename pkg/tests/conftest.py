import numpy as np
import pytest

from vneflow.types import (ResourceVector, SubstrateLink, SubstrateNode,
                           SubstrateNetwork)


def make_tiny_net():
    """Four-node star-ish substrate with hand-checkable numbers.

        0 --(100, 2ms)-- 1 --(50, 3ms)-- 2
                         |
                      (200, 1ms)
                         |
                         3  [TEE]
    """
    nodes = [
        SubstrateNode(0, ResourceVector(10, 10, 10), ResourceVector(10, 10, 10)),
        SubstrateNode(1, ResourceVector(20, 20, 20), ResourceVector(20, 20, 20)),
        SubstrateNode(2, ResourceVector(10, 10, 10), ResourceVector(10, 10, 10)),
        SubstrateNode(3, ResourceVector(8, 16, 100), ResourceVector(8, 16, 100),
                      labels=frozenset({"TEE"})),
    ]
    links = [
        SubstrateLink(0, 1, 100.0, 2.0),
        SubstrateLink(1, 2, 50.0, 3.0),
        SubstrateLink(1, 3, 200.0, 1.0),
    ]
    return SubstrateNetwork(nodes, links)


@pytest.fixture
def tiny_net():
    return make_tiny_net()


@pytest.fixture
def rng():
    return np.random.default_rng(0)
