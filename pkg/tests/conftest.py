import pytest

from chaosflow.bundle import builtin_library, load_scenario
from chaosflow.clock import EventBus
from chaosflow.model import parse_workflow
from chaosflow.sim import Cluster, ClusterConfig, Node, default_profiles
import numpy as np


@pytest.fixture(scope="session")
def library():
    return builtin_library()


@pytest.fixture(scope="session")
def profiles():
    return default_profiles()


def scenario(name):
    return load_scenario(name)


def workflow(text, library=None):
    return parse_workflow(text, library or builtin_library())


def small_cluster(*nodes, seed=0, **kw):
    """Cluster over ``(name, cpu, mem, labels)`` node tuples."""
    cfg = ClusterConfig(tuple(Node(n, c, m, dict(lbl)) for n, c, m, lbl in nodes), **kw)
    return Cluster(cfg, default_profiles(), np.random.default_rng(seed)), EventBus()


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
