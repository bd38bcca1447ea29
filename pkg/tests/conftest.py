import random

import pytest

from cloak.core import BudgetSchedule
from cloak.crypto import BlockCipher, generate_key
from cloak.proxy.engine import ProxyConfig, ProxyEngine
from cloak.storage import init_store


def make_engine(budgets=(4, 2, 2), *, n=None, element_size=16, seed=0, **cfg):
    schedule = BudgetSchedule(tuple(budgets))
    rng = random.Random(seed)
    cipher = BlockCipher(generate_key(rng), element_size, rng=rng)
    config = ProxyConfig(element_size=element_size, **cfg)
    return ProxyEngine(schedule, cipher, n=n, config=config, rng=rng)


def store_for(engine):
    return init_store(engine.capacity, engine.config.element_size, engine.initial_blocks())


@pytest.fixture
def engine_and_store():
    engine = make_engine()
    return engine, store_for(engine)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[n])
