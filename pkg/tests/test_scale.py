import random
import statistics
import time

import pytest

from graphmind.graph import find_chains, generate_graph, load_graph, stats, write_triples
from graphmind.models import SearchBlock
from graphmind.retriever import kg_search
from graphmind.settings import ChainConfig

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def large_graph(tmp_path_factory):
    path = tmp_path_factory.mktemp("scale") / "large.tsv"
    write_triples(generate_graph(62_282, 506_490, 12, seed=0), path)
    t0 = time.perf_counter()
    g = load_graph(path)
    return g, time.perf_counter() - t0


def test_large_graph_loads_in_time(large_graph):
    g, elapsed = large_graph
    s = stats(g)
    assert (s.entity_count, s.triple_count, s.relation_count) == (62_282, 506_490, 12)
    assert elapsed < 30


def test_anchor_queries_are_fast(large_graph):
    g, _ = large_graph
    rng = random.Random(0)
    entities = sorted(g.entities)
    cfg = ChainConfig()
    timings = []
    for entity in rng.sample(entities, 200):
        t0 = time.perf_counter()
        kg_search(SearchBlock(mentions=[entity]), g, cfg)
        timings.append(time.perf_counter() - t0)
    assert statistics.median(timings) < 0.05


def test_bridge_queries_are_fast(large_graph):
    g, _ = large_graph
    rng = random.Random(1)
    entities = sorted(g.entities)
    timings = []
    for _ in range(1_000):
        e1, e2 = rng.sample(entities, 2)
        t0 = time.perf_counter()
        find_chains(g, e1, e2, h=3, n=5)
        timings.append(time.perf_counter() - t0)
    assert statistics.median(timings) < 0.5
