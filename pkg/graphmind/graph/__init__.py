from .store import (
    KnowledgeGraph,
    find_chains,
    load_graph,
    neighbors,
    restrict_relations,
    stats,
    write_triples,
)
from .synthetic import generate_graph

__all__ = [
    "KnowledgeGraph",
    "find_chains",
    "generate_graph",
    "load_graph",
    "neighbors",
    "restrict_relations",
    "stats",
    "write_triples",
]
