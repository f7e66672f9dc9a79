"""Synthetic graphs with exact entity, triple and relation counts."""

import itertools
import math
import random
from typing import List, Set

from ..exceptions import InvalidInputError
from ..models import Triple

RELATION_NAMES = [
    "has_symptom",
    "treats",
    "causes",
    "is_treated_by",
    "has_complication",
    "is_risk_factor_for",
    "interacts_with",
    "is_diagnosed_by",
    "affects",
    "is_contraindicated_for",
    "belongs_to",
    "prevents",
]


def _relation_names(n: int) -> List[str]:
    names = RELATION_NAMES[:n]
    names += [f"relation_{i}" for i in range(len(names), n)]
    return names


def generate_graph(
    n_entities: int, n_triples: int, n_relations: int, seed: int = 0
) -> List[Triple]:
    """Generate ``n_triples`` unique triples over exactly ``n_entities`` entities
    and ``n_relations`` relations, deterministically for ``seed``.

    Every entity takes part in at least one triple and no triple is a self-loop.
    """
    if n_entities < 2 or n_relations < 1:
        raise InvalidInputError("need at least 2 entities and 1 relation")
    capacity = n_entities * (n_entities - 1) * n_relations
    if n_triples > capacity:
        raise InvalidInputError(f"at most {capacity} distinct triples fit, got {n_triples}")
    if n_triples < max(math.ceil(n_entities / 2), n_relations):
        raise InvalidInputError(
            f"{n_triples} triples cannot cover {n_entities} entities "
            f"and {n_relations} relations"
        )

    rng = random.Random(seed)
    width = len(str(n_entities - 1))
    entities = [f"Entity {i:0{width}d}" for i in range(n_entities)]
    relations = _relation_names(n_relations)

    triples: List[Triple] = []
    seen: Set[Triple] = set()

    def add(t: Triple) -> bool:
        if t in seen:
            return False
        seen.add(t)
        triples.append(t)
        return True

    # Cover every entity by pairing them off; relations cycle so all appear.
    order = list(range(n_entities))
    rng.shuffle(order)
    pairs = [(order[i], order[i + 1]) for i in range(0, n_entities - 1, 2)]
    if n_entities % 2:
        last = order[-1]
        pairs.append((last, rng.choice([e for e in order if e != last])))
    for i, (h, t) in enumerate(pairs):
        add(Triple(entities[h], relations[i % n_relations], entities[t]))
    for i in range(len(pairs), n_relations):
        while not add(Triple(*_random_edge(rng, entities, relations[i]))):
            pass

    remaining = n_triples - len(triples)
    if remaining > (capacity - len(triples)) // 2:
        candidates = [
            Triple(entities[h], r, entities[t])
            for h, t in itertools.permutations(range(n_entities), 2)
            for r in relations
            if Triple(entities[h], r, entities[t]) not in seen
        ]
        for t in rng.sample(candidates, remaining):
            add(t)
    else:
        while len(triples) < n_triples:
            add(Triple(*_random_edge(rng, entities, rng.choice(relations))))
    return triples


def _random_edge(rng: random.Random, entities: List[str], relation: str):
    h, t = rng.sample(range(len(entities)), 2)
    return entities[h], relation, entities[t]
