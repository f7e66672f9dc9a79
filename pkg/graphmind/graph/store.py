"""In-memory knowledge graph: loading, indexing and bounded traversal.

Every ordered list in the indexes is sorted by entity ``norm_key`` and the
relations of an entity are kept in ascending name order, so traversals are
deterministic and reproducible byte for byte.
"""

import json
from collections import Counter, defaultdict, deque
from pathlib import Path
from types import MappingProxyType
from typing import (
    Any,
    Dict,
    FrozenSet,
    Iterable,
    Iterator,
    List,
    Mapping,
    Optional,
    Tuple,
    Union,
)

from ..exceptions import EmptyGraphError, EntityNotFoundError, GraphLoadError, InvalidInputError
from ..logging import log_info, logger
from ..models import Chain, GraphStats, Triple
from ..settings import GRAPH_FORMAT, GraphSource
from ..utils import normalize_key

Index = Mapping[str, Mapping[str, Tuple[str, ...]]]


class KnowledgeGraph:
    """An immutable typed directed multigraph.

    ``out_index[head][relation]`` lists tails and ``in_index[tail][relation]``
    lists heads, both ascending by ``norm_key``.
    """

    def __init__(self, triples: Iterable[Triple], *, source: Optional[GraphSource] = None):
        self._source = source
        self._triples: FrozenSet[Triple] = frozenset(triples)

        norm: Dict[str, str] = {}
        owner: Dict[str, str] = {}
        for t in self._triples:
            for entity in (t.head, t.tail):
                if entity in norm:
                    continue
                key = normalize_key(entity)
                if key in owner:
                    raise GraphLoadError(
                        f"Entities {owner[key]!r} and {entity!r} collide under normalization."
                    )
                norm[entity] = key
                owner[key] = entity
        self._norm = norm
        self._by_norm = owner
        self._relations = frozenset(t.relation for t in self._triples)

        out_groups: Dict[str, Dict[str, List[str]]] = defaultdict(lambda: defaultdict(list))
        in_groups: Dict[str, Dict[str, List[str]]] = defaultdict(lambda: defaultdict(list))
        for t in self._triples:
            out_groups[t.head][t.relation].append(t.tail)
            in_groups[t.tail][t.relation].append(t.head)
        self._out = self._freeze(out_groups)
        self._in = self._freeze(in_groups)
        self._ordered_entities: Optional[Tuple[str, ...]] = None

    def _freeze(self, groups: Dict[str, Dict[str, List[str]]]) -> Index:
        key = self._norm.__getitem__
        return MappingProxyType(
            {
                entity: MappingProxyType(
                    {
                        relation: tuple(sorted(others, key=key))
                        for relation, others in sorted(by_relation.items())
                    }
                )
                for entity, by_relation in groups.items()
            }
        )

    def __repr__(self) -> str:
        return (
            f"<KnowledgeGraph entities={len(self._norm)} "
            f"triples={len(self._triples)} relations={len(self._relations)}>"
        )

    def __contains__(self, entity: object) -> bool:
        return entity in self._norm

    def __len__(self) -> int:
        return len(self._triples)

    @property
    def source(self) -> Optional[GraphSource]:
        """Where the graph was loaded from, if it came from a file."""
        return self._source

    @property
    def entities(self) -> FrozenSet[str]:
        return frozenset(self._norm)

    @property
    def relations(self) -> FrozenSet[str]:
        return self._relations

    @property
    def triples(self) -> FrozenSet[Triple]:
        return self._triples

    @property
    def out_index(self) -> Index:
        return self._out

    @property
    def in_index(self) -> Index:
        return self._in

    @property
    def ordered_entities(self) -> Tuple[str, ...]:
        """All entity ids, ascending by ``norm_key``."""
        if self._ordered_entities is None:
            self._ordered_entities = tuple(sorted(self._norm, key=self._norm.__getitem__))
        return self._ordered_entities

    def norm_key(self, entity: str) -> str:
        return self._norm[self.require(entity)]

    def lookup(self, text: str) -> Optional[str]:
        """The entity whose ``norm_key`` equals the normalized ``text``, if any."""
        return self._by_norm.get(normalize_key(text))

    def require(self, entity: str) -> str:
        if entity not in self._norm:
            raise EntityNotFoundError(entity)
        return entity


# Loading.


def _parse_tsv(line: str, lineno: int) -> Optional[Triple]:
    line = line.rstrip("\r\n")
    if not line.strip() or line.lstrip().startswith("#"):
        return None
    fields = line.split("\t")
    if len(fields) != 3:
        raise GraphLoadError(
            f"expected 3 tab-separated fields, got {len(fields)}: {line!r}", line=lineno
        )
    return _make_triple(fields, lineno)


def _parse_jsonl(line: str, lineno: int) -> Optional[Triple]:
    if not line.strip():
        return None
    try:
        record = json.loads(line)
    except json.JSONDecodeError as e:
        raise GraphLoadError(f"invalid JSON: {e.msg}", line=lineno) from e
    return _parse_record(record, lineno)


def _parse_record(record: Any, lineno: int) -> Triple:
    if isinstance(record, Mapping):
        missing = [k for k in ("h", "r", "t") if k not in record]
        if missing:
            raise GraphLoadError(f"missing fields {missing}", line=lineno)
        fields = [record["h"], record["r"], record["t"]]
    elif isinstance(record, (list, tuple)):
        if len(record) != 3:
            raise GraphLoadError(
                f"expected 3 fields, got {len(record)}: {record!r}", line=lineno
            )
        fields = list(record)
    else:
        raise GraphLoadError(f"unsupported record {record!r}", line=lineno)
    if not all(isinstance(f, str) for f in fields):
        raise GraphLoadError("head, relation and tail must be strings", line=lineno)
    return _make_triple(fields, lineno)


def _make_triple(fields: List[str], lineno: int) -> Triple:
    head, relation, tail = (f.strip() for f in fields)
    if not (head and relation and tail):
        raise GraphLoadError("head, relation and tail must be nonempty", line=lineno)
    return Triple(head, relation, tail)


def _iter_triples(records: Iterable[Any], format: GRAPH_FORMAT) -> Iterator[Triple]:
    for lineno, record in enumerate(records, start=1):
        if isinstance(record, str):
            parsed = (_parse_tsv if format == "tsv" else _parse_jsonl)(record, lineno)
        else:
            parsed = _parse_record(record, lineno)
        if parsed is not None:
            yield parsed


@logger
def load_graph(
    source: Union[str, Path, Iterable[Any]],
    format: Optional[GRAPH_FORMAT] = None,
) -> KnowledgeGraph:
    """Load a knowledge graph from a triple file or a record stream.

    Files are UTF-8, either one ``head<TAB>relation<TAB>tail`` per line
    (``#`` comments and blank lines skipped) or JSON lines with string fields
    ``h``, ``r`` and ``t``. A stream may yield lines in the given format,
    mappings with ``h``/``r``/``t``, or 3-tuples. Duplicate triples collapse.
    """
    graph_source: Optional[GraphSource] = None
    if isinstance(source, (str, Path)):
        graph_source = GraphSource(path=Path(source), format=format)
        try:
            with open(graph_source.path, encoding="utf-8") as f:
                triples = list(_iter_triples(f, graph_source.format))
        except OSError as e:
            raise GraphLoadError(f"cannot read {str(source)!r}: {e}") from e
    else:
        triples = list(_iter_triples(source, format or "tsv"))

    if not triples:
        raise EmptyGraphError("the triple source holds no triples")

    graph = KnowledgeGraph(triples, source=graph_source)
    log_info(
        "Loaded graph with {entities} entities, {triples} triples, {relations} relations",
        entities=len(graph.entities),
        triples=len(graph),
        relations=len(graph.relations),
    )
    return graph


def write_triples(
    triples: Iterable[Triple], path: Union[str, Path], format: GRAPH_FORMAT = "tsv"
) -> None:
    """Write triples in a form ``load_graph`` reads back."""
    with open(path, "w", encoding="utf-8") as f:
        for t in triples:
            if format == "tsv":
                f.write(f"{t.head}\t{t.relation}\t{t.tail}\n")
            else:
                record = {"h": t.head, "r": t.relation, "t": t.tail}
                f.write(json.dumps(record, ensure_ascii=False) + "\n")


def restrict_relations(g: KnowledgeGraph, allowed: Iterable[str]) -> KnowledgeGraph:
    """A copy of ``g`` keeping only triples whose relation is in ``allowed``."""
    allowed = set(allowed)
    return KnowledgeGraph(
        (t for t in g.triples if t.relation in allowed), source=g.source
    )


# Queries.


def neighbors(g: KnowledgeGraph, e: str, k: int) -> List[Triple]:
    """Outgoing triples of ``e``: at most ``k`` per relation, relations ascending."""
    if k < 1:
        raise InvalidInputError(f"k must be positive, got {k}")
    g.require(e)
    return [
        Triple(e, relation, tail)
        for relation, tails in g.out_index.get(e, {}).items()
        for tail in tails[:k]
    ]


def _distances_to(g: KnowledgeGraph, target: str, limit: int) -> Dict[str, int]:
    """Hop distance of every entity that reaches ``target`` within ``limit`` hops."""
    dist = {target: 0}
    queue = deque([target])
    while queue:
        node = queue.popleft()
        d = dist[node]
        if d == limit:
            continue
        for heads in g.in_index.get(node, {}).values():
            for head in heads:
                if head not in dist:
                    dist[head] = d + 1
                    queue.append(head)
    return dist


def find_chains(g: KnowledgeGraph, e1: str, e2: str, h: int, n: int) -> List[Chain]:
    """Up to ``n`` directed simple chains from ``e1`` to ``e2`` of at most ``h`` hops.

    Shorter chains come first; chains of equal length are ordered by their
    sequence of ``(relation, tail norm_key)`` steps.
    """
    g.require(e1)
    g.require(e2)
    if e1 == e2:
        raise InvalidInputError("chain endpoints must differ")
    if h < 1 or n < 1:
        raise InvalidInputError(f"h and n must be positive, got h={h}, n={n}")

    dist = _distances_to(g, e2, h)
    if e1 not in dist:
        return []

    found: List[Chain] = []
    on_path = {e1}
    steps: List[Triple] = []

    def extend(node: str, remaining: int) -> Iterator[List[Triple]]:
        for relation, tails in g.out_index.get(node, {}).items():
            if remaining == 1:
                if e2 in tails:
                    yield steps + [Triple(node, relation, e2)]
                continue
            for tail in tails:
                if tail == e2 or tail in on_path:
                    continue
                if dist.get(tail, remaining) > remaining - 1:
                    continue
                on_path.add(tail)
                steps.append(Triple(node, relation, tail))
                yield from extend(tail, remaining - 1)
                steps.pop()
                on_path.discard(tail)

    for length in range(1, h + 1):
        if dist[e1] > length:
            continue
        for path in extend(e1, length):
            found.append(Chain(steps=path))
            if len(found) == n:
                return found
    return found


def stats(g: KnowledgeGraph) -> GraphStats:
    degree: Counter = Counter()
    for t in g.triples:
        degree[t.head] += 1
        degree[t.tail] += 1
    histogram = Counter(degree.values())
    return GraphStats(
        entity_count=len(g.entities),
        triple_count=len(g.triples),
        relation_count=len(g.relations),
        degree_histogram=dict(sorted(histogram.items())),
    )
