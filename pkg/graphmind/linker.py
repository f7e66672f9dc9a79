"""Soft entity linking: match a free-text mention to the most similar graph
entity, accepting it only when the cosine similarity reaches ``tau``.
"""

import threading
import weakref
from abc import ABC, abstractmethod
from collections import Counter
from typing import Dict, Iterable, List, Optional

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import norm as sparse_norm
from sklearn.feature_extraction.text import CountVectorizer
from sklearn.preprocessing import normalize

from .exceptions import DimensionMismatchError, InvalidInputError
from .graph import KnowledgeGraph
from .models import GMBaseModel
from .utils import normalize_key

BOUNDARY = "\x02"
TRIGRAM = 3
N_FEATURES = 2**22
# Cosine scores are rounded so equal inputs compare equal across platforms.
SCORE_DECIMALS = 12


class EmbeddingVector:
    """A nonnegative sparse row vector of fixed dimension."""

    __slots__ = ("values",)

    def __init__(self, values: sparse.csr_matrix):
        self.values = sparse.csr_matrix(values)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def nnz(self) -> int:
        return self.values.count_nonzero()

    def scale(self, factor: float) -> "EmbeddingVector":
        if factor <= 0:
            raise InvalidInputError(f"scale factor must be positive, got {factor}")
        return EmbeddingVector(self.values * factor)

    def to_dense(self) -> np.ndarray:
        return self.values.toarray().ravel()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EmbeddingVector):
            return NotImplemented
        return self.dim == other.dim and (self.values != other.values).nnz == 0

    def __repr__(self) -> str:
        return f"<EmbeddingVector dim={self.dim} nnz={self.nnz}>"


class LinkResult(GMBaseModel):
    """``entity`` is set when the mention matched; ``score`` is the best similarity seen."""

    entity: Optional[str] = None
    score: float = 0.0

    @property
    def matched(self) -> bool:
        return self.entity is not None


class Embedder(ABC):
    """Maps text to fixed-dimension nonnegative vectors."""

    @property
    @abstractmethod
    def dim(self) -> int:
        raise NotImplementedError

    @abstractmethod
    def embed_batch(self, texts: Iterable[str]) -> sparse.csr_matrix:
        """One row per text."""
        raise NotImplementedError

    def embed(self, text: str) -> EmbeddingVector:
        return EmbeddingVector(self.embed_batch([text]))


def _pad(text: str) -> str:
    key = normalize_key(text)
    if not key:
        raise InvalidInputError("cannot embed empty text")
    # Short strings still yield one trigram.
    return key + BOUNDARY * (TRIGRAM - len(key)) if len(key) < TRIGRAM else key


class TrigramEmbedder(Embedder):
    """Character-trigram counts of the normalized text.

    Every distinct trigram gets its own column the first time it is seen, so
    two strings share a nonzero product only when they share a trigram.
    ``n_features`` bounds how many distinct trigrams one embedder can index.
    """

    def __init__(self, n_features: int = N_FEATURES):
        self._n_features = n_features
        self._analyze = CountVectorizer(
            analyzer="char",
            ngram_range=(TRIGRAM, TRIGRAM),
            preprocessor=_pad,
            lowercase=False,
        ).build_analyzer()
        self._vocabulary: Dict[str, int] = {}
        self._lock = threading.Lock()

    @property
    def dim(self) -> int:
        return self._n_features

    def _column(self, trigram: str) -> int:
        column = self._vocabulary.get(trigram)
        if column is None:
            if len(self._vocabulary) >= self._n_features:
                raise InvalidInputError(
                    f"trigram vocabulary is full ({self._n_features} features)"
                )
            column = self._vocabulary[trigram] = len(self._vocabulary)
        return column

    def embed_batch(self, texts: Iterable[str]) -> sparse.csr_matrix:
        rows: List[int] = []
        columns: List[int] = []
        counts: List[int] = []
        n_rows = 0
        with self._lock:
            for row, text in enumerate(texts):
                n_rows = row + 1
                for trigram, count in Counter(self._analyze(text)).items():
                    rows.append(row)
                    columns.append(self._column(trigram))
                    counts.append(count)
        return sparse.csr_matrix(
            (np.asarray(counts, dtype=np.float64), (rows, columns)),
            shape=(n_rows, self._n_features),
        )


def _clip(scores: np.ndarray) -> np.ndarray:
    return np.clip(np.round(scores, SCORE_DECIMALS), 0.0, 1.0)


def similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Cosine similarity of two nonnegative vectors, in ``[0, 1]``."""
    if a.dim != b.dim:
        raise DimensionMismatchError(f"dimensions differ: {a.dim} != {b.dim}")
    norms = sparse_norm(a.values) * sparse_norm(b.values)
    if norms == 0:
        return 0.0
    dot = a.values.multiply(b.values).sum()
    return float(_clip(np.array(dot / norms)))


class EntityLinker:
    """Links mentions against one graph with an exhaustive scan of its entities.

    Entity rows are kept in ``norm_key`` order so the first maximum is the
    tie-break winner. The matrix is stored by column so a mention only touches
    the columns of its own trigrams.
    """

    def __init__(self, graph: KnowledgeGraph, embedder: Optional[Embedder] = None):
        self.graph = graph
        self.embedder = embedder or TrigramEmbedder()
        self._entities: List[str] = list(graph.ordered_entities)
        self._columns = normalize(
            self.embedder.embed_batch(graph.norm_key(e) for e in self._entities),
            norm="l2",
        ).tocsc()

    def scores(self, mention: str) -> np.ndarray:
        """Similarity of ``mention`` to every entity, in ``norm_key`` order.

        Trigrams no entity has add to the mention's norm only.
        """
        query = self.embedder.embed_batch([mention]).tocsr()
        query.sum_duplicates()
        weights = query.data / sparse_norm(query)
        return _clip(self._columns[:, query.indices] @ weights)

    def link(self, mention: str, tau: float) -> LinkResult:
        if not 0.0 < tau <= 1.0:
            raise InvalidInputError(f"tau must be in (0, 1], got {tau}")
        if not mention.strip():
            raise InvalidInputError("mention must be nonempty")
        if not self._entities:
            raise InvalidInputError("cannot link against an empty graph")

        exact = self.graph.lookup(mention)
        if exact is not None:
            return LinkResult(entity=exact, score=1.0)

        scores = self.scores(mention)
        best = int(np.argmax(scores))
        score = float(scores[best])
        if score >= tau:
            return LinkResult(entity=self._entities[best], score=score)
        return LinkResult(score=score)


_default_embedder = TrigramEmbedder()
_linkers: "weakref.WeakKeyDictionary[KnowledgeGraph, EntityLinker]" = (
    weakref.WeakKeyDictionary()
)
_linkers_lock = threading.Lock()


def embed(text: str) -> EmbeddingVector:
    """Embed ``text`` with the default trigram embedder."""
    return _default_embedder.embed(text)


def linker_for(g: KnowledgeGraph) -> EntityLinker:
    """The cached default linker for ``g``."""
    with _linkers_lock:
        linker = _linkers.get(g)
        if linker is None:
            linker = _linkers[g] = EntityLinker(g, _default_embedder)
        return linker


def link(mention: str, g: KnowledgeGraph, tau: float) -> LinkResult:
    """Link ``mention`` to an entity of ``g`` if the best score reaches ``tau``."""
    return linker_for(g).link(mention, tau)
