"""Candidate mining: queries -> mutations -> per-query retrieval -> merged pool.

Candidates carry no labels. Query polarity only widens coverage (positives and
hard negatives both land in the pool); the annotator adjudicates later.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .concepts import Concept, ConceptEngine, QueryPolarity, SearchQuery
from .corpus import CorpusIndex, dedup_union
from .errors import PreconditionError

logger = logging.getLogger(__name__)

DEFAULT_PER_QUERY_K = 50
DEFAULT_MUTATION_ROUNDS = 1


@dataclass(frozen=True)
class MiningRun:
    concept_id: str
    queries: tuple[SearchQuery, ...]
    per_query_k: int
    candidate_ids: tuple[str, ...]
    stats: tuple[tuple[str, int], ...]


def mine(
    engine: ConceptEngine,
    concept: Concept,
    index: CorpusIndex,
    per_query_k: int = DEFAULT_PER_QUERY_K,
    mutation_rounds: int = DEFAULT_MUTATION_ROUNDS,
) -> MiningRun:
    if per_query_k < 1:
        raise PreconditionError("per_query_k must be positive")
    if not concept.description.strip():
        raise PreconditionError("concept description must be set before mining")

    queries = engine.generate_search_queries(concept, QueryPolarity.POSITIVE)
    queries += engine.generate_search_queries(concept, QueryPolarity.NEGATIVE)
    if queries and mutation_rounds > 0:
        queries = engine.mutate_queries(queries, mutation_rounds)

    def retrieve(query: SearchQuery) -> list[str]:
        vector = engine.gateway.embed_text(query.text)
        return [record_id for record_id, _ in index.top_k(vector, per_query_k)]

    if queries:
        with ThreadPoolExecutor(max_workers=min(8, len(queries))) as pool:
            per_query_hits = list(pool.map(retrieve, queries))
    else:
        per_query_hits = []

    candidates = dedup_union(per_query_hits)
    stats = tuple((q.text, len(hits)) for q, hits in zip(queries, per_query_hits))
    if not candidates:
        logger.warning("mining for %r produced an empty candidate pool", concept.name)
    return MiningRun(
        concept_id=concept.id,
        queries=tuple(queries),
        per_query_k=per_query_k,
        candidate_ids=tuple(candidates),
        stats=stats,
    )


def mining_table(run: MiningRun) -> str:
    """Per-query hit counts as tabular text."""
    lines = ["query\tpolarity\tlineage\thits"]
    for (text, hits), query in zip(run.stats, run.queries):
        lineage = ">".join(query.lineage)
        lines.append(f"{text}\t{query.polarity.value}\t{lineage}\t{hits}")
    lines.append(f"# candidates\t\t\t{len(run.candidate_ids)}")
    return "\n".join(lines) + "\n"

