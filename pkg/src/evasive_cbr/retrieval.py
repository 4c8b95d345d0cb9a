"""Same-risk-type case recall: cosine top-k and a seeded random baseline."""

from __future__ import annotations

import random
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .casebase import CaseBaseView
from .errors import DataError, LengthMismatch, MissingEmbedding, ZeroVector
from .taxonomy import RiskType


@dataclass(frozen=True)
class RetrievalQuery:
    risk_type: RiskType
    embedding: tuple[float, ...]
    k: int

    def __post_init__(self):
        if self.k < 0:
            raise DataError("k must be >= 0")
        object.__setattr__(self, "embedding", tuple(float(x) for x in self.embedding))


@dataclass(frozen=True)
class Hit:
    case_id: str
    similarity: float | None


def cosine_similarity(a: Sequence[float], b: Sequence[float]) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise LengthMismatch(f"vector lengths differ: {a.shape[0]} vs {b.shape[0]}")
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine similarity undefined for a zero vector")
    return min(1.0, max(-1.0, float(np.dot(a, b)) / (na * nb)))


def _partition_similarities(view: CaseBaseView, risk_type: RiskType,
                            query: Sequence[float]) -> np.ndarray:
    ids = view.index[risk_type]
    for cid in ids:
        if view[cid].embedding is None:
            raise MissingEmbedding(cid)
    q = np.asarray(query, dtype=np.float64)
    if not ids:
        return np.zeros(0)
    if view.dim is not None and q.shape[0] != view.dim:
        raise LengthMismatch(f"query has {q.shape[0]} components, store expects {view.dim}")
    qn = float(np.linalg.norm(q))
    if qn == 0.0:
        raise ZeroVector("query embedding is the zero vector")
    m = view.matrix(risk_type)
    # Row-wise multiply-and-sum keeps identical rows bit-identical (ties stay ties).
    norms = np.sqrt((m * m).sum(axis=1))
    if np.any(norms == 0.0):
        raise ZeroVector(f"case {ids[int(np.argmin(norms))]!r} has a zero embedding")
    sims = (m * (q / qn)).sum(axis=1) / norms
    return np.clip(sims, -1.0, 1.0)


def retrieve_similar(view: CaseBaseView, q: RetrievalQuery) -> list[Hit]:
    """Top-k cases of the query's risk type by cosine, ties by ascending case_id."""
    if q.k == 0:
        return []
    ids = view.index[q.risk_type]
    sims = _partition_similarities(view, q.risk_type, q.embedding)
    order = sorted(range(len(ids)), key=lambda i: (-sims[i], ids[i]))
    return [Hit(ids[i], float(sims[i])) for i in order[: q.k]]


def retrieve_random(view: CaseBaseView, risk_type: RiskType, k: int, seed: int,
                    query: Sequence[float] | None = None, cross_type: bool = False) -> list[Hit]:
    """Uniform sample without replacement from the risk-type partition.

    With ``cross_type`` the whole case base is the sampling pool. The
    similarity field is filled only when a query embedding is supplied.
    """
    if k < 0:
        raise DataError("k must be >= 0")
    if k == 0:
        return []
    pool = [c.case_id for c in view.cases] if cross_type else list(view.index[risk_type])
    picked = random.Random(seed).sample(pool, min(k, len(pool)))
    hits = []
    for cid in picked:
        sim = None
        emb = view[cid].embedding
        if query is not None and emb is not None:
            sim = cosine_similarity(emb, query)
        hits.append(Hit(cid, sim))
    return hits

