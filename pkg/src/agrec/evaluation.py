"""Top-k ranking and Recall/NDCG/Precision metrics.

Standard mode ranks every trained item except the user's training positives;
cold-start mode ranks only items absent from training interactions, scored
purely through their attribute keywords. Metrics use binary relevance and are
averaged over users with at least one test positive.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ColdItemError, ConfigError, DataError, IntegrityError
from .graphs import GraphBundle
from .ingest import SplitDataset
from .model import (Checkpoint, cold_item_embedding, final_embeddings, forward,
                    vocab_hashes)


@dataclass
class RankingResult:
    """Full candidate ordering for one user, best first.

    Ties break by ascending item index, so the ordering is deterministic.
    hit_ranks are the 1-based ranks of the test positives supplied to
    rank_items, when any were.
    """

    user: int
    ordering: np.ndarray
    hit_ranks: list[int] = field(default_factory=list)


@dataclass
class MetricsReport:
    mode: str
    k: int
    users: int
    recall: float
    ndcg: float
    precision: float
    checkpoint_hash: str = ""
    dataset_hash: str = ""

    def to_dict(self) -> dict:
        return {
            "mode": self.mode, "k": self.k, "users": self.users,
            "recall": self.recall, "ndcg": self.ndcg, "precision": self.precision,
            "checkpoint_hash": self.checkpoint_hash,
            "dataset_hash": self.dataset_hash,
        }


def rank_items(user: int, candidates, e_u: np.ndarray, e_i: np.ndarray,
               train_positives=None, test_positives=None) -> RankingResult:
    """Sort candidates by descending score for `user`, ties by ascending index."""
    candidates = np.asarray(candidates, dtype=np.int64)
    if candidates.size == 0:
        raise DataError("empty candidate set")
    if train_positives:
        overlap = set(int(c) for c in candidates) & set(train_positives)
        if overlap:
            raise DataError(
                f"candidates include training positives: {sorted(overlap)[:5]}")
    scores = e_i[candidates] @ e_u[user]
    order = np.lexsort((candidates, -scores))
    ordering = candidates[order]
    hit_ranks: list[int] = []
    if test_positives:
        mask = np.isin(ordering, np.fromiter(test_positives, dtype=np.int64))
        hit_ranks = (np.nonzero(mask)[0] + 1).tolist()
    return RankingResult(user=int(user), ordering=ordering, hit_ranks=hit_ranks)


def _topk_hits(result: RankingResult, positives, k: int) -> int:
    pos = np.fromiter(positives, dtype=np.int64)
    return int(np.isin(result.ordering[:k], pos).sum())


def recall_at_k(result: RankingResult, positives, k: int) -> float:
    if not positives:
        raise DataError("recall undefined without positives")
    return _topk_hits(result, positives, k) / len(positives)


def precision_at_k(result: RankingResult, positives, k: int) -> float:
    return _topk_hits(result, positives, k) / k


def ndcg_at_k(result: RankingResult, positives, k: int) -> float:
    """Binary-relevance NDCG with 1/log2(rank+1) discount; IDCG truncates at
    min(k, |positives|)."""
    if not positives:
        raise DataError("ndcg undefined without positives")
    pos = np.fromiter(positives, dtype=np.int64)
    hit_ranks = np.nonzero(np.isin(result.ordering[:k], pos))[0] + 1
    dcg = float(np.sum(1.0 / np.log2(hit_ranks + 1)))
    ideal = np.arange(1, min(k, len(positives)) + 1)
    idcg = float(np.sum(1.0 / np.log2(ideal + 1)))
    return dcg / idcg


def mean_recall_at_k(e_u: np.ndarray, e_i: np.ndarray,
                     positives_by_user: dict[int, set[int]],
                     train_positives: dict[int, set[int]], k: int) -> float:
    """Average Recall@k over users with positives; used for early stopping."""
    n_items = e_i.shape[0]
    every = np.arange(n_items, dtype=np.int64)
    values = []
    for user in sorted(positives_by_user):
        excluded = train_positives.get(user, ())
        if excluded:
            cand = np.setdiff1d(every, np.fromiter(excluded, dtype=np.int64),
                                assume_unique=True)
        else:
            cand = every
        if cand.size == 0:
            continue
        res = rank_items(user, cand, e_u, e_i)
        values.append(recall_at_k(res, positives_by_user[user], k))
    if not values:
        return 0.0
    return float(np.sum(np.asarray(values)) / len(values))


@dataclass
class ColdCandidates:
    """Items absent from training interactions: external IDs, their attribute
    keywords, and the (user index, item ID) test pairs that hit them."""

    ids: list[str]
    keywords: dict[str, list[str]]
    test_pairs: list[tuple[int, str]]


def _aggregate(per_user: list[tuple[float, float, float]]) -> tuple[float, float, float]:
    arr = np.asarray(per_user, dtype=np.float64)
    sums = arr.sum(axis=0)  # numpy pairwise summation keeps this order-stable
    n = arr.shape[0]
    return float(sums[0] / n), float(sums[1] / n), float(sums[2] / n)


def evaluate(checkpoint: Checkpoint, bundle: GraphBundle, split: SplitDataset,
             k: int, mode: str = "standard",
             cold: ColdCandidates | None = None,
             checkpoint_hash: str = "", dataset_hash: str = "") -> MetricsReport:
    """Score, rank and average metrics over eligible users.

    Refuses to run when the checkpoint's vocabulary hashes do not match the
    graphs rebuilt from the dataset.
    """
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if mode not in ("standard", "cold_start"):
        raise ConfigError(f"unknown evaluation mode {mode!r}")
    expected = vocab_hashes(bundle)
    stored = checkpoint.header.get("vocab_sha256")
    if stored != expected:
        raise IntegrityError("checkpoint vocabularies do not match dataset")

    config = checkpoint.config()
    stack = forward(checkpoint.tables, bundle, config)
    e_u, e_i = final_embeddings(stack, config.alpha())

    per_user: list[tuple[float, float, float]] = []
    if mode == "standard":
        by_user: dict[int, set[int]] = {}
        for u, i in split.test:
            by_user.setdefault(int(u), set()).add(int(i))
        every = np.arange(e_i.shape[0], dtype=np.int64)
        for user in sorted(by_user):
            excluded = split.user_positives.get(user, ())
            cand = np.setdiff1d(every, np.fromiter(excluded, dtype=np.int64),
                                assume_unique=True) if excluded else every
            if cand.size == 0:
                continue
            positives = by_user[user]
            res = rank_items(user, cand, e_u, e_i, test_positives=positives)
            per_user.append((recall_at_k(res, positives, k),
                             ndcg_at_k(res, positives, k),
                             precision_at_k(res, positives, k)))
    else:
        if cold is None:
            raise ConfigError("cold_start mode requires cold candidates")
        rows: list[np.ndarray] = []
        row_of: dict[str, int] = {}
        for item_id in cold.ids:
            try:
                vec = cold_item_embedding(cold.keywords.get(item_id, ()),
                                          bundle.vocab_ia, bundle.g_iia,
                                          stack, config.alpha())
            except ColdItemError:
                continue  # no trained keyword overlap: unscorable, excluded
            row_of[item_id] = len(rows)
            rows.append(vec)
        if not rows:
            raise DataError("no scorable cold items")
        cold_matrix = np.vstack(rows)
        by_user_cold: dict[int, set[int]] = {}
        for user, item_id in cold.test_pairs:
            if item_id in row_of:
                by_user_cold.setdefault(int(user), set()).add(row_of[item_id])
        cand = np.arange(cold_matrix.shape[0], dtype=np.int64)
        for user in sorted(by_user_cold):
            positives = by_user_cold[user]
            res = rank_items(user, cand, e_u, cold_matrix,
                             test_positives=positives)
            per_user.append((recall_at_k(res, positives, k),
                             ndcg_at_k(res, positives, k),
                             precision_at_k(res, positives, k)))

    if per_user:
        recall, ndcg, precision = _aggregate(per_user)
    else:
        recall = ndcg = precision = 0.0
    return MetricsReport(mode=mode, k=k, users=len(per_user), recall=recall,
                         ndcg=ndcg, precision=precision,
                         checkpoint_hash=checkpoint_hash,
                         dataset_hash=dataset_hash)
