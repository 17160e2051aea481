"""Top-K retrieval metrics over per-user ranked lists.

Gains are linear in the aggregated label. An item counts as relevant for
recall when it carries any positive behavior label; users without relevant
items are excluded from the macro averages. Score ties break by ascending
item id so reports are deterministic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np


def rank_items(item_ids, scores) -> list[int]:
    """Item ids sorted by descending score, ties by ascending id."""
    ids = np.asarray(item_ids)
    sc = np.asarray(scores, dtype=np.float64)
    order = np.lexsort((ids, -sc))
    return [int(i) for i in ids[order]]


def recall_at_k(ranked_ids, relevant, k: int) -> float:
    """|top-K intersect relevant| / |relevant|; relevant must be nonempty."""
    relevant = set(relevant)
    if not relevant:
        raise ValueError("recall_at_k needs a nonempty relevant set")
    top = set(ranked_ids[:k])
    return len(top & relevant) / len(relevant)


def ndcg_at_k(ranked_ids, relevance: dict, k: int) -> float:
    """Position-discounted gain in the top K over the ideal ordering's.

    Linear gain, discount 1/log2(rank+1) with ranks starting at 1; returns
    0 when every label is zero.
    """
    gains = [float(relevance.get(i, 0.0)) for i in ranked_ids[:k]]
    dcg = sum(g / math.log2(r + 2) for r, g in enumerate(gains))
    ideal = sorted((float(v) for v in relevance.values()), reverse=True)[:k]
    idcg = sum(g / math.log2(r + 2) for r, g in enumerate(ideal))
    if idcg == 0.0:
        return 0.0
    return dcg / idcg


@dataclass
class EvalReport:
    k: int
    per_user: dict[int, dict[str, float]] = field(default_factory=dict)

    @property
    def n_users(self) -> int:
        return len(self.per_user)

    @property
    def recall(self) -> float:
        vals = [m["recall"] for m in self.per_user.values()]
        return float(np.mean(vals)) if vals else 0.0

    @property
    def ndcg(self) -> float:
        vals = [m["ndcg"] for m in self.per_user.values()]
        return float(np.mean(vals)) if vals else 0.0

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "n_users": self.n_users,
            "recall": self.recall,
            "ndcg": self.ndcg,
            "per_user": {str(u): self.per_user[u] for u in sorted(self.per_user)},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_table(self) -> str:
        lines = [
            f"{'metric':<12}{'mean':>10}  (k={self.k}, users={self.n_users})",
            f"{'recall@k':<12}{self.recall:>10.4f}",
            f"{'ndcg@k':<12}{self.ndcg:>10.4f}",
        ]
        return "\n".join(lines)


def evaluate_rankings(
    rankings: dict[int, list[int]],
    gains: dict[int, dict[int, float]],
    k: int,
    relevant_sets: dict[int, set] | None = None,
) -> EvalReport:
    """Macro-averaged metrics from per-user rankings.

    `gains` feeds NDCG; the recall-relevant set defaults to the positive-gain
    items but can be passed separately (e.g. when exposure contributes gain
    but not relevance). Users with an empty relevant set are skipped.
    """
    report = EvalReport(k=k)
    for uid in sorted(rankings):
        user_gains = gains.get(uid, {})
        if relevant_sets is None:
            relevant = {i for i, v in user_gains.items() if v > 0}
        else:
            relevant = relevant_sets.get(uid, set())
        if not relevant:
            continue
        ranked = rankings[uid]
        report.per_user[uid] = {
            "recall": recall_at_k(ranked, relevant, k),
            "ndcg": ndcg_at_k(ranked, user_gains, k),
        }
    return report
