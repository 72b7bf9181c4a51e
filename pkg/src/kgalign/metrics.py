"""Ranking and binary alignment metrics.

One report type serves both views: ranked evaluation fills hit@k and
MRR, binary evaluation fills precision/recall/F1 and mirrors recall as
hit@1 so symbolic binary output and neural rankings line up on one
scale.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MetricsReport:
    counts: int
    hits_at: dict[int, float] | None = None
    mrr: float | None = None
    precision: float | None = None
    recall: float | None = None
    f1: float | None = None

    def as_lines(self) -> list[str]:
        """Flat ``metric<TAB>value`` lines for the metrics file."""
        lines = [f"pairs\t{self.counts}"]
        if self.hits_at is not None:
            for k in sorted(self.hits_at):
                lines.append(f"hit@{k}\t{self.hits_at[k]:.6f}")
        if self.mrr is not None:
            lines.append(f"mrr\t{self.mrr:.6f}")
        if self.precision is not None:
            lines.append(f"precision\t{self.precision:.6f}")
        if self.recall is not None:
            lines.append(f"recall\t{self.recall:.6f}")
        if self.f1 is not None:
            lines.append(f"f1\t{self.f1:.6f}")
        return lines


def evaluate_ranking(
    ranked: Mapping[int, Sequence[int]],
    gold: Mapping[int, int],
    ks: Sequence[int] = (1, 10),
) -> MetricsReport:
    """Hit@k and MRR over the gold sources; ranks are 1-based.

    A gold target absent from its list, or a source with no list at all,
    contributes 0 to every metric (the missing-list case is logged).
    """
    if not gold:
        return MetricsReport(counts=0, hits_at={k: 0.0 for k in ks}, mrr=0.0)
    hits = {k: 0 for k in ks}
    rr_sum = 0.0
    missing = 0
    for source in sorted(gold):
        target = gold[source]
        candidates = ranked.get(source)
        if candidates is None:
            missing += 1
            continue
        try:
            rank = list(candidates).index(target) + 1
        except ValueError:
            continue
        rr_sum += 1.0 / rank
        for k in ks:
            if rank <= k:
                hits[k] += 1
    if missing:
        logger.warning("%d test sources had no ranked list; counted as misses", missing)
    n = len(gold)
    return MetricsReport(
        counts=n,
        hits_at={k: hits[k] / n for k in ks},
        mrr=rr_sum / n,
    )


def evaluate_binary(
    predicted: Iterable[tuple[int, int]],
    gold: Iterable[tuple[int, int]],
) -> MetricsReport:
    """Precision/recall/F1 over exact pair matches.

    Recall doubles as a hit@1 equivalent (a one-to-one binary prediction
    is a rank-1 claim per source), so the report also fills hit@1.
    """
    pred_set = set(predicted)
    gold_set = set(gold)
    correct = len(pred_set & gold_set)
    precision = correct / len(pred_set) if pred_set else 0.0
    recall = correct / len(gold_set) if gold_set else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return MetricsReport(
        counts=len(gold_set),
        hits_at={1: recall},
        precision=precision,
        recall=recall,
        f1=f1,
    )
