"""Filtered link-prediction ranking and metrics."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .data import FilterIndex

HEAD = "head"
TAIL = "tail"
HITS = (1, 3, 10)


@dataclass(frozen=True)
class RankResult:
    triple: tuple[int, int, int]
    side: str
    rank: float


@dataclass
class MetricsReport:
    mr: float
    mrr: float
    hits: dict[int, float]
    count: int
    per_relation: list = field(default_factory=list)

    def as_row(self) -> dict:
        row = {"MR": self.mr, "MRR": self.mrr}
        row.update({f"H@{n}": self.hits[n] for n in HITS})
        return row

    def summary(self) -> str:
        parts = [f"MR {self.mr:.2f}", f"MRR {self.mrr:.4f}"]
        parts += [f"H@{n} {self.hits[n]:.4f}" for n in HITS]
        return "  ".join(parts) + f"  (n={self.count})"


def rank_from_scores(scores, true_index: int, exclude=()) -> float:
    """Average rank of ``scores[true_index]`` among surviving candidates.

    ``exclude`` holds candidate indices removed by filtering; the true index
    itself is never removed. Ties with the true score count one half each.
    """
    s = np.asarray(scores, dtype=np.float64)
    keep = np.ones(s.shape[0], dtype=bool)
    if exclude:
        keep[np.fromiter(exclude, dtype=np.int64)] = False
    keep[true_index] = False
    target = s[true_index]
    rest = s[keep]
    greater = int(np.count_nonzero(rest > target))
    ties = int(np.count_nonzero(rest == target))
    return 1.0 + greater + ties / 2.0


def rank_triple(model, triple, filter_index: FilterIndex | None, side: str) -> RankResult:
    """Rank a true triple against all corruptions of one slot.

    ``filter_index=None`` gives the raw (unfiltered) rank.
    """
    h, r, t = (int(v) for v in triple)
    for ent in (h, t):
        if not 0 <= ent < model.n_entities:
            raise IndexError(f"entity id {ent} out of range")
    if not 0 <= r < model.n_relations:
        raise IndexError(f"relation id {r} out of range")
    with torch.no_grad():
        if side == TAIL:
            scores = model.score_all_tails(h, r)
            known, true_index = (filter_index.tails(h, r) if filter_index else ()), t
        elif side == HEAD:
            scores = model.score_all_heads(r, t)
            known, true_index = (filter_index.heads(r, t) if filter_index else ()), h
        else:
            raise ValueError(f"side must be {HEAD!r} or {TAIL!r}")
    rank = rank_from_scores(scores.double().numpy(), true_index, known)
    return RankResult((h, r, t), side, rank)


def metrics_from_ranks(ranks) -> MetricsReport:
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size == 0:
        raise ValueError("no ranks to summarize")
    return MetricsReport(
        mr=float(ranks.mean()),
        mrr=float((1.0 / ranks).mean()),
        hits={n: float((ranks <= n).mean()) for n in HITS},
        count=int(ranks.size),
    )


def collect_ranks(model, triples, filter_index) -> list[RankResult]:
    out = []
    for triple in np.asarray(triples, dtype=np.int64).reshape(-1, 3):
        out.append(rank_triple(model, triple, filter_index, HEAD))
        out.append(rank_triple(model, triple, filter_index, TAIL))
    return out


def evaluate(model, triples, filter_index: FilterIndex | None) -> MetricsReport:
    """Head- and tail-replacement ranks of every triple, averaged together."""
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    if len(triples) == 0:
        raise ValueError("cannot evaluate an empty split")
    return metrics_from_ranks([res.rank for res in collect_ranks(model, triples, filter_index)])


def per_relation_report(model, triples, filter_index, relation_names=None):
    """Metrics grouped by relation: a list of ``(relation, report, n_triples)``."""
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    if len(triples) == 0:
        raise ValueError("cannot evaluate an empty split")
    results = collect_ranks(model, triples, filter_index)
    groups: dict[int, list[float]] = {}
    for res in results:
        groups.setdefault(res.triple[1], []).append(res.rank)
    rows = []
    for r in sorted(groups):
        name = relation_names[r] if relation_names is not None else str(r)
        rows.append((name, metrics_from_ranks(groups[r]), len(groups[r]) // 2))
    return rows


TSV_HEADER = ("split", "MR", "MRR", "H@1", "H@3", "H@10")


def report_tsv(split: str, report: MetricsReport, per_relation=None) -> str:
    lines = ["\t".join(TSV_HEADER + (("relation", "triples") if per_relation else ()))]

    def fmt(rep):
        return [f"{rep.mr:.6f}", f"{rep.mrr:.6f}"] + [f"{rep.hits[n]:.6f}" for n in HITS]

    if per_relation:
        lines.append("\t".join([split, *fmt(report), "ALL", str(report.count // 2)]))
        for name, rep, n in per_relation:
            lines.append("\t".join([split, *fmt(rep), name, str(n)]))
    else:
        lines.append("\t".join([split, *fmt(report)]))
    return "\n".join(lines) + "\n"
