"""Top-K ranking metrics and the Fill-in-the-Blank protocol."""

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class EvaluationError(ValueError):
    pass


def rank_candidates(scores, candidates):
    """Candidates ordered by score, highest first; ties go to the lower index."""
    candidates = np.asarray(candidates, dtype=np.int64)
    cand = np.sort(candidates)
    order = np.argsort(-np.asarray(scores, dtype=np.float64)[cand], kind="stable")
    return cand[order]


def hit_rate(ranked, relevant, k):
    if k < 1:
        raise ValueError("K must be >= 1")
    rel = set(int(r) for r in relevant)
    return 1.0 if any(int(x) in rel for x in ranked[:k]) else 0.0


def recall_precision(ranked, relevant, k):
    if k < 1:
        raise ValueError("K must be >= 1")
    rel = set(int(r) for r in relevant)
    if not rel:
        raise ValueError("relevant set is empty")
    hits = sum(1 for x in ranked[:k] if int(x) in rel)
    return hits / len(rel), hits / k


def ndcg(ranked, relevant, k):
    """Binary-relevance NDCG@K; the ideal list holds min(|relevant|, K) hits."""
    rel = set(int(r) for r in relevant)
    if not rel:
        raise ValueError("relevant set is empty")
    dcg = sum(1.0 / math.log2(p + 2) for p, x in enumerate(ranked[:k]) if int(x) in rel)
    idcg = sum(1.0 / math.log2(p + 2) for p in range(min(len(rel), k)))
    return dcg / idcg


@dataclass
class MetricsReport:
    k: int
    hr: float
    ndcg: float
    recall: float
    precision: float
    n_users: int
    per_user: list = field(default_factory=list, repr=False)

    def as_dict(self):
        return {
            f"hr@{self.k}": self.hr,
            f"ndcg@{self.k}": self.ndcg,
            f"recall@{self.k}": self.recall,
            f"precision@{self.k}": self.precision,
            "users": self.n_users,
        }

    def to_text(self):
        lines = [f"{'metric':<14}{'value':>10}"]
        for name, val in self.as_dict().items():
            lines.append(f"{name:<14}{val:>10}" if name == "users" else f"{name:<14}{val:>10.6f}")
        return "\n".join(lines)

    def to_kv(self):
        return "".join(
            f"{name}={val}\n" if name == "users" else f"{name}={val:.6f}\n"
            for name, val in self.as_dict().items()
        )

    def write(self, path):
        Path(path).write_text(self.to_kv())


def evaluate_scores(scores, exclude, relevant_pairs, k=10, allow_empty=False):
    """Full-ranking Top-K metrics from a dense user x outfit score matrix.

    ``exclude`` is a boolean mask of outfits removed from each user's
    candidates (training positives). ``relevant_pairs`` are the held-out
    (user, outfit) pairs. Users with no relevant outfit are skipped.
    """
    relevant_pairs = np.asarray(relevant_pairs, dtype=np.int64).reshape(-1, 2)
    by_user = {}
    for u, o in relevant_pairs:
        by_user.setdefault(int(u), set()).add(int(o))
    if not by_user:
        if allow_empty:
            return None
        raise EvaluationError("no users with held-out positives to evaluate")
    n_outfits = scores.shape[1]
    rows = []
    for u in sorted(by_user):
        rel = by_user[u]
        cand = np.flatnonzero(~exclude[u]) if exclude is not None else np.arange(n_outfits)
        ranked = rank_candidates(scores[u], cand)
        r, p = recall_precision(ranked, rel, k)
        rows.append((u, hit_rate(ranked, rel, k), ndcg(ranked, rel, k), r, p))
    arr = np.array([r[1:] for r in rows])
    mean = arr.mean(axis=0)
    return MetricsReport(k=k, hr=float(mean[0]), ndcg=float(mean[1]), recall=float(mean[2]),
                         precision=float(mean[3]), n_users=len(rows), per_user=rows)


def evaluate_topk(model, experiment, k=10, split="test"):
    """Top-K report for ``split`` ("test" or "val"); never modifies the model.

    Test candidates exclude training and validation positives; validation
    candidates exclude training positives only.
    """
    if split == "test":
        exclude = experiment.positives(experiment.train, experiment.val)
        relevant = experiment.test
    elif split == "val":
        exclude = experiment.positives(experiment.train)
        relevant = experiment.val
    else:
        raise ValueError(f"unknown split {split!r}")
    return evaluate_scores(model.score_matrix(), exclude, relevant, k)


# ---------------------------------------------------------------------------
# Fill-in-the-Blank


@dataclass(frozen=True)
class FITBQuery:
    outfit: int
    position: int
    answer: int
    distractors: tuple
    candidates: tuple
    seed: int = 0


def build_fitb_queries(test_outfits, n_items, rng, count, item_category=None,
                       category_matched=False, seed=0):
    """Mask one item per query and add three distractors from outside the outfit.

    Outfits are visited in shuffled passes until ``count`` queries exist. The
    masked position is uniform; distractors are uniform over items not in the
    source outfit (restricted to the masked item's category when
    ``category_matched``); the four candidates are shuffled.
    """
    if not test_outfits:
        raise EvaluationError("no test outfits")
    all_items = np.arange(n_items)
    queries = []
    while len(queries) < count:
        for o in rng.permutation(len(test_outfits)):
            if len(queries) >= count:
                break
            items = np.asarray(test_outfits[o], dtype=np.int64)
            if len(items) == 0:
                raise EvaluationError(f"test outfit {o} is empty")
            pos = int(rng.integers(len(items)))
            answer = int(items[pos])
            pool = np.setdiff1d(all_items, items)
            if category_matched:
                pool = pool[np.asarray(item_category)[pool] == item_category[answer]]
            if len(pool) < 3:
                raise EvaluationError(f"distractor pool exhausted for test outfit {o}")
            distractors = tuple(int(x) for x in rng.choice(pool, size=3, replace=False))
            cands = np.array((answer,) + distractors)
            cands = tuple(int(x) for x in cands[rng.permutation(4)])
            queries.append(FITBQuery(outfit=int(o), position=pos, answer=answer,
                                     distractors=distractors, candidates=cands, seed=seed))
    return queries


def fitb_compositions(test_outfits, query):
    base = list(test_outfits[query.outfit])
    out = []
    for c in query.candidates:
        items = list(base)
        items[query.position] = c
        out.append(items)
    return out


def fitb_predictions(scorer, test_outfits, queries):
    """Predicted item per query: argmax score, ties to the lowest item index."""
    lists = [items for q in queries for items in fitb_compositions(test_outfits, q)]
    scores = np.asarray(scorer(lists), dtype=np.float64).reshape(len(queries), 4)
    preds = []
    for q, row in zip(queries, scores):
        best = row.max()
        preds.append(min(c for c, s in zip(q.candidates, row) if s == best))
    return preds


def fitb_accuracy(scorer, test_outfits, queries):
    """Fraction of queries whose top-scored completion uses the masked item.

    ``scorer`` maps a list of item lists to one compatibility score each,
    e.g. ``OutfitModel.compat_of``.
    """
    if not queries:
        raise EvaluationError("no FITB queries")
    preds = fitb_predictions(scorer, test_outfits, queries)
    return sum(p == q.answer for p, q in zip(preds, queries)) / len(queries)


def write_fitb_queries(path, queries, outfit_ids, item_ids):
    """One line per query: outfit, masked position, answer, distractors, seed."""
    with open(path, "w", encoding="utf-8") as fh:
        for q in queries:
            fh.write(f"{outfit_ids[q.outfit]}\t{q.position}\t{item_ids[q.answer]}\t"
                     f"{','.join(item_ids[d] for d in q.distractors)}\t{q.seed}\n")


def read_fitb_queries(path, outfit_pos, item_pos):
    queries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 5:
                raise EvaluationError(f"{path}:{lineno}: expected 5 fields")
            o, pos, ans, dis, seed = parts
            try:
                distractors = tuple(item_pos[x] for x in dis.split(","))
                answer = item_pos[ans]
                outfit = outfit_pos[o]
            except KeyError as exc:
                raise EvaluationError(f"{path}:{lineno}: unknown id {exc}") from None
            if len(distractors) != 3:
                raise EvaluationError(f"{path}:{lineno}: need 3 distractors")
            queries.append(FITBQuery(outfit=outfit, position=int(pos), answer=answer,
                                     distractors=distractors,
                                     candidates=(answer,) + distractors, seed=int(seed)))
    return queries
