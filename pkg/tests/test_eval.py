import math

import numpy as np
import pytest
from scipy import stats

from outfitrec.dataio import SplitSpec, split_dataset
from outfitrec.eval import (EvaluationError, FITBQuery, build_fitb_queries, evaluate_scores,
                            evaluate_topk, fitb_accuracy, fitb_predictions, hit_rate, ndcg,
                            rank_candidates, read_fitb_queries, recall_precision,
                            write_fitb_queries)
from outfitrec.model import ModelConfig
from outfitrec.training import Experiment


def naive_metrics(scores, candidates, relevant, k):
    """Exhaustive scan: position of each candidate = number of candidates beating it."""
    cands = list(candidates)

    def beats(a, b):
        return scores[a] > scores[b] or (scores[a] == scores[b] and a < b)

    rank = {c: sum(beats(o, c) for o in cands) for c in cands}
    top = [c for c in cands if rank[c] < k]
    hits = [c for c in top if c in relevant]
    dcg = sum(1 / math.log2(rank[c] + 2) for c in sorted(hits, key=rank.get))
    idcg = sum(1 / math.log2(p + 2) for p in range(min(len(relevant), k)))
    return (1.0 if hits else 0.0), dcg / idcg, len(hits) / len(relevant), len(hits) / k


def test_rank_candidates_ties_and_single():
    assert rank_candidates(np.array([0.0, 1.0]), [1]).tolist() == [1]
    assert rank_candidates(np.array([0.5, 0.5, 0.9]), [1, 0, 2]).tolist() == [2, 0, 1]


def test_rank_candidates_diagonal_model():
    u = np.array([1.0, 2.0])
    outfits = np.array([[3.0, 0.0], [0.0, 1.0], [1.0, 1.0], [-1.0, 0.0]])
    scores = outfits @ u  # [3, 2, 3, -1]
    assert rank_candidates(scores, range(4)).tolist() == [0, 2, 1, 3]


def test_metric_examples():
    assert hit_rate([5, 1, 2], {5}, 10) == 1.0
    assert hit_rate(list(range(11)), {10}, 10) == 0.0
    assert recall_precision([5] + list(range(10, 19)), {5}, 10) == (1.0, 0.1)
    assert recall_precision(list(range(10)), {42}, 10) == (0.0, 0.0)
    assert ndcg([7, 1, 2], {7}, 10) == 1.0
    assert abs(ndcg([0, 1, 2, 3], {2}, 10) - 0.5) < 1e-12
    assert ndcg(list(range(10)), set(range(10)), 10) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValueError):
        hit_rate([1], {1}, 0)


def test_metrics_match_exhaustive_oracle():
    rng = np.random.default_rng(2024)
    for _ in range(500):
        n = int(rng.integers(1, 51))
        scores = rng.integers(0, 8, size=n).astype(float)  # many ties
        cands = rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False)
        relevant = set(rng.choice(cands, size=int(rng.integers(1, len(cands) + 1)),
                                  replace=False).tolist())
        k = int(rng.integers(1, 15))
        ranked = rank_candidates(scores, cands)
        r, p = recall_precision(ranked, relevant, k)
        got = (hit_rate(ranked, relevant, k), ndcg(ranked, relevant, k), r, p)
        assert got == naive_metrics(scores, cands, relevant, k)
        assert r <= got[0] and p <= got[0] and 0.0 <= got[1] <= 1.0


def test_evaluate_scores_averages_and_excludes():
    scores = np.array([[0.9, 0.1, 0.5], [0.9, 0.1, 0.5]])
    exclude = np.array([[True, False, False], [False, False, False]])
    # user 0: candidates {1,2}, relevant {2} ranked first; user 1: relevant {1} ranked last
    rep = evaluate_scores(scores, exclude, [(0, 2), (1, 1)], k=1)
    assert rep.hr == 0.5 and rep.n_users == 2
    assert "hr@1=0.500000" in rep.to_kv()
    with pytest.raises(EvaluationError):
        evaluate_scores(scores, exclude, np.zeros((0, 2)), k=1)


def test_evaluate_topk_read_only_and_repeatable(small_experiment):
    _, ex = small_experiment
    model = ex.model(ModelConfig(d=8, feature_dim=ex.features.shape[1]))
    before = {k: v.copy() for k, v in model.params.as_dict().items()}
    a = evaluate_topk(model, ex)
    b = evaluate_topk(model, ex)
    assert a.to_kv() == b.to_kv()
    assert all(np.array_equal(before[k], v) for k, v in model.params.as_dict().items())
    assert 0 <= a.recall <= 1 and 0 <= a.ndcg <= 1


def test_untrained_hit_rate_near_random_expectation(synth_dataset):
    ex = Experiment.from_dataset(synth_dataset, *split_dataset(synth_dataset, SplitSpec()))
    model = ex.model(ModelConfig(d=16, feature_dim=ex.features.shape[1], init_seed=5))
    rep = evaluate_topk(model, ex, k=10)
    exclude = ex.positives(ex.train, ex.val)
    n_rel = np.bincount(ex.test[:, 0], minlength=ex.graph.user_count)
    users = np.flatnonzero(n_rel)
    # random ranking: P(no hit) is hypergeometric P(X = 0) with n_rel draws among candidates
    p_hit = np.array([1 - stats.hypergeom(int((~exclude[u]).sum()), int(n_rel[u]), 10).pmf(0)
                      for u in users])
    mean = p_hit.mean()
    sigma = np.sqrt((p_hit * (1 - p_hit)).sum()) / len(users)
    assert abs(rep.hr - mean) < 3 * sigma, (rep.hr, mean, sigma)


def test_fitb_query_constraints():
    rng = np.random.default_rng(0)
    outfits = [np.array([0, 1, 2]), np.array([3]), np.array([4, 5])]
    qs = build_fitb_queries(outfits, 20, rng, 300)
    assert len(qs) == 300
    for q in qs:
        items = set(outfits[q.outfit].tolist())
        assert q.answer == outfits[q.outfit][q.position]
        assert len(set(q.distractors)) == 3 and not items & set(q.distractors)
        assert sorted(q.candidates) == sorted((q.answer,) + q.distractors)
        if q.outfit == 1:
            assert q.position == 0


def test_fitb_category_matched():
    cats = np.repeat(np.arange(4), 6)
    outfits = [np.array([0, 6, 12, 18])]
    qs = build_fitb_queries(outfits, 24, np.random.default_rng(0), 50, cats,
                            category_matched=True)
    for q in qs:
        assert all(cats[d] == cats[q.answer] for d in q.distractors)
    with pytest.raises(EvaluationError, match="exhausted"):
        build_fitb_queries([np.array([0, 1, 2, 3, 4])], 6, np.random.default_rng(0), 1)


def test_fitb_position_uniform_chi_square():
    outfits = [np.arange(5) + 5 * k for k in range(10)]
    qs = build_fitb_queries(outfits, 60, np.random.default_rng(9), 10**4)
    assert stats.chisquare(np.bincount([q.position for q in qs], minlength=5)).pvalue > 0.01


def test_fitb_oracle_and_constant_scorers():
    rng = np.random.default_rng(1)
    outfits = [rng.choice(100, size=4, replace=False) for _ in range(50)]
    qs = build_fitb_queries(outfits, 100, rng, 2000)
    truth = {tuple(o.tolist()) for o in outfits}
    oracle = lambda lists: [1.0 if tuple(l) in truth else 0.0 for l in lists]
    assert fitb_accuracy(oracle, outfits, qs) == 1.0
    constant = lambda lists: np.zeros(len(lists))
    acc = fitb_accuracy(constant, outfits, qs)
    assert abs(acc - 0.25) < 0.03


def test_fitb_ties_go_to_lowest_item():
    q = FITBQuery(outfit=0, position=0, answer=9, distractors=(4, 7, 2), candidates=(9, 4, 7, 2))
    assert fitb_predictions(lambda lists: [1.0, 1.0, 0.0, 1.0], [[9, 1]], [q]) == [2]


def test_fitb_invariant_to_candidate_order(small_experiment):
    _, ex = small_experiment
    model = ex.model(ModelConfig(d=8, feature_dim=ex.features.shape[1], init_seed=2))
    outfits = ex.heldout
    qs = build_fitb_queries(outfits, ex.index.item_count, np.random.default_rng(3), 200)
    flipped = [FITBQuery(q.outfit, q.position, q.answer, q.distractors, q.candidates[::-1])
               for q in qs]
    assert fitb_accuracy(model.compat_of, outfits, qs) == \
        fitb_accuracy(model.compat_of, outfits, flipped)


def test_fitb_round_trip(tmp_path):
    outfits = [np.array([0, 1, 2]), np.array([3, 4])]
    qs = build_fitb_queries(outfits, 12, np.random.default_rng(0), 10, seed=5)
    out_ids = ["h0", "h1"]
    item_ids = [f"i{k:02d}" for k in range(12)]
    path = tmp_path / "q.tsv"
    write_fitb_queries(path, qs, out_ids, item_ids)
    back = read_fitb_queries(path, {o: k for k, o in enumerate(out_ids)},
                             {i: k for k, i in enumerate(item_ids)})
    for a, b in zip(qs, back):
        assert (a.outfit, a.position, a.answer, a.distractors, a.seed) == \
            (b.outfit, b.position, b.answer, b.distractors, b.seed)
    scorer = lambda lists: [float(sum(l)) for l in lists]
    assert fitb_accuracy(scorer, outfits, qs) == fitb_accuracy(scorer, outfits, back)
    path.write_text("h0\t0\tiXX\ti01,i02,i03\t0\n")
    with pytest.raises(EvaluationError, match="unknown id"):
        read_fitb_queries(path, {"h0": 0}, {i: k for k, i in enumerate(item_ids)})
