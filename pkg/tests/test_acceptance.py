"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""

import math
import time
from collections import Counter

import numpy as np
import pytest

from conftest import brute_force_category_graph, random_outfits, toy_model
from outfitrec import autodiff as ad
from outfitrec.dataio import (DataError, SplitSpec, SyntheticSpec, generate_synthetic,
                              kcore_filter, split_dataset)
from outfitrec.eval import (build_fitb_queries, evaluate_topk, fitb_accuracy, hit_rate, ndcg,
                            rank_candidates, recall_precision)
from outfitrec.graph import build_category_graph
from outfitrec.model import ModelConfig, attention_map, bind, compatibility_score, init_params
from outfitrec.model import score_recommendation
from outfitrec.training import (Experiment, TrainConfig, bpr_from_scores, bpr_loss_compat,
                                bpr_loss_rec, save_checkpoint, train)
from test_dataio import _dataset_from_pairs, _naive_kcore
from test_eval import naive_metrics
from test_model import Counts

# learning rates and compat batch raised from the library defaults so 50 epochs suffice
E2E_MODEL = dict(d=64, feature_dim=8, init_seed=0)
E2E_TRAIN = dict(epochs=50, lr_rec=0.003, lr_com=0.005, batch_rec=256, batch_com=32,
                 reg_lambda=1e-4, rng_seed=1)
FITB_QUERIES = 2000


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number:2d}] {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return emit


def test_criterion_01_gradient_oracle(report):
    t0 = time.perf_counter()
    model = toy_model(seed=11)
    assert model.counts == (2, 3, 5, 3)

    def joint(tape, P):
        rec, _ = bpr_loss_rec(model, P, np.array([[0, 0, 2], [1, 2, 0], [1, 1, 0]]), 1e-2)
        com, _ = bpr_loss_compat(model, P, [0, 1, 2],
                                 [np.array([3, 1, 2]), np.array([1, 0]), np.array([2, 3, 1])],
                                 1e-2)
        return ad.add(rec, com)

    params = model.params.as_dict()
    errs = ad.relative_errors(ad.analytic_gradients(joint, params),
                              ad.finite_diff_gradients(joint, params))
    elapsed = time.perf_counter() - t0
    groups = {"E", "enc_W1", "enc_b1", "enc_W2", "enc_b2"} | {f"W{k}" for k in range(1, 8)}
    worst = max(errs, key=errs.get)
    report(1, groups <= errs.keys() and errs[worst] < 1e-4 and elapsed < 10,
           f"max rel err {errs[worst]:.2e} ({worst}) over {len(errs)} groups, {elapsed:.2f}s")


def test_criterion_02_mf_reduction(report):
    rng = np.random.default_rng(0)
    ds = generate_synthetic(SyntheticSpec(n_users=50, n_outfits=60, n_items=100, n_categories=5,
                                          interactions_per_user=5, heldout_outfits=0, seed=2))
    ex = Experiment.from_dataset(ds, ds.interactions, [], [])
    cfg = ModelConfig(d=16, feature_dim=8, enable_item_prop=False, enable_item_to_outfit=False,
                      enable_outfit_to_user=False, init_seed=4)
    model = ex.model(cfg)
    users = rng.integers(0, model.counts[0], size=1000)
    outfits = rng.integers(0, model.counts[1], size=1000)
    u_star, o_star = model.forward(bind(model.params), np.arange(model.counts[0]),
                                   np.arange(model.counts[1]))
    E = model.params.E
    mismatches = sum(
        score_recommendation(u_star.value[u], o_star.value[o]).value
        != float(np.sum(E[u] * E[model.outfit_offset + o]))
        for u, o in zip(users, outfits))
    report(2, mismatches == 0, f"{mismatches} of 1000 pairs differ from the MF dot product")


def test_criterion_03_category_graph_oracle(report):
    rng = np.random.default_rng(3)
    bad, worst_row = 0, 0.0
    for _ in range(100):
        n_cats = int(rng.integers(1, 11))
        n_items = int(rng.integers(n_cats, 40))
        item_category = np.concatenate([np.arange(n_cats),
                                        rng.integers(0, n_cats, size=n_items - n_cats)])
        outfits = random_outfits(rng, int(rng.integers(1, 51)), n_items)
        cg = build_category_graph(outfits, item_category, n_cats)
        g, freq, w = brute_force_category_graph(outfits, item_category, n_cats)
        if not (np.array_equal(cg.cooccur, g) and np.array_equal(cg.freq, freq)
                and np.allclose(cg.weights, w, rtol=0, atol=1e-15)):
            bad += 1
        sums = cg.weights.sum(axis=1)
        nz = sums != 0
        worst_row = max(worst_row, float(np.abs(sums[nz] - 1).max(initial=0.0)))
    report(3, bad == 0 and worst_row < 1e-9,
           f"{bad} of 100 datasets differ; worst row-sum deviation {worst_row:.1e}")


def test_criterion_04_metric_oracle(report):
    rng = np.random.default_rng(4)
    bad = 0
    for _ in range(500):
        n = int(rng.integers(1, 60))
        scores = rng.integers(0, 10, size=n).astype(float)
        cands = rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False)
        relevant = set(rng.choice(cands, size=int(rng.integers(1, len(cands) + 1)),
                                  replace=False).tolist())
        ranked = rank_candidates(scores, cands)
        r, p = recall_precision(ranked, relevant, 10)
        got = (hit_rate(ranked, relevant, 10), ndcg(ranked, relevant, 10), r, p)
        bad += got != naive_metrics(scores, cands, relevant, 10)
    rank3 = ndcg([0, 1, 2, 3], {2}, 10)
    report(4, bad == 0 and abs(rank3 - 0.5) < 1e-12,
           f"{bad} of 500 instances differ; rank-3 NDCG {rank3!r}")


def test_criterion_05_attention(report):
    rng = np.random.default_rng(5)
    cfg = ModelConfig(d=16, feature_dim=1, R=4, v=8, init_seed=5)
    P = bind(init_params(cfg, Counts(1, 1, 1, 1)))
    row_err = perm_err = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 9))
        I = rng.normal(size=(n, cfg.d))
        A = attention_map(I, P, cfg).value
        row_err = max(row_err, float(np.abs(A.sum(axis=1) - 1).max()))
        perm = rng.permutation(n)
        perm_err = max(perm_err, abs(compatibility_score(I, P, cfg).value
                                     - compatibility_score(I[perm], P, cfg).value))
    report(5, row_err < 1e-9 and perm_err < 1e-12,
           f"row-sum error {row_err:.1e}, permutation error {perm_err:.1e} over 1000 outfits")


@pytest.fixture(scope="module")
def synthetic():
    ds = generate_synthetic(SyntheticSpec(n_users=200, n_outfits=300, n_items=500,
                                          n_categories=8, noise=0.1, seed=0))
    ex = Experiment.from_dataset(ds, *split_dataset(ds, SplitSpec(split_seed=2)))
    queries = build_fitb_queries(ex.heldout, ex.index.item_count, np.random.default_rng(3),
                                 FITB_QUERIES)
    return ex, queries


def test_criterion_06_chance_fitb(report, synthetic):
    ex, queries = synthetic
    model = ex.model(ModelConfig(**E2E_MODEL))
    acc = fitb_accuracy(model.compat_of, ex.heldout, queries)
    report(6, 0.22 <= acc <= 0.28, f"untrained FITB {acc:.4f} on {len(queries)} queries")


def _full_run(ex, queries, out_dir):
    mc, tc = ModelConfig(**E2E_MODEL), TrainConfig(**E2E_TRAIN)
    result = train(ex, mc, tc)
    model = ex.model(mc, result.params)
    rep = evaluate_topk(model, ex)
    acc = fitb_accuracy(model.compat_of, ex.heldout, queries)
    save_checkpoint(out_dir / "model.ckpt", result.params, mc, model.counts,
                    epoch=result.best_epoch, seed=0)
    (out_dir / "report.txt").write_text(rep.to_kv() + f"fitb_accuracy={acc:.6f}\n")
    return rep, acc


@pytest.fixture(scope="module")
def first_run(synthetic, tmp_path_factory):
    ex, queries = synthetic
    out = tmp_path_factory.mktemp("run_a")
    t0 = time.perf_counter()
    rep, acc = _full_run(ex, queries, out)
    return out, rep, acc, time.perf_counter() - t0


def test_criterion_07_end_to_end(report, synthetic, first_run):
    ex, _ = synthetic
    _, rep, acc, elapsed = first_run
    base = evaluate_topk(ex.model(ModelConfig(**E2E_MODEL)), ex).ndcg
    ratio = rep.ndcg / base if base > 0 else math.inf
    report(7, ratio >= 2 and acc >= 0.5 and elapsed < 300,
           f"NDCG@10 {rep.ndcg:.4f} vs untrained {base:.4f} ({ratio:.1f}x), "
           f"FITB {acc:.4f}, {E2E_TRAIN['epochs']} epochs in {elapsed:.0f}s")


def test_criterion_08_determinism(report, synthetic, first_run, tmp_path):
    ex, queries = synthetic
    first_dir = first_run[0]
    _full_run(ex, queries, tmp_path)
    same = [(first_dir / f).read_bytes() == (tmp_path / f).read_bytes()
            for f in ("model.ckpt", "report.txt")]
    report(8, all(same), f"checkpoint identical: {same[0]}, report identical: {same[1]}")


def test_criterion_09_bpr_values(report):
    x = np.linspace(-5, 5, 11)
    eq = max(abs(float(bpr_from_scores(np.array([v]), np.array([v])).value) - math.log(2))
             for v in x)
    pair = float(bpr_from_scores(np.array([1.0, 0.5]), np.array([0.0, 0.5])).value)
    hand = math.log1p(math.exp(-1.0)) + math.log(2)
    report(9, eq < 1e-12 and abs(pair - hand) < 1e-9 and abs(pair - (0.313262 + 0.693147)) < 1e-6,
           f"equal-score error {eq:.1e}; two-triple batch {pair:.9f} vs {hand:.9f}")


def test_criterion_10_kcore(report):
    rng = np.random.default_rng(10)
    bad = 0
    for _ in range(100):
        n_u, n_o = int(rng.integers(2, 40)), int(rng.integers(2, 40))
        flat = rng.choice(n_u * n_o, size=int(rng.integers(1, n_u * n_o + 1)), replace=False)
        pairs = {(f"u{k // n_o}", f"o{k % n_o}") for k in flat}
        min_u, min_o = int(rng.integers(1, 8)), int(rng.integers(1, 8))
        expected = _naive_kcore(pairs, min_u, min_o)
        try:
            got = set(kcore_filter(_dataset_from_pairs(pairs), min_u, min_o).interactions)
        except DataError:
            got = set()
        users = Counter(u for u, _ in got)
        outfits = Counter(o for _, o in got)
        holds = all(c >= min_u for c in users.values()) and \
            all(c >= min_o for c in outfits.values())
        bad += got != expected or not holds
    report(10, bad == 0, f"{bad} of 100 instances differ from the naive oracle")
