import numpy as np
import pytest

from outfitrec.dataio import SplitSpec, SyntheticSpec, generate_synthetic, split_dataset
from outfitrec.graph import HierarchicalGraph, build_category_graph
from outfitrec.model import ModelConfig, OutfitModel
from outfitrec.training import Experiment


def brute_force_category_graph(outfit_items, item_category, n_cats):
    """Independent double-loop counter used as the oracle for the category graph."""
    g = [[0] * n_cats for _ in range(n_cats)]
    freq = [0] * n_cats
    for items in outfit_items:
        cats = [int(item_category[i]) for i in items]
        for c in cats:
            freq[c] += 1
        for a in range(n_cats):
            for b in range(n_cats):
                if a != b and a in cats and b in cats:
                    g[a][b] += 1
                elif a == b and cats.count(a) >= 2:
                    g[a][b] += 1
    w = [[0.0] * n_cats for _ in range(n_cats)]
    for c in range(n_cats):
        denom = sum(g[c][k] / freq[k] for k in range(n_cats) if freq[k] > 0)
        for k in range(n_cats):
            if denom > 0 and freq[k] > 0:
                w[c][k] = (g[c][k] / freq[k]) / denom
    return np.array(g), np.array(freq), np.array(w)


def random_outfits(rng, n_outfits, n_items, max_len=5):
    return [rng.choice(n_items, size=int(rng.integers(1, min(max_len, n_items) + 1)),
                       replace=False) for _ in range(n_outfits)]


TOY_OUTFITS = [[0, 1, 2], [1, 3], [2, 3, 4]]
TOY_CATEGORIES = [0, 1, 2, 0, 1]
TOY_INTERACTIONS = [(0, 0), (0, 1), (1, 1), (1, 2)]


def toy_model(config=None, seed=0, feature_dim=3):
    """2 users, 3 outfits, 5 items over 3 categories; every user has a history."""
    rng = np.random.default_rng(seed)
    graph = HierarchicalGraph.from_interactions(2, TOY_INTERACTIONS, TOY_OUTFITS,
                                                TOY_CATEGORIES, 3)
    cg = build_category_graph(graph.outfit_items, graph.item_category, 3)
    features = rng.normal(size=(5, feature_dim))
    config = config or ModelConfig(d=4, feature_dim=feature_dim, R=2, v=3, encoder_hidden=5,
                                   init_seed=seed)
    return OutfitModel(config, graph, cg, features)


@pytest.fixture(scope="session")
def synth_dataset():
    return generate_synthetic(SyntheticSpec(seed=0))


@pytest.fixture(scope="session")
def small_experiment():
    ds = generate_synthetic(SyntheticSpec(n_users=40, n_outfits=60, n_items=120, n_categories=5,
                                          interactions_per_user=8, heldout_outfits=20,
                                          outfit_len_max=4, seed=3))
    tr, va, te = split_dataset(ds, SplitSpec(split_seed=1))
    return ds, Experiment.from_dataset(ds, tr, va, te)
