"""Hierarchical propagation model with recommendation and compatibility heads.

Two code paths compute the same quantities:

* per-entity functions (:func:`encode_item`, :func:`propagate_items`,
  :func:`propagate_outfit`, :func:`propagate_user`,
  :func:`score_recommendation`, :func:`compatibility_score`) written with
  elementary tape ops, one outfit or user at a time;
* :class:`OutfitModel`, which batches whole subgraphs and routes item-level
  propagation through the fused kernel. Training and evaluation use this one.

Weight matrices act on column vectors, so a row-stacked input ``X`` is mapped
as ``X @ W.T``.
"""

from dataclasses import dataclass, fields, replace

import numpy as np

from . import autodiff as ad
from .graph import pack_compositions


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    d: int = 64
    feature_dim: int = 16
    R: int = 4
    v: int = 32
    leaky_slope: float = 0.2
    encoder_hidden: int = 128
    enable_item_prop: bool = True
    enable_item_to_outfit: bool = True
    enable_outfit_to_user: bool = True
    # adds a free ID embedding row to each encoded item
    item_id_embedding: bool = False
    init_seed: int = 0

    def __post_init__(self):
        for name in ("d", "feature_dim", "R", "v", "encoder_hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ConfigError(f"leaky_slope must lie in (0, 1), got {self.leaky_slope}")


PARAM_NAMES = (
    "E", "enc_W1", "enc_b1", "enc_W2", "enc_b2",
    "W1", "W2", "W3", "W4", "W5", "W6", "W7",
)


@dataclass
class ModelParams:
    """All trainable arrays.

    ``E`` stacks user rows, then outfit rows, then item rows. Encoder arrays
    carry a leading category axis.
    """

    E: np.ndarray
    enc_W1: np.ndarray
    enc_b1: np.ndarray
    enc_W2: np.ndarray
    enc_b2: np.ndarray
    W1: np.ndarray
    W2: np.ndarray
    W3: np.ndarray
    W4: np.ndarray
    W5: np.ndarray
    W6: np.ndarray
    W7: np.ndarray

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def copy(self):
        return ModelParams(**{k: v.copy() for k, v in self.as_dict().items()})

    def replace(self, **arrays):
        return replace(self, **arrays)


def expected_shapes(config, counts):
    n_users, n_outfits, n_items, n_cats = counts
    d, h, f = config.d, config.encoder_hidden, config.feature_dim
    return {
        "E": (n_users + n_outfits + n_items, d),
        "enc_W1": (n_cats, h, f),
        "enc_b1": (n_cats, h),
        "enc_W2": (n_cats, d, h),
        "enc_b2": (n_cats, d),
        "W1": (d, d),
        "W2": (d, d),
        "W3": (d, d),
        "W4": (config.R, config.v),
        "W5": (config.v, d),
        "W6": (config.R, config.v),
        "W7": (config.v, d),
    }


def entity_counts(index):
    return (index.user_count, index.outfit_count, index.item_count, index.category_count)


def _xavier(rng, shape, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_params(config, index):
    """Xavier-uniform weights and embeddings, zero encoder biases.

    ``index`` is anything exposing the four entity counts. Draw order is
    fixed, so a seed reproduces the parameters bit for bit.
    """
    counts = entity_counts(index)
    n_users, n_outfits, n_items, n_cats = counts
    for label, n in zip(("users", "outfits", "items", "categories"), counts):
        if n < 1:
            raise ConfigError(f"cannot initialize embeddings with zero {label}")
    rng = np.random.default_rng(config.init_seed)
    d, h, f = config.d, config.encoder_hidden, config.feature_dim
    n_rows = n_users + n_outfits + n_items
    return ModelParams(
        E=_xavier(rng, (n_rows, d), n_rows, d),
        enc_W1=_xavier(rng, (n_cats, h, f), f, h),
        enc_b1=np.zeros((n_cats, h)),
        enc_W2=_xavier(rng, (n_cats, d, h), h, d),
        enc_b2=np.zeros((n_cats, d)),
        W1=_xavier(rng, (d, d), d, d),
        W2=_xavier(rng, (d, d), d, d),
        W3=_xavier(rng, (d, d), d, d),
        W4=_xavier(rng, (config.R, config.v), config.v, config.R),
        W5=_xavier(rng, (config.v, d), d, config.v),
        W6=_xavier(rng, (config.R, config.v), config.v, config.R),
        W7=_xavier(rng, (config.v, d), d, config.v),
    )


def bind(params, tape=None):
    """Tensors for every parameter: tape variables, or constants if no tape."""
    if tape is None:
        return {k: ad.constant(v) for k, v in params.as_dict().items()}
    return {k: tape.variable(v, name=k) for k, v in params.as_dict().items()}


# ---------------------------------------------------------------------------
# per-entity reference path


def _row(x):
    x = ad.as_tensor(x)
    return ad.reshape(x, (1, -1)) if x.value.ndim == 1 else x


def encode_item(P, features, category, config):
    """Two-layer category encoder: ``W2 leaky(W1 x + b1) + b2`` for one item."""
    n_cats = P["enc_W1"].shape[0]
    if not 0 <= category < n_cats:
        raise ConfigError(f"unknown category {category}")
    x = _row(features)
    if x.shape[1] != config.feature_dim:
        raise ConfigError(f"feature length {x.shape[1]} != feature_dim {config.feature_dim}")
    W1 = ad.take(P["enc_W1"], [category])
    b1 = ad.take(P["enc_b1"], [category])
    W2 = ad.take(P["enc_W2"], [category])
    b2 = ad.take(P["enc_b2"], [category])
    W1 = ad.reshape(W1, W1.shape[1:])
    W2 = ad.reshape(W2, W2.shape[1:])
    h = ad.leaky_relu(ad.add(ad.matmul(x, ad.transpose(W1)), b1), config.leaky_slope)
    return ad.add(ad.matmul(h, ad.transpose(W2)), b2)


def propagate_items(item_graph, item_embeddings, W1, config):
    """Refine each item with messages from the other items of its outfit.

    ``item_embeddings`` rows follow ``item_graph.nodes``. Returns the refined
    rows in the same order.
    """
    X = ad.as_tensor(item_embeddings)
    if not config.enable_item_prop:
        return X
    n = X.shape[0]
    rows = []
    for a in range(n):
        xa = ad.take(X, [a])
        out = xa
        for b in range(n):
            if b == a:
                continue
            z = ad.matmul(ad.hadamard(xa, ad.take(X, [b])), ad.transpose(W1))
            msg = ad.scale(ad.leaky_relu(z, config.leaky_slope), item_graph.weights[a, b])
            out = ad.add(out, msg)
        rows.append(out)
    return ad.concat_rows(rows)


def propagate_outfit(refined_items, outfit_embedding, W2, config):
    """Outfit embedding plus the size-normalized transformed item messages."""
    I = ad.as_tensor(refined_items)
    o = _row(outfit_embedding)
    if not config.enable_item_to_outfit:
        return o
    n = I.shape[0]
    if n == 0:
        raise ConfigError("outfit has no items")
    msgs = ad.leaky_relu(ad.matmul(I, ad.transpose(W2)), config.leaky_slope)
    return ad.add(o, ad.scale(ad.reshape(ad.sum_rows(ad.transpose(msgs)), (1, -1)), 1.0 / n))


def propagate_user(refined_outfits, user_embedding, W3, config):
    """User embedding plus history-normalized outfit messages; empty history keeps it."""
    u = _row(user_embedding)
    O = ad.as_tensor(refined_outfits)
    k = O.shape[0]
    if not config.enable_outfit_to_user or k == 0:
        return u
    msgs = ad.leaky_relu(ad.matmul(O, ad.transpose(W3)), config.leaky_slope)
    return ad.add(u, ad.scale(ad.reshape(ad.sum_rows(ad.transpose(msgs)), (1, -1)), 1.0 / k))


def score_recommendation(user_refined, outfit_refined):
    """Inner product of refined user and outfit vectors."""
    u, o = _row(user_refined), _row(outfit_refined)
    if u.shape != o.shape:
        raise ValueError(f"dimension mismatch {u.shape} vs {o.shape}")
    return ad.sum_all(ad.hadamard(u, o))


def compatibility_score(refined_items, P, config):
    """Attention-weighted multi-view compatibility of one outfit.

    ``refined_items`` is the n x d matrix of refined item rows. Attention
    ``A`` and scores ``C`` are both R x n; the score is the sum over views of
    the row inner products.
    """
    I = ad.as_tensor(refined_items)
    if I.shape[0] == 0:
        raise ConfigError("outfit has no items")
    slope = config.leaky_slope
    It = ad.transpose(I)
    A = ad.softmax_rows(ad.matmul(P["W4"], ad.leaky_relu(ad.matmul(P["W5"], It), slope)))
    C = ad.leaky_relu(ad.matmul(P["W6"], ad.leaky_relu(ad.matmul(P["W7"], It), slope)), slope)
    return ad.sum_all(ad.hadamard(A, C))


def attention_map(refined_items, P, config):
    I = ad.as_tensor(refined_items)
    slope = config.leaky_slope
    return ad.softmax_rows(ad.matmul(P["W4"], ad.leaky_relu(ad.matmul(P["W5"], ad.transpose(I)), slope)))


# ---------------------------------------------------------------------------
# batched path


@dataclass(frozen=True)
class ForwardOutputs:
    item_refined: ad.Tensor
    outfit_refined: ad.Tensor
    user_refined: ad.Tensor
    scores: ad.Tensor = None


class OutfitModel:
    """Binds a config and parameters to the training graph.

    ``graph`` supplies compositions N_o and the (training) histories N_u;
    ``category_graph`` the pair weights; ``features`` one row per item.
    """

    def __init__(self, config, graph, category_graph, features, params=None):
        features = np.asarray(features, dtype=np.float64)
        if features.shape != (graph.item_count, config.feature_dim):
            raise ConfigError(
                f"features shape {features.shape} != ({graph.item_count}, {config.feature_dim})"
            )
        self.config = config
        self.graph = graph
        self.category_graph = category_graph
        self.features = features
        self.item_category = graph.item_category
        self.counts = (graph.user_count, graph.outfit_count, graph.item_count,
                       graph.category_count)
        self.params = params if params is not None else init_params(config, graph)
        self.outfits = pack_compositions(graph.outfit_items, graph.item_category,
                                         category_graph.weights)
        self.edge_user, self.edge_outfit = graph.edge_arrays()
        self.history_size = np.array([len(h) for h in graph.user_outfits], dtype=np.int64)
        self._user_edge_ptr = np.zeros(graph.user_count + 1, dtype=np.int64)
        np.cumsum(self.history_size, out=self._user_edge_ptr[1:])

    @property
    def outfit_offset(self):
        return self.graph.user_count

    @property
    def item_offset(self):
        return self.graph.user_count + self.graph.outfit_count

    def pack(self, item_lists):
        return pack_compositions(item_lists, self.item_category, self.category_graph.weights)

    # -- levels ---------------------------------------------------------

    def encode_items(self, P, items):
        """Initial embeddings of the given items, one row each."""
        items = np.asarray(items, dtype=np.int64)
        cats = self.item_category[items]
        slope = self.config.leaky_slope
        h = ad.leaky_relu(ad.grouped_linear(self.features[items], cats, P["enc_W1"], P["enc_b1"]),
                          slope)
        e = ad.grouped_linear(h, cats, P["enc_W2"], P["enc_b2"])
        if self.config.item_id_embedding:
            e = ad.add(e, ad.take(P["E"], items + self.item_offset))
        return e

    def refine_items(self, P, comps):
        """Refined item rows for every slot of ``comps``."""
        uniq, inverse = np.unique(comps.items, return_inverse=True)
        X = ad.take(self.encode_items(P, uniq), inverse.reshape(-1))
        if not self.config.enable_item_prop or len(comps.pair_w) == 0:
            return X
        dst, src, w = comps.global_pairs()
        return ad.add(X, ad.pair_messages(X, P["W1"], dst, src, w, self.config.leaky_slope))

    def refine_outfits(self, P, outfits):
        outfits = np.asarray(outfits, dtype=np.int64)
        o = ad.take(P["E"], outfits + self.outfit_offset)
        if not self.config.enable_item_to_outfit or len(outfits) == 0:
            return o
        comps = self.outfits.subset(outfits)
        I = self.refine_items(P, comps)
        msgs = ad.leaky_relu(ad.matmul(I, ad.transpose(P["W2"])), self.config.leaky_slope)
        sizes = comps.sizes
        agg = ad.scatter_rows(msgs, comps.group, len(outfits), 1.0 / np.repeat(sizes, sizes))
        return ad.add(o, agg)

    def _history_edges(self, users):
        starts = self._user_edge_ptr[users]
        ends = self._user_edge_ptr[users + 1]
        lengths = ends - starts
        local_user = np.repeat(np.arange(len(users), dtype=np.int64), lengths)
        idx = np.concatenate([np.arange(s, e) for s, e in zip(starts, ends)]) if len(users) else []
        outfits = self.edge_outfit[np.asarray(idx, dtype=np.int64)]
        return local_user, outfits, lengths

    def forward(self, P, users, outfits):
        """Refined vectors for ``users`` and ``outfits`` over their shared subgraph.

        Returns ``(u_star, o_star)`` with rows aligned to the inputs. Outfits
        reached through user histories are refined once and shared.
        """
        users = np.asarray(users, dtype=np.int64)
        outfits = np.asarray(outfits, dtype=np.int64)
        u = ad.take(P["E"], users)
        if not self.config.enable_outfit_to_user:
            return u, self.refine_outfits(P, outfits)
        edge_user, edge_outfit, lengths = self._history_edges(users)
        needed, inv = np.unique(np.concatenate([outfits, edge_outfit]), return_inverse=True)
        inv = inv.reshape(-1)
        o_all = self.refine_outfits(P, needed)
        o_star = ad.take(o_all, inv[:len(outfits)])
        if len(edge_outfit) == 0:
            return u, o_star
        hist = ad.take(o_all, inv[len(outfits):])
        msgs = ad.leaky_relu(ad.matmul(hist, ad.transpose(P["W3"])), self.config.leaky_slope)
        agg = ad.scatter_rows(msgs, edge_user, len(users), 1.0 / lengths[edge_user])
        return ad.add(u, agg), o_star

    def rec_scores(self, P, users, outfits):
        """Scores for aligned ``(users[k], outfits[k])`` pairs."""
        users = np.asarray(users, dtype=np.int64)
        outfits = np.asarray(outfits, dtype=np.int64)
        uniq_u, inv_u = np.unique(users, return_inverse=True)
        uniq_o, inv_o = np.unique(outfits, return_inverse=True)
        u_star, o_star = self.forward(P, uniq_u, uniq_o)
        return ad.sum_rows(ad.hadamard(ad.take(u_star, inv_u.reshape(-1)),
                                       ad.take(o_star, inv_o.reshape(-1))))

    def compat_scores(self, P, comps):
        """Compatibility score for every composition in ``comps``."""
        I = self.refine_items(P, comps)
        slope = self.config.leaky_slope
        group = comps.group
        logits = ad.matmul(ad.leaky_relu(ad.matmul(I, ad.transpose(P["W5"])), slope),
                           ad.transpose(P["W4"]))
        A = ad.segment_softmax(logits, group, comps.count)
        C = ad.leaky_relu(
            ad.matmul(ad.leaky_relu(ad.matmul(I, ad.transpose(P["W7"])), slope),
                      ad.transpose(P["W6"])),
            slope,
        )
        return ad.scatter_rows(ad.sum_rows(ad.hadamard(A, C)), group, comps.count)

    # -- inference helpers (no tape) -------------------------------------

    def full_forward(self, params=None):
        P = bind(params if params is not None else self.params)
        users = np.arange(self.graph.user_count)
        outfits = np.arange(self.graph.outfit_count)
        u_star, o_star = self.forward(P, users, outfits)
        return ForwardOutputs(item_refined=None, outfit_refined=o_star, user_refined=u_star)

    def score_matrix(self, params=None):
        """Dense user x outfit score matrix from one full forward pass."""
        out = self.full_forward(params)
        return out.user_refined.value @ out.outfit_refined.value.T

    def compat_of(self, item_lists, params=None):
        P = bind(params if params is not None else self.params)
        return self.compat_scores(P, self.pack(item_lists)).value
