"""Hierarchical user/outfit/item graph and the weighted category graph.

Everything here is built once, is immutable afterwards, and is cheap enough
to rebuild that nothing is persisted.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class EntityIndex:
    """Dense 0-based indices per level, assigned in sorted external-ID order."""

    users: tuple
    outfits: tuple
    items: tuple
    categories: tuple
    item_category: np.ndarray
    user_pos: dict = field(repr=False, compare=False)
    outfit_pos: dict = field(repr=False, compare=False)
    item_pos: dict = field(repr=False, compare=False)
    category_pos: dict = field(repr=False, compare=False)

    @property
    def user_count(self):
        return len(self.users)

    @property
    def outfit_count(self):
        return len(self.outfits)

    @property
    def item_count(self):
        return len(self.items)

    @property
    def category_count(self):
        return len(self.categories)

    def counts(self):
        return (self.user_count, self.outfit_count, self.item_count, self.category_count)


def _unique_sorted(ids, level):
    ids = list(ids)
    seen = set()
    for x in ids:
        if x in seen:
            raise GraphError(f"duplicate {level} id {x!r}")
        seen.add(x)
    return tuple(sorted(ids))


def build_entity_index(users, outfits, item_categories):
    """Index users, outfits and (item, category) pairs.

    ``users`` and ``outfits`` are iterables of external IDs; duplicates are an
    error. ``item_categories`` yields ``(item_id, category_id)`` pairs; an item
    listed twice (with any category) or with an empty category is rejected.
    """
    users = _unique_sorted(users, "user")
    outfits = _unique_sorted(outfits, "outfit")
    cat_of = {}
    for item, cat in item_categories:
        if cat is None or cat == "":
            raise GraphError(f"item {item!r} has no category")
        if item in cat_of:
            if cat_of[item] != cat:
                raise GraphError(
                    f"ambiguous category for item {item!r}: {cat_of[item]!r} and {cat!r}"
                )
            raise GraphError(f"duplicate item id {item!r}")
        cat_of[item] = cat
    items = tuple(sorted(cat_of))
    categories = tuple(sorted(set(cat_of.values())))
    category_pos = {c: k for k, c in enumerate(categories)}
    item_category = np.array([category_pos[cat_of[i]] for i in items], dtype=np.int64)
    return EntityIndex(
        users=users,
        outfits=outfits,
        items=items,
        categories=categories,
        item_category=item_category,
        user_pos={u: k for k, u in enumerate(users)},
        outfit_pos={o: k for k, o in enumerate(outfits)},
        item_pos={i: k for k, i in enumerate(items)},
        category_pos=category_pos,
    )


@dataclass(frozen=True)
class HierarchicalGraph:
    """Users over outfits over items.

    ``user_outfits[u]`` is the sorted history N_u, ``outfit_items[o]`` the
    ordered composition N_o, ``item_category[i]`` the item's category.
    """

    user_count: int
    outfit_count: int
    item_count: int
    category_count: int
    user_outfits: tuple
    outfit_items: tuple
    item_category: np.ndarray

    @classmethod
    def from_interactions(cls, user_count, interactions, outfit_items, item_category,
                          category_count=None):
        """Build from ``(user, outfit)`` index pairs; duplicates collapse."""
        hist = [set() for _ in range(user_count)]
        for u, o in interactions:
            hist[int(u)].add(int(o))
        item_category = np.asarray(item_category, dtype=np.int64)
        if category_count is None:
            category_count = int(item_category.max()) + 1 if len(item_category) else 0
        return cls(
            user_count=user_count,
            outfit_count=len(outfit_items),
            item_count=len(item_category),
            category_count=category_count,
            user_outfits=tuple(np.array(sorted(h), dtype=np.int64) for h in hist),
            outfit_items=tuple(np.asarray(x, dtype=np.int64) for x in outfit_items),
            item_category=item_category,
        )

    def edge_arrays(self):
        """User->outfit edges as two aligned index arrays."""
        sizes = [len(h) for h in self.user_outfits]
        users = np.repeat(np.arange(self.user_count, dtype=np.int64), sizes)
        outfits = (np.concatenate(self.user_outfits) if self.user_count
                   else np.zeros(0, dtype=np.int64))
        return users, outfits.astype(np.int64)


def validate_graph(graph):
    """List invariant violations; an empty list means the graph is well formed."""
    problems = []
    for o, items in enumerate(graph.outfit_items):
        if len(items) == 0:
            problems.append(f"outfit {o} has no items")
        for i in items:
            if not 0 <= i < graph.item_count:
                problems.append(f"outfit {o} references item {int(i)} outside [0, {graph.item_count})")
    for u, hist in enumerate(graph.user_outfits):
        if len(hist) == 0:
            problems.append(f"user {u} has an empty history")
        if len(np.unique(hist)) != len(hist):
            problems.append(f"user {u} history has duplicate outfits")
        for o in hist:
            if not 0 <= o < graph.outfit_count:
                problems.append(f"user {u} references outfit {int(o)} outside [0, {graph.outfit_count})")
    for i, c in enumerate(graph.item_category):
        if not 0 <= c < graph.category_count:
            problems.append(f"item {i} has category {int(c)} outside [0, {graph.category_count})")
    return problems


@dataclass(frozen=True)
class CategoryGraph:
    """Co-occurrence counts g(c, c'), frequencies g(c) and normalized weights w(c, c')."""

    cooccur: np.ndarray
    freq: np.ndarray
    weights: np.ndarray

    @property
    def category_count(self):
        return len(self.freq)


def _csr(outfit_items, item_category):
    sizes = np.array([len(x) for x in outfit_items], dtype=np.int64)
    ptr = np.zeros(len(outfit_items) + 1, dtype=np.int64)
    np.cumsum(sizes, out=ptr[1:])
    flat = (np.concatenate([np.asarray(x, dtype=np.int64) for x in outfit_items])
            if len(outfit_items) else np.zeros(0, dtype=np.int64))
    return ptr, np.asarray(item_category, dtype=np.int64)[flat]


def category_weights(cooccur, freq):
    """Row-normalize co-occurrence into w(c, c').

    w(c, c') = (g(c,c') / g(c')) / sum_{c''} g(c,c'') / g(c''), summing only
    over categories with g(c'') > 0. Rows with no partner are all zero.
    """
    cooccur = np.asarray(cooccur, dtype=np.float64)
    freq = np.asarray(freq, dtype=np.float64)
    inv = np.divide(1.0, freq, out=np.zeros_like(freq), where=freq > 0)
    ratio = cooccur * inv[None, :]
    total = ratio.sum(axis=1, keepdims=True)
    return np.divide(ratio, total, out=np.zeros_like(ratio), where=total > 0)


def build_category_graph(outfit_items, item_category, category_count=None):
    """Count category co-occurrence over outfits and derive edge weights.

    One count per outfit per unordered category pair. The diagonal g(c, c)
    counts outfits with two or more items of category c.
    """
    item_category = np.asarray(item_category, dtype=np.int64)
    if category_count is None:
        category_count = int(item_category.max()) + 1 if len(item_category) else 0
    ptr, slot_cat = _csr(outfit_items, item_category)
    cooccur, freq = kernels.category_cooccurrence(ptr, slot_cat, category_count)
    cooccur = np.asarray(cooccur, dtype=np.int64)
    freq = np.asarray(freq, dtype=np.int64)
    return CategoryGraph(cooccur=cooccur, freq=freq, weights=category_weights(cooccur, freq))


@dataclass(frozen=True)
class OutfitItemGraph:
    """Complete weighted item graph of one outfit.

    ``weights[a, b]`` scales the message item ``nodes[b]`` sends to item
    ``nodes[a]``; it equals w(category(a), category(b)). The diagonal is zero.
    """

    outfit: int
    nodes: np.ndarray
    weights: np.ndarray

    def edges(self):
        n = len(self.nodes)
        return [(a, b, self.weights[a, b]) for a in range(n) for b in range(n) if a != b]


def item_pair_weights(items, item_category, cat_weights):
    cats = np.asarray(item_category)[np.asarray(items, dtype=np.int64)]
    w = cat_weights[np.ix_(cats, cats)].copy()
    np.fill_diagonal(w, 0.0)
    return w


def build_outfit_item_graph(graph, category_graph, outfit):
    items = graph.outfit_items[outfit]
    if len(items) == 0:
        raise GraphError(f"outfit {outfit} has no items")
    w = item_pair_weights(items, graph.item_category, category_graph.weights)
    return OutfitItemGraph(outfit=outfit, nodes=np.array(items, dtype=np.int64), weights=w)


@dataclass(frozen=True)
class Compositions:
    """Many item lists packed into flat slot arrays.

    A slot is one item inside one composition. ``pair_dst``/``pair_src`` are
    slot indices local to each composition (offset by ``ptr`` to globalize);
    zero-weight pairs are left out because they carry no message.
    """

    items: np.ndarray
    ptr: np.ndarray
    pair_ptr: np.ndarray
    pair_dst: np.ndarray
    pair_src: np.ndarray
    pair_w: np.ndarray

    @property
    def count(self):
        return len(self.ptr) - 1

    @property
    def sizes(self):
        return np.diff(self.ptr)

    @property
    def group(self):
        return np.repeat(np.arange(self.count, dtype=np.int64), self.sizes)

    def global_pairs(self):
        offs = np.repeat(self.ptr[:-1], np.diff(self.pair_ptr))
        return self.pair_dst + offs, self.pair_src + offs, self.pair_w

    def subset(self, groups):
        """Repack the selected compositions, in the order given."""
        groups = np.asarray(groups, dtype=np.int64)
        starts, ends = self.ptr[groups], self.ptr[groups + 1]
        pstarts, pends = self.pair_ptr[groups], self.pair_ptr[groups + 1]
        slot_idx = _ranges(starts, ends)
        pair_idx = _ranges(pstarts, pends)
        ptr = np.zeros(len(groups) + 1, dtype=np.int64)
        np.cumsum(ends - starts, out=ptr[1:])
        pair_ptr = np.zeros(len(groups) + 1, dtype=np.int64)
        np.cumsum(pends - pstarts, out=pair_ptr[1:])
        return Compositions(
            items=self.items[slot_idx],
            ptr=ptr,
            pair_ptr=pair_ptr,
            pair_dst=self.pair_dst[pair_idx],
            pair_src=self.pair_src[pair_idx],
            pair_w=self.pair_w[pair_idx],
        )


def _ranges(starts, ends):
    lengths = ends - starts
    if lengths.sum() == 0:
        return np.zeros(0, dtype=np.int64)
    offs = np.repeat(starts - np.concatenate([[0], np.cumsum(lengths)[:-1]]), lengths)
    return np.arange(lengths.sum(), dtype=np.int64) + offs


def pack_compositions(item_lists, item_category, cat_weights):
    """Pack item lists with their category-inherited pair weights."""
    sizes = np.array([len(x) for x in item_lists], dtype=np.int64)
    if np.any(sizes == 0):
        raise GraphError(f"composition {int(np.argmax(sizes == 0))} has no items")
    ptr = np.zeros(len(item_lists) + 1, dtype=np.int64)
    np.cumsum(sizes, out=ptr[1:])
    items = (np.concatenate([np.asarray(x, dtype=np.int64) for x in item_lists])
             if len(item_lists) else np.zeros(0, dtype=np.int64))
    cats = np.asarray(item_category, dtype=np.int64)[items]
    # all ordered (dst, src) pairs, built per distinct composition size
    group_parts, dst_parts, src_parts = [], [], []
    for n in np.unique(sizes):
        groups = np.flatnonzero(sizes == n)
        a, b = np.nonzero(~np.eye(n, dtype=bool))
        group_parts.append(np.repeat(groups, len(a)))
        dst_parts.append(np.tile(a, len(groups)))
        src_parts.append(np.tile(b, len(groups)))
    if group_parts:
        pg = np.concatenate(group_parts)
        order = np.argsort(pg, kind="stable")
        pg = pg[order]
        dst = np.concatenate(dst_parts)[order]
        src = np.concatenate(src_parts)[order]
        w = cat_weights[cats[ptr[pg] + dst], cats[ptr[pg] + src]]
        keep = w != 0
        pg, dst, src, w = pg[keep], dst[keep], src[keep], w[keep]
    else:
        pg = dst = src = np.zeros(0, dtype=np.int64)
        w = np.zeros(0)
    pair_ptr = np.zeros(len(item_lists) + 1, dtype=np.int64)
    np.cumsum(np.bincount(pg, minlength=len(item_lists)), out=pair_ptr[1:])
    return Compositions(
        items=items,
        ptr=ptr,
        pair_ptr=pair_ptr,
        pair_dst=dst.astype(np.int64),
        pair_src=src.astype(np.int64),
        pair_w=np.asarray(w, dtype=np.float64),
    )


def category_stats_rows(category_graph, names=None, top=5):
    """Rows of (category, g(c), [(partner, w), ...] strongest first)."""
    rows = []
    for c in range(category_graph.category_count):
        w = category_graph.weights[c]
        order = sorted((k for k in range(len(w)) if w[k] > 0), key=lambda k: (-w[k], k))[:top]
        label = names[c] if names is not None else str(c)
        partners = [((names[k] if names is not None else str(k)), float(w[k])) for k in order]
        rows.append((label, int(category_graph.freq[c]), partners))
    return rows
