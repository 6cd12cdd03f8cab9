"""Dataset container, on-disk formats, filtering, splitting and synthetic data.

Directory layout::

    interactions.tsv      user_id <TAB> outfit_id
    outfits.tsv           outfit_id <TAB> item_id,item_id,...   (order kept)
    items.tsv             item_id <TAB> category_id
    features.bin          binary feature vectors, see write_features
    heldout_outfits.tsv   optional; outfits never used for training
    provenance.txt        optional; key=value lines
    train.tsv, val.tsv, test.tsv   optional split, same format as interactions
"""

import logging
import math
import os
import struct
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import HierarchicalGraph, build_entity_index

logger = logging.getLogger(__name__)

FEATURE_MAGIC = b"OUTFEAT1"
DATA_DIR_ENV = "OUTFITREC_DATA"


class DataError(ValueError):
    pass


@dataclass
class Dataset:
    """String-keyed dataset; ``indexed()`` produces the dense integer view."""

    interactions: list
    outfits: dict
    item_category: dict
    features: dict
    heldout_outfits: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    @property
    def feature_dim(self):
        for vec in self.features.values():
            return len(vec)
        return 0

    def validate(self):
        for o, items in {**self.outfits, **self.heldout_outfits}.items():
            if len(items) == 0:
                raise DataError(f"outfit {o!r} has no items")
            for i in items:
                if i not in self.item_category:
                    raise DataError(f"outfit {o!r} references unknown item {i!r}")
        for u, o in self.interactions:
            if o not in self.outfits:
                raise DataError(f"interaction ({u!r}, {o!r}) references unknown outfit {o!r}")
        dim = self.feature_dim
        for i in self.item_category:
            if i not in self.features:
                raise DataError(f"item {i!r} has no feature vector")
            if len(self.features[i]) != dim:
                raise DataError(f"item {i!r} feature length {len(self.features[i])} != {dim}")
        for i in self.features:
            if i not in self.item_category:
                raise DataError(f"feature vector for unknown item {i!r}")
        return self

    def index(self):
        users = sorted({u for u, _ in self.interactions})
        return build_entity_index(users, self.outfits.keys(), self.item_category.items())

    def feature_matrix(self, index):
        if index.item_count == 0:
            return np.zeros((0, self.feature_dim))
        return np.stack([np.asarray(self.features[i], dtype=np.float64) for i in index.items])

    def encode_interactions(self, index, pairs=None):
        pairs = self.interactions if pairs is None else pairs
        arr = np.array([(index.user_pos[u], index.outfit_pos[o]) for u, o in pairs],
                       dtype=np.int64)
        return arr.reshape(-1, 2)

    def outfit_item_lists(self, index):
        return [np.array([index.item_pos[i] for i in self.outfits[o]], dtype=np.int64)
                for o in index.outfits]

    def heldout_item_lists(self, index):
        return [np.array([index.item_pos[i] for i in self.heldout_outfits[o]], dtype=np.int64)
                for o in sorted(self.heldout_outfits)]

    def hierarchical_graph(self, index, pairs=None):
        return HierarchicalGraph.from_interactions(
            index.user_count,
            self.encode_interactions(index, pairs),
            self.outfit_item_lists(index),
            index.item_category,
            index.category_count,
        )


def data_dir(path=None):
    """Explicit path, else ``$OUTFITREC_DATA``, else ``./data``."""
    if path:
        return Path(path)
    return Path(os.environ.get(DATA_DIR_ENV, "data"))


# ---------------------------------------------------------------------------
# file formats


def _read_tsv(path, n_fields):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != n_fields or any(p == "" for p in parts):
                raise DataError(f"{path}:{lineno}: expected {n_fields} tab-separated fields")
            rows.append(parts)
    return rows


def read_interactions(path):
    return [(u, o) for u, o in _read_tsv(path, 2)]


def write_interactions(path, pairs):
    with open(path, "w", encoding="utf-8") as fh:
        for u, o in pairs:
            fh.write(f"{u}\t{o}\n")


def _read_outfits(path):
    out = {}
    for lineno, (o, items) in enumerate(_read_tsv(path, 2), 1):
        if o in out:
            raise DataError(f"{path}: duplicate outfit id {o!r}")
        out[o] = items.split(",")
    return out


def _write_outfits(path, outfits):
    with open(path, "w", encoding="utf-8") as fh:
        for o in sorted(outfits):
            fh.write(f"{o}\t{','.join(outfits[o])}\n")


def write_features(path, features):
    """Header: magic, uint64 item count, uint32 feature_dim (little-endian).

    Then per item: uint32 id byte length, UTF-8 id, feature_dim float64 values.
    """
    ids = sorted(features)
    dim = len(features[ids[0]]) if ids else 0
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<QI", len(ids), dim))
        for i in ids:
            raw = i.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(np.asarray(features[i], dtype="<f8").tobytes())


def read_features(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:8] != FEATURE_MAGIC:
        raise DataError(f"{path}: not a feature file (bad magic)")
    try:
        count, dim = struct.unpack_from("<QI", buf, 8)
        pos = 20
        out = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            item = buf[pos:pos + n].decode("utf-8")
            pos += n
            if pos + 8 * dim > len(buf):
                raise DataError(f"{path}: truncated feature data for item {item!r}")
            out[item] = np.frombuffer(buf, dtype="<f8", count=dim, offset=pos).astype(np.float64)
            pos += 8 * dim
    except struct.error as exc:
        raise DataError(f"{path}: truncated feature file") from exc
    return out


def load_dataset(path):
    """Read a dataset directory and enforce referential integrity."""
    path = Path(path)
    for name in ("interactions.tsv", "outfits.tsv", "items.tsv", "features.bin"):
        if not (path / name).exists():
            raise DataError(f"missing {path / name}")
    item_category = {}
    for i, c in _read_tsv(path / "items.tsv", 2):
        if i in item_category:
            raise DataError(f"{path / 'items.tsv'}: item {i!r} listed more than once")
        item_category[i] = c
    heldout = {}
    if (path / "heldout_outfits.tsv").exists():
        heldout = _read_outfits(path / "heldout_outfits.tsv")
    provenance = {}
    if (path / "provenance.txt").exists():
        with open(path / "provenance.txt", encoding="utf-8") as fh:
            for line in fh:
                if "=" in line:
                    k, v = line.rstrip("\n").split("=", 1)
                    provenance[k] = v
    ds = Dataset(
        interactions=read_interactions(path / "interactions.tsv"),
        outfits=_read_outfits(path / "outfits.tsv"),
        item_category=item_category,
        features=read_features(path / "features.bin"),
        heldout_outfits=heldout,
        provenance=provenance,
    )
    return ds.validate()


def write_dataset(dataset, path):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    write_interactions(path / "interactions.tsv", dataset.interactions)
    _write_outfits(path / "outfits.tsv", dataset.outfits)
    with open(path / "items.tsv", "w", encoding="utf-8") as fh:
        for i in sorted(dataset.item_category):
            fh.write(f"{i}\t{dataset.item_category[i]}\n")
    write_features(path / "features.bin", dataset.features)
    if dataset.heldout_outfits:
        _write_outfits(path / "heldout_outfits.tsv", dataset.heldout_outfits)
    if dataset.provenance:
        with open(path / "provenance.txt", "w", encoding="utf-8") as fh:
            for k in sorted(dataset.provenance):
                fh.write(f"{k}={dataset.provenance[k]}\n")


def write_split(path, train, val, test):
    path = Path(path)
    write_interactions(path / "train.tsv", train)
    write_interactions(path / "val.tsv", val)
    write_interactions(path / "test.tsv", test)


def read_split(path):
    path = Path(path)
    if not all((path / f).exists() for f in ("train.tsv", "val.tsv", "test.tsv")):
        return None
    return tuple(read_interactions(path / f) for f in ("train.tsv", "val.tsv", "test.tsv"))


# ---------------------------------------------------------------------------
# filtering and splitting


def kcore_filter(dataset, min_user_inter=20, min_outfit_inter=10):
    """Drop users and outfits below the thresholds until nothing changes.

    Items no longer referenced by a kept outfit (or a held-out outfit) are
    dropped afterwards.
    """
    if min_user_inter < 1 or min_outfit_inter < 1:
        raise ValueError("thresholds must be >= 1")
    pairs = sorted(set(dataset.interactions))
    while True:
        users = Counter(u for u, _ in pairs)
        outfits = Counter(o for _, o in pairs)
        kept = [(u, o) for u, o in pairs
                if users[u] >= min_user_inter and outfits[o] >= min_outfit_inter]
        if len(kept) == len(pairs):
            break
        pairs = kept
    if not pairs:
        raise DataError("filter removed everything")
    kept_outfits = {o for _, o in pairs}
    outfits = {o: items for o, items in dataset.outfits.items() if o in kept_outfits}
    used = {i for items in outfits.values() for i in items}
    used.update(i for items in dataset.heldout_outfits.values() for i in items)
    return Dataset(
        interactions=pairs,
        outfits=outfits,
        item_category={i: c for i, c in dataset.item_category.items() if i in used},
        features={i: v for i, v in dataset.features.items() if i in used},
        heldout_outfits=dict(dataset.heldout_outfits),
        provenance={**dataset.provenance,
                    "kcore": f"{min_user_inter},{min_outfit_inter}"},
    )


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    val_fraction: float = 0.1
    split_seed: int = 0

    def __post_init__(self):
        for name in ("train_fraction", "val_fraction"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")


def _floor(x):
    # guards against 20 * (1 - 0.8) = 3.9999999999999996
    return int(math.floor(x + 1e-9))


def split_dataset(dataset, spec=SplitSpec()):
    """Per-user random split into (train, val, test) interaction lists.

    The test share is rounded down and at least one training interaction is
    kept; validation takes a rounded-down fraction of each user's training
    part. Users with a single interaction stay entirely in training.
    """
    rng = np.random.default_rng(spec.split_seed)
    by_user = defaultdict(list)
    for u, o in sorted(set(dataset.interactions)):
        by_user[u].append(o)
    train, val, test = [], [], []
    single = 0
    for u in sorted(by_user):
        hist = by_user[u]
        n = len(hist)
        if n < 2:
            single += 1
            train.extend((u, o) for o in hist)
            continue
        n_test = min(_floor(n * (1.0 - spec.train_fraction)), n - 1)
        n_val = min(_floor((n - n_test) * spec.val_fraction), n - n_test - 1)
        order = rng.permutation(n)
        test.extend((u, hist[k]) for k in sorted(order[:n_test]))
        val.extend((u, hist[k]) for k in sorted(order[n_test:n_test + n_val]))
        train.extend((u, hist[k]) for k in sorted(order[n_test + n_val:]))
    if single:
        logger.warning("%d user(s) with one interaction kept entirely in training", single)
    return train, val, test


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SyntheticSpec:
    n_users: int = 200
    n_outfits: int = 300
    n_items: int = 500
    n_categories: int = 8
    style_dim: int = 8
    outfit_len_min: int = 3
    outfit_len_max: int = 5
    interactions_per_user: int = 20
    noise: float = 0.1
    heldout_outfits: int = 100
    # softmax temperature for picking an item near the outfit's style centre
    item_temperature: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("n_users", "n_outfits", "n_items", "n_categories", "style_dim",
                     "outfit_len_min", "interactions_per_user"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.outfit_len_max < self.outfit_len_min:
            raise ValueError("outfit_len_max < outfit_len_min")
        if not 0.0 <= self.noise <= 1.0:
            raise ValueError("noise must lie in [0, 1]")
        if self.heldout_outfits < 0:
            raise ValueError("heldout_outfits must be >= 0")


def _unit(rng, n, dim):
    x = rng.normal(size=(n, dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def generate_synthetic(spec):
    """Dataset with recoverable style structure.

    Items carry unit style vectors; an outfit picks one item per chosen
    category, favouring styles close to its own centre; features are style
    plus gaussian noise; users interact with the outfits whose centres best
    match their (noisily scored) preference.
    """
    if spec.outfit_len_max > spec.n_categories:
        raise ValueError("outfit_len_max exceeds n_categories with one item per category")
    if spec.interactions_per_user > spec.n_outfits:
        raise ValueError("interactions_per_user exceeds n_outfits")
    if spec.n_items < spec.n_categories:
        raise ValueError("need at least one item per category")
    rng = np.random.default_rng(spec.seed)
    cats = rng.permutation(np.arange(spec.n_items) % spec.n_categories)
    styles = _unit(rng, spec.n_items, spec.style_dim)
    members = [np.flatnonzero(cats == c) for c in range(spec.n_categories)]

    n_total = spec.n_outfits + spec.heldout_outfits
    centers = np.zeros((n_total, spec.style_dim))
    compositions = []
    seen = set()
    attempts = 0
    while len(compositions) < n_total:
        attempts += 1
        if attempts > 50 * n_total:
            raise ValueError("could not draw enough distinct outfits")
        center = _unit(rng, 1, spec.style_dim)[0]
        length = int(rng.integers(spec.outfit_len_min, spec.outfit_len_max + 1))
        chosen = rng.choice(spec.n_categories, size=length, replace=False)
        items = []
        for c in chosen:
            logits = styles[members[c]] @ center / spec.item_temperature
            p = np.exp(logits - logits.max())
            items.append(int(rng.choice(members[c], p=p / p.sum())))
        key = frozenset(items)
        if key in seen:
            continue
        seen.add(key)
        centers[len(compositions)] = center
        compositions.append(items)

    features = styles + spec.noise * rng.normal(size=styles.shape)
    prefs = _unit(rng, spec.n_users, spec.style_dim)
    affinity = prefs @ centers[:spec.n_outfits].T
    affinity = affinity + spec.noise * rng.normal(size=affinity.shape)

    def uid(k):
        return f"u{k:05d}"

    def oid(k):
        return f"o{k:05d}"

    def iid(k):
        return f"i{k:05d}"

    interactions = []
    for u in range(spec.n_users):
        top = np.argsort(-affinity[u], kind="stable")[:spec.interactions_per_user]
        interactions.extend((uid(u), oid(int(o))) for o in sorted(top))
    return Dataset(
        interactions=interactions,
        outfits={oid(k): [iid(i) for i in compositions[k]] for k in range(spec.n_outfits)},
        item_category={iid(i): f"c{int(cats[i]):03d}" for i in range(spec.n_items)},
        features={iid(i): features[i].copy() for i in range(spec.n_items)},
        heldout_outfits={f"h{k:05d}": [iid(i) for i in compositions[spec.n_outfits + k]]
                         for k in range(spec.heldout_outfits)},
        provenance={"generator": "synthetic", "seed": str(spec.seed), "noise": repr(spec.noise)},
    ).validate()


def style_cohesion(dataset, item_styles, rng=None, n_random=20000):
    """Mean within-outfit pairwise cosine minus mean random-pair cosine."""
    rng = rng or np.random.default_rng(0)
    ids = sorted(item_styles)
    pos = {i: k for k, i in enumerate(ids)}
    S = np.stack([item_styles[i] for i in ids])
    S = S / np.linalg.norm(S, axis=1, keepdims=True)
    within = []
    for items in dataset.outfits.values():
        k = [pos[i] for i in items]
        for a in range(len(k)):
            for b in range(a + 1, len(k)):
                within.append(S[k[a]] @ S[k[b]])
    a = rng.integers(0, len(ids), size=n_random)
    b = rng.integers(0, len(ids), size=n_random)
    keep = a != b
    rand = np.einsum("nd,nd->n", S[a[keep]], S[b[keep]])
    return float(np.mean(within)) - float(np.mean(rand))
