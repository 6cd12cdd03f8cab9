"""Joint BPR training of the recommendation and compatibility heads."""

import logging
import time
from dataclasses import dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .eval import evaluate_scores
from .graph import build_category_graph
from .model import ModelConfig, ModelParams, OutfitModel, bind, expected_shapes

logger = logging.getLogger(__name__)


class DivergenceError(FloatingPointError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr_rec: float = 1e-3
    lr_com: float = 5e-4
    reg_lambda: float = 1e-4
    batch_rec: int = 256
    batch_com: int = 256
    epochs: int = 50
    rng_seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    neg_resample_per_epoch: bool = True
    eval_k: int = 10

    def __post_init__(self):
        if self.lr_rec < 0 or self.lr_com < 0:
            raise ValueError("learning rates must be non-negative")
        if self.reg_lambda < 0:
            raise ValueError("reg_lambda must be >= 0")
        if self.batch_rec < 1 or self.batch_com < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class Experiment:
    """Everything training needs, in dense-index form.

    ``graph`` holds only training histories; ``val``/``test`` are (n, 2)
    arrays of (user, outfit) pairs; ``heldout`` lists item arrays of outfits
    never used for training.
    """

    index: object
    graph: object
    category_graph: object
    features: np.ndarray
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    heldout: list = field(default_factory=list)

    @classmethod
    def from_dataset(cls, dataset, train, val, test):
        index = dataset.index()
        graph = dataset.hierarchical_graph(index, train)
        return cls(
            index=index,
            graph=graph,
            category_graph=build_category_graph(graph.outfit_items, graph.item_category,
                                                graph.category_count),
            features=dataset.feature_matrix(index),
            train=dataset.encode_interactions(index, train),
            val=dataset.encode_interactions(index, val),
            test=dataset.encode_interactions(index, test),
            heldout=dataset.heldout_item_lists(index),
        )

    def positives(self, *parts):
        n_users, n_outfits = self.graph.user_count, self.graph.outfit_count
        mask = np.zeros((n_users, n_outfits), dtype=bool)
        for arr in parts:
            if len(arr):
                mask[arr[:, 0], arr[:, 1]] = True
        return mask

    def model(self, config, params=None):
        return OutfitModel(config, self.graph, self.category_graph, self.features, params)


# ---------------------------------------------------------------------------
# sampling


def sample_rec_triples(train_pairs, observed, rng):
    """One negative per positive, uniform over the user's unobserved outfits.

    ``observed`` is a (users x outfits) boolean mask of training positives.
    Returns an (m, 3) array of (user, positive, negative) in shuffled order.
    Users whose positives cover every outfit are skipped with a warning.
    """
    train_pairs = np.asarray(train_pairs, dtype=np.int64).reshape(-1, 2)
    n_outfits = observed.shape[1]
    full = observed.sum(axis=1) >= n_outfits
    if full.any():
        logger.warning("skipping %d user(s) with no unobserved outfit", int(full.sum()))
        train_pairs = train_pairs[~full[train_pairs[:, 0]]]
    pairs = train_pairs[rng.permutation(len(train_pairs))]
    users = pairs[:, 0]
    neg = rng.integers(0, n_outfits, size=len(pairs))
    bad = observed[users, neg]
    while bad.any():
        neg[bad] = rng.integers(0, n_outfits, size=int(bad.sum()))
        bad = observed[users, neg]
    return np.column_stack([pairs, neg])


def _composition_key(items):
    return tuple(sorted(int(i) for i in items))


def sample_compat_pairs(positive_outfits, outfit_items, item_category, rng, observed=None,
                        max_tries=20):
    """Corrupt each positive outfit by swapping one item for another of its category.

    The position is uniform over positions whose category offers another
    item; the replacement is uniform over those items. A result equal to an
    observed composition is re-rolled. Returns ``(positives, negatives)``:
    an array of outfit indices and a list of item arrays.
    """
    item_category = np.asarray(item_category)
    by_cat = {}
    for i, c in enumerate(item_category):
        by_cat.setdefault(int(c), []).append(i)
    by_cat = {c: np.array(v, dtype=np.int64) for c, v in by_cat.items()}
    if observed is None:
        observed = {_composition_key(outfit_items[o]) for o in positive_outfits}
    order = np.asarray(positive_outfits, dtype=np.int64)[rng.permutation(len(positive_outfits))]
    pos_out, neg_out = [], []
    skipped = 0
    for o in order:
        items = np.asarray(outfit_items[o], dtype=np.int64)
        in_outfit = set(items.tolist())
        cats = item_category[items]
        valid = [k for k, c in enumerate(cats)
                 if len(by_cat[int(c)]) > int(np.count_nonzero(cats == c))]
        if not valid:
            skipped += 1
            continue
        for _ in range(max_tries):
            k = valid[int(rng.integers(len(valid)))]
            pool = by_cat[int(cats[k])]
            repl = int(pool[int(rng.integers(len(pool)))])
            while repl in in_outfit:
                repl = int(pool[int(rng.integers(len(pool)))])
            neg = items.copy()
            neg[k] = repl
            if _composition_key(neg) not in observed:
                pos_out.append(int(o))
                neg_out.append(neg)
                break
        else:
            skipped += 1
    if skipped:
        logger.warning("no valid corruption for %d outfit(s)", skipped)
    return np.array(pos_out, dtype=np.int64), neg_out


# ---------------------------------------------------------------------------
# losses


def bpr_from_scores(pos, neg):
    """Sum over samples of ``-ln sigmoid(pos - neg)``."""
    return ad.scale(ad.sum_all(ad.log_sigmoid(ad.sub(pos, neg))), -1.0)


def weight_penalty(P):
    """Squared norm of every weight matrix (biases excluded)."""
    total = None
    for name in ("enc_W1", "enc_W2", "W1", "W2", "W3", "W4", "W5", "W6", "W7"):
        term = ad.square_norm(P[name])
        total = term if total is None else ad.add(total, term)
    return total


def touched_penalty(P, rows):
    """L2 of the embedding rows a batch used plus all weight matrices."""
    pen = weight_penalty(P)
    rows = np.asarray(rows, dtype=np.int64)
    if len(rows):
        pen = ad.add(pen, ad.square_norm(ad.take(P["E"], rows)))
    return pen


def rec_touched_rows(model, triples):
    users = np.unique(triples[:, 0])
    outfits = [triples[:, 1], triples[:, 2]]
    if model.config.enable_outfit_to_user:
        outfits.append(model._history_edges(users)[1])
    outfits = np.unique(np.concatenate(outfits))
    rows = [users, outfits + model.outfit_offset]
    cfg = model.config
    if cfg.item_id_embedding and cfg.enable_item_to_outfit:
        items = np.unique(model.outfits.subset(outfits).items)
        rows.append(items + model.item_offset)
    return np.concatenate(rows)


def bpr_loss_rec(model, P, triples, reg_lambda=0.0):
    """Returns ``(total, bpr)`` tensors for a batch of (user, pos, neg) triples."""
    triples = np.asarray(triples, dtype=np.int64)
    m = len(triples)
    if m == 0:
        raise ValueError("empty batch")
    users = np.concatenate([triples[:, 0], triples[:, 0]])
    outfits = np.concatenate([triples[:, 1], triples[:, 2]])
    y = model.rec_scores(P, users, outfits)
    bpr = bpr_from_scores(ad.take(y, np.arange(m)), ad.take(y, np.arange(m, 2 * m)))
    if reg_lambda == 0:
        return bpr, bpr
    pen = touched_penalty(P, rec_touched_rows(model, triples))
    return ad.add(bpr, ad.scale(pen, reg_lambda)), bpr


def bpr_loss_compat(model, P, positives, negatives, reg_lambda=0.0):
    """Returns ``(total, bpr)`` for observed outfits vs corrupted compositions."""
    m = len(positives)
    if m == 0:
        raise ValueError("empty batch")
    lists = [model.graph.outfit_items[o] for o in positives] + list(negatives)
    comps = model.pack(lists)
    s = model.compat_scores(P, comps)
    bpr = bpr_from_scores(ad.take(s, np.arange(m)), ad.take(s, np.arange(m, 2 * m)))
    if reg_lambda == 0:
        return bpr, bpr
    rows = []
    if model.config.item_id_embedding:
        rows = np.unique(comps.items) + model.item_offset
    pen = touched_penalty(P, rows)
    return ad.add(bpr, ad.scale(pen, reg_lambda)), bpr


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros_like(cls, params):
        d = params.as_dict()
        return cls(m={k: np.zeros_like(a) for k, a in d.items()},
                   v={k: np.zeros_like(a) for k, a in d.items()})


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam update. Returns ``(new_params, new_state)``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for {name} at step {state.t + 1}")
    t = state.t + 1
    m, v, new = {}, {}, {}
    for name, p in params.as_dict().items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter {name} shape {p.shape}")
        m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        v[name] = beta2 * state.v[name] + (1.0 - beta2) * (g * g)
        m_hat = m[name] / (1.0 - beta1 ** t)
        v_hat = v[name] / (1.0 - beta2 ** t)
        new[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    return ModelParams(**new), AdamState(m=m, v=v, t=t)


# ---------------------------------------------------------------------------
# training loop


def interleave(n_rec, n_com):
    """Round-robin order proportional to batch counts: list of ("rec"|"com", k)."""
    slots = [((k + 0.5) / n_rec, 0, "rec", k) for k in range(n_rec)]
    slots += [((k + 0.5) / n_com, 1, "com", k) for k in range(n_com)]
    return [(kind, k) for _, _, kind, k in sorted(slots)]


def _batches(n, size):
    return [np.arange(s, min(s + size, n)) for s in range(0, n, size)]


@dataclass
class EpochRecord:
    epoch: int
    loss_rec: float
    loss_com: float
    val_hr: float
    val_ndcg: float
    seconds: float

    def line(self):
        return (f"{self.epoch}\t{self.loss_rec:.6f}\t{self.loss_com:.6f}\t"
                f"{self.val_hr:.6f}\t{self.val_ndcg:.6f}\t{self.seconds:.3f}")


@dataclass
class TrainResult:
    params: ModelParams
    final_params: ModelParams
    history: list
    best_epoch: int
    diverged: bool = False

    def history_text(self):
        return "".join(r.line() + "\n" for r in self.history)


def train(experiment, model_config, train_config, history_path=None, callback=None):
    """Alternate recommendation and compatibility Adam steps each epoch.

    Returns the parameters with the best validation NDCG@K (last epoch if
    there is no validation data) plus the per-epoch history.
    """
    tc = train_config
    model = experiment.model(model_config)
    params = model.params
    best, best_epoch, best_score = params, 0, -np.inf
    history = []
    if history_path is not None:
        open(history_path, "w").close()
    rng = np.random.default_rng(tc.rng_seed)
    observed = experiment.positives(experiment.train)
    train_outfits = np.unique(experiment.train[:, 1]) if len(experiment.train) else []
    observed_sets = {_composition_key(model.graph.outfit_items[o])
                     for o in range(model.graph.outfit_count)}
    val_exclude = observed
    state_rec = AdamState.zeros_like(params)
    state_com = AdamState.zeros_like(params)
    triples = pairs = None
    diverged = False
    for epoch in range(1, tc.epochs + 1):
        t0 = time.perf_counter()
        if triples is None or tc.neg_resample_per_epoch:
            triples = sample_rec_triples(experiment.train, observed, rng)
            pairs = sample_compat_pairs(train_outfits, model.graph.outfit_items,
                                        model.item_category, rng, observed_sets)
        rec_batches = _batches(len(triples), tc.batch_rec)
        com_batches = _batches(len(pairs[0]), tc.batch_com)
        sums = {"rec": 0.0, "com": 0.0}
        try:
            for kind, k in interleave(len(rec_batches), len(com_batches)):
                tape = ad.GradientTape()
                P = bind(params, tape)
                if kind == "rec":
                    loss, bpr = bpr_loss_rec(model, P, triples[rec_batches[k]], tc.reg_lambda)
                    lr, state = tc.lr_rec, state_rec
                else:
                    sel = com_batches[k]
                    loss, bpr = bpr_loss_compat(model, P, pairs[0][sel],
                                                [pairs[1][j] for j in sel], tc.reg_lambda)
                    lr, state = tc.lr_com, state_com
                grads = tape.backward(loss)
                params, state = adam_step(params, grads, state, lr, tc.adam_beta1,
                                          tc.adam_beta2, tc.adam_eps)
                if kind == "rec":
                    state_rec = state
                else:
                    state_com = state
                sums[kind] += float(bpr.value)
        except FloatingPointError as exc:
            logger.error("epoch %d diverged: %s; keeping last good parameters", epoch, exc)
            diverged = True
            break
        model.params = params
        val = evaluate_scores(model.score_matrix(), val_exclude, experiment.val, tc.eval_k,
                              allow_empty=True)
        rec = EpochRecord(
            epoch=epoch,
            loss_rec=sums["rec"] / max(len(triples), 1),
            loss_com=sums["com"] / max(len(pairs[0]), 1),
            val_hr=val.hr if val else float("nan"),
            val_ndcg=val.ndcg if val else float("nan"),
            seconds=time.perf_counter() - t0,
        )
        history.append(rec)
        logger.info("epoch %s", rec.line())
        if history_path is not None:
            with open(history_path, "a") as fh:
                fh.write(rec.line() + "\n")
        score = val.ndcg if val else epoch
        if score > best_score:
            best, best_epoch, best_score = params, epoch, score
        if callback is not None:
            callback(rec, params)
    return TrainResult(params=best, final_params=params, history=history,
                       best_epoch=best_epoch, diverged=diverged)


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_MAGIC = "OUTFITREC-CHECKPOINT"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, params, model_config, counts, epoch=0, seed=0):
    """Text header of key=value lines, then raw little-endian float64 arrays."""
    arrays = params.as_dict()
    lines = [CHECKPOINT_MAGIC, f"format_version={CHECKPOINT_VERSION}"]
    for f in fields(model_config):
        lines.append(f"config.{f.name}={getattr(model_config, f.name)}")
    lines.append("counts=" + ",".join(str(c) for c in counts))
    lines.append(f"epoch={epoch}")
    lines.append(f"seed={seed}")
    for name, a in arrays.items():
        lines.append(f"array={name}:" + ",".join(str(s) for s in a.shape))
    lines.append("end")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("utf-8"))
        for a in arrays.values():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


@dataclass
class Checkpoint:
    params: ModelParams
    config: dict
    counts: tuple
    epoch: int
    seed: int
    header: dict


def _parse_value(raw, kind):
    if kind is bool:
        if raw not in ("True", "False"):
            raise CheckpointError(f"bad boolean {raw!r}")
        return raw == "True"
    return kind(raw)


def load_checkpoint(path, model_config=None, counts=None):
    """Read a checkpoint; with ``model_config``/``counts`` also check every shape."""
    with open(path, "rb") as fh:
        buf = fh.read()
    first = buf.split(b"\n", 1)[0]
    if first != CHECKPOINT_MAGIC.encode():
        raise CheckpointError(f"unrecognized checkpoint {path}")
    end = buf.find(b"\nend\n")
    if end < 0:
        raise CheckpointError(f"truncated checkpoint header in {path}")
    header_lines = buf[:end].decode("utf-8").split("\n")[1:]
    body = buf[end + len(b"\nend\n"):]
    header, cfg, shapes = {}, {}, []
    for line in header_lines:
        key, _, val = line.partition("=")
        if key == "array":
            name, _, dims = val.partition(":")
            shapes.append((name, tuple(int(x) for x in dims.split(",") if x)))
        elif key.startswith("config."):
            cfg[key[len("config."):]] = val
        else:
            header[key] = val
    if header.get("format_version") != str(CHECKPOINT_VERSION):
        raise CheckpointError(
            f"checkpoint version {header.get('format_version')!r} != {CHECKPOINT_VERSION}"
        )
    types = {f.name: f.type for f in fields(ModelConfig)}
    parsed = {k: _parse_value(v, types[k]) for k, v in cfg.items() if k in types}
    stored_counts = tuple(int(x) for x in header["counts"].split(","))
    arrays, pos = {}, 0
    for name, shape in shapes:
        n = int(np.prod(shape))
        if pos + 8 * n > len(body):
            raise CheckpointError(f"truncated checkpoint: array {name} incomplete")
        arrays[name] = np.frombuffer(body, dtype="<f8", count=n, offset=pos).reshape(shape).copy()
        pos += 8 * n
    if pos != len(body):
        raise CheckpointError("trailing bytes after last array")
    missing = [f.name for f in fields(ModelParams) if f.name not in arrays]
    if missing:
        raise CheckpointError(f"checkpoint lacks arrays {missing}")
    if model_config is not None:
        want = expected_shapes(model_config, counts if counts is not None else stored_counts)
        for name, shape in want.items():
            if name not in arrays:
                raise CheckpointError(f"checkpoint lacks array {name}")
            if arrays[name].shape != shape:
                raise CheckpointError(
                    f"shape mismatch for {name}: checkpoint {arrays[name].shape}, config {shape}"
                )
    return Checkpoint(
        params=ModelParams(**arrays),
        config=parsed,
        counts=stored_counts,
        epoch=int(header.get("epoch", 0)),
        seed=int(header.get("seed", 0)),
        header=header,
    )
