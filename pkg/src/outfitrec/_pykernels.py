"""Pure numpy implementations of the hot kernels.

Same signatures and semantics as the compiled ``_ckernels`` module. Used when
the extension is not built or when ``OUTFITREC_PURE_PYTHON=1`` is set.
"""

import numpy as np


def pair_messages_forward(x, dst, src, w, W1, slope):
    """Weighted item-to-item messages summed per destination slot.

    For each pair p: ``msg[dst[p]] += w[p] * leaky(W1 @ (x[dst[p]] * x[src[p]]))``.
    Returns ``(msg, z)`` where ``z`` holds the pre-activations (one row per
    pair), kept for the backward pass.
    """
    n, d = x.shape
    msg = np.zeros((n, d))
    if len(dst) == 0:
        return msg, np.zeros((0, d))
    prod = x[dst] * x[src]
    z = prod @ W1.T
    act = np.where(z > 0, z, slope * z)
    np.add.at(msg, dst, w[:, None] * act)
    return msg, z


def pair_messages_backward(grad, x, dst, src, w, W1, z, slope):
    """Vector-Jacobian product of :func:`pair_messages_forward`.

    Returns ``(dx, dW1)``.
    """
    dx = np.zeros_like(x)
    if len(dst) == 0:
        return dx, np.zeros_like(W1)
    prod = x[dst] * x[src]
    dz = (w[:, None] * grad[dst]) * np.where(z > 0, 1.0, slope)
    dW1 = dz.T @ prod
    dprod = dz @ W1
    np.add.at(dx, dst, dprod * x[src])
    np.add.at(dx, src, dprod * x[dst])
    return dx, dW1


def scatter_add_rows(values, index, n_out, weights=None):
    """``out[index[k]] += weights[k] * values[k]`` over rows."""
    out = np.zeros((n_out,) + values.shape[1:])
    if weights is None:
        np.add.at(out, index, values)
    else:
        w = weights.reshape((-1,) + (1,) * (values.ndim - 1))
        np.add.at(out, index, w * values)
    return out


def category_cooccurrence(outfit_ptr, slot_category, n_categories):
    """Outfit-level category co-occurrence counts.

    ``outfit_ptr`` is a CSR offset array into ``slot_category``. Returns
    ``(pair_counts, freq)``: off-diagonal entries count outfits holding both
    categories, the diagonal counts outfits holding two or more items of the
    category, and ``freq`` counts every outfit-item occurrence.
    """
    n_outfits = len(outfit_ptr) - 1
    sizes = np.diff(outfit_ptr)
    rows = np.repeat(np.arange(n_outfits), sizes)
    counts = np.zeros((n_outfits, n_categories), dtype=np.int64)
    np.add.at(counts, (rows, slot_category), 1)
    present = (counts > 0).astype(np.int64)
    pair = present.T @ present
    np.fill_diagonal(pair, (counts >= 2).sum(axis=0))
    freq = counts.sum(axis=0)
    return pair, freq
