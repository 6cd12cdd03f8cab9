"""Dense float64 tensors with tape-based reverse-mode differentiation.

Only the operations the model needs are provided. A :class:`Tensor` created
with no tape is a constant; any op whose inputs include a taped tensor records
a node on that tape. Values are checked for NaN/Inf after every op.

Example::

    tape = GradientTape()
    p = tape.variable(np.array([1.0, 2.0]), name="p")
    loss = sum_all(hadamard(p, p))
    grads = tape.backward(loss)     # {"p": array([2., 4.])}
"""

import numpy as np

from . import kernels


class Tensor:
    __slots__ = ("value", "tape", "node", "name")

    def __init__(self, value, tape=None, node=None, name=None):
        self.value = value
        self.tape = tape
        self.node = node
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        kind = "const" if self.tape is None else f"node={self.node}"
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, {kind})"


class GradientTape:
    """Records ops in execution order and replays them backwards.

    A tape runs :meth:`backward` once; call :meth:`reset` to reuse it.
    """

    def __init__(self):
        self.reset()

    def reset(self):
        self._parents = []
        self._vjps = []
        self._leaves = []
        self._grads = None

    def variable(self, value, name=None):
        """Register a differentiable leaf (a copy of ``value``)."""
        t = self._record(np.array(value, dtype=np.float64), (), None)
        t.name = name
        self._leaves.append(t)
        return t

    def _record(self, value, parents, vjp):
        if self._grads is not None:
            raise RuntimeError("tape already consumed by backward(); call reset()")
        node = len(self._parents)
        self._parents.append(parents)
        self._vjps.append(vjp)
        return Tensor(value, self, node)

    def backward(self, loss):
        """Reverse sweep from a scalar ``loss``.

        Returns a dict mapping each named leaf to its gradient. Leaves the
        loss does not depend on get zeros.
        """
        if loss.tape is not self:
            raise ValueError("loss was not recorded on this tape")
        if loss.value.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        if self._grads is not None:
            raise RuntimeError("backward() already called on this tape; call reset()")
        grads = [None] * len(self._parents)
        grads[loss.node] = np.ones_like(loss.value)
        for node in range(loss.node, -1, -1):
            g = grads[node]
            vjp = self._vjps[node]
            if g is None or vjp is None:
                continue
            for parent, pg in zip(self._parents[node], vjp(g)):
                if pg is None or parent.tape is not self:
                    continue
                if grads[parent.node] is None:
                    grads[parent.node] = pg
                else:
                    grads[parent.node] = grads[parent.node] + pg
        self._grads = grads
        out = {}
        for leaf in self._leaves:
            g = grads[leaf.node]
            if g is None:
                g = np.zeros_like(leaf.value)
            if leaf.name is not None:
                out[leaf.name] = g
        return out

    def gradient(self, leaf):
        if self._grads is None:
            raise RuntimeError("call backward() first")
        g = self._grads[leaf.node]
        return np.zeros_like(leaf.value) if g is None else g


def constant(value):
    return Tensor(np.asarray(value, dtype=np.float64))


def as_tensor(x):
    return x if isinstance(x, Tensor) else constant(x)


def _apply(value, inputs, vjp):
    if not np.all(np.isfinite(value)):
        raise FloatingPointError("non-finite value produced by tensor op")
    tape = None
    for t in inputs:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise ValueError("inputs recorded on different tapes")
            tape = t.tape
    if tape is None:
        return Tensor(value)
    return tape._record(value, tuple(inputs), vjp)


def _check_same_shape(a, b, op):
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    av, bv = a.value, b.value
    return _apply(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def transpose(a):
    a = as_tensor(a)
    return _apply(a.value.T.copy(), (a,), lambda g: (g.T,))


def reshape(a, shape):
    a = as_tensor(a)
    orig = a.shape
    return _apply(a.value.reshape(shape), (a,), lambda g: (g.reshape(orig),))


def concat_rows(parts):
    parts = [as_tensor(p) for p in parts]
    sizes = np.cumsum([p.shape[0] for p in parts])[:-1]
    return _apply(np.concatenate([p.value for p in parts]), parts,
                  lambda g: tuple(np.split(g, sizes)))


def add(a, b):
    """Elementwise sum; ``b`` may also be a row vector added to every row."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        return _apply(a.value + b.value, (a, b), lambda g: (g, g))
    if a.value.ndim == 2 and b.value.ndim == 1 and b.shape[0] == a.shape[1]:
        return _apply(a.value + b.value, (a, b), lambda g: (g, g.sum(axis=0)))
    raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape(a, b, "sub")
    return _apply(a.value - b.value, (a, b), lambda g: (g, -g))


def hadamard(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape(a, b, "hadamard")
    av, bv = a.value, b.value
    return _apply(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a, c):
    a = as_tensor(a)
    c = float(c)
    return _apply(a.value * c, (a,), lambda g: (g * c,))


def leaky_relu(x, slope=0.2):
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    x = as_tensor(x)
    # subgradient at exactly 0 is the slope
    dydx = np.where(x.value > 0, 1.0, slope)
    return _apply(x.value * dydx, (x,), lambda g: (g * dydx,))


def _softmax_np(v):
    e = np.exp(v - v.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_rows(x):
    x = as_tensor(x)
    if x.value.ndim != 2:
        raise ValueError("softmax_rows expects a 2-D tensor")
    y = _softmax_np(x.value)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _apply(y, (x,), vjp)


def segment_softmax(x, segments, n_segments):
    """Softmax down the rows of ``x`` within each segment, per column.

    ``segments[r]`` gives the segment of row ``r``. With a single segment
    this is ``softmax_rows(x.T).T``.
    """
    x = as_tensor(x)
    segments = np.asarray(segments)
    v = x.value
    seg_max = np.full((n_segments,) + v.shape[1:], -np.inf)
    np.maximum.at(seg_max, segments, v)
    e = np.exp(v - seg_max[segments])
    denom = kernels.scatter_add_rows(e, segments, n_segments)
    y = e / denom[segments]

    def vjp(g):
        inner = kernels.scatter_add_rows(g * y, segments, n_segments)
        return (y * (g - inner[segments]),)

    return _apply(y, (x,), vjp)


def sigmoid(x):
    """Logistic function, stable for large ``|x|``.

    Accepts floats, arrays (returned as numpy) or tensors (taped op).
    """
    if isinstance(x, Tensor):
        y = sigmoid(x.value)
        return _apply(y, (x,), lambda g: (g * y * (1.0 - y),))
    v = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(v))
    out = np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return float(out) if out.ndim == 0 else out


def log_sigmoid(x):
    """``log(sigmoid(x))`` computed as ``-softplus(-x)``."""
    x = as_tensor(x)
    v = x.value
    y = -np.logaddexp(0.0, -v)
    s = sigmoid(-v)
    return _apply(y, (x,), lambda g: (g * s,))


def sum_all(x):
    x = as_tensor(x)
    shape = x.shape
    return _apply(np.array(x.value.sum()), (x,), lambda g: (np.full(shape, float(g)),))


def sum_rows(x):
    """Row sums of a 2-D tensor, shape ``(m,)``."""
    x = as_tensor(x)
    n = x.shape[1]
    return _apply(x.value.sum(axis=1), (x,), lambda g: (np.repeat(g[:, None], n, axis=1),))


def square_norm(x):
    x = as_tensor(x)
    v = x.value
    return _apply(np.array((v * v).sum()), (x,), lambda g: (2.0 * float(g) * v,))


def take(x, index):
    """Gather rows ``x[index]``; repeated indices accumulate in backward."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    n = x.shape[0]
    return _apply(x.value[index], (x,), lambda g: (kernels.scatter_add_rows(g, index, n),))


def scatter_rows(x, index, n_out, weights=None):
    """``out[index[k]] += weights[k] * x[k]``; the transpose of :func:`take`."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64)
    out = kernels.scatter_add_rows(x.value, index, n_out, weights)

    def vjp(g):
        gx = g[index]
        if weights is not None:
            gx = gx * weights.reshape((-1,) + (1,) * (gx.ndim - 1))
        return (gx,)

    return _apply(out, (x,), vjp)


def grouped_linear(x, groups, W, b):
    """Per-row affine map chosen by group: ``y[n] = W[groups[n]] @ x[n] + b[groups[n]]``.

    ``W`` has shape ``(G, out, in)`` and ``b`` shape ``(G, out)``.
    """
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    groups = np.asarray(groups, dtype=np.int64)
    if W.value.ndim != 3 or x.shape[1] != W.shape[2]:
        raise ValueError(f"grouped_linear: x {x.shape} incompatible with W {W.shape}")
    Wg = W.value[groups]
    y = np.einsum("noi,ni->no", Wg, x.value) + b.value[groups]

    def vjp(g):
        gx = np.einsum("noi,no->ni", Wg, g)
        gW = np.zeros_like(W.value)
        for c in np.unique(groups):
            sel = groups == c
            gW[c] = g[sel].T @ x.value[sel]
        gb = kernels.scatter_add_rows(g, groups, b.shape[0])
        return gx, gW, gb

    return _apply(y, (x, W, b), vjp)


def pair_messages(x, W1, dst, src, weights, slope=0.2):
    """Summed pairwise messages ``w * leaky(W1 @ (x_dst * x_src))`` per destination row.

    Fused op backed by the compiled kernel. ``weights`` are constants.
    """
    x, W1 = as_tensor(x), as_tensor(W1)
    dst = np.ascontiguousarray(dst, dtype=np.int64)
    src = np.ascontiguousarray(src, dtype=np.int64)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    xv = np.ascontiguousarray(x.value)
    Wv = np.ascontiguousarray(W1.value)
    msg, z = kernels.pair_messages_forward(xv, dst, src, weights, Wv, slope)

    def vjp(g):
        return kernels.pair_messages_backward(
            np.ascontiguousarray(g), xv, dst, src, weights, Wv, z, slope
        )

    return _apply(msg, (x, W1), vjp)


def finite_diff_gradients(f, params, eps=1e-5):
    """Central-difference gradient of ``f`` for every coordinate of ``params``.

    ``f(tape, tensors)`` must return a scalar :class:`Tensor`; ``tensors`` maps
    the names in ``params`` to tensors. It is evaluated on constants here.
    """
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    numeric = {}
    for name, value in base.items():
        grad = np.zeros_like(value)
        flat = value.reshape(-1)
        gflat = grad.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            hi = float(f(None, {k: constant(v) for k, v in base.items()}).value)
            flat[j] = orig - eps
            lo = float(f(None, {k: constant(v) for k, v in base.items()}).value)
            flat[j] = orig
            gflat[j] = (hi - lo) / (2.0 * eps)
        numeric[name] = grad
    return numeric


def analytic_gradients(f, params):
    tape = GradientTape()
    tensors = {k: tape.variable(v, name=k) for k, v in params.items()}
    return tape.backward(f(tape, tensors))


def relative_errors(analytic, numeric):
    """Per-name max of ``|a - n| / max(|a|, |n|, 1e-8)``."""
    errs = {}
    for name, a in analytic.items():
        n = numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
        errs[name] = float((np.abs(a - n) / denom).max()) if a.size else 0.0
    return errs


def finite_diff_check(f, params, eps=1e-5):
    """Max relative error between tape gradients and central differences.

    Known limitation: a coordinate sitting within ``eps`` of a LeakyReLU kink
    gives a spurious error; perturb the inputs instead of loosening the bound.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    errs = relative_errors(analytic_gradients(f, params), finite_diff_gradients(f, params, eps))
    return max(errs.values(), default=0.0)
