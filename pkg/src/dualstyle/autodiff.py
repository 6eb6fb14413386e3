"""Reverse-mode automatic differentiation over dense float64 numpy arrays.

A ``Tape`` records every non-leaf node in creation order, which is already a
topological order, so the backward pass is a single reversed sweep that
visits each node exactly once.  Ops run with no tape active return plain
value-holding tensors (cheap inference mode); gradients then cannot be
requested.
"""

from __future__ import annotations

import numpy as np

from .errors import NaNDetectedError, NonScalarLossError

_TAPE_STACK: list["Tape"] = []


class Tape:
    """Recording context for one differentiable computation."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        return False


class Tensor:
    """Array value plus a gradient slot and, when taped, a backward rule."""

    __slots__ = ("value", "grad", "parents", "vjp", "constant")

    def __init__(self, value, parents=(), vjp=None, constant=False):
        self.value = value
        self.grad = None
        self.parents = parents
        self.vjp = vjp
        self.constant = constant

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = None


def parameter(value) -> Tensor:
    """A trainable leaf; gradients accumulate into ``.grad`` on backward."""
    return Tensor(np.asarray(value, dtype=np.float64))


def constant(value) -> Tensor:
    """A non-trainable leaf; backward never allocates a gradient for it."""
    return Tensor(np.asarray(value, dtype=np.float64), constant=True)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return constant(x)


def _record(value, parents, vjp) -> Tensor:
    if _TAPE_STACK:
        node = Tensor(value, parents=parents, vjp=vjp)
        _TAPE_STACK[-1].nodes.append(node)
        return node
    return Tensor(value)


def _acc(t: Tensor, g):
    if t.constant:
        return
    if t.grad is None:
        # Copy rather than alias: callers may pass views or shared arrays.
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to its parent's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backward(tape: Tape, loss: Tensor) -> None:
    """Propagate d(loss)/d(node) through the tape in reverse creation order."""
    if np.ndim(loss.value) != 0:
        raise NonScalarLossError(f"loss has shape {np.shape(loss.value)}")
    if not np.isfinite(loss.value):
        raise NaNDetectedError("loss is not finite")
    loss.grad = np.asarray(1.0)
    for node in reversed(tape.nodes):
        if node.grad is None or node.vjp is None:
            continue
        node.vjp(node.grad)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.value + b.value

    def vjp(g):
        if not a.constant:
            _acc(a, _unbroadcast(g, a.value.shape))
        if not b.constant:
            _acc(b, _unbroadcast(g, b.value.shape))

    return _record(out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.value - b.value

    def vjp(g):
        if not a.constant:
            _acc(a, _unbroadcast(g, a.value.shape))
        if not b.constant:
            _acc(b, _unbroadcast(-g, b.value.shape))

    return _record(out, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.value * b.value

    def vjp(g):
        if not a.constant:
            _acc(a, _unbroadcast(g * b.value, a.value.shape))
        if not b.constant:
            _acc(b, _unbroadcast(g * a.value, b.value.shape))

    return _record(out, (a, b), vjp)


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    out = a.value * c

    def vjp(g):
        _acc(a, g * c)

    return _record(out, (a,), vjp)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.value @ b.value

    def vjp(g):
        if not a.constant:
            _acc(a, g @ b.value.T)
        if not b.constant:
            _acc(b, a.value.T @ g)

    return _record(out, (a, b), vjp)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.value)

    def vjp(g):
        _acc(a, g * (1.0 - out * out))

    return _record(out, (a,), vjp)


def _sigmoid_values(x: np.ndarray) -> np.ndarray:
    # exp of a non-positive argument cannot overflow
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid_values(a.value)

    def vjp(g):
        _acc(a, g * out * (1.0 - out))

    return _record(out, (a,), vjp)


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.value, 0.0)

    def vjp(g):
        _acc(a, g * (a.value > 0))

    return _record(out, (a,), vjp)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    ex = np.exp(shifted)
    out = ex / ex.sum(axis=axis, keepdims=True)

    def vjp(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        _acc(a, out * (g - inner))

    return _record(out, (a,), vjp)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def vjp(g):
        _acc(a, g - probs * g.sum(axis=axis, keepdims=True))

    return _record(out, (a,), vjp)


def embedding(table, ids) -> Tensor:
    """Row lookup; ids is an integer array, not a tensor."""
    table = as_tensor(table)
    ids = np.asarray(ids)
    out = table.value[ids]

    def vjp(g):
        if table.constant:
            return
        if table.grad is None:
            table.grad = np.zeros_like(table.value)
        flat_ids = ids.reshape(-1)
        flat_g = g.reshape(flat_ids.size, -1)
        # scatter-add via one-hot GEMM; much faster than np.add.at here
        onehot = np.zeros((flat_ids.size, table.value.shape[0]))
        onehot[np.arange(flat_ids.size), flat_ids] = 1.0
        table.grad += onehot.T @ flat_g

    return _record(out, (table,), vjp)


def concat(parts, axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out = np.concatenate([p.value for p in parts], axis=axis)
    sizes = [p.value.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if not p.constant:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                _acc(p, g[tuple(idx)])

    return _record(out, tuple(parts), vjp)


def stack(parts, axis: int = 1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out = np.stack([p.value for p in parts], axis=axis)

    def vjp(g):
        for i, p in enumerate(parts):
            if not p.constant:
                _acc(p, np.take(g, i, axis=axis))

    return _record(out, tuple(parts), vjp)


def slice_cols(a, lo: int, hi: int) -> Tensor:
    a = as_tensor(a)
    out = a.value[:, lo:hi]

    def vjp(g):
        if a.grad is None and not a.constant:
            a.grad = np.zeros_like(a.value)
        if not a.constant:
            a.grad[:, lo:hi] += g

    return _record(out, (a,), vjp)


def repeat_rows(a, k: int) -> Tensor:
    """Tile each row k times: (B, ...) -> (B*k, ...)."""
    a = as_tensor(a)
    out = np.repeat(a.value, k, axis=0)

    def vjp(g):
        _acc(a, g.reshape((a.value.shape[0], k) + a.value.shape[1:]).sum(axis=1))

    return _record(out, (a,), vjp)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = a.value.reshape(shape)

    def vjp(g):
        _acc(a, g.reshape(a.value.shape))

    return _record(out, (a,), vjp)


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    out = np.asarray(a.value.sum())

    def vjp(g):
        _acc(a, np.broadcast_to(g, a.value.shape).copy())

    return _record(out, (a,), vjp)


def masked_sum(a, mask) -> Tensor:
    """Sum of a * mask; the mask is a constant array of weights."""
    a = as_tensor(a)
    mask = np.asarray(mask, dtype=np.float64)
    out = np.asarray((a.value * mask).sum())

    def vjp(g):
        _acc(a, g * mask)

    return _record(out, (a,), vjp)


def masked_mean(a, mask) -> Tensor:
    """Mean of the entries of ``a`` selected by a 0/1 mask."""
    a = as_tensor(a)
    mask = np.asarray(mask, dtype=np.float64)
    total = mask.sum()
    out = np.asarray((a.value * mask).sum() / total)

    def vjp(g):
        _acc(a, g * mask / total)

    return _record(out, (a,), vjp)


def cross_entropy(logits, targets) -> Tensor:
    """Per-row negative log-likelihood of integer targets; shape (B,)."""
    logits = as_tensor(logits)
    targets = np.asarray(targets)
    shifted = logits.value - logits.value.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - lse
    rows = np.arange(logits.value.shape[0])
    out = -logp[rows, targets]
    probs = np.exp(logp)

    def vjp(g):
        d = probs * g[:, None]
        d[rows, targets] -= g
        _acc(logits, d)

    return _record(out, (logits,), vjp)


def conv1d(x, filters) -> Tensor:
    """Valid 1-D convolution over time: (B,T,E) * (w,E,C) -> (B,T-w+1,C)."""
    x, filters = as_tensor(x), as_tensor(filters)
    w = filters.value.shape[0]
    windows = np.lib.stride_tricks.sliding_window_view(x.value, w, axis=1)
    # windows: (B, T-w+1, E, w)
    out = np.einsum("btew,wec->btc", windows, filters.value)

    def vjp(g):
        if not filters.constant:
            _acc(filters, np.einsum("btew,btc->wec", windows, g))
        if not x.constant:
            if x.grad is None:
                x.grad = np.zeros_like(x.value)
            t_out = g.shape[1]
            for j in range(w):
                x.grad[:, j: j + t_out, :] += g @ filters.value[j].T

    return _record(out, (x, filters), vjp)


def max_over_time(x, valid_mask) -> Tensor:
    """Max pooling over axis 1 restricted to valid positions.

    valid_mask is a constant (B, T) 0/1 array with at least one valid
    position per row.
    """
    x = as_tensor(x)
    valid = np.asarray(valid_mask, dtype=bool)
    masked = np.where(valid[:, :, None], x.value, -np.inf)
    arg = masked.argmax(axis=1)  # (B, C)
    out = np.take_along_axis(x.value, arg[:, None, :], axis=1)[:, 0, :]

    def vjp(g):
        if x.constant:
            return
        if x.grad is None:
            x.grad = np.zeros_like(x.value)
        b_idx = np.arange(x.value.shape[0])[:, None]
        c_idx = np.arange(x.value.shape[2])[None, :]
        np.add.at(x.grad, (b_idx, arg, c_idx), g)

    return _record(out, (x,), vjp)


def dot_rows(q, keys) -> Tensor:
    """Scores s[b,t] = q[b] . keys[b,t] for q (B,H) against keys (B,T,H)."""
    q, keys = as_tensor(q), as_tensor(keys)
    out = np.einsum("bh,bth->bt", q.value, keys.value)

    def vjp(g):
        if not q.constant:
            _acc(q, np.einsum("bt,bth->bh", g, keys.value))
        if not keys.constant:
            _acc(keys, np.einsum("bt,bh->bth", g, q.value))

    return _record(out, (q, keys), vjp)


def mix_rows(weights, values) -> Tensor:
    """Convex mix c[b] = sum_t w[b,t] * values[b,t] for (B,T) x (B,T,H)."""
    weights, values = as_tensor(weights), as_tensor(values)
    out = np.einsum("bt,bth->bh", weights.value, values.value)

    def vjp(g):
        if not weights.constant:
            _acc(weights, np.einsum("bh,bth->bt", g, values.value))
        if not values.constant:
            _acc(values, np.einsum("bt,bh->bth", weights.value, g))

    return _record(out, (weights, values), vjp)


# ---------------------------------------------------------------------------
# fused primitives
#
# Semantically these are compositions of the ops above; they exist so a
# recurrent step costs a handful of tape nodes instead of dozens.  Each has a
# hand-written backward rule and is covered by grad_check like any primitive.
# ---------------------------------------------------------------------------

def affine(a, w, b) -> Tensor:
    """a @ w + b in one node."""
    a, w, b = as_tensor(a), as_tensor(w), as_tensor(b)
    out = a.value @ w.value + b.value

    def vjp(g):
        if not a.constant:
            _acc(a, g @ w.value.T)
        if not w.constant:
            _acc(w, a.value.T @ g)
        if not b.constant:
            _acc(b, g.sum(axis=0))

    return _record(out, (a, w, b), vjp)


def tanh_affine(a, w, b) -> Tensor:
    """tanh(a @ w + b) in one node."""
    a, w, b = as_tensor(a), as_tensor(w), as_tensor(b)
    out = np.tanh(a.value @ w.value + b.value)

    def vjp(g):
        gz = g * (1.0 - out * out)
        if not a.constant:
            _acc(a, gz @ w.value.T)
        if not w.constant:
            _acc(w, a.value.T @ gz)
        if not b.constant:
            _acc(b, gz.sum(axis=0))

    return _record(out, (a, w, b), vjp)


def lerp_rows(mask, new, prev) -> Tensor:
    """mask * new + (1 - mask) * prev with a constant 0/1 column mask."""
    new, prev = as_tensor(new), as_tensor(prev)
    m = np.asarray(mask, dtype=np.float64)
    out = m * new.value + (1.0 - m) * prev.value

    def vjp(g):
        if not new.constant:
            _acc(new, g * m)
        if not prev.constant:
            _acc(prev, g * (1.0 - m))

    return _record(out, (new, prev), vjp)


def lstm_cell(x, hc, wx, wh, b) -> Tensor:
    """One gated recurrent step; state rides as a single (B, 2H) array.

    Input ``hc`` is [h | c]; the output is [h' | c'].  Gate order in the
    preactivation is (input, forget, output, candidate).
    """
    x, hc, wx, wh, b = (as_tensor(t) for t in (x, hc, wx, wh, b))
    hd = hc.value.shape[1] // 2
    h_prev = hc.value[:, :hd]
    c_prev = hc.value[:, hd:]
    gates = x.value @ wx.value
    gates += h_prev @ wh.value
    gates += b.value
    sig = _sigmoid_values(gates[:, : 3 * hd])
    gi, gf, go = sig[:, :hd], sig[:, hd: 2 * hd], sig[:, 2 * hd:]
    gu = np.tanh(gates[:, 3 * hd:])
    out = np.empty_like(hc.value)
    c_new = out[:, hd:]
    np.multiply(gf, c_prev, out=c_new)
    c_new += gi * gu
    tc = np.tanh(c_new)
    np.multiply(go, tc, out=out[:, :hd])

    def vjp(g):
        dh = g[:, :hd]
        dc = 1.0 - tc * tc
        dc *= dh * go
        dc += g[:, hd:]
        dgates = np.empty_like(gates)
        np.multiply(dc, gu, out=dgates[:, :hd])
        dgates[:, :hd] *= gi * (1.0 - gi)
        np.multiply(dc, c_prev, out=dgates[:, hd: 2 * hd])
        dgates[:, hd: 2 * hd] *= gf * (1.0 - gf)
        np.multiply(dh, tc, out=dgates[:, 2 * hd: 3 * hd])
        dgates[:, 2 * hd: 3 * hd] *= go * (1.0 - go)
        np.multiply(dc, gi, out=dgates[:, 3 * hd:])
        dgates[:, 3 * hd:] *= 1.0 - gu * gu
        if not x.constant:
            _acc(x, dgates @ wx.value.T)
        if not hc.constant:
            dhc = np.empty_like(hc.value)
            np.matmul(dgates, wh.value.T, out=dhc[:, :hd])
            np.multiply(dc, gf, out=dhc[:, hd:])
            _acc(hc, dhc)
        if not wx.constant:
            _acc(wx, x.value.T @ dgates)
        if not wh.constant:
            _acc(wh, h_prev.T @ dgates)
        if not b.constant:
            _acc(b, dgates.sum(axis=0))

    return _record(out, (x, hc, wx, wh, b), vjp)


def bilinear_attention(query, keys, score_bias, wa) -> Tensor:
    """Bilinear-scored soft attention: softmax((query@wa) . keys + bias) mix.

    ``score_bias`` is a constant (B, T) array carrying the padding mask.
    Returns the (B, H) context vector.
    """
    query, keys, wa = as_tensor(query), as_tensor(keys), as_tensor(wa)
    bias = np.asarray(score_bias, dtype=np.float64)
    q = query.value @ wa.value
    scores = np.einsum("bh,bth->bt", q, keys.value) + bias
    shifted = scores - scores.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    alpha = ex / ex.sum(axis=1, keepdims=True)
    out = np.einsum("bt,bth->bh", alpha, keys.value)

    def vjp(g):
        dalpha = np.einsum("bh,bth->bt", g, keys.value)
        dscores = alpha * (dalpha - (dalpha * alpha).sum(axis=1, keepdims=True))
        dq = np.einsum("bt,bth->bh", dscores, keys.value)
        if not keys.constant:
            # both rank-1 contributions as one batched (T,2)@(2,H) product
            tw = np.stack([alpha, dscores], axis=2)
            hh = np.stack([g, q], axis=1)
            _acc(keys, np.matmul(tw, hh))
        if not query.constant:
            _acc(query, dq @ wa.value.T)
        if not wa.constant:
            _acc(wa, query.value.T @ dq)

    return _record(out, (query, keys, wa), vjp)


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------

def grad_check(fn, params, h: float = 1e-5, samples_per_param: int | None = None,
               rng: np.random.Generator | None = None) -> float:
    """Max relative error of backward() against central finite differences.

    ``fn`` maps the given parameter tensors to a scalar tensor and must be
    deterministic.  Relative error per coordinate is
    ``|ad - fd| / (|ad| + |fd| + 1e-6)``.  When ``samples_per_param`` is set,
    only that many randomly chosen coordinates per parameter are probed.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = fn(params)
    backward(tape, loss)
    analytic = [np.zeros_like(p.value) if p.grad is None else p.grad.copy()
                for p in params]
    for p in params:
        p.zero_grad()

    if rng is None:
        rng = np.random.default_rng(0)
    worst = 0.0
    for p, ad in zip(params, analytic):
        flat = p.value.reshape(-1)
        n = flat.size
        if samples_per_param is None or samples_per_param >= n:
            coords = range(n)
        else:
            coords = rng.choice(n, size=samples_per_param, replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            f_plus = float(fn(params).value)
            flat[c] = orig - h
            f_minus = float(fn(params).value)
            flat[c] = orig
            fd = (f_plus - f_minus) / (2.0 * h)
            a = float(ad.reshape(-1)[c])
            err = abs(a - fd) / (abs(a) + abs(fd) + 1e-6)
            worst = max(worst, err)
    return worst
