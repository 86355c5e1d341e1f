"""From-scratch differentiable kernels on float64 numpy.

Every forward op returns ``(output, cache)`` and has a matching backward that
consumes the cache, accumulates into ``Param.grad`` buffers, and returns the
gradient w.r.t. its inputs. There is no autodiff graph; the model assembly
wires backwards by hand and :func:`grad_check` keeps everyone honest.

Shape conventions (stable; checkpoints depend on them):
  * batch dimension leads: activations are ``(B, dim)``, sequences ``(T, B, dim)``
  * plain dense weights are ``(in, out)`` and apply as ``x @ W + b``
  * LSTM gate blocks are ordered input, forget, cell-candidate, output
  * a basis stack is ``(d, m, n)``: row ``i`` flattened row-major is the
    ``(m * n)`` vector of basis matrix ``i``; blended weights apply as
    ``h @ W_hat`` with rows of ``W_hat`` indexing the input dimension ``m``
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np


class Param:
    """A learnable tensor with a same-shape gradient buffer."""

    __slots__ = ("name", "value", "grad", "decay_exempt")

    def __init__(self, name: str, value: np.ndarray, decay_exempt: bool = False):
        self.name = name
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.decay_exempt = decay_exempt

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Param({self.name}, shape={self.value.shape}, decay_exempt={self.decay_exempt})"


def zero_grads(params: Iterable[Param]) -> None:
    for p in params:
        p.zero_grad()


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    limit = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-limit, limit, size=shape)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form avoids overflow for large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def softmax(z: np.ndarray) -> np.ndarray:
    """Stabilized softmax along the last axis."""
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# dense layer
# ---------------------------------------------------------------------------

def dense_forward(w: Param, b: Param, x: np.ndarray):
    """``y = x @ w + b`` with ``w`` of shape (in, out)."""
    if x.shape[-1] != w.value.shape[0]:
        raise ValueError(f"dense input dim {x.shape[-1]} != {w.value.shape[0]}")
    y = x @ w.value + b.value
    return y, (w, b, x)


def dense_backward(cache, grad_y: np.ndarray) -> np.ndarray:
    w, b, x = cache
    w.grad += x.T @ grad_y
    b.grad += grad_y.sum(axis=0)
    return grad_y @ w.value.T


# ---------------------------------------------------------------------------
# LSTM
# ---------------------------------------------------------------------------

@dataclass
class LstmCell:
    """1-layer LSTM parameters.

    wx: (4h, in) input-to-gates, wh: (4h, h) hidden-to-gates, b: (4h,).
    Gate blocks in order: input, forget, cell-candidate, output.
    """

    wx: Param
    wh: Param
    b: Param
    hidden: int

    @property
    def input_dim(self) -> int:
        return self.wx.value.shape[1]

    def params(self) -> list[Param]:
        return [self.wx, self.wh, self.b]


def make_lstm_cell(rng: np.random.Generator, input_dim: int, hidden: int, prefix: str) -> LstmCell:
    wx = Param(f"{prefix}.wx", uniform_init(rng, (4 * hidden, input_dim), input_dim))
    wh = Param(f"{prefix}.wh", uniform_init(rng, (4 * hidden, hidden), hidden))
    b = Param(f"{prefix}.b", np.zeros(4 * hidden))
    b.value[hidden : 2 * hidden] = 1.0  # forget-gate bias starts open
    return LstmCell(wx=wx, wh=wh, b=b, hidden=hidden)


def lstm_forward(cell: LstmCell, inputs: np.ndarray):
    """Run the recurrence from zero initial state over a full sequence.

    ``inputs`` is (T, B, in) or (T, in) for a single sample. Returns the last
    hidden state ((B, h) or (h,)) and the cache for backward.
    """
    single = inputs.ndim == 2
    x = inputs[:, None, :] if single else inputs
    if x.ndim != 3:
        raise ValueError(f"expected (T, B, in) inputs, got shape {inputs.shape}")
    T, B, in_dim = x.shape
    if T < 1:
        raise ValueError("sequence length must be >= 1")
    if in_dim != cell.input_dim:
        raise ValueError(f"input dim {in_dim} != cell input dim {cell.input_dim}")
    h_size = cell.hidden

    gi = np.empty((T, B, h_size))
    gf = np.empty((T, B, h_size))
    gg = np.empty((T, B, h_size))
    go = np.empty((T, B, h_size))
    cs = np.empty((T, B, h_size))
    tanh_c = np.empty((T, B, h_size))
    h_prev = np.empty((T, B, h_size))

    wx_t = cell.wx.value.T
    wh_t = cell.wh.value.T
    h = np.zeros((B, h_size))
    c = np.zeros((B, h_size))
    for t in range(T):
        h_prev[t] = h
        z = x[t] @ wx_t + h @ wh_t + cell.b.value
        i = sigmoid(z[:, :h_size])
        f = sigmoid(z[:, h_size : 2 * h_size])
        g = np.tanh(z[:, 2 * h_size : 3 * h_size])
        o = sigmoid(z[:, 3 * h_size :])
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        gi[t], gf[t], gg[t], go[t], cs[t], tanh_c[t] = i, f, g, o, c, tc

    cache = (cell, x, gi, gf, gg, go, cs, tanh_c, h_prev, single)
    return (h[0] if single else h), cache


def lstm_backward(cache, grad_h_last: np.ndarray) -> np.ndarray:
    """Backprop through time from a gradient on the last hidden state.

    Accumulates into the cell's param grads; returns the gradient w.r.t. the
    inputs, shaped like the forward inputs.
    """
    cell, x, gi, gf, gg, go, cs, tanh_c, h_prev, single = cache
    T, B, _ = x.shape
    h_size = cell.hidden
    gh = np.asarray(grad_h_last, dtype=np.float64)
    if single:
        gh = gh[None, :]
    if gh.shape != (B, h_size):
        raise ValueError(f"grad shape {grad_h_last.shape} does not match cache")

    dwx = np.zeros_like(cell.wx.value)
    dwh = np.zeros_like(cell.wh.value)
    db = np.zeros_like(cell.b.value)
    dx = np.empty_like(x)

    dh = gh.copy()
    dc = np.zeros((B, h_size))
    dz = np.empty((B, 4 * h_size))
    for t in range(T - 1, -1, -1):
        i, f, g, o, c, tc = gi[t], gf[t], gg[t], go[t], cs[t], tanh_c[t]
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        di = dc * g
        dg = dc * i
        c_prev = cs[t - 1] if t > 0 else np.zeros((B, h_size))
        df = dc * c_prev
        dz[:, :h_size] = di * i * (1.0 - i)
        dz[:, h_size : 2 * h_size] = df * f * (1.0 - f)
        dz[:, 2 * h_size : 3 * h_size] = dg * (1.0 - g * g)
        dz[:, 3 * h_size :] = do * o * (1.0 - o)
        dwx += dz.T @ x[t]
        dwh += dz.T @ h_prev[t]
        db += dz.sum(axis=0)
        dx[t] = dz @ cell.wx.value
        dh = dz @ cell.wh.value
        dc = dc * f

    cell.wx.grad += dwx
    cell.wh.grad += dwh
    cell.b.grad += db
    return dx[:, 0, :] if single else dx


# ---------------------------------------------------------------------------
# meta network: adjust signal -> attention over basis matrices
# ---------------------------------------------------------------------------

@dataclass
class MetaNet:
    """Two dense layers with ReLU, then softmax, mapping the adjust signal to
    the blend weights shared by all dynamic layers.

    w1: (hidden, signal_dim), w2: (d, hidden), matching application as
    ``softmax(w2 @ relu(w1 @ s + b1) + b2)``.
    """

    w1: Param
    b1: Param
    w2: Param
    b2: Param

    @property
    def out_dim(self) -> int:
        return self.w2.value.shape[0]

    def params(self) -> list[Param]:
        return [self.w1, self.b1, self.w2, self.b2]


def make_meta_net(
    rng: np.random.Generator, signal_dim: int, hidden: int, d: int, prefix: str
) -> MetaNet:
    return MetaNet(
        w1=Param(f"{prefix}.w1", uniform_init(rng, (hidden, signal_dim), signal_dim)),
        b1=Param(f"{prefix}.b1", np.zeros(hidden)),
        w2=Param(f"{prefix}.w2", uniform_init(rng, (d, hidden), hidden)),
        b2=Param(f"{prefix}.b2", np.zeros(d)),
    )


def meta_attention(meta: MetaNet, signal: np.ndarray):
    """Blend weights ``a``: positive, summing to 1 along the last axis."""
    single = signal.ndim == 1
    s = signal[None, :] if single else signal
    if s.shape[1] != meta.w1.value.shape[1]:
        raise ValueError(f"signal dim {s.shape[1]} != {meta.w1.value.shape[1]}")
    pre = s @ meta.w1.value.T + meta.b1.value
    hid = relu(pre)
    logits = hid @ meta.w2.value.T + meta.b2.value
    a = softmax(logits)
    cache = (meta, s, pre, hid, a, single)
    return (a[0] if single else a), cache


def meta_attention_backward(cache, grad_a: np.ndarray) -> np.ndarray:
    """Returns the gradient w.r.t. the adjust signal."""
    meta, s, pre, hid, a, single = cache
    ga = grad_a[None, :] if single else grad_a
    # softmax jacobian: dlogits = a * (ga - sum(ga * a))
    dlogits = a * (ga - (ga * a).sum(axis=1, keepdims=True))
    meta.w2.grad += dlogits.T @ hid
    meta.b2.grad += dlogits.sum(axis=0)
    dhid = dlogits @ meta.w2.value
    dpre = dhid * (pre > 0.0)
    meta.w1.grad += dpre.T @ s
    meta.b1.grad += dpre.sum(axis=0)
    ds = dpre @ meta.w1.value
    return ds[0] if single else ds


# ---------------------------------------------------------------------------
# dynamic-parameter dense layer: blend of d basis matrices
# ---------------------------------------------------------------------------

@dataclass
class FcdLayer:
    """Dense layer whose weights are a per-sample convex blend of ``d`` basis
    matrices. basis_w: (d, m, n), basis_b: (d, n)."""

    basis_w: Param
    basis_b: Param

    @property
    def dims(self) -> tuple[int, int, int]:
        d, m, n = self.basis_w.value.shape
        return m, n, d

    def params(self) -> list[Param]:
        return [self.basis_w, self.basis_b]


def make_fcd_layer(
    rng: np.random.Generator, m: int, n: int, d: int, prefix: str
) -> FcdLayer:
    # each basis matrix drawn independently so the stack starts diverse;
    # exempt from l2 decay (the orthogonality term owns their geometry)
    basis_w = Param(
        f"{prefix}.basis_w", uniform_init(rng, (d, m, n), m), decay_exempt=True
    )
    basis_b = Param(f"{prefix}.basis_b", np.zeros((d, n)), decay_exempt=True)
    return FcdLayer(basis_w=basis_w, basis_b=basis_b)


def fcd_forward(layer: FcdLayer, a: np.ndarray, h: np.ndarray):
    """Apply the blended layer: ``out = h @ sum_i a_i W_i + sum_i a_i b_i``.

    ``a`` is (B, d) (or (d,)), ``h`` is (B, m) (or (m,)).
    """
    single = h.ndim == 1
    hb = h[None, :] if single else h
    ab = a[None, :] if single else a
    m, n, d = layer.dims
    if hb.shape[1] != m or ab.shape[1] != d or hb.shape[0] != ab.shape[0]:
        raise ValueError(
            f"fcd shapes: h {h.shape}, a {a.shape}, layer (m={m}, n={n}, d={d})"
        )
    w_hat = np.einsum("bd,dmn->bmn", ab, layer.basis_w.value)
    out = np.einsum("bm,bmn->bn", hb, w_hat) + ab @ layer.basis_b.value
    cache = (layer, ab, hb, w_hat, single)
    return (out[0] if single else out), cache


def fcd_backward(cache, grad_out: np.ndarray):
    """Returns ``(grad_a, grad_h)``; accumulates into the basis params."""
    layer, ab, hb, w_hat, single = cache
    g = grad_out[None, :] if single else grad_out
    grad_h = np.einsum("bn,bmn->bm", g, w_hat)
    grad_w_hat = np.einsum("bm,bn->bmn", hb, g)
    layer.basis_w.grad += np.einsum("bd,bmn->dmn", ab, grad_w_hat)
    layer.basis_b.grad += ab.T @ g
    grad_a = (
        np.einsum("bmn,dmn->bd", grad_w_hat, layer.basis_w.value)
        + g @ layer.basis_b.value.T
    )
    if single:
        return grad_a[0], grad_h[0]
    return grad_a, grad_h


# ---------------------------------------------------------------------------
# generated-parameter dense layer (the parameter-generation alternative)
# ---------------------------------------------------------------------------

@dataclass
class GenLayer:
    """Dense layer whose weights and bias are emitted by a small generator
    from the adjust signal: ``[vec(W_hat); b_hat] = w4 @ relu(w3 @ s + b3) + b4``.

    w3: (hidden, signal_dim), w4: (m*n + n, hidden). The first m*n outputs
    reshape row-major to the (m, n) weight matrix, the rest are the bias.
    """

    w3: Param
    b3: Param
    w4: Param
    b4: Param
    m: int
    n: int

    def params(self) -> list[Param]:
        return [self.w3, self.b3, self.w4, self.b4]


def make_gen_layer(
    rng: np.random.Generator, signal_dim: int, hidden: int, m: int, n: int, prefix: str
) -> GenLayer:
    out = m * n + n
    return GenLayer(
        w3=Param(f"{prefix}.w3", uniform_init(rng, (hidden, signal_dim), signal_dim)),
        b3=Param(f"{prefix}.b3", np.zeros(hidden)),
        w4=Param(f"{prefix}.w4", uniform_init(rng, (out, hidden), hidden)),
        b4=Param(f"{prefix}.b4", np.zeros(out)),
        m=m,
        n=n,
    )


def fcd_generate_forward(layer: GenLayer, signal: np.ndarray, h: np.ndarray):
    single = h.ndim == 1
    hb = h[None, :] if single else h
    sb = signal[None, :] if single else signal
    m, n = layer.m, layer.n
    if hb.shape[1] != m or sb.shape[0] != hb.shape[0]:
        raise ValueError(f"gen shapes: h {h.shape}, signal {signal.shape}, m={m}")
    pre = sb @ layer.w3.value.T + layer.b3.value
    hid = relu(pre)
    flat = hid @ layer.w4.value.T + layer.b4.value
    w_hat = flat[:, : m * n].reshape(-1, m, n)
    b_hat = flat[:, m * n :]
    out = np.einsum("bm,bmn->bn", hb, w_hat) + b_hat
    cache = (layer, sb, pre, hid, w_hat, hb, single)
    return (out[0] if single else out), cache


def fcd_generate_backward(cache, grad_out: np.ndarray):
    """Returns ``(grad_signal, grad_h)``; accumulates into generator params."""
    layer, sb, pre, hid, w_hat, hb, single = cache
    g = grad_out[None, :] if single else grad_out
    m, n = layer.m, layer.n
    grad_h = np.einsum("bn,bmn->bm", g, w_hat)
    grad_w_hat = np.einsum("bm,bn->bmn", hb, g)
    grad_flat = np.concatenate([grad_w_hat.reshape(-1, m * n), g], axis=1)
    layer.w4.grad += grad_flat.T @ hid
    layer.b4.grad += grad_flat.sum(axis=0)
    dhid = grad_flat @ layer.w4.value
    dpre = dhid * (pre > 0.0)
    layer.w3.grad += dpre.T @ sb
    layer.b3.grad += dpre.sum(axis=0)
    grad_signal = dpre @ layer.w3.value
    if single:
        return grad_signal[0], grad_h[0]
    return grad_signal, grad_h


# ---------------------------------------------------------------------------
# losses and regularizer
# ---------------------------------------------------------------------------

def cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean negative log-likelihood under softmax, with the analytic gradient.

    Returns ``(loss, grad_logits)``; the gradient already carries the 1/B
    batch-mean factor.
    """
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    y = np.atleast_1d(np.asarray(labels))
    if y.shape[0] != z.shape[0] or y.shape[0] == 0:
        raise ValueError(f"batch mismatch: logits {z.shape}, labels {y.shape}")
    if y.min() < 0 or y.max() >= z.shape[1]:
        raise ValueError(f"label out of range for {z.shape[1]} classes")
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    log_probs = shifted - log_norm[:, None]
    b = z.shape[0]
    loss = -log_probs[np.arange(b), y].mean()
    grad = np.exp(log_probs)
    grad[np.arange(b), y] -= 1.0
    grad /= b
    return loss, grad.reshape(np.shape(logits))


def ortho_reg(layers: Sequence[FcdLayer]):
    """Soft orthogonality over each basis stack: the squared off-diagonal
    entries of the (d, d) Gram matrix of the flattened bases. Norms of the
    bases themselves are left free.

    Returns ``(value, grads)`` with one (d, m, n) gradient per layer.
    """
    total = 0.0
    grads = []
    for layer in layers:
        d = layer.basis_w.value.shape[0]
        flat = layer.basis_w.value.reshape(d, -1)
        gram = flat @ flat.T
        off = gram * (1.0 - np.eye(d))
        total += float((off * off).sum())
        grads.append((4.0 * off @ flat).reshape(layer.basis_w.value.shape))
    return total, grads


def offdiag_gram_norm(layers: Sequence[FcdLayer]) -> float:
    """Sum over layers of the squared off-diagonal Gram entries (the raw
    regularizer value, useful for reporting)."""
    value, _ = ortho_reg(layers)
    return value


def total_loss(l_c: float, l_r: float, beta: float) -> float:
    if beta < 0:
        raise ValueError("beta must be >= 0")
    return l_c + beta * l_r


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

def adam_step(
    params: Sequence[Param],
    state: dict,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 1e-5,
) -> None:
    """One Adam update with bias correction.

    ``state`` maps param name to ``(m, v)`` moment buffers and carries the
    shared step counter under ``"t"``; pass ``{}`` on first use. l2 decay is
    added to the gradient unless the param is decay-exempt.
    """
    t = state.get("t", 0) + 1
    state["t"] = t
    for p in params:
        if p.name not in state:
            state[p.name] = (np.zeros_like(p.value), np.zeros_like(p.value))
        m, v = state[p.name]
        g = p.grad if p.decay_exempt or weight_decay == 0.0 else p.grad + weight_decay * p.value
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        p.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
        if not np.all(np.isfinite(p.value)):
            raise FloatingPointError(f"non-finite values in {p.name} after update")


class Adam:
    """Stateful wrapper around :func:`adam_step` for a fixed param set."""

    def __init__(
        self,
        params: Sequence[Param],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 1e-5,
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.state: dict = {}

    def step(self) -> None:
        adam_step(
            self.params,
            self.state,
            lr=self.lr,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
            weight_decay=self.weight_decay,
        )

    def zero_grad(self) -> None:
        zero_grads(self.params)


# ---------------------------------------------------------------------------
# finite-difference gradient checker
# ---------------------------------------------------------------------------

def grad_check(
    loss_fn: Callable[[], float],
    params: Sequence[Param],
    epsilon: float = 1e-5,
) -> float:
    """Central-difference check against already-populated ``Param.grad``.

    ``loss_fn`` must be pure and deterministic in the current param values.
    Returns the max relative error over every coordinate of every param,
    with relative error ``|analytic - numeric| / max(1e-8, |analytic| + |numeric|)``.
    """
    worst = 0.0
    for p in params:
        flat_v = p.value.reshape(-1)
        flat_g = p.grad.reshape(-1)
        for idx in range(flat_v.size):
            orig = flat_v[idx]
            flat_v[idx] = orig + epsilon
            lp = loss_fn()
            flat_v[idx] = orig - epsilon
            lm = loss_fn()
            flat_v[idx] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise FloatingPointError(f"non-finite loss while perturbing {p.name}")
            numeric = (lp - lm) / (2.0 * epsilon)
            analytic = flat_g[idx]
            err = abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))
            if err > worst:
                worst = err
    return worst
