"""Dense numerics kernel with hand-written backward passes.

Two layers of API live here:

* functional ``*_forward`` / ``*_backward`` pairs (cache style) for the
  primitive ops: affine, LSTM cell, layer norm, scaled dot-product attention;
* a small reverse-mode tape (:class:`Var`) that chains those primitives so the
  policy networks can be differentiated end to end without an external
  autodiff library.

Everything is float64.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

CHECKPOINT_FORMAT = "swarmcov-params"
CHECKPOINT_VERSION = 1
LN_EPS = 1e-5


class ShapeError(ValueError):
    pass


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def affine_forward(x, W, b=None):
    """y = x @ W.T + b over the last axis of ``x``."""
    x = np.asarray(x, dtype=float)
    if W.ndim != 2 or x.shape[-1] != W.shape[1]:
        raise ShapeError(f"affine: x{x.shape} incompatible with W{W.shape}")
    if b is not None and b.shape != (W.shape[0],):
        raise ShapeError(f"affine: bias {b.shape} != ({W.shape[0]},)")
    y = x @ W.T
    if b is not None:
        y = y + b
    return y, (x, W, b is not None)


def affine_backward(dy, cache):
    x, W, has_bias = cache
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, W.shape[0])
    dW = dy2.T @ x2
    db = dy2.sum(axis=0) if has_bias else None
    dx = (dy2 @ W).reshape(x.shape)
    return dx, dW, db


def lstm_forward(x, h, c, Wx, Wh, b):
    """One step of a standard 4-gate LSTM cell.

    Gate layout in the stacked weight matrices is (input, forget, candidate,
    output), each block ``H`` rows tall.
    """
    H = h.shape[0]
    if Wx.shape != (4 * H, x.shape[0]) or Wh.shape != (4 * H, H) or b.shape != (4 * H,):
        raise ShapeError(
            f"lstm: x{x.shape} h{h.shape} Wx{Wx.shape} Wh{Wh.shape} b{b.shape}"
        )
    if c.shape != h.shape:
        raise ShapeError("lstm: cell and hidden state differ in shape")
    z = Wx @ x + Wh @ h + b
    i = sigmoid(z[:H])
    f = sigmoid(z[H : 2 * H])
    g = np.tanh(z[2 * H : 3 * H])
    o = sigmoid(z[3 * H :])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    return h_new, c_new, (x, h, c, Wx, Wh, i, f, g, o, tc)


def lstm_backward(dh_new, dc_new, cache):
    x, h, c, Wx, Wh, i, f, g, o, tc = cache
    do = dh_new * tc
    dc = dc_new + dh_new * o * (1.0 - tc * tc)
    di = dc * g
    df = dc * c
    dg = dc * i
    dc_prev = dc * f
    dz = np.concatenate(
        [di * i * (1 - i), df * f * (1 - f), dg * (1 - g * g), do * o * (1 - o)]
    )
    dWx = np.outer(dz, x)
    dWh = np.outer(dz, h)
    db = dz
    dx = Wx.T @ dz
    dh_prev = Wh.T @ dz
    return dx, dh_prev, dc_prev, dWx, dWh, db


def layer_norm_forward(x, gain, bias, eps=LN_EPS):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] < 2:
        raise ShapeError("layer_norm needs at least two features")
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return xhat * gain + bias, (xhat, inv, gain)


def layer_norm_backward(dy, cache):
    xhat, inv, gain = cache
    n = xhat.shape[-1]
    dxhat = dy * gain
    dx = inv / n * (
        n * dxhat
        - dxhat.sum(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
    )
    lead = tuple(range(dy.ndim - 1))
    dgain = (dy * xhat).sum(axis=lead)
    dbias = dy.sum(axis=lead)
    return dx, dgain, dbias


def softmax(z, mask=None):
    """Masked, max-shifted softmax over the last axis.

    ``mask`` marks *allowed* entries; disallowed entries come back as exact
    zeros.
    """
    z = np.asarray(z, dtype=float)
    if mask is None:
        allowed = np.ones(z.shape, dtype=bool)
    else:
        allowed = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
    if not allowed.any(axis=-1).all():
        raise ValueError("softmax: every entry is masked")
    zm = np.where(allowed, z, -np.inf)
    zm = zm - zm.max(axis=-1, keepdims=True)
    e = np.where(allowed, np.exp(zm), 0.0)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(dp, p):
    return p * (dp - (dp * p).sum(axis=-1, keepdims=True))


def attention_forward(query, keys, values, mask=None):
    """Scaled dot-product attention.

    ``query`` is ``(d,)`` or ``(q, d)``; ``keys`` ``(k, d)``; ``values``
    ``(k, dv)``. Returns ``(context, weights)`` plus a cache.
    """
    query = np.asarray(query, dtype=float)
    keys = np.asarray(keys, dtype=float)
    values = np.asarray(values, dtype=float)
    if keys.ndim != 2 or keys.shape[0] == 0:
        raise ValueError("attention: empty key set")
    if values.shape[0] != keys.shape[0]:
        raise ShapeError("attention: key/value counts differ")
    if query.shape[-1] != keys.shape[1]:
        raise ShapeError("attention: query/key dims differ")
    single = query.ndim == 1
    Q = query[None, :] if single else query
    scale = 1.0 / np.sqrt(keys.shape[1])
    scores = (Q @ keys.T) * scale
    w = softmax(scores, mask)
    ctx = w @ values
    cache = (Q, keys, values, w, scale, single)
    if single:
        return ctx[0], w[0], cache
    return ctx, w, cache


def attention_backward(dctx, cache):
    Q, K, V, w, scale, single = cache
    if single:
        dctx = dctx[None, :]
    dw = dctx @ V.T
    dV = w.T @ dctx
    ds = softmax_backward(dw, w) * scale
    dQ = ds @ K
    dK = ds.T @ Q
    if single:
        dQ = dQ[0]
    return dQ, dK, dV


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    per_input: dict

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < self.tolerance)


def _rel_err(a, b):
    """Tensor-wise relative error ``max|a - b| / max(max|a|, max|b|)``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if not a.size:
        return 0.0
    scale = max(np.abs(a).max(), np.abs(b).max(), 1e-12)
    return float(np.abs(a - b).max() / scale)


def numerical_gradient(f: Callable[[], float], x: np.ndarray, h: float = 1e-5):
    """Central differences of scalar ``f`` w.r.t. array ``x`` (mutated in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def grad_check(
    f: Callable[..., float],
    inputs: dict,
    analytic: dict,
    tolerance: float = 1e-6,
    h: float = 1e-5,
    include: dict | None = None,
) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    ``f(**inputs)`` must return a scalar; ``analytic`` maps input names to
    claimed gradients. ``include`` optionally maps names to boolean masks of
    coordinates that take part in the comparison.
    """
    per = {}
    for name, grad in analytic.items():
        x = inputs[name]
        num = numerical_gradient(lambda: float(f(**inputs)), x, h)
        a, n = np.asarray(grad, dtype=float), num
        if include and name in include:
            keep = np.asarray(include[name], dtype=bool)
            a, n = a[keep], n[keep]
        per[name] = _rel_err(a, n)
    worst = max(per.values()) if per else 0.0
    return GradCheckReport(worst, tolerance, per)


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


@dataclass
class ParamStore:
    params: dict = field(default_factory=dict)
    grads: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def add(self, name: str, value) -> np.ndarray:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        value = np.array(value, dtype=float)
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)
        return value

    def add_uniform(self, name, shape, fan_in, rng) -> np.ndarray:
        bound = 1.0 / np.sqrt(fan_in)
        return self.add(name, rng.uniform(-bound, bound, size=shape))

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def names(self):
        return list(self.params)

    def count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0.0)

    def grad_norm(self) -> float:
        return float(np.sqrt(sum(float((g * g).sum()) for g in self.grads.values())))

    def var(self, name) -> "Var":
        return Var(self.params[name], grad=self.grads[name])

    def copy(self) -> "ParamStore":
        out = ParamStore(meta=json.loads(json.dumps(self.meta)))
        for k, v in self.params.items():
            out.add(k, v.copy())
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params.values()]) if self.params else np.zeros(0)

    # -- checkpoints -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "meta": self.meta,
            "params": {
                k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                for k, v in self.params.items()
            },
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ParamStore":
        if doc.get("format") != CHECKPOINT_FORMAT:
            raise ValueError("not a swarmcov parameter checkpoint")
        if doc.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
        store = cls(meta=doc.get("meta", {}))
        for k, entry in doc["params"].items():
            shape = tuple(entry["shape"])
            data = np.array(entry["data"], dtype=float)
            if data.size != int(np.prod(shape)):
                raise ShapeError(f"checkpoint entry {k!r} has wrong data length")
            store.add(k, data.reshape(shape))
        return store

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True))

    @classmethod
    def load(cls, path) -> "ParamStore":
        return cls.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# reverse-mode tape
# ---------------------------------------------------------------------------


class Var:
    """A node on the backward tape.

    Parameter nodes share their ``grad`` buffer with the owning
    :class:`ParamStore` so a backward pass accumulates straight into it.
    """

    __slots__ = ("value", "grad", "parents", "backward_fn")

    def __init__(self, value, parents=(), backward_fn=None, grad=None):
        self.value = value
        self.grad = grad
        self.parents = parents
        self.backward_fn = backward_fn

    @property
    def shape(self):
        return self.value.shape

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=float, copy=True)
        else:
            self.grad += g

    def backward(self, seed=1.0):
        order: list[Var] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.full(np.shape(self.value), seed, dtype=float))
        for node in reversed(order):
            if node.backward_fn is not None and node.grad is not None:
                node.backward_fn(node.grad)

    def __add__(self, other):
        return add(self, other)


def const(value) -> Var:
    return Var(np.asarray(value, dtype=float))


def _needs(v: Var) -> bool:
    return v.backward_fn is not None or v.grad is not None


def affine(x: Var, W: Var, b: Var | None = None) -> Var:
    y, cache = affine_forward(x.value, W.value, None if b is None else b.value)

    def back(g):
        dx, dW, db = affine_backward(g, cache)
        x._accumulate(dx)
        W._accumulate(dW)
        if b is not None:
            b._accumulate(db)

    parents = (x, W) if b is None else (x, W, b)
    return Var(y, parents, back)


def lstm_cell(x: Var, h: Var, c: Var, Wx: Var, Wh: Var, b: Var):
    h_new, c_new, cache = lstm_forward(x.value, h.value, c.value, Wx.value, Wh.value, b.value)
    # both outputs are driven from a joint node holding the pair of grads
    joint = Var(np.zeros(0), (x, h, c, Wx, Wh, b))
    hv = Var(h_new, (joint,))
    cv = Var(c_new, (joint,))

    def back_h(g):
        joint._accumulate(np.zeros(0))

    def back_joint(_):
        dh = hv.grad if hv.grad is not None else np.zeros_like(h_new)
        dc = cv.grad if cv.grad is not None else np.zeros_like(c_new)
        dx, dhp, dcp, dWx, dWh, db = lstm_backward(dh, dc, cache)
        x._accumulate(dx)
        h._accumulate(dhp)
        c._accumulate(dcp)
        Wx._accumulate(dWx)
        Wh._accumulate(dWh)
        b._accumulate(db)

    hv.backward_fn = back_h
    cv.backward_fn = back_h
    joint.backward_fn = back_joint
    return hv, cv


def layer_norm(x: Var, gain: Var, bias: Var) -> Var:
    y, cache = layer_norm_forward(x.value, gain.value, bias.value)

    def back(g):
        dx, dg, db = layer_norm_backward(g, cache)
        x._accumulate(dx)
        gain._accumulate(dg)
        bias._accumulate(db)

    return Var(y, (x, gain, bias), back)


def attention(query: Var, keys: Var, values: Var, mask=None):
    ctx, w, cache = attention_forward(query.value, keys.value, values.value, mask)

    def back(g):
        dq, dk, dv = attention_backward(g, cache)
        query._accumulate(dq)
        keys._accumulate(dk)
        values._accumulate(dv)

    return Var(ctx, (query, keys, values), back), w


def add(a: Var, b: Var) -> Var:
    def back(g):
        a._accumulate(_unbroadcast(g, a.value.shape))
        b._accumulate(_unbroadcast(g, b.value.shape))

    return Var(a.value + b.value, (a, b), back)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def tanh(x: Var) -> Var:
    y = np.tanh(x.value)
    return Var(y, (x,), lambda g: x._accumulate(g * (1 - y * y)))


def relu(x: Var) -> Var:
    on = x.value > 0
    return Var(np.where(on, x.value, 0.0), (x,), lambda g: x._accumulate(g * on))


def concat(parts: Sequence[Var], axis: int = -1) -> Var:
    vals = [p.value for p in parts]
    y = np.concatenate(vals, axis=axis)
    sizes = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def back(g):
        for p, gp in zip(parts, np.split(g, sizes, axis=axis)):
            p._accumulate(gp)

    return Var(y, tuple(parts), back)


def stack(rows: Sequence[Var]) -> Var:
    y = np.stack([r.value for r in rows])

    def back(g):
        for i, r in enumerate(rows):
            r._accumulate(g[i])

    return Var(y, tuple(rows), back)


def cols(x: Var, start: int, stop: int) -> Var:
    y = x.value[..., start:stop]

    def back(g):
        full = np.zeros_like(x.value)
        full[..., start:stop] = g
        x._accumulate(full)

    return Var(y, (x,), back)


def row(x: Var, i: int) -> Var:
    def back(g):
        full = np.zeros_like(x.value)
        full[i] = g
        x._accumulate(full)

    return Var(x.value[i], (x,), back)


def reshape(x: Var, shape) -> Var:
    return Var(x.value.reshape(shape), (x,), lambda g: x._accumulate(g.reshape(x.value.shape)))


def log_prob(logits: Var, allowed, index: int) -> Var:
    """log softmax(logits | allowed)[index] as a scalar node."""
    p = softmax(logits.value, allowed)
    if not allowed[index]:
        raise ValueError("log_prob of a masked entry")
    y = np.array(np.log(p[index]))

    def back(g):
        onehot = np.zeros_like(p)
        onehot[index] = 1.0
        logits._accumulate(g * (onehot - p))

    return Var(y, (logits,), back)


def weighted_sum(terms: Iterable[tuple[float, Var]]) -> Var:
    terms = list(terms)
    y = np.array(sum(float(w) * float(v.value) for w, v in terms))

    def back(g):
        for w, v in terms:
            v._accumulate(g * w)

    return Var(y, tuple(v for _, v in terms), back)
