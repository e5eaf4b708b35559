"""Reverse-mode automatic differentiation over numpy arrays.

A Tape records primitive operations in execution order. Node values are
numpy arrays (a scalar is a shape-() array), so batched network math stays
in BLAS. backward() walks the record once in reverse, accumulating
vector-Jacobian products; leaf nodes can sink their gradient straight into
an external accumulator (a ParamSet gradient buffer).

Operands may be Var or plain ndarray/float; raw values are constants and
receive no gradient. Fused primitives (dense, gru_cell, diagonal-Gaussian
KL, log_softmax, binary cross-entropy) keep node counts low on the hot
training path.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, ShapeError


def _sigmoid(x):
    out = np.empty_like(x)
    np.negative(np.abs(x), out=out)
    np.exp(out, out=out)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + out[pos])
    neg = ~pos
    e = out[neg]
    out[neg] = e / (1.0 + e)
    return out


def _softplus(x):
    # log(1 + exp(x)), stable for large |x|
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _unbroadcast(grad, shape):
    """Reduce grad back to `shape` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Var:
    """Handle to one tape node."""

    __slots__ = ("tape", "idx", "value")
    __array_ufunc__ = None  # keep numpy from absorbing us in mixed expressions

    def __init__(self, tape, idx, value):
        self.tape = tape
        self.idx = idx
        self.value = value

    @property
    def shape(self):
        return self.value.shape

    # arithmetic sugar; raw arrays/floats are constants
    def __add__(self, other):
        return self.tape.add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return self.tape.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return self.tape.mul(self, -1.0)

    def __sub__(self, other):
        return self.tape.add(self, -other if isinstance(other, Var) else np.negative(other))

    def __rsub__(self, other):
        return self.tape.add(-self, other)

    def __matmul__(self, other):
        return self.tape.matmul(self, other)

    def __rmatmul__(self, other):
        return self.tape.matmul(other, self)

    def tanh(self):
        return self.tape.tanh(self)

    def sigmoid(self):
        return self.tape.sigmoid(self)

    def softplus(self):
        return self.tape.softplus(self)

    def exp(self):
        return self.tape.exp(self)

    def log(self):
        return self.tape.log(self)

    def square(self):
        return self.tape.square(self)

    def relu(self):
        return self.tape.relu(self)

    def sum(self, axis=None):
        return self.tape.sum(self, axis)

    def mean(self, axis=None):
        return self.tape.mean(self, axis)

    def __getitem__(self, key):
        return self.tape.slice(self, key)


def value_of(x):
    return x.value if isinstance(x, Var) else x


class Tape:
    """Ordered record of primitive ops; inputs always precede their node."""

    __slots__ = ("_parents", "_vjps", "_values", "_sinks")

    def __init__(self):
        self._parents: list[tuple] = []   # tuples of parent node indices
        self._vjps: list = []             # callable(g) -> tuple of parent grads
        self._values: list[np.ndarray] = []
        self._sinks: dict[int, np.ndarray] = {}  # leaf idx -> external accumulator

    def __len__(self):
        return len(self._parents)

    def node_parents(self, i):
        return self._parents[i]

    def _push(self, value, parents=(), vjp=None) -> Var:
        idx = len(self._values)
        self._values.append(value)
        self._parents.append(parents)
        self._vjps.append(vjp)
        return Var(self, idx, value)

    def leaf(self, value, sink: np.ndarray | None = None) -> Var:
        """Differentiable input. If sink is given, backward adds d(loss)/d(leaf) into it."""
        value = np.asarray(value)
        var = self._push(value)
        if sink is not None:
            if sink.shape != value.shape:
                raise ShapeError(f"sink shape {sink.shape} != value shape {value.shape}")
            self._sinks[var.idx] = sink
        return var

    # ---- primitives -------------------------------------------------------

    def add(self, a, b):
        av, bv = value_of(a), value_of(b)
        out = av + bv
        parents, grads = [], []
        if isinstance(a, Var):
            parents.append(a.idx)
            grads.append(av.shape if hasattr(av, "shape") else ())
        if isinstance(b, Var):
            parents.append(b.idx)
            grads.append(bv.shape if hasattr(bv, "shape") else ())
        shapes = tuple(grads)

        def vjp(g):
            return tuple(_unbroadcast(g, s) for s in shapes)

        return self._push(out, tuple(parents), vjp)

    def mul(self, a, b):
        av, bv = value_of(a), value_of(b)
        out = av * bv
        parents, terms = [], []
        if isinstance(a, Var):
            parents.append(a.idx)
            terms.append((bv, np.shape(av)))
        if isinstance(b, Var):
            parents.append(b.idx)
            terms.append((av, np.shape(bv)))

        def vjp(g):
            return tuple(_unbroadcast(g * other, s) for other, s in terms)

        return self._push(out, tuple(parents), vjp)

    def matmul(self, a, b):
        av, bv = value_of(a), value_of(b)
        out = av @ bv
        a_vec, b_vec = av.ndim == 1, bv.ndim == 1
        a2 = av[None, :] if a_vec else av
        b2 = bv[:, None] if b_vec else bv
        parents, which = [], []
        if isinstance(a, Var):
            parents.append(a.idx)
            which.append("a")
        if isinstance(b, Var):
            parents.append(b.idx)
            which.append("b")

        def vjp(g):
            g2 = g
            if a_vec:
                g2 = g2[None, ...]
            if b_vec:
                g2 = g2[..., None]
            res = []
            for w in which:
                if w == "a":
                    da = g2 @ b2.T
                    res.append(da[0] if a_vec else da)
                else:
                    db = a2.T @ g2
                    res.append(db[:, 0] if b_vec else db)
            return tuple(res)

        return self._push(out, tuple(parents), vjp)

    def _unary(self, x, out, dfn):
        def vjp(g):
            return (g * dfn(),)

        return self._push(out, (x.idx,), vjp)

    def tanh(self, x):
        out = np.tanh(x.value)
        return self._unary(x, out, lambda: 1.0 - out * out)

    def sigmoid(self, x):
        out = _sigmoid(x.value)
        return self._unary(x, out, lambda: out * (1.0 - out))

    def softplus(self, x):
        xv = x.value
        out = _softplus(xv)
        return self._unary(x, out, lambda: _sigmoid(xv))

    def exp(self, x):
        out = np.exp(x.value)
        return self._unary(x, out, lambda: out)

    def log(self, x):
        xv = x.value
        return self._unary(x, np.log(xv), lambda: 1.0 / xv)

    def square(self, x):
        xv = x.value
        return self._unary(x, xv * xv, lambda: 2.0 * xv)

    def relu(self, x):
        xv = x.value
        out = np.maximum(xv, 0.0)
        return self._unary(x, out, lambda: (xv > 0.0).astype(xv.dtype))

    def sum(self, x, axis=None):
        xv = x.value
        out = np.asarray(xv.sum(axis=axis))

        def vjp(g):
            if axis is None:
                return (np.broadcast_to(g, xv.shape).astype(xv.dtype, copy=False),)
            gg = np.expand_dims(g, axis)
            return (np.broadcast_to(gg, xv.shape).astype(xv.dtype, copy=False),)

        return self._push(out, (x.idx,), vjp)

    def mean(self, x, axis=None):
        xv = x.value
        n = xv.size if axis is None else xv.shape[axis]
        out = np.asarray(xv.mean(axis=axis))

        def vjp(g):
            scale = 1.0 / n
            if axis is None:
                return ((np.broadcast_to(g, xv.shape) * scale).astype(xv.dtype, copy=False),)
            gg = np.expand_dims(g, axis)
            return ((np.broadcast_to(gg, xv.shape) * scale).astype(xv.dtype, copy=False),)

        return self._push(out, (x.idx,), vjp)

    def slice(self, x, key):
        xv = x.value
        out = xv[key]

        def vjp(g):
            full = np.zeros_like(xv)
            full[key] = g
            return (full,)

        return self._push(out, (x.idx,), vjp)

    def concat(self, parts, axis=0):
        vals = [value_of(p) for p in parts]
        out = np.concatenate(vals, axis=axis)
        parents = tuple(p.idx for p in parts if isinstance(p, Var))
        sizes = [v.shape[axis] for v in vals]
        offsets = np.cumsum([0] + sizes)
        var_slots = [i for i, p in enumerate(parts) if isinstance(p, Var)]

        def vjp(g):
            moved = np.moveaxis(g, axis, 0)
            return tuple(
                np.moveaxis(moved[offsets[i]:offsets[i + 1]], 0, axis) for i in var_slots
            )

        return self._push(out, parents, vjp)

    def maximum(self, x, const):
        xv = x.value
        out = np.maximum(xv, const)
        return self._unary(x, out, lambda: (xv > const).astype(xv.dtype))

    def log_softmax(self, x):
        """Row-wise log softmax over the last axis."""
        xv = x.value
        m = xv.max(axis=-1, keepdims=True)
        s = xv - m
        lse = np.log(np.exp(s).sum(axis=-1, keepdims=True))
        out = s - lse

        def vjp(g):
            return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

        return self._push(out, (x.idx,), vjp)

    def gather(self, x, index):
        """Pick one column per row: x (N, K), index (N,) -> (N,)."""
        xv = x.value
        rows = np.arange(xv.shape[0])
        out = xv[rows, index]

        def vjp(g):
            full = np.zeros_like(xv)
            full[rows, index] = g
            return (full,)

        return self._push(out, (x.idx,), vjp)

    def bce_with_logits(self, logits, target):
        """Bernoulli NLL per element, numerically stable in the logit."""
        lv = logits.value
        out = _softplus(lv) - target * lv

        def vjp(g):
            return (g * (_sigmoid(lv) - target),)

        return self._push(out, (logits.idx,), vjp)

    def dense(self, x, w, b, activation="linear"):
        """Fused y = act(x @ W + b). x: (N, i) or (i,); W: (i, o); b: (o,)."""
        xv, wv, bv = value_of(x), value_of(w), value_of(b)
        vec_in = xv.ndim == 1
        x2 = xv[None, :] if vec_in else xv
        if x2.shape[-1] != wv.shape[0]:
            raise ShapeError(
                f"dense input has {x2.shape[-1]} features, weight expects {wv.shape[0]}"
            )
        pre = x2 @ wv + bv
        if activation == "linear":
            out, dact = pre, None
        elif activation == "tanh":
            out = np.tanh(pre)
            dact = 1.0 - out * out
        elif activation == "silu":
            sig = _sigmoid(pre)
            out = pre * sig
            dact = sig * (1.0 + pre * (1.0 - sig))
        elif activation == "softplus":
            out = _softplus(pre)
            dact = _sigmoid(pre)
        else:
            raise ContractError(f"unknown activation {activation!r}")
        if vec_in:
            out = out[0]
        parents, slots = [], []
        for slot, v in (("x", x), ("w", w), ("b", b)):
            if isinstance(v, Var):
                parents.append(v.idx)
                slots.append(slot)

        def vjp(g):
            g2 = g[None, :] if vec_in else g
            dpre = g2 if dact is None else g2 * dact
            res = []
            for slot in slots:
                if slot == "x":
                    dx = dpre @ wv.T
                    res.append(dx[0] if vec_in else dx)
                elif slot == "w":
                    res.append(x2.T @ dpre)
                else:
                    res.append(dpre.sum(axis=0))
            return tuple(res)

        return self._push(out, tuple(parents), vjp)

    def gru_cell(self, h, x, wx, wh, bx, bh):
        """Fused gated-recurrent step.

        Gate layout along the last axis is [reset, update, candidate]:
            r = sigmoid(gx_r + gh_r)         u = sigmoid(gx_u + gh_u)
            n = tanh(gx_n + r * gh_n)        h' = u * h + (1 - u) * n
        so a saturated update gate carries the previous state through.
        """
        hv, xv = value_of(h), value_of(x)
        wxv, whv, bxv, bhv = value_of(wx), value_of(wh), value_of(bx), value_of(bh)
        vec_in = hv.ndim == 1
        h2 = hv[None, :] if vec_in else hv
        x2 = xv[None, :] if vec_in else xv
        H = h2.shape[-1]
        if x2.shape[-1] != wxv.shape[0]:
            raise ShapeError(
                f"gru input has {x2.shape[-1]} features, weight expects {wxv.shape[0]}"
            )
        if h2.shape[-1] != whv.shape[0]:
            raise ShapeError(
                f"gru state has {h2.shape[-1]} units, weight expects {whv.shape[0]}"
            )
        gx = x2 @ wxv + bxv
        gh = h2 @ whv + bhv
        r = _sigmoid(gx[:, :H] + gh[:, :H])
        u = _sigmoid(gx[:, H:2 * H] + gh[:, H:2 * H])
        ghn = gh[:, 2 * H:]
        n = np.tanh(gx[:, 2 * H:] + r * ghn)
        out2 = u * h2 + (1.0 - u) * n
        out = out2[0] if vec_in else out2

        parents, slots = [], []
        for slot, v in (("h", h), ("x", x), ("wx", wx), ("wh", wh), ("bx", bx), ("bh", bh)):
            if isinstance(v, Var):
                parents.append(v.idx)
                slots.append(slot)

        def vjp(g):
            g2 = g[None, :] if vec_in else g
            du = g2 * (h2 - n)
            dn = g2 * (1.0 - u)
            dn_pre = dn * (1.0 - n * n)
            dr = dn_pre * ghn
            du_pre = du * u * (1.0 - u)
            dr_pre = dr * r * (1.0 - r)
            dgx = np.concatenate([dr_pre, du_pre, dn_pre], axis=-1)
            dgh = np.concatenate([dr_pre, du_pre, dn_pre * r], axis=-1)
            res = []
            for slot in slots:
                if slot == "h":
                    dh = g2 * u + dgh @ whv.T
                    res.append(dh[0] if vec_in else dh)
                elif slot == "x":
                    dx = dgx @ wxv.T
                    res.append(dx[0] if vec_in else dx)
                elif slot == "wx":
                    res.append(x2.T @ dgx)
                elif slot == "wh":
                    res.append(h2.T @ dgh)
                elif slot == "bx":
                    res.append(dgx.sum(axis=0))
                else:
                    res.append(dgh.sum(axis=0))
            return tuple(res)

        return self._push(out, tuple(parents), vjp)

    def kl_diag_gaussian(self, m1, s1, m2, s2):
        """KL(N(m1, s1^2) || N(m2, s2^2)) summed over the last axis.

        Any argument may be a raw array, which acts as a stop-gradient: the
        free-bits dyn/rep loss pair is expressed by detaching one side.
        """
        m1v, s1v = value_of(m1), value_of(s1)
        m2v, s2v = value_of(m2), value_of(s2)
        dm = m1v - m2v
        v2 = s2v * s2v
        out = (np.log(s2v) - np.log(s1v) + (s1v * s1v + dm * dm) / (2.0 * v2) - 0.5).sum(axis=-1)

        parents, slots = [], []
        for slot, v in (("m1", m1), ("s1", s1), ("m2", m2), ("s2", s2)):
            if isinstance(v, Var):
                parents.append(v.idx)
                slots.append(slot)

        def vjp(g):
            ge = np.expand_dims(g, -1)
            res = []
            for slot in slots:
                if slot == "m1":
                    res.append(ge * dm / v2)
                elif slot == "s1":
                    res.append(ge * (s1v / v2 - 1.0 / s1v))
                elif slot == "m2":
                    res.append(-ge * dm / v2)
                else:
                    res.append(ge * (1.0 / s2v - (s1v * s1v + dm * dm) / (v2 * s2v)))
            return tuple(res)

        return self._push(out, tuple(parents), vjp)

    # ---- reverse pass -----------------------------------------------------

    def backward(self, loss: Var, wrt: list[Var] | None = None):
        """Accumulate d(loss)/d(leaf) into every leaf sink.

        Returns gradients for `wrt` vars when requested (for tests and
        input-sensitivity probes). Each recorded node is visited once.
        """
        if loss.tape is not self:
            raise ContractError("loss node belongs to a different tape")
        if loss.value.shape != ():
            raise ContractError(f"loss must be scalar, got shape {loss.value.shape}")
        grads: list = [None] * len(self._values)
        grads[loss.idx] = np.ones((), dtype=loss.value.dtype)
        for i in range(loss.idx, -1, -1):
            g = grads[i]
            if g is None:
                continue
            vjp = self._vjps[i]
            if vjp is None:
                sink = self._sinks.get(i)
                if sink is not None:
                    sink += g
                continue
            for p, pg in zip(self._parents[i], vjp(g)):
                # never accumulate in place: vjp outputs may alias each other
                grads[p] = pg if grads[p] is None else grads[p] + pg
        if wrt is not None:
            out = []
            for v in wrt:
                g = grads[v.idx]
                out.append(np.zeros_like(v.value) if g is None else np.asarray(g))
            return out
        return None
