"""Named parameter storage and the network building blocks.

Forward helpers take a Tape for differentiable evaluation or tape=None for
plain numpy inference (acting in the environment, evaluation rollouts).
Passing trainable=False records the computation with the weights treated as
constants, so gradients flow through activations but not into the weights.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .errors import ContractError, ShapeError
from .rng import Rng


class Tensor:
    """One named parameter with its gradient and Adam moment buffers."""

    __slots__ = ("value", "grad", "m", "v")

    def __init__(self, value: np.ndarray):
        self.value = value
        self.grad = np.zeros_like(value)
        self.m = np.zeros_like(value)
        self.v = np.zeros_like(value)


class ParamSet:
    """Ordered collection of named tensors sharing one optimizer state."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.tensors: dict[str, Tensor] = {}
        self.step = 0  # Adam timestep

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.tensors:
            raise ContractError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=self.dtype, order="C"))
        self.tensors[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def names(self):
        return list(self.tensors)

    def zero_grads(self):
        for t in self.tensors.values():
            t.grad[...] = 0.0

    def watch(self, tape: ad.Tape, name: str) -> ad.Var:
        """Leaf Var whose backward gradient lands in this tensor's .grad."""
        t = self.tensors[name]
        return tape.leaf(t.value, sink=t.grad)

    def copy_values_from(self, other: "ParamSet", mix: float = 1.0):
        """value <- (1-mix)*value + mix*other.value, tensor by tensor."""
        for name, t in self.tensors.items():
            src = other.tensors[name].value
            if mix >= 1.0:
                t.value[...] = src
            else:
                t.value *= 1.0 - mix
                t.value += mix * src


def init_dense(ps: ParamSet, name: str, in_dim: int, out_dim: int, rng: Rng,
               zero: bool = False):
    """Uniform fan-in init; zero=True for output heads that should start flat."""
    if zero:
        w = np.zeros((in_dim, out_dim))
    else:
        s = 1.0 / np.sqrt(in_dim)
        w = (rng.uniform((in_dim, out_dim), dtype=np.float64) * 2.0 - 1.0) * s
    ps.add(name + ".w", w)
    ps.add(name + ".b", np.zeros(out_dim))


def dense_forward(tape, ps: ParamSet, name: str, x, activation: str = "linear",
                  trainable: bool = True):
    """y = activation(W @ x + b), recorded on the tape when one is given."""
    w, b = ps[name + ".w"], ps[name + ".b"]
    if tape is None:
        xv = ad.value_of(x)
        if xv.shape[-1] != w.value.shape[0]:
            raise ShapeError(
                f"dense input has {xv.shape[-1]} features, weight expects {w.value.shape[0]}"
            )
        pre = xv @ w.value + b.value
        if activation == "linear":
            return pre
        if activation == "tanh":
            return np.tanh(pre)
        if activation == "silu":
            return pre * ad._sigmoid(pre)
        if activation == "softplus":
            return ad._softplus(pre)
        raise ContractError(f"unknown activation {activation!r}")
    if trainable:
        return tape.dense(x, ps.watch(tape, name + ".w"), ps.watch(tape, name + ".b"),
                          activation)
    return tape.dense(x, w.value, b.value, activation)


def init_gru(ps: ParamSet, name: str, in_dim: int, hidden: int, rng: Rng):
    s = 1.0 / np.sqrt(hidden)
    ps.add(name + ".wx", (rng.uniform((in_dim, 3 * hidden), dtype=np.float64) * 2 - 1) * s)
    ps.add(name + ".wh", (rng.uniform((hidden, 3 * hidden), dtype=np.float64) * 2 - 1) * s)
    ps.add(name + ".bx", np.zeros(3 * hidden))
    ps.add(name + ".bh", np.zeros(3 * hidden))


def gru_step(tape, ps: ParamSet, name: str, h_prev, x, trainable: bool = True):
    """One gated-recurrent update; returns the new hidden state."""
    wx, wh = ps[name + ".wx"], ps[name + ".wh"]
    bx, bh = ps[name + ".bx"], ps[name + ".bh"]
    if tape is None:
        hv, xv = ad.value_of(h_prev), ad.value_of(x)
        if hv.shape[-1] != wh.value.shape[0]:
            raise ShapeError(
                f"gru state has {hv.shape[-1]} units, weight expects {wh.value.shape[0]}"
            )
        if xv.shape[-1] != wx.value.shape[0]:
            raise ShapeError(
                f"gru input has {xv.shape[-1]} features, weight expects {wx.value.shape[0]}"
            )
        H = wh.value.shape[0]
        gx = xv @ wx.value + bx.value
        gh = hv @ wh.value + bh.value
        r = ad._sigmoid(gx[..., :H] + gh[..., :H])
        u = ad._sigmoid(gx[..., H:2 * H] + gh[..., H:2 * H])
        n = np.tanh(gx[..., 2 * H:] + r * gh[..., 2 * H:])
        return u * hv + (1.0 - u) * n
    if trainable:
        return tape.gru_cell(h_prev, x,
                             ps.watch(tape, name + ".wx"), ps.watch(tape, name + ".wh"),
                             ps.watch(tape, name + ".bx"), ps.watch(tape, name + ".bh"))
    return tape.gru_cell(h_prev, x, wx.value, wh.value, bx.value, bh.value)


def init_mlp(ps: ParamSet, name: str, dims: list[int], rng: Rng, zero_out: bool = False):
    for i in range(len(dims) - 1):
        last = i == len(dims) - 2
        init_dense(ps, f"{name}.{i}", dims[i], dims[i + 1], rng, zero=zero_out and last)


def mlp_forward(tape, ps: ParamSet, name: str, x, n_layers: int,
                hidden_act: str = "silu", out_act: str = "linear",
                trainable: bool = True):
    for i in range(n_layers):
        act = out_act if i == n_layers - 1 else hidden_act
        x = dense_forward(tape, ps, f"{name}.{i}", x, act, trainable=trainable)
    return x


def sample_diag_gaussian(mean, std, rng: Rng, deterministic: bool = False):
    """Reparameterized draw z = mean + std * eps with eps ~ N(0, I).

    deterministic=True returns the mean exactly (inference mode); otherwise
    std must be positive elementwise.
    """
    mv = ad.value_of(mean)
    if deterministic:
        return mean
    sv = ad.value_of(std)
    if not (sv > 0).all():
        raise ContractError("sample_diag_gaussian requires std > 0 elementwise")
    eps = rng.normal(mv.shape, dtype=mv.dtype)
    if isinstance(mean, ad.Var) or isinstance(std, ad.Var):
        return mean + std * eps
    return mv + sv * eps
