"""Dense / GRU building blocks and Gaussian sampling."""

import numpy as np
import pytest

from scaffrl import autodiff as ad
from scaffrl.errors import ContractError, ShapeError
from scaffrl.layers import (ParamSet, dense_forward, gru_step, init_dense,
                            init_gru, init_mlp, mlp_forward,
                            sample_diag_gaussian)
from scaffrl.rng import Rng

from test_autodiff import fd_grad, rel_err


def make_dense(in_dim, out_dim, rng, dtype=np.float64):
    ps = ParamSet(dtype=dtype)
    init_dense(ps, "lin", in_dim, out_dim, rng)
    return ps


def test_identity_dense_passes_input_through():
    ps = ParamSet(dtype=np.float64)
    ps.add("lin.w", np.eye(2))
    ps.add("lin.b", np.zeros(2))
    out = dense_forward(None, ps, "lin", np.array([3.0, 4.0]), "linear")
    np.testing.assert_array_equal(out, [3.0, 4.0])


def test_zero_weight_tanh_gives_constant():
    ps = ParamSet(dtype=np.float64)
    ps.add("lin.w", np.zeros((3, 2)))
    ps.add("lin.b", np.ones(2))
    out = dense_forward(None, ps, "lin", np.array([9.0, -2.0, 5.0]), "tanh")
    np.testing.assert_allclose(out, np.tanh([1.0, 1.0]), rtol=1e-15)


def test_dense_matches_triple_loop_matmul_oracle():
    rng = Rng(21)
    ps = make_dense(4, 3, rng)
    x = rng.normal((4,), dtype=np.float64)
    out = dense_forward(None, ps, "lin", x, "linear")
    w, b = ps["lin.w"].value, ps["lin.b"].value
    expect = np.zeros(3)
    for j in range(3):
        acc = 0.0
        for i in range(4):
            acc += w[i, j] * x[i]
        expect[j] = acc + b[j]
    np.testing.assert_allclose(out, expect, atol=1e-12)


def test_dense_shape_mismatch():
    rng = Rng(22)
    ps = make_dense(4, 3, rng)
    with pytest.raises(ShapeError):
        dense_forward(None, ps, "lin", np.zeros(5))


def test_gru_update_gate_saturated_carries_state():
    rng = Rng(23)
    ps = ParamSet(dtype=np.float64)
    init_gru(ps, "gru", 3, 4, rng)
    ps["gru.bx"].value[4:8] = 50.0  # update-gate bias block
    h = rng.normal((4,), dtype=np.float64)
    x = rng.normal((3,), dtype=np.float64)
    h_new = gru_step(None, ps, "gru", h, x)
    assert np.max(np.abs(h_new - h)) < 1e-6


def test_gru_zero_params_halves_state():
    ps = ParamSet(dtype=np.float64)
    for name, shape in [("gru.wx", (3, 12)), ("gru.wh", (4, 12)),
                        ("gru.bx", (12,)), ("gru.bh", (12,))]:
        ps.add(name, np.zeros(shape))
    h = np.array([1.0, -2.0, 0.5, 4.0])
    h_new = gru_step(None, ps, "gru", h, np.zeros(3))
    np.testing.assert_allclose(h_new, 0.5 * h, rtol=1e-15)


def test_gru_matches_scalar_reference():
    # independent per-scalar re-implementation of the gate equations
    rng = Rng(24)
    ps = ParamSet(dtype=np.float64)
    init_gru(ps, "gru", 2, 3, rng)
    h = rng.normal((3,), dtype=np.float64)
    x = rng.normal((2,), dtype=np.float64)
    wx, wh = ps["gru.wx"].value, ps["gru.wh"].value
    bx, bh = ps["gru.bx"].value, ps["gru.bh"].value

    def sig(v):
        return 1.0 / (1.0 + np.exp(-v))

    expect = np.zeros(3)
    for k in range(3):
        gx = [sum(x[i] * wx[i, c * 3 + k] for i in range(2)) + bx[c * 3 + k] for c in range(3)]
        gh = [sum(h[j] * wh[j, c * 3 + k] for j in range(3)) + bh[c * 3 + k] for c in range(3)]
        r = sig(gx[0] + gh[0])
        u = sig(gx[1] + gh[1])
        n = np.tanh(gx[2] + r * gh[2])
        expect[k] = u * h[k] + (1 - u) * n
    got = gru_step(None, ps, "gru", h, x)
    np.testing.assert_allclose(got, expect, atol=1e-12)


def test_gru_shape_mismatch():
    rng = Rng(25)
    ps = ParamSet(dtype=np.float64)
    init_gru(ps, "gru", 2, 3, rng)
    with pytest.raises(ShapeError):
        gru_step(None, ps, "gru", np.zeros(4), np.zeros(2))


@pytest.mark.parametrize("activation", ["tanh", "silu", "linear", "softplus"])
def test_dense_gradients_all_activations(activation):
    rng = Rng(26)
    for _ in range(10):
        ps = make_dense(5, 4, rng)
        x = rng.normal((3, 5), dtype=np.float64)
        proj = rng.normal((3, 4), dtype=np.float64)

        def f():
            t = ad.Tape()
            return float((dense_forward(t, ps, "lin", x, activation) * proj).sum().value)

        tape = ad.Tape()
        out = dense_forward(tape, ps, "lin", x, activation)
        tape.backward((out * proj).sum())
        for name in ("lin.w", "lin.b"):
            tensor = ps[name]
            g = tensor.grad.copy()
            assert rel_err(g, fd_grad(f, tensor.value)) < 1e-4, (activation, name)
            tensor.grad[...] = 0.0


def test_gru_gradients_match_fd():
    rng = Rng(27)
    for _ in range(5):
        ps = ParamSet(dtype=np.float64)
        init_gru(ps, "gru", 3, 4, rng)
        h = rng.normal((2, 4), dtype=np.float64)
        x = rng.normal((2, 3), dtype=np.float64)
        proj = rng.normal((2, 4), dtype=np.float64)

        def f():
            t = ad.Tape()
            return float((gru_step(t, ps, "gru", t.leaf(h), x) * proj).sum().value)

        tape = ad.Tape()
        hv = tape.leaf(h)
        out = gru_step(tape, ps, "gru", hv, x)
        (gh,) = tape.backward((out * proj).sum(), wrt=[hv])
        assert rel_err(gh, fd_grad(f, h)) < 1e-4
        for name in ("gru.wx", "gru.wh", "gru.bx", "gru.bh"):
            tensor = ps[name]
            assert rel_err(tensor.grad, fd_grad(f, tensor.value)) < 1e-4, name
            tensor.grad[...] = 0.0


def test_mlp_forward_runs_tapeless_and_taped_identically():
    rng = Rng(28)
    ps = ParamSet(dtype=np.float64)
    init_mlp(ps, "net", [4, 8, 3], rng)
    x = rng.normal((5, 4), dtype=np.float64)
    plain = mlp_forward(None, ps, "net", x, 2)
    tape = ad.Tape()
    taped = mlp_forward(tape, ps, "net", x, 2)
    np.testing.assert_array_equal(plain, taped.value)


def test_sample_deterministic_mode_returns_mean():
    rng = Rng(29)
    mean = np.array([1.0, -2.0], dtype=np.float32)
    out = sample_diag_gaussian(mean, np.zeros(2, dtype=np.float32), rng,
                               deterministic=True)
    np.testing.assert_array_equal(out, mean)


def test_sample_rejects_nonpositive_std():
    with pytest.raises(ContractError):
        sample_diag_gaussian(np.zeros(2), np.array([0.5, 0.0]), Rng(0))


def test_sample_fixed_counter_reproduces_draw():
    mean = np.zeros(4, dtype=np.float32)
    std = np.ones(4, dtype=np.float32)
    a = sample_diag_gaussian(mean, std, Rng(42, counter=7))
    b = sample_diag_gaussian(mean, std, Rng(42, counter=7))
    np.testing.assert_array_equal(a, b)


def test_sample_monte_carlo_moments():
    rng = Rng(30)
    draws = sample_diag_gaussian(np.zeros(100_000, dtype=np.float64),
                                 np.ones(100_000, dtype=np.float64), rng)
    assert abs(draws.mean()) < 0.02
    assert abs(draws.std() - 1.0) < 0.02


def test_sample_gradients_flow_to_mean_and_std():
    rng = Rng(31)
    tape = ad.Tape()
    mean = tape.leaf(np.zeros(3))
    std = tape.leaf(np.ones(3))
    z = sample_diag_gaussian(mean, std, rng)
    gm, gs = tape.backward(z.sum(), wrt=[mean, std])
    np.testing.assert_allclose(gm, np.ones(3))
    assert np.any(gs != 0.0)
