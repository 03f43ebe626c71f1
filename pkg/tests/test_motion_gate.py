"""MotionGate: closed forms at the origin, convex fusion and gradients."""

import math

import numpy as np
import pytest

from dmtrack.errors import NumericalError
from dmtrack.motion_gate import SIGMA_EPS, MotionGate, fuse, fuse_prediction, gate_forward
from dmtrack.tensor import Tape, Tensor, tsum
from fd_oracle import central_diff, max_rel_error


def inputs(seed, batch=3):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(batch, 8)), rng.uniform(0.1, 3.0, (batch, 8)), rng.normal(size=(batch, 8))


class TestGateForward:
    def test_zero_weights_closed_form(self):
        gate = MotionGate(seed=0)
        for _, p in gate.params.items():
            p.data = np.zeros_like(p.data)
        alpha, sigma = gate(*inputs(0))
        np.testing.assert_array_equal(alpha.data, np.full((3, 8), 0.5))
        np.testing.assert_allclose(sigma.data, np.full((3, 8), math.log(2) + 1e-6), rtol=0, atol=1e-15)

    def test_extreme_inputs_stay_in_range(self):
        # float64 sigmoid saturates to exactly 0 or 1 far from the origin; it never leaves [0, 1]
        gate = MotionGate(seed=1)
        rng = np.random.default_rng(0)
        for _ in range(50):
            scale = rng.uniform(1, 1e3)
            xk, sk, xm = (a * scale for a in inputs(int(rng.integers(1 << 30))))
            alpha, sigma = gate(xk, sk, xm)
            assert np.all((alpha.data >= 0) & (alpha.data <= 1))
            assert np.all(np.isfinite(sigma.data)) and np.all(sigma.data >= SIGMA_EPS)

    def test_alpha_open_interval_for_moderate_inputs(self):
        alpha, _ = MotionGate(seed=2)(*inputs(3, batch=200))
        assert np.all((alpha.data > 0) & (alpha.data < 1))

    def test_deterministic(self):
        a1, s1 = MotionGate(seed=4)(*inputs(5))
        a2, s2 = MotionGate(seed=4)(*inputs(5))
        assert np.array_equal(a1.data, a2.data) and np.array_equal(s1.data, s2.data)

    def test_input_order_matters(self):
        gate = MotionGate(seed=6)
        xk, sk, xm = inputs(7)
        a1, _ = gate(xk, sk, xm)
        a2, _ = gate(xm, np.abs(np.random.default_rng(8).normal(size=(3, 8))), xk)
        assert not np.allclose(a1.data, a2.data)

    def test_non_finite_input(self):
        xk, sk, xm = inputs(0)
        xm[0, 3] = np.nan
        with pytest.raises(NumericalError, match="x_mam"):
            MotionGate(seed=0)(xk, sk, xm)

    def test_negative_sigma_rejected(self):
        xk, sk, xm = inputs(0)
        sk[1, 1] = -0.1
        with pytest.raises(ValueError):
            MotionGate(seed=0)(xk, sk, xm)

    def test_parameter_prefix_and_shapes(self):
        gate = MotionGate(seed=0)
        assert gate.params["shared.weight"].shape == (24, 64)
        assert gate.params["alpha.weight"].shape == (64, 8)
        assert gate.params["sigma.weight"].shape == (64, 8)
        assert all(n.startswith("motion_gate.") for n in gate.params.names())

    def test_gradients_inputs_and_weights(self):
        gate = MotionGate(seed=9)
        arrays = inputs(10)
        p1, p2 = np.random.default_rng(11).normal(size=(2, 3, 8))
        leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
        params = [p for _, p in gate.params.items()]
        for p in params:
            p.zero_grad()
        with Tape() as tape:
            alpha, sigma = gate_forward(*leaves, gate)
            tape.backward(tsum(alpha * p1) + tsum(sigma * p2))

        def f():
            a, s = gate_forward(*arrays, gate)
            return float((a.data * p1).sum() + (s.data * p2).sum())

        for leaf, arr in zip(leaves, arrays):
            assert max_rel_error(leaf.grad, central_diff(f, arr)) <= 1e-4
        for p in params:
            assert max_rel_error(p.grad, central_diff(f, p.data)) <= 1e-4, p.name


class TestFuse:
    def test_alpha_one_is_kalman(self):
        xk, sk, xm = inputs(0)
        x, s = fuse(xk, sk, xm, np.ones((3, 8)), np.full((3, 8), 9.0))
        np.testing.assert_array_equal(x.data, xk)
        np.testing.assert_array_equal(s.data, sk)

    def test_alpha_zero_is_mamba(self):
        xk, sk, xm = inputs(0)
        sm = np.full((3, 8), 9.0)
        x, s = fuse(xk, sk, xm, np.zeros((3, 8)), sm)
        np.testing.assert_array_equal(x.data, xm)
        np.testing.assert_array_equal(s.data, sm)

    def test_midpoint(self):
        x, _ = fuse(np.full(8, 2.0), np.ones(8), np.full(8, 4.0), np.full(8, 0.5), np.ones(8))
        assert x.data[0] == 3.0

    def test_betweenness_1000_random(self):
        rng = np.random.default_rng(0)
        gate = MotionGate(seed=0)
        for i in range(1000):
            xk, sk, xm = rng.normal(0, 5, 8), rng.uniform(0, 4, 8), rng.normal(0, 5, 8)
            alpha, sm = gate(xk, sk, xm)
            fp = fuse_prediction(xk, sk, xm, alpha, sm)
            tol = 1e-12
            assert np.all(fp.x_fuse >= np.minimum(xk, xm) - tol) and np.all(fp.x_fuse <= np.maximum(xk, xm) + tol)
            assert np.all(fp.sigma_fuse >= np.minimum(sk, sm.data) - tol)
            assert np.all(fp.sigma_fuse <= np.maximum(sk, sm.data) + tol)
            np.testing.assert_array_equal(fp.alpha, alpha.data)
