"""DeformMamba: offsets, keyframe interpolation, bilinear discretization, scan and full forward."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dmtrack import deform_mamba as dm
from dmtrack.errors import NumericalError, ShapeError
from dmtrack.tensor import Linear, ParamStore, Tape, Tensor, tsum
from fd_oracle import central_diff, max_rel_error


def windows(seed, batch=2):
    return np.random.default_rng(seed).normal(size=(batch, 8, 8))


def grad_wrt(loss_fn, tensors):
    for t in tensors:
        t.zero_grad()
    with Tape() as tape:
        loss = loss_fn()
        tape.backward(loss)
    return [t.grad.copy() for t in tensors]


def zero_all(store):
    for _, p in store.items():
        p.data = np.zeros_like(p.data)


class TestPadWindow:
    def test_full_window_untouched(self):
        s = np.arange(64.0).reshape(8, 8)
        w = dm.pad_window(s)
        assert w.valid_count == 8 and np.array_equal(w.states, s)

    def test_keeps_newest_eight(self):
        s = np.arange(80.0).reshape(10, 8)
        assert np.array_equal(dm.pad_window(s).states, s[2:])

    def test_short_history_repeats_oldest_with_zero_velocity(self):
        s = np.array([[1, 2, 0.5, 10, 3, 4, 0.1, 0.2], [4, 6, 0.5, 10, 3, 4, 0.1, 0.2]], float)
        w = dm.pad_window(s)
        assert w.valid_count == 2
        np.testing.assert_array_equal(w.states[:6], np.tile([1, 2, 0.5, 10, 0, 0, 0, 0], (6, 1)))
        np.testing.assert_array_equal(w.states[6:], s)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            dm.pad_window(np.zeros((0, 8)))

    def test_window_type_checks_shape(self):
        with pytest.raises(ShapeError):
            dm.TrajectoryWindow(np.zeros((7, 8)), 7)


class TestOffsets:
    def setup_method(self):
        store = ParamStore()
        rng = np.random.default_rng(0)
        self.store = store
        self.fc1 = Linear(store, "fc1", 64, 64, rng)
        self.fc2 = Linear(store, "fc2", 64, 4, rng)

    @given(st.integers(0, 2**32 - 1), st.floats(0.1, 1e3))
    def test_bounded(self, seed, scale):
        o = dm.predict_offsets(windows(seed) * scale, self.fc1, self.fc2).data
        assert o.shape == (2, 4)
        assert np.all((o >= 0) & (o <= 7))

    def test_zero_weights_give_centre(self):
        zero_all(self.store)
        o = dm.predict_offsets(windows(1), self.fc1, self.fc2).data
        np.testing.assert_array_equal(o, np.full((2, 4), 3.5))

    def test_gradient_wrt_mlp_weights(self):
        X = windows(2)
        w = np.random.default_rng(3).normal(size=(2, 4))
        params = [p for _, p in self.store.items()]
        analytic = grad_wrt(lambda: tsum(dm.predict_offsets(X, self.fc1, self.fc2) * w), params)
        f = lambda: float((dm.predict_offsets(X, self.fc1, self.fc2).data * w).sum())  # noqa: E731
        for p, g in zip(params, analytic):
            assert max_rel_error(g, central_diff(f, p.data)) <= 1e-4, p.name


class TestInterpolate:
    def setup_method(self):
        self.X = np.arange(8.0)[None, :, None] * np.ones((1, 8, 8))

    def test_integer_offset_is_exact(self):
        X = windows(0, batch=1)
        out = dm.interpolate_keyframes(X, np.array([[2.0, 0.0, 5.0, 7.0]])).data
        np.testing.assert_array_equal(out[0], X[0, [2, 0, 5, 7]])

    def test_midpoint(self):
        X = np.zeros((1, 8, 8))
        X[0, 2, 0] = 2.0
        out = dm.interpolate_keyframes(X, np.array([[1.5, 1.5, 1.5, 1.5]])).data
        assert out[0, 0, 0] == 1.0

    def test_upper_boundary(self):
        out = dm.interpolate_keyframes(self.X, np.array([[7.0, 7.0, 7.0, 7.0]])).data
        np.testing.assert_array_equal(out, np.full((1, 4, 8), 7.0))

    @pytest.mark.parametrize("bad", [-0.01, 7.01])
    def test_out_of_range(self, bad):
        with pytest.raises(ValueError):
            dm.interpolate_keyframes(self.X, np.array([[bad, 1, 1, 1]]))

    def test_gradient_to_window_and_offsets(self):
        X = windows(4)
        o = np.random.default_rng(5).uniform(0.2, 6.8, size=(2, 4))
        w = np.random.default_rng(6).normal(size=(2, 4, 8))
        tx, to = Tensor(X.copy(), requires_grad=True), Tensor(o.copy(), requires_grad=True)
        gx, go = grad_wrt(lambda: tsum(dm.interpolate_keyframes(tx, to) * w), [tx, to])
        f = lambda: float((dm.interpolate_keyframes(X, o).data * w).sum())  # noqa: E731
        assert max_rel_error(gx, central_diff(f, X)) <= 1e-4
        assert max_rel_error(go, central_diff(f, o)) <= 1e-4


class TestDiscretize:
    def test_zero_dynamics(self):
        Ah, Bh = dm.discretize(np.zeros(5), np.arange(5.0), 0.3)
        np.testing.assert_array_equal(Ah, np.ones(5))
        np.testing.assert_allclose(Bh, 0.3 * np.arange(5.0), rtol=1e-15)

    def test_scalar_case(self):
        Ah, _ = dm.discretize(-1.0, 1.0, 0.1)
        assert abs(Ah - 0.95 / 1.05) <= 1e-15
        # the 7-digit literal is a rounding of 19/21; compare the tolerance against the exact value
        assert abs(Ah - 19 / 21) <= 1e-9
        assert round(float(Ah), 7) == 0.9047619

    def test_small_step_slope(self):
        A = np.array([-1.0, -3.0, -16.0])
        norm_a = np.abs(A).max()
        errs = []
        for d in (1e-2, 1e-3, 1e-4):
            Ah, _ = dm.discretize(A, np.ones(3), d)
            err = np.abs(Ah - 1).max()
            assert err <= d * norm_a + 10 * (d * norm_a) ** 2
            errs.append(err)
        # first order: each tenfold step reduction cuts the deviation tenfold
        assert errs[0] / errs[1] == pytest.approx(10, rel=0.2)
        assert errs[1] / errs[2] == pytest.approx(10, rel=0.02)

    def test_matches_dense_form_for_diagonal(self):
        rng = np.random.default_rng(0)
        a, b = -rng.uniform(0.1, 5, 6), rng.normal(size=6)
        Ah, Bh = dm.discretize(a, b, 0.37)
        Ad, Bd = dm.discretize_dense(np.diag(a), b, 0.37)
        np.testing.assert_allclose(np.diag(Ad), Ah, rtol=1e-13)
        np.testing.assert_allclose(Bd, Bh, rtol=1e-13)

    def test_singular(self):
        with pytest.raises(NumericalError):
            dm.discretize(2.0, 1.0, 1.0)

    def test_non_positive_step(self):
        with pytest.raises(ValueError):
            dm.discretize(-1.0, 1.0, 0.0)


def scan_inputs(seed, nb=2, L=4, di=5, n=3):
    rng = np.random.default_rng(seed)
    return (rng.normal(size=(nb, L, di)), rng.uniform(0.05, 1.0, (nb, L, di)), -rng.uniform(0.5, 4, (di, n)),
            rng.normal(size=(nb, L, n)), rng.normal(size=(nb, L, n)), rng.normal(size=di))


class TestSelectiveScan:
    def test_single_token_oracle(self):
        x, d, A, B, C, D = scan_inputs(0, nb=1, L=1)
        y = dm.selective_scan(x, d, A, B, C, D).data
        Ah, Bh = dm.discretize(A, B[0, 0][None, :], d[0, 0][:, None])
        expected = (C[0, 0][None, :] * Bh * x[0, 0][:, None]).sum(-1) + D * x[0, 0]
        np.testing.assert_allclose(y[0, 0], expected, rtol=1e-13, atol=1e-14)

    def test_zero_dynamics_is_cumulative_sum(self):
        x, d, A, B, C, D = scan_inputs(1, nb=1, L=6, di=3, n=2)
        A = np.zeros_like(A)
        B = np.broadcast_to(B[:, :1, :], B.shape).copy()
        C = np.broadcast_to(C[:, :1, :], C.shape).copy()
        y = dm.selective_scan(x, d, A, B, C, D).data
        acc = np.cumsum(d[0] * x[0], axis=0)
        expected = float(C[0, 0] @ B[0, 0]) * acc + D * x[0]
        np.testing.assert_allclose(y[0], expected, rtol=1e-12)

    def test_order_sensitive(self):
        x, d, A, B, C, D = scan_inputs(2)
        y = dm.selective_scan(x, d, A, B, C, D).data
        p = [3, 1, 0, 2]
        y_perm = dm.selective_scan(x[:, p], d[:, p], A, B[:, p], C[:, p], D).data
        assert not np.allclose(y_perm[:, np.argsort(p)], y)

    @pytest.mark.parametrize("seed", range(5))
    def test_kernels_agree_with_reference(self, seed):
        args = scan_inputs(seed)
        w = np.random.default_rng(seed + 10).normal(size=args[0].shape)
        outs, grads = [], []
        for fn in (dm.selective_scan, dm._selective_scan_numpy, dm.selective_scan_reference):
            ts = [Tensor(a.copy(), requires_grad=True) for a in args]
            with Tape() as tape:
                y = fn(*ts)
                tape.backward(tsum(y * w))
            outs.append(y.data)
            grads.append([t.grad for t in ts])
        for k in (1, 2):
            np.testing.assert_allclose(outs[k], outs[0], rtol=1e-12, atol=1e-13)
            for ga, gb in zip(grads[k], grads[0]):
                np.testing.assert_allclose(ga, gb, rtol=1e-10, atol=1e-12)

    def test_gradient_against_finite_differences(self):
        args = scan_inputs(7)
        w = np.random.default_rng(8).normal(size=args[0].shape)
        ts = [Tensor(a.copy(), requires_grad=True) for a in args]
        analytic = grad_wrt(lambda: tsum(dm.selective_scan(*ts) * w), ts)
        f = lambda: float((dm._selective_scan_numpy(*map(Tensor, args)).data * w).sum())  # noqa: E731
        for a, g in zip(args, analytic):
            assert max_rel_error(g, central_diff(f, a)) <= 1e-4


class TestSsmBlock:
    def make(self, seed=0):
        store = ParamStore()
        return store, dm.SsmBlock(store, "blk", np.random.default_rng(seed), d_model=16, d_inner=8, d_state=4, dt_rank=2)

    def test_zero_tokens_zero_biases(self):
        store, blk = self.make()
        for name, p in store.items():
            if name.endswith("bias"):
                p.data = np.zeros_like(p.data)
        out = blk(np.zeros((2, 4, 16))).data
        np.testing.assert_array_equal(out, np.zeros((2, 4, 16)))

    def test_stable_dynamics(self):
        store, blk = self.make()
        assert np.all(-np.exp(blk.A_log.data) < 0)

    def test_non_finite_names_layer_and_token(self):
        _, blk = self.make()
        z = np.random.default_rng(0).normal(size=(1, 4, 16))
        blk.out_proj.bias.data[3] = np.inf
        with pytest.raises(NumericalError, match=r"blk.*token 0"):
            blk(z)


class TestDeformMamba:
    def test_output_shape(self):
        assert dm.DeformMamba(seed=0)(windows(0, batch=3)).shape == (3, 8)

    def test_window_shape_checked(self):
        with pytest.raises(ShapeError):
            dm.DeformMamba(seed=0)(np.zeros((1, 7, 8)))

    def test_deterministic(self):
        a = dm.DeformMamba(seed=5)(windows(1)).data
        b = dm.DeformMamba(seed=5)(windows(1)).data
        assert np.array_equal(a, b)

    def test_parameter_prefix(self):
        names = dm.DeformMamba(seed=0).params.names()
        assert all(n.startswith("deform_mamba.") for n in names)
        assert "deform_mamba.block2.A_log" in names

    def test_zero_offset_mlp_gives_identical_tokens(self):
        model = dm.DeformMamba(seed=0)
        for name in ("offset.fc1.weight", "offset.fc1.bias", "offset.fc2.weight", "offset.fc2.bias"):
            model.params[name].data[...] = 0.0
        X = windows(2)
        o = model.offsets(X).data
        assert np.all(o == 3.5)
        tokens = model.tokenize(dm.interpolate_keyframes(X, o)).data
        for k in range(1, 4):
            np.testing.assert_array_equal(tokens[:, k], tokens[:, 0])

    def test_gradient_flows_through_offsets(self):
        model = dm.DeformMamba(seed=0)
        X = windows(3, batch=1)
        base = model(X).data
        o = model.offsets(X).data[0]
        # an entry read only by interpolation at the chosen offsets
        row = int(np.floor(o[0]))
        X2 = X.copy()
        X2[0, row, 5] += 1e-3
        assert not np.array_equal(model(X2).data, base)
        fc2 = model.params["offset.fc2.bias"]
        (g,) = grad_wrt(lambda: tsum(model(X) * model(X)), [fc2])
        assert np.any(g != 0)

    def test_end_to_end_gradient_every_group(self):
        model = dm.DeformMamba(seed=1)
        X = windows(4)
        analytic = {}
        params = [p for _, p in model.params.items()]
        grads = grad_wrt(lambda: tsum(model(X) * model(X)), params)
        f = lambda: float((model(X).data ** 2).sum())  # noqa: E731
        rng = np.random.default_rng(0)
        for p, g in zip(params, grads):
            idx = tuple(int(rng.integers(s)) for s in p.data.shape)
            old = p.data[idx]
            p.data[idx] = old + 1e-5
            up = f()
            p.data[idx] = old - 1e-5
            down = f()
            p.data[idx] = old
            num = (up - down) / 2e-5
            analytic[p.name] = max_rel_error(np.array([g[idx]]), np.array([num]))
        assert max(analytic.values()) <= 1e-4, max(analytic, key=analytic.get)
