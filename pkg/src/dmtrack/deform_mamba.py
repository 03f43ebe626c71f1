"""DeformMamba: deformable keyframe selection followed by a selective SSM encoder.

Pipeline for a batch of trajectory windows ``X`` of shape (B, T=8, 8):

1. offsets ``o = sigmoid(MLP(flatten(X))) * (T - 1)``, K=4 per window
2. keyframes ``x~_i = (1 - alpha) X[floor(o_i)] + alpha X[ceil(o_i)]``
3. tokens ``Z = LayerNorm(Linear(x~))`` of width 64
4. three residual selective-scan blocks
5. ``Linear(64, 8)`` on the last token

Windows are expected in track-local coordinates (see :mod:`dmtrack.motion_frame`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ShapeError
from .tensor import core as tc
from .tensor.core import Tensor, _make, as_tensor, gather_rows, layernorm, relu, sigmoid, softplus
from .tensor.nn import Linear, ParamStore

try:
    from ._scan_kernels import scan_backward, scan_forward
except ImportError:  # pragma: no cover - numba missing
    scan_forward = scan_backward = None

WINDOW = 8
STATE_DIM = 8
NUM_KEYFRAMES = 4
D_MODEL = 64
D_INNER = 128
D_STATE = 16
DT_RANK = 4
NUM_BLOCKS = 3


# ----------------------------------------------------------------- windows
@dataclass
class TrajectoryWindow:
    states: np.ndarray  # (T, 8), oldest first
    valid_count: int

    def __post_init__(self) -> None:
        if self.states.shape != (WINDOW, STATE_DIM):
            raise ShapeError(f"window must be ({WINDOW}, {STATE_DIM}), got {self.states.shape}")
        if not 1 <= self.valid_count <= WINDOW:
            raise ValueError(f"valid_count must be in [1, {WINDOW}], got {self.valid_count}")


def pad_window(states) -> TrajectoryWindow:
    """Build a full window from the most recent ``<= T`` states.

    Missing older entries repeat the oldest real state with its velocity
    components zeroed.
    """
    states = np.asarray(states, dtype=np.float64).reshape(-1, STATE_DIM)
    if len(states) == 0:
        raise ValueError("cannot build a window from zero states")
    states = states[-WINDOW:]
    n = len(states)
    if n == WINDOW:
        return TrajectoryWindow(states.copy(), n)
    filler = states[0].copy()
    filler[4:] = 0.0
    pad = np.repeat(filler[None], WINDOW - n, axis=0)
    return TrajectoryWindow(np.concatenate([pad, states]), n)


# ------------------------------------------------------- offsets & keyframes
def predict_offsets(window, fc1: Linear, fc2: Linear) -> Tensor:
    """(B, T, 8) -> (B, K) fractional indices in [0, T-1]."""
    window = as_tensor(window)
    b = window.shape[0]
    flat = window.reshape(b, WINDOW * STATE_DIM)
    return sigmoid(fc2(relu(fc1(flat)))) * float(WINDOW - 1)


def interpolate_keyframes(window, offsets) -> Tensor:
    """Linear interpolation of window rows at fractional offsets; (B,T,8),(B,K) -> (B,K,8)."""
    window, offsets = as_tensor(window), as_tensor(offsets)
    o = offsets.data
    if np.any(o < 0) or np.any(o > WINDOW - 1):
        raise ValueError(f"offsets must lie in [0, {WINDOW - 1}]")
    lo = np.floor(o)
    hi = np.minimum(np.ceil(o), WINDOW - 1)
    lo_i = lo.astype(np.intp)
    x_lo = gather_rows(window, lo_i)
    x_hi = gather_rows(window, hi.astype(np.intp))
    alpha = (offsets - lo).reshape(o.shape + (1,))
    return x_lo + alpha * (x_hi - x_lo)


# ------------------------------------------------------------ discretization
def discretize(A, B, delta) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear discretization for diagonal ``A``.

    ``A_hat = (1 - delta/2 A)^-1 (1 + delta/2 A)``, ``B_hat = (1 - delta/2 A)^-1 delta B``,
    evaluated elementwise (all arguments broadcast).
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if np.any(delta <= 0):
        raise ValueError("delta must be positive")
    half = 0.5 * delta * A
    den = 1.0 - half
    if np.any(den == 0):
        raise NumericalError("singular discretization: 1 - delta/2 * a == 0")
    return (1.0 + half) / den, delta * B / den


def discretize_dense(A, B, delta: float) -> tuple[np.ndarray, np.ndarray]:
    """Matrix form of the bilinear discretization (reference for the diagonal case)."""
    A = np.asarray(A, dtype=np.float64)
    n = A.shape[0]
    left = np.eye(n) - 0.5 * delta * A
    if abs(np.linalg.det(left)) < 1e-300:
        raise NumericalError("singular discretization: I - delta/2 A is not invertible")
    return np.linalg.solve(left, np.eye(n) + 0.5 * delta * A), np.linalg.solve(left, delta * np.asarray(B))


# ------------------------------------------------------------ selective scan
def selective_scan(x, delta, A, Bm, Cm, D) -> Tensor:
    """Input-dependent SSM scan with h_0 = 0.

    Shapes: ``x``, ``delta`` (B, L, Di); ``A`` (Di, N); ``Bm``, ``Cm`` (B, L, N);
    ``D`` (Di,).  Returns ``y`` (B, L, Di) with

        h_t = A_hat_t * h_{t-1} + B_hat_t * x_t,   y_t = sum_n C_t h_t + D * x_t

    and ``(A_hat_t, B_hat_t)`` from :func:`discretize` with step ``delta_t``.
    Forward and backward are written out by hand for speed; the composite
    version :func:`selective_scan_reference` is the cross-check.
    """
    x, delta, A, Bm, Cm, D = (as_tensor(t) for t in (x, delta, A, Bm, Cm, D))
    arrays = tuple(np.ascontiguousarray(t.data) for t in (x, delta, A, Bm, Cm, D))
    if scan_forward is not None:
        y, hs = scan_forward(*arrays)
        return _make(y, (x, delta, A, Bm, Cm, D), lambda gy: scan_backward(np.ascontiguousarray(gy), *arrays, hs))
    return _selective_scan_numpy(x, delta, A, Bm, Cm, D)


def _selective_scan_numpy(x, delta, A, Bm, Cm, D) -> Tensor:
    xd, dd, Ad, Bd, Cd, Dd = x.data, delta.data, A.data, Bm.data, Cm.data, D.data
    nb, L, di = xd.shape
    n = Ad.shape[1]
    hs = np.zeros((L + 1, nb, di, n))
    abar = np.empty((L, nb, di, n))
    den = np.empty((L, nb, di, n))
    y = np.empty_like(xd)
    for t in range(L):
        q = 0.5 * dd[:, t, :, None] * Ad
        den_t = 1.0 - q
        abar_t = (1.0 + q) / den_t
        bbar_t = dd[:, t, :, None] * Bd[:, t, None, :] / den_t
        hs[t + 1] = abar_t * hs[t] + bbar_t * xd[:, t, :, None]
        y[:, t] = np.einsum("bdn,bn->bd", hs[t + 1], Cd[:, t]) + Dd * xd[:, t]
        abar[t] = abar_t
        den[t] = den_t

    def backward(gy):
        gx = np.empty_like(xd)
        gdelta = np.empty_like(dd)
        gA = np.zeros_like(Ad)
        gB = np.empty_like(Bd)
        gC = np.empty_like(Cd)
        gD = (gy * xd).sum(axis=(0, 1))
        dh = np.zeros((nb, di, n))
        for t in range(L - 1, -1, -1):
            h_t = hs[t + 1]
            gC[:, t] = np.einsum("bd,bdn->bn", gy[:, t], h_t)
            dh = dh + gy[:, t, :, None] * Cd[:, t, None, :]
            den_t = den[t]
            d_t = dd[:, t, :, None]
            b_t = Bd[:, t, None, :]
            x_t = xd[:, t, :, None]
            bbar_t = d_t * b_t / den_t
            gx[:, t] = gy[:, t] * Dd + (dh * bbar_t).sum(axis=-1)
            g_abar = dh * hs[t]
            g_bbar = dh * x_t
            inv_den2 = 1.0 / (den_t * den_t)
            gq = g_abar * 2.0 * inv_den2 + g_bbar * d_t * b_t * inv_den2
            gdelta[:, t] = (gq * 0.5 * Ad + g_bbar * b_t / den_t).sum(axis=-1)
            gA += (gq * 0.5 * d_t).sum(axis=0)
            gB[:, t] = (g_bbar * d_t / den_t).sum(axis=1)
            dh = dh * abar[t]
        return gx, gdelta, gA, gB, gC, gD

    return _make(y, (x, delta, A, Bm, Cm, D), backward)


def selective_scan_reference(x, delta, A, Bm, Cm, D) -> Tensor:
    """Same recurrence as :func:`selective_scan`, composed from tape primitives."""
    x, delta, A, Bm, Cm, D = (as_tensor(t) for t in (x, delta, A, Bm, Cm, D))
    nb, L, di = x.shape
    n = A.shape[1]
    h = Tensor(np.zeros((nb, di, n)))
    ys = []
    for t in range(L):
        d_t = delta[:, t, :].reshape(nb, di, 1)
        q = d_t * A * 0.5
        den = 1.0 - q
        abar = (1.0 + q) / den
        bbar = d_t * Bm[:, t, :].reshape(nb, 1, n) / den
        h = abar * h + bbar * x[:, t, :].reshape(nb, di, 1)
        y_t = (h * Cm[:, t, :].reshape(nb, 1, n)).sum(axis=-1) + D * x[:, t, :]
        ys.append(y_t)
    return tc.stack(ys, axis=1)


# ------------------------------------------------------------------- blocks
class SsmBlock:
    """Pre-norm gated selective-scan block with a residual connection."""

    def __init__(self, store: ParamStore, name: str, rng: np.random.Generator,
                 d_model: int = D_MODEL, d_inner: int = D_INNER, d_state: int = D_STATE,
                 dt_rank: int = DT_RANK) -> None:
        self.name = name
        self.d_inner, self.d_state, self.dt_rank = d_inner, d_state, dt_rank
        self.norm_gain = store.add(f"{name}.norm.gain", np.ones(d_model))
        self.norm_bias = store.add(f"{name}.norm.bias", np.zeros(d_model))
        self.in_proj = Linear(store, f"{name}.in_proj", d_model, 2 * d_inner, rng)
        self.x_proj = Linear(store, f"{name}.x_proj", d_inner, dt_rank + 2 * d_state, rng, bias=False)
        self.dt_proj = Linear(store, f"{name}.dt_proj", dt_rank, d_inner, rng)
        dt = np.exp(rng.uniform(np.log(1e-3), np.log(1e-1), d_inner))
        self.dt_proj.bias.data = dt + np.log(-np.expm1(-dt))  # inverse softplus
        self.dt_proj.weight.data = rng.uniform(-dt_rank**-0.5, dt_rank**-0.5, (dt_rank, d_inner))
        a_log = np.log(np.tile(np.arange(1, d_state + 1, dtype=np.float64), (d_inner, 1)))
        self.A_log = store.add(f"{name}.A_log", a_log)
        self.D = store.add(f"{name}.D", np.ones(d_inner))
        self.out_proj = Linear(store, f"{name}.out_proj", d_inner, d_model, rng)

    def __call__(self, tokens, scan=selective_scan) -> Tensor:
        tokens = as_tensor(tokens)
        u = layernorm(tokens, self.norm_gain, self.norm_bias)
        xz = self.in_proj(u)
        di, ns, r = self.d_inner, self.d_state, self.dt_rank
        x = xz[..., :di]
        z = xz[..., di:]
        dbc = self.x_proj(x)
        delta = softplus(self.dt_proj(dbc[..., :r]))
        Bm = dbc[..., r:r + ns]
        Cm = dbc[..., r + ns:]
        A = -tc.exp(self.A_log)
        y = scan(x, delta, A, Bm, Cm, self.D)
        out = self.out_proj(y * tc.silu(z))
        _check_finite(out, self.name)
        return tokens + out


def _check_finite(t: Tensor, layer: str) -> None:
    if not np.all(np.isfinite(t.data)):
        bad = np.argwhere(~np.isfinite(t.data))[0]
        token = int(bad[1]) if t.ndim >= 3 else int(bad[0])
        raise NumericalError(f"non-finite activation in {layer} at token {token}")


class DeformMamba:
    """Learned next-state predictor over T=8 trajectory windows."""

    prefix = "deform_mamba."

    def __init__(self, seed: int = 0, num_keyframes: int = NUM_KEYFRAMES, num_blocks: int = NUM_BLOCKS,
                 store: ParamStore | None = None) -> None:
        rng = np.random.default_rng(seed)
        self.params = store if store is not None else ParamStore(self.prefix)
        self.num_keyframes = num_keyframes
        p = self.params
        self.offset_fc1 = Linear(p, "offset.fc1", WINDOW * STATE_DIM, 64, rng)
        self.offset_fc2 = Linear(p, "offset.fc2", 64, num_keyframes, rng)
        self.token_proj = Linear(p, "token.proj", STATE_DIM, D_MODEL, rng)
        self.token_gain = p.add("token.norm.gain", np.ones(D_MODEL))
        self.token_bias = p.add("token.norm.bias", np.zeros(D_MODEL))
        self.blocks = [SsmBlock(p, f"block{i}", rng) for i in range(num_blocks)]
        self.head = Linear(p, "head", D_MODEL, STATE_DIM, rng)

    def offsets(self, windows) -> Tensor:
        return predict_offsets(windows, self.offset_fc1, self.offset_fc2)

    def tokenize(self, keyframes) -> Tensor:
        return layernorm(self.token_proj(keyframes), self.token_gain, self.token_bias)

    def encode(self, tokens, scan=selective_scan) -> Tensor:
        z = tokens
        for block in self.blocks:
            z = block(z, scan=scan)
        return z

    def __call__(self, windows, scan=selective_scan) -> Tensor:
        """(B, T, 8) local-frame windows -> (B, 8) predicted next state."""
        windows = as_tensor(windows)
        if windows.ndim != 3 or windows.shape[1:] != (WINDOW, STATE_DIM):
            raise ShapeError(f"expected windows of shape (B, {WINDOW}, {STATE_DIM}), got {windows.shape}")
        keyframes = interpolate_keyframes(windows, self.offsets(windows))
        z = self.encode(self.tokenize(keyframes), scan=scan)
        return self.head(z[:, -1, :])
