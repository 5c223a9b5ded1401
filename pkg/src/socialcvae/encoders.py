"""GRU cells and the track / lanelet encoders built on them."""

from __future__ import annotations

import numpy as np

from . import tensor as tc
from .layers import Module
from .tensor import Tensor

HIDDEN = 64
BOUNDARY_POINTS = 8
BOUNDARY_FEATURES = 4  # x, y, boundary-type flag, stop-sign flag


def _sig(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def gru_cell(gx, h, w_h, b_h) -> Tensor:
    """One GRU update from a precomputed input projection.

    ``gx`` holds ``x @ W_x + b_x`` for the reset, update and candidate blocks
    (``(N, 3H)``). The update is::

        r = sigmoid(gx_r + h W_r + b_r)
        u = sigmoid(gx_u + h W_u + b_u)
        c = tanh(gx_c + r * (h W_c + b_c))
        h' = u * h + (1 - u) * c

    Recorded as a single tape node with a hand-written backward rule.
    """
    gx, h, w_h, b_h = (tc.as_tensor(t) for t in (gx, h, w_h, b_h))
    H = h.shape[-1]
    if gx.shape[-1] != 3 * H or w_h.shape != (H, 3 * H):
        raise tc.ShapeError(f"gru_cell: gx {gx.shape}, h {h.shape}, W_h {w_h.shape} do not match")
    hd = h.data
    gh = hd @ w_h.data + b_h.data
    r = _sig(gx.data[:, :H] + gh[:, :H])
    u = _sig(gx.data[:, H : 2 * H] + gh[:, H : 2 * H])
    ghc = gh[:, 2 * H :]
    c = np.tanh(gx.data[:, 2 * H :] + r * ghc)
    out = c + u * (hd - c)

    def backward(g):
        dc = g * (1.0 - u)
        dac = dc * (1.0 - c * c)
        dar = dac * ghc * r * (1.0 - r)
        dau = g * (hd - c) * u * (1.0 - u)
        dgx = np.concatenate([dar, dau, dac], axis=1)
        dgh = np.concatenate([dar, dau, dac * r], axis=1)
        dh = g * u + dgh @ w_h.data.T
        return dgx, dh, hd.T @ dgh, dgh.sum(axis=0)

    return tc.custom(out, (gx, h, w_h, b_h), backward)


def gru_cell_reference(x, h, w_x, w_h, b_x, b_h) -> Tensor:
    """The same update composed from primitive ops (test reference)."""
    H = h.shape[-1]
    gx = x @ w_x + b_x
    gh = h @ w_h + b_h
    r = tc.sigmoid(gx[:, :H] + gh[:, :H])
    u = tc.sigmoid(gx[:, H : 2 * H] + gh[:, H : 2 * H])
    c = tc.tanh(gx[:, 2 * H :] + r * gh[:, 2 * H :])
    return u * h + (1.0 - u) * c


class GRU(Module):
    def __init__(self, rng: np.random.Generator, n_in: int, hidden: int = HIDDEN):
        self.w_x = tc.parameter(tc.init_uniform(rng, (n_in, 3 * hidden), n_in))
        self.w_h = tc.parameter(tc.init_uniform(rng, (hidden, 3 * hidden), hidden))
        self.b_x = tc.parameter(tc.init_uniform(rng, (3 * hidden,), n_in))
        self.b_h = tc.parameter(tc.init_uniform(rng, (3 * hidden,), hidden))
        self.n_in, self.hidden = n_in, hidden

    def step(self, h, x) -> Tensor:
        x = tc.as_tensor(x)
        if x.shape[-1] != self.n_in:
            raise tc.ShapeError(f"GRU expects input dim {self.n_in}, got {x.shape}")
        return gru_cell(x @ self.w_x + self.b_x, h, self.w_h, self.b_h)

    def run(self, xs, h0=None) -> Tensor:
        """Consume a ``(N, T, n_in)`` sequence and return the final hidden state."""
        xs = tc.as_tensor(xs)
        if xs.ndim != 3 or xs.shape[1] == 0:
            raise tc.ShapeError(f"GRU.run needs a (N, T>=1, {self.n_in}) input, got {xs.shape}")
        if xs.shape[2] != self.n_in:
            raise tc.ShapeError(f"GRU expects input dim {self.n_in}, got {xs.shape}")
        n, steps = xs.shape[0], xs.shape[1]
        h = tc.constant(np.zeros((n, self.hidden))) if h0 is None else h0
        for t in range(steps):
            # project per step: slicing the narrow input is cheaper to
            # differentiate than slicing a precomputed (N, T, 3H) projection
            h = gru_cell(xs[:, t, :] @ self.w_x + self.b_x, h, self.w_h, self.b_h)
        return h

    def rollout(self, x, h0, steps: int) -> Tensor:
        """Run ``steps`` updates with a constant input; returns ``(N, steps, H)``."""
        gx = tc.as_tensor(x) @ self.w_x + self.b_x
        h = h0
        states = []
        for _ in range(steps):
            h = gru_cell(gx, h, self.w_h, self.b_h)
            states.append(h)
        return tc.stack(states, axis=1)


def track_inputs(points) -> Tensor:
    """Per-step inputs for a track: the absolute first point, then displacements.

    ``points`` is ``(N, T, 2)`` or ``(T, 2)``; the result has the same shape.
    """
    points = tc.as_tensor(points)
    squeeze = points.ndim == 2
    if squeeze:
        points = points.reshape(1, *points.shape)
    if points.ndim != 3 or points.shape[1] == 0:
        raise tc.ShapeError(f"track needs at least one point, got shape {points.shape}")
    first = points[:, :1, :]
    if points.shape[1] > 1:
        steps = points[:, 1:, :] - points[:, :-1, :]
        seq = tc.concat([first, steps], axis=1)
    else:
        seq = first
    return seq.reshape(seq.shape[1:]) if squeeze else seq


class TrackEncoder(Module):
    """GRU over a track's first point (divided by ``scale``) and its steps (divided by ``step_scale``)."""

    def __init__(self, rng: np.random.Generator, hidden: int = HIDDEN, scale: float = 1.0, step_scale: float | None = None):
        self.gru = GRU(rng, 2, hidden)
        self.scale = scale
        self.step_scale = scale if step_scale is None else step_scale

    def __call__(self, points) -> Tensor:
        """``(N, T, 2)`` tracks in the normalised frame -> ``(N, H)`` embeddings."""
        seq = track_inputs(points)
        t = seq.shape[-2]
        factors = np.full((t, 1), 1.0 / self.step_scale)
        factors[0] = 1.0 / self.scale
        if seq.ndim == 2:
            seq = seq.reshape(1, *seq.shape)
        return self.gru.run(seq * factors)


class LaneletEncoder(Module):
    def __init__(self, rng: np.random.Generator, hidden: int = HIDDEN, scale: float = 1.0):
        self.gru = GRU(rng, 2 * BOUNDARY_FEATURES, hidden)
        self.scale = scale

    def __call__(self, left, right) -> Tensor:
        """``(N, B, F)`` left and right boundaries -> ``(N, H)`` embeddings."""
        left, right = tc.as_tensor(left), tc.as_tensor(right)
        if left.shape != right.shape:
            raise tc.ShapeError(f"boundary point counts differ: left {left.shape} vs right {right.shape}")
        if left.ndim == 2:
            left, right = left.reshape(1, *left.shape), right.reshape(1, *right.shape)
        coord_scale = np.array([1.0 / self.scale, 1.0 / self.scale, 1.0, 1.0])
        seq = tc.concat([left * coord_scale, right * coord_scale], axis=-1)
        return self.gru.run(seq)
