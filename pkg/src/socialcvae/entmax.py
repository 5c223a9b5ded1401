"""Exact 1.5-entmax, its vector-Jacobian product and graph-segmented batching.

1.5-entmax maps scores ``s`` to ``p = [s/2 - tau]_+^2`` with ``tau`` chosen so
that ``sum(p) == 1``. The threshold is found exactly from the sorted scores:
for each prefix size ``rho`` of the descending sort, the top-``rho`` mean ``M``,
the unnormalised variance ``S`` and the candidate threshold
``M - sqrt((1 - S) / rho)`` (``+inf`` when ``S > 1``) are computed, and the
support size is the number of prefixes whose candidate lies below the
``rho``-th sorted value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tc


@dataclass
class ThresholdScan:
    sorted_scores: np.ndarray  # descending, already halved
    mean: np.ndarray  # M(rho), rho = 1..d
    var: np.ndarray  # S(rho)
    tau: np.ndarray  # tau(rho), +inf where S(rho) > 1
    support: int  # rho*

    @property
    def threshold(self) -> float:
        return float(self.tau[self.support - 1])


def threshold_scan(z: np.ndarray) -> ThresholdScan:
    """Prefix statistics of a 1-D vector ``z`` (the already-halved scores)."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1 or z.size == 0:
        raise ValueError(f"threshold_scan needs a non-empty vector, got shape {z.shape}")
    zs = z[np.argsort(-z, kind="stable")]
    rho = np.arange(1, zs.size + 1)
    mean = np.cumsum(zs) / rho
    var = np.array([np.sum((zs[:k] - mean[k - 1]) ** 2) for k in rho])
    tau = np.full(zs.size, np.inf)
    ok = var <= 1.0
    tau[ok] = mean[ok] - np.sqrt((1.0 - var[ok]) / rho[ok])
    support = int(np.sum(tau < zs - _TIE_TOL))
    return ThresholdScan(zs, mean, var, tau, support)


# A coordinate within this distance of the threshold is treated as sitting on
# it; such coordinates have zero probability either way, and excluding them
# makes the zero exact instead of a squared round-off residue.
_TIE_TOL = 1e-12


def entmax15_np(s: np.ndarray) -> np.ndarray:
    """1.5-entmax along the last axis of a numpy array."""
    s = np.asarray(s, dtype=np.float64)
    d = s.shape[-1]
    if d == 0:
        raise ValueError("entmax15 needs at least one score")
    z = s / 2.0
    z = z - z.max(axis=-1, keepdims=True)
    order = np.argsort(-z, axis=-1, kind="stable")
    zs = np.take_along_axis(z, order, axis=-1)
    rho = np.arange(1, d + 1, dtype=np.float64)
    mean = np.cumsum(zs, axis=-1) / rho
    mean_sq = np.cumsum(zs * zs, axis=-1) / rho
    var = rho * (mean_sq - mean * mean)
    tau = mean - np.sqrt(np.clip((1.0 - var) / rho, 0.0, None))
    # candidates with S > 1 are +inf and never admissible
    support = ((tau < zs - _TIE_TOL) & (var <= 1.0)).sum(axis=-1, keepdims=True)
    tau_star = np.take_along_axis(tau, support - 1, axis=-1)
    ps = np.where(rho - 1 < support, np.clip(zs - tau_star, 0.0, None) ** 2, 0.0)
    p = np.empty_like(ps)
    np.put_along_axis(p, order, ps, axis=-1)
    return p


def entmax15_vjp(s, p: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. ``s`` of ``<upstream, entmax15(s)>`` along the last axis.

    With ``g = sqrt(p)`` the result is ``g * (v - <v, g> / sum(g))``.
    Coordinates outside the support get exactly zero. At a coordinate sitting
    exactly on the threshold ``g`` is zero, so this is the one-sided
    derivative of the smaller support.
    """
    del s  # the derivative only depends on the output
    g = np.sqrt(p)
    q = (upstream * g).sum(axis=-1, keepdims=True) / g.sum(axis=-1, keepdims=True)
    return g * (upstream - q)


def entmax15(s) -> tc.Tensor:
    """Differentiable 1.5-entmax along the last axis."""
    s = tc.as_tensor(s)
    p = entmax15_np(s.data)
    return tc.custom(p, (s,), lambda g: (entmax15_vjp(None, p, g),))


def bisection_entmax15(s: np.ndarray, iters: int = 200) -> np.ndarray:
    """Reference 1.5-entmax by bisection on the threshold (test oracle)."""
    z = np.asarray(s, dtype=np.float64) / 2.0
    lo, hi = z.min() - 1.0, z.max()
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if np.sum(np.clip(z - mid, 0.0, None) ** 2) >= 1.0:
            lo = mid
        else:
            hi = mid
    p = np.clip(z - 0.5 * (lo + hi), 0.0, None) ** 2
    return p / p.sum()


# ---------------------------------------------------------------------------
# padding and graph segments


@dataclass
class PaddedScoreBatch:
    values: np.ndarray  # (m, d*)
    degrees: np.ndarray  # (m,)
    dummy: float

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def mask(self) -> np.ndarray:
        return np.arange(self.width)[None, :] < self.degrees[:, None]


def pad_batch(rows) -> PaddedScoreBatch:
    """Stack ragged score vectors into a matrix filled with ``min - 2``.

    The filler sits at least one unit (after halving) below every real score,
    so it receives zero probability and leaves the real coordinates unchanged.
    """
    rows = [np.asarray(r, dtype=np.float64).reshape(-1) for r in rows]
    if not rows:
        raise ValueError("pad_batch needs at least one row")
    if any(r.size == 0 for r in rows):
        raise ValueError("pad_batch rows must be non-empty")
    degrees = np.array([r.size for r in rows])
    dummy = float(min(r.min() for r in rows)) - 2.0
    values = np.full((len(rows), int(degrees.max())), dummy)
    for i, r in enumerate(rows):
        values[i, : r.size] = r
    return PaddedScoreBatch(values, degrees, dummy)


class Segments:
    """Precomputed layout for scattering per-edge scalars into padded rows.

    ``seg[e]`` names the target row of edge ``e``; edges keep their relative
    order inside each row.
    """

    def __init__(self, seg: np.ndarray, num_segments: int | None = None):
        seg = np.asarray(seg, dtype=np.intp)
        m = int(seg.max()) + 1 if num_segments is None else num_segments
        counts = np.bincount(seg, minlength=m)
        if np.any(counts == 0):
            empty = np.flatnonzero(counts == 0).tolist()
            raise ValueError(f"empty segment(s) {empty}: every segment needs at least one edge")
        order = np.argsort(seg, kind="stable")
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        col = np.empty(seg.size, dtype=np.intp)
        col[order] = np.arange(seg.size) - starts[seg[order]]
        self.seg = seg
        self.col = col
        self.num_segments = m
        self.counts = counts
        self.width = int(counts.max())

    def pad(self, values: np.ndarray, fill: float) -> np.ndarray:
        out = np.full((self.num_segments, self.width) + values.shape[1:], fill)
        out[self.seg, self.col] = values
        return out

    def unpad(self, padded: np.ndarray) -> np.ndarray:
        return padded[self.seg, self.col]


def segmented_entmax(scores, segments: Segments | np.ndarray) -> tc.Tensor:
    """1.5-entmax applied independently within each segment of per-edge scores.

    Scores are padded with the ``min - 2`` dummy into one matrix and
    transformed row by row; padded slots come out as exact zeros.
    """
    if not isinstance(segments, Segments):
        segments = Segments(segments)
    scores = tc.as_tensor(scores)
    flat = scores.data.reshape(-1)
    dummy = float(flat.min()) - 2.0
    padded = segments.pad(flat, dummy)
    p_pad = entmax15_np(padded)
    p = segments.unpad(p_pad).reshape(scores.shape)

    def backward(g):
        g_pad = segments.pad(g.reshape(-1), 0.0)
        return (segments.unpad(entmax15_vjp(None, p_pad, g_pad)).reshape(scores.shape),)

    return tc.custom(p, (scores,), backward)


def segmented_softmax(scores, segments: Segments | np.ndarray) -> tc.Tensor:
    if not isinstance(segments, Segments):
        segments = Segments(segments)
    scores = tc.as_tensor(scores)
    flat = scores.data.reshape(-1)
    padded = segments.pad(flat, -np.inf)
    e = np.exp(padded - padded.max(axis=1, keepdims=True))
    p_pad = e / e.sum(axis=1, keepdims=True)
    p = segments.unpad(p_pad).reshape(scores.shape)

    def backward(g):
        g_pad = segments.pad(g.reshape(-1), 0.0)
        dot = (g_pad * p_pad).sum(axis=1, keepdims=True)
        return (segments.unpad(p_pad * (g_pad - dot)).reshape(scores.shape),)

    return tc.custom(p, (scores,), backward)


# ---------------------------------------------------------------------------
# augmentation property checks


@dataclass
class Prop2Report:
    statement: int
    trials: int
    probes: int
    violations: list

    @property
    def passed(self) -> bool:
        return not self.violations


def appended_threshold(s: np.ndarray) -> float:
    """``2 * tau(d)`` of the halved scores: the largest appendable score that stays unattended."""
    scan = threshold_scan(np.asarray(s, dtype=np.float64) / 2.0)
    return 2.0 * float(scan.tau[-1])


def verify_prop2(statement: int, trials: int = 1000, max_d: int = 8, seed: int = 0, slack: float = 1e-9) -> Prop2Report:
    """Check the two augmentation statements by brute force.

    Statement 1: appending a score ``<= min(s) - 2`` leaves every original
    probability unchanged and gives the new coordinate zero.

    Statement 2: when every original probability is positive, the appended
    coordinate gets zero (and the rest are unchanged) iff it is at most
    ``2 * tau(d)`` computed on ``s / 2``.

    Equality probes sit exactly on the bound, where the appended probability
    must be zero (the bound is inclusive).
    """
    if statement not in (1, 2):
        raise ValueError("statement must be 1 or 2")
    if max_d < 2:
        raise ValueError("max_d must be at least 2")
    rng = np.random.default_rng(seed)
    violations = []
    probes = 0

    def unchanged(p, p2):
        return np.all(np.abs(p2[:-1] - p) <= slack)

    done = 0
    while done < trials:
        d = int(rng.integers(1, max_d + 1))
        if statement == 1:
            s = rng.normal(0, rng.uniform(0.2, 4.0), size=d)
            bound = s.min() - 2.0
            cases = [("random", bound - rng.exponential(2.0)), ("boundary", bound)]
            p = entmax15_np(s)
            for kind, extra in cases:
                p2 = entmax15_np(np.append(s, extra))
                probes += kind == "boundary"
                if not (unchanged(p, p2) and p2[-1] == 0.0):
                    violations.append((kind, s.tolist(), float(extra)))
            done += 1
        else:
            # dense vectors: small spread keeps every coordinate in the support
            s = rng.normal(0, rng.uniform(0.05, 0.6), size=d)
            p = entmax15_np(s)
            if np.any(p <= 0.0):
                continue
            bound = appended_threshold(s)
            gap = rng.exponential(1.0)
            cases = [("below", bound - gap), ("above", bound + gap), ("boundary", bound)]
            for kind, extra in cases:
                p2 = entmax15_np(np.append(s, extra))
                probes += kind == "boundary"
                zero_and_same = unchanged(p, p2) and p2[-1] == 0.0
                if kind == "below" and not zero_and_same:
                    violations.append((kind, s.tolist(), float(extra)))
                elif kind == "above" and p2[-1] <= 0.0:
                    violations.append((kind, s.tolist(), float(extra)))
                elif kind == "boundary" and not zero_and_same:
                    violations.append((kind, s.tolist(), float(extra)))
            done += 1
    return Prop2Report(statement, trials, probes, violations)
