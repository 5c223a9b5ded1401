"""Collapse diagnostics and prediction metrics.

``AR``       share of surrounding agents whose attention weight toward the target
             is exactly non-zero (self-edge and lanelets excluded)
``AR_delta`` share whose weight is at least ``delta``
``tau_g``    entrywise 1-norm of the Jacobian of the final predicted position
             with respect to the other agents' observed tracks, divided by
             ``2 (n - 1) T_h``
``looADE``   mean displacement between the normal prediction and the
             prediction with one other agent removed, averaged over agents
``minADE / minFDE``  best final-point error over K samples and the ADE of
             that same sample
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tc

DELTA_GRID = np.concatenate([[0.0], np.logspace(-3, 0, 50)])


class UndefinedMetric(ValueError):
    """Raised when a metric needs at least one surrounding agent."""


def _neighbour_weights(report, scene_id, target) -> np.ndarray:
    w = [w for _, _, src, kind, w in report.rows(scene_id, target) if kind == "agent" and src != str(target)]
    if not w:
        raise UndefinedMetric(f"scene {scene_id}: target {target} has no surrounding agents")
    return np.array(w)


def agent_ratio(report, scene_id, target) -> float:
    """Percentage of surrounding agents with non-zero attention toward ``target``."""
    w = _neighbour_weights(report, scene_id, target)
    return 100.0 * float(np.count_nonzero(w != 0.0)) / w.size


def agent_ratio_thresholded(report, scene_id, target, deltas=DELTA_GRID) -> np.ndarray:
    """Percentage of surrounding agents with attention ``>= delta`` for each delta."""
    deltas = np.asarray(deltas, dtype=float)
    if np.any(deltas < 0):
        raise ValueError("thresholds must be non-negative")
    w = _neighbour_weights(report, scene_id, target)
    return 100.0 * (w[None, :] >= deltas[:, None]).sum(axis=1) / w.size


def weights_agent_ratio(weights) -> float:
    """AR from a plain list of neighbour weights."""
    w = np.asarray(weights, dtype=float)
    if w.size == 0:
        raise UndefinedMetric("no surrounding agents")
    return 100.0 * float(np.count_nonzero(w != 0.0)) / w.size


def gradient_importance(predict_final, histories: np.ndarray, target: int) -> float:
    """``tau_g`` for one scene.

    ``predict_final`` maps a ``(n, T_h, 2)`` history tensor to the target's
    final predicted position (shape ``(2,)``). The Jacobian is taken by
    reverse mode, one pass per output coordinate.
    """
    histories = np.asarray(histories, dtype=float)
    n, t_h = histories.shape[:2]
    if n < 2:
        raise UndefinedMetric("tau_g needs at least one surrounding agent")
    total = 0.0
    others = np.arange(n) != target
    for c in range(2):
        x = tc.parameter(histories.copy())
        out = predict_final(x)
        tc.backward(out[c])
        g = x.grad if x.grad is not None else np.zeros_like(histories)
        total += float(np.abs(g[others]).sum())
    return total / (2 * (n - 1) * t_h)


def finite_difference_importance(predict_final, histories: np.ndarray, target: int, step: float = 1e-5) -> float:
    """``tau_g`` with the Jacobian from central differences (test oracle)."""
    histories = np.asarray(histories, dtype=float)
    n, t_h = histories.shape[:2]
    if n < 2:
        raise UndefinedMetric("tau_g needs at least one surrounding agent")
    total = 0.0
    for j in range(n):
        if j == target:
            continue
        for idx in np.ndindex(histories.shape[1:]):
            hp, hm = histories.copy(), histories.copy()
            hp[(j,) + idx] += step
            hm[(j,) + idx] -= step
            d = (np.asarray(predict_final(tc.constant(hp)).data) - np.asarray(predict_final(tc.constant(hm)).data)) / (2 * step)
            total += float(np.abs(d).sum())
    return total / (2 * (n - 1) * t_h)


def ade(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean(np.linalg.norm(np.asarray(a) - np.asarray(b), axis=-1)))


def fde(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(a)[-1] - np.asarray(b)[-1]))


def leave_one_out_ade(reference: np.ndarray, masked: list) -> float:
    """Mean ADE between the normal prediction and each prediction with one agent removed."""
    if not masked:
        raise UndefinedMetric("looADE needs at least one surrounding agent")
    return float(np.mean([ade(m, reference) for m in masked]))


def min_ade_fde(samples: np.ndarray, truth: np.ndarray) -> tuple[float, float, int]:
    """``(minADE, minFDE, index)`` where minADE is the ADE of the lowest-FDE sample.

    Ties go to the lowest sample index.
    """
    samples = np.asarray(samples, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if samples.ndim != 3 or samples.shape[0] < 1:
        raise ValueError(f"samples must be (K >= 1, T, 2), got {samples.shape}")
    if samples.shape[1:] != truth.shape:
        raise ValueError(f"sample horizon {samples.shape[1:]} does not match truth {truth.shape}")
    fdes = np.linalg.norm(samples[:, -1] - truth[-1], axis=-1)
    k = int(np.argmin(fdes))  # first minimum
    return ade(samples[k], truth), float(fdes[k]), k


@dataclass
class Aggregate:
    mean: float
    std: float
    count: int

    @property
    def single(self) -> bool:
        """True when the std is 0 only because there is one value."""
        return self.count == 1

    def __str__(self) -> str:
        return f"{self.mean:.4f} ± {self.std:.4f}" + (" (n=1)" if self.single else "")


def aggregate_trials(rows: list) -> dict[str, Aggregate]:
    """Per-metric mean and sample standard deviation (``n - 1`` denominator) over trials.

    Rows are ``MetricsRow`` objects or plain dicts; missing / ``None`` values
    are skipped.
    """
    if not rows:
        raise ValueError("need at least one row")
    dicts = [r.values() if isinstance(r, MetricsRow) else dict(r) for r in rows]
    keys = sorted({k for d in dicts for k, v in d.items() if isinstance(v, (int, float)) and not isinstance(v, bool)})
    out = {}
    for k in keys:
        vals = np.array([d[k] for d in dicts if d.get(k) is not None], dtype=float)
        if vals.size == 0:
            continue
        std = float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0
        out[k] = Aggregate(float(np.mean(vals)), std, int(vals.size))
    return out


METRIC_COLUMNS = ["ar", "min_ade_1", "min_fde_1", "min_ade_6", "min_fde_6", "tau_g", "loo_ade"]


@dataclass
class MetricsRow:
    trial: str
    variant: str
    aggregator: str
    ar: float | None = None
    ar_delta: np.ndarray | None = None
    min_ade: dict = field(default_factory=dict)  # K -> value
    min_fde: dict = field(default_factory=dict)
    tau_g: float | None = None
    loo_ade: float | None = None

    def values(self) -> dict:
        out = {"ar": self.ar, "tau_g": self.tau_g, "loo_ade": self.loo_ade}
        for k, v in self.min_ade.items():
            out[f"min_ade_{k}"] = v
        for k, v in self.min_fde.items():
            out[f"min_fde_{k}"] = v
        return out

    def columns(self) -> list[str]:
        ks = sorted(self.min_ade)
        return ["ar"] + [c for k in ks for c in (f"min_ade_{k}", f"min_fde_{k}")] + ["tau_g", "loo_ade"]


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "NA"
    return f"{v:.10g}"


def write_metrics(path, rows: list[MetricsRow]) -> None:
    """Tab-separated table, one row per trial; absent metrics are ``NA``."""
    cols = rows[0].columns() if rows else list(METRIC_COLUMNS)
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write("\t".join(["trial", "variant", "aggregator"] + cols) + "\n")
        for r in rows:
            vals = r.values()
            fh.write("\t".join([r.trial, r.variant, r.aggregator] + [_fmt(vals.get(c)) for c in cols]) + "\n")
    os.replace(tmp, path)


def write_aggregate(path, groups: dict) -> None:
    """``groups`` maps a label (e.g. ``social-cvae/entmax``) to a list of rows."""
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write("group\tmetric\tmean\tstd\tcount\n")
        for label in sorted(groups):
            for metric, agg in aggregate_trials(groups[label]).items():
                fh.write(f"{label}\t{metric}\t{agg.mean:.10g}\t{agg.std:.10g}\t{agg.count}\n")
    os.replace(tmp, path)


def write_curve(path, deltas, values) -> None:
    """``(delta, AR_delta)`` pairs, one per line."""
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write("delta\tar_delta\n")
        for d, v in zip(deltas, values):
            fh.write(f"{d:.10g}\t{v:.10g}\n")
    os.replace(tmp, path)
