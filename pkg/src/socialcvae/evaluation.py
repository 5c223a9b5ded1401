"""Run a trained model over scenes and collect metrics rows."""

from __future__ import annotations

import numpy as np

from . import metrics as mt
from . import tensor as tc
from .graph import AttentionReport, build_graph
from .model import SocialCVAE

DIAGNOSTICS = ("ar", "taug", "looade")


def _batches(items, size):
    for b in range(0, len(items), size):
        yield items[b : b + size]


def target_graph(model: SocialCVAE, scenes, drop=None):
    return build_graph(scenes, "target", drop, model.config.pos_scale)


def attention_report(model: SocialCVAE, scenes, batch_size: int = 50) -> AttentionReport:
    """Attention weights on every edge into each scene's target."""
    parts = []
    for batch in _batches(scenes, batch_size):
        g = target_graph(model, batch)
        _, w = model.context(g)
        parts.append(AttentionReport.from_graph(g, w))
    return AttentionReport(
        [x for p in parts for x in p.scene_ids],
        [x for p in parts for x in p.targets],
        [x for p in parts for x in p.sources],
        [x for p in parts for x in p.kinds],
        np.concatenate([p.weights for p in parts]) if parts else np.zeros(0),
    )


def scene_taug(model: SocialCVAE, scenes, batch_size: int = 50) -> list:
    """``tau_g`` of each scene's target (``None`` where the scene has one agent)."""
    out = []
    for batch in _batches(scenes, batch_size):
        g = target_graph(model, batch)
        totals = np.zeros(len(batch))
        for c in range(2):
            x = tc.parameter(g.histories.copy())
            pred, _ = model.predict_mean(g, histories=x)
            tc.backward(pred[:, -1, c].sum())
            a = np.abs(x.grad).sum(axis=(1, 2))
            a[g.query] = 0.0  # the target's own track is excluded
            totals += np.bincount(g.agent_scene, weights=a, minlength=len(batch))
        t_h = g.histories.shape[1]
        for k, sc in enumerate(batch):
            n = sc.n_agents
            out.append(None if n < 2 else float(totals[k] / (2 * (n - 1) * t_h)))
    return out


def scene_looade(model: SocialCVAE, scenes, batch_size: int = 50) -> list:
    """``looADE`` of each scene's target (``None`` where the scene has one agent)."""
    jobs = []  # (scene position, scene, dropped id or None)
    for k, sc in enumerate(scenes):
        jobs.append((k, sc, None))
        jobs += [(k, sc, a.id) for a in sc.agents if a.id != sc.target]
    preds = []
    for batch in _batches(jobs, batch_size):
        drop = {i: d for i, (_, _, d) in enumerate(batch) if d is not None}
        g = target_graph(model, [sc for _, sc, _ in batch], drop)
        pred, _ = model.predict_mean(g)
        preds += list(pred.data)
    out = [None] * len(scenes)
    grouped: dict[int, list] = {}
    for (k, _, d), p in zip(jobs, preds):
        grouped.setdefault(k, []).append((d, p))
    for k, entries in grouped.items():
        ref = entries[0][1]
        masked = [p for d, p in entries[1:]]
        out[k] = mt.leave_one_out_ade(ref, masked) if masked else None
    return out


def prediction_errors(model: SocialCVAE, scenes, ks=(1, 6), seed: int = 0, batch_size: int = 50) -> dict:
    """Mean minADE / minFDE over all predicted agents for each K."""
    res = {k: ([], []) for k in ks}
    for b, batch in enumerate(_batches(scenes, batch_size)):
        g = model.graph(batch)
        truth = g.futures[g.query]
        for k in ks:
            samples = model.sample_trajectories(g, k, seed=seed * 7919 + b)
            for i in range(len(g.query)):
                a, f, _ = mt.min_ade_fde(samples[i], truth[i])
                res[k][0].append(a)
                res[k][1].append(f)
    return {k: (float(np.mean(a)), float(np.mean(f))) for k, (a, f) in res.items()}


def evaluate_model(
    model: SocialCVAE,
    scenes,
    trial: str = "0",
    ks=(1, 6),
    seed: int = 0,
    diagnostics=DIAGNOSTICS,
) -> tuple[mt.MetricsRow, dict]:
    """One metrics row plus per-scene details (``AR_delta`` curve and per-scene values)."""
    unknown = set(diagnostics) - set(DIAGNOSTICS)
    if unknown:
        raise ValueError(f"unknown diagnostic(s): {', '.join(sorted(unknown))}")
    cfg = model.config
    row = mt.MetricsRow(trial, cfg.variant, cfg.aggregator)
    detail: dict = {"scene_ids": [sc.scene_id for sc in scenes]}
    if ks:
        errs = prediction_errors(model, scenes, ks, seed)
        row.min_ade = {k: v[0] for k, v in errs.items()}
        row.min_fde = {k: v[1] for k, v in errs.items()}
    if "ar" in diagnostics:
        if cfg.aggregator == "max":
            raise ValueError("AR is defined on attention weights; max aggregation has none")
        report = attention_report(model, scenes)
        ars, curves = [], []
        for sc in scenes:
            if sc.n_agents < 2:
                ars.append(None)
                continue
            ars.append(mt.agent_ratio(report, sc.scene_id, sc.target))
            curves.append(mt.agent_ratio_thresholded(report, sc.scene_id, sc.target))
        defined = [a for a in ars if a is not None]
        row.ar = float(np.mean(defined)) if defined else None
        row.ar_delta = np.mean(curves, axis=0) if curves else None
        detail["ar"] = ars
        detail["report"] = report
    if "taug" in diagnostics:
        vals = scene_taug(model, scenes)
        detail["tau_g"] = vals
        defined = [v for v in vals if v is not None]
        row.tau_g = float(np.mean(defined)) if defined else None
    if "looade" in diagnostics:
        vals = scene_looade(model, scenes)
        detail["loo_ade"] = vals
        defined = [v for v in vals if v is not None]
        row.loo_ade = float(np.mean(defined)) if defined else None
    return row, detail
