"""Seeded Adam training loop with constant or cyclical KL weight schedules."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tc
from .model import SocialCVAE, VariantConfig

CYCLE = 25  # epochs per annealing cycle


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> None:
    """One bias-corrected Adam update, in place."""
    state.step += 1
    c1 = 1.0 - state.beta1**state.step
    c2 = 1.0 - state.beta2**state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise tc.ShapeError(f"gradient for {name} has shape {g.shape}, parameter has {p.data.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass(frozen=True)
class BetaSchedule:
    kind: str = "constant"  # or "cyclical"
    value: float = 0.03  # beta, or the cycle maximum

    def __post_init__(self):
        if self.kind not in ("constant", "cyclical"):
            raise ValueError(f"unknown beta schedule {self.kind!r}")
        if self.value < 0:
            raise ValueError("beta must be non-negative")

    @classmethod
    def parse(cls, text: str, default: float = 0.03) -> "BetaSchedule":
        """``constant``, ``cyclical``, or either with ``:value`` (e.g. ``cyclical:0.03``)."""
        kind, _, value = text.partition(":")
        return cls(kind, float(value) if value else default)


def beta_at(epoch: int, schedule: BetaSchedule) -> float:
    """KL weight at ``epoch``: a constant, or a ramp over the first half of each 25-epoch cycle."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    if schedule.kind == "constant":
        return schedule.value
    return schedule.value * min(1.0, (epoch % CYCLE) / (CYCLE / 2))


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 40
    lr: float = 1e-3
    beta: BetaSchedule = BetaSchedule()
    seed: int = 0
    validation_fraction: float = 0.1

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch size must be at least 1")


class NonFiniteLoss(RuntimeError):
    pass


@dataclass
class TrainResult:
    model: SocialCVAE
    log: list[dict]
    best_state: dict[str, np.ndarray]
    best_epoch: int

    def best_model(self) -> SocialCVAE:
        model = SocialCVAE(self.model.config)
        for name, p in model.named_parameters().items():
            p.data[...] = self.best_state[name]
        return model


def split_validation(scenes: list, fraction: float, seed: int) -> tuple[list, list]:
    """Seed-stable partition: a permutation drawn from ``seed`` picks the validation scenes."""
    if not 0.0 <= fraction < 1.0:
        raise ValueError("validation fraction must be in [0, 1)")
    n_val = int(round(fraction * len(scenes)))
    if n_val == 0:
        return list(scenes), []
    order = np.random.default_rng(seed).permutation(len(scenes))
    val = set(order[:n_val].tolist())
    return [s for i, s in enumerate(scenes) if i not in val], [s for i, s in enumerate(scenes) if i in val]


def _noise_seed(seed: int, epoch: int, batch: int) -> int:
    return (seed * 1_000_003 + epoch * 1009 + batch) % (2**63)


def evaluate_loss(model: SocialCVAE, scenes: list, batch_size: int, seed: int) -> dict[str, float]:
    totals = {"total": 0.0, "reconstruction": 0.0, "kl": 0.0, "auxiliary": 0.0}
    n = 0
    for b in range(0, len(scenes), batch_size):
        batch = scenes[b : b + batch_size]
        parts = model.loss(model.graph(batch), _noise_seed(seed, 10**6, b))
        for k, v in parts.components().items():
            totals[k] += v * len(batch)
        n += len(batch)
    return {k: v / n for k, v in totals.items()}


def train(
    scenes: list,
    variant: VariantConfig,
    config: TrainConfig,
    validation: list | None = None,
    log_path=None,
    checkpoint_dir=None,
) -> TrainResult:
    """Fit a model; returns the final model, the per-epoch log and the best-validation parameters.

    Without an explicit ``validation`` list, ``validation_fraction`` of
    ``scenes`` is held out. Each epoch logs the mean training components and
    the validation components. A non-finite loss aborts with the batch id.
    """
    if not scenes:
        raise ValueError("training needs at least one scene")
    if validation is None:
        scenes, validation = split_validation(scenes, config.validation_fraction, config.seed)
    model = SocialCVAE(variant, seed=config.seed)
    params = model.named_parameters()
    state = AdamState(lr=config.lr)
    rng = np.random.default_rng(config.seed)
    log: list[dict] = []
    best, best_epoch, best_state = math.inf, -1, None
    for epoch in range(config.epochs):
        model.config.beta = beta_at(epoch, config.beta)
        order = rng.permutation(len(scenes))
        sums = {"total": 0.0, "reconstruction": 0.0, "kl": 0.0, "auxiliary": 0.0}
        for b, start in enumerate(range(0, len(scenes), config.batch_size)):
            batch = [scenes[i] for i in order[start : start + config.batch_size]]
            parts = model.loss(model.graph(batch), _noise_seed(config.seed, epoch, b))
            comps = parts.components()
            if not all(math.isfinite(v) for v in comps.values()):
                raise NonFiniteLoss(f"non-finite loss at epoch {epoch}, batch {b}: {comps}")
            tc.backward(parts.total)
            grads = {name: p.grad for name, p in params.items() if p.grad is not None}
            adam_step(params, grads, state)
            for p in params.values():
                p.grad = None
            for k, v in comps.items():
                sums[k] += v * len(batch)
        row = {"epoch": epoch, "beta": model.config.beta}
        row.update({f"train_{k}": v / len(scenes) for k, v in sums.items()})
        if validation:
            val = evaluate_loss(model, validation, config.batch_size, config.seed)
            row.update({f"val_{k}": v for k, v in val.items()})
            score = val["reconstruction"] + val["auxiliary"]
        else:
            score = row["train_total"]
        log.append(row)
        if score < best:
            best, best_epoch = score, epoch
            best_state = {k: p.data.copy() for k, p in params.items()}
        if log_path is not None:
            write_log(log_path, log)
    if checkpoint_dir is not None:
        os.makedirs(checkpoint_dir, exist_ok=True)
        model.save(os.path.join(checkpoint_dir, "final.params"), {"seed": config.seed, "epochs": config.epochs})
        result = TrainResult(model, log, best_state, best_epoch)
        result.best_model().save(os.path.join(checkpoint_dir, "best.params"), {"seed": config.seed, "epoch": best_epoch})
    return TrainResult(model, log, best_state, best_epoch)


LOG_COLUMNS = [
    "epoch",
    "beta",
    "train_total",
    "train_reconstruction",
    "train_kl",
    "train_auxiliary",
    "val_total",
    "val_reconstruction",
    "val_kl",
    "val_auxiliary",
]


def write_log(path, log: list[dict]) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write("\t".join(LOG_COLUMNS) + "\n")
        for row in log:
            fh.write("\t".join(repr(row[c]) if c in row else "" for c in LOG_COLUMNS) + "\n")
    os.replace(tmp, path)
