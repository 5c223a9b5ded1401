"""VAE, CVAE and social-CVAE trajectory models over a shared context encoder.

Parameter groups:

``theta``  context encoder (track / lanelet GRUs, edge MLPs, score head) and the
           future-track encoder used by the posterior
``psi``    posterior ``q(z_i | T_i, y_i)``
``phi``    trajectory decoder
``eta``    conditional prior ``p(z_i | T_i)`` (CVAE and social-CVAE)
``zeta``   auxiliary decoder fed with latents drawn from the conditional prior
           (social-CVAE only)

Parameters are created in the order theta, psi, phi, eta, zeta from one
seeded generator, so variants built with the same seed share every common
parameter.
"""

from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as tc
from .encoders import GRU, HIDDEN, TrackEncoder
from .graph import AGGREGATORS, ContextGraph, SparseGAMP, build_graph
from .layers import MLP, Linear, Module
from .tensor import Tensor

VARIANTS = ("vae", "cvae", "social-cvae")


@dataclass
class VariantConfig:
    variant: str = "social-cvae"
    latent_dim: int = 16
    beta: float = 0.03
    alpha: float = 1.0
    aggregator: str = "entmax"
    output_variance: float = 1.0
    hidden: int = HIDDEN
    query: str = "target"  # "target" for driving scenes, "all" for pedestrian scenes
    pos_scale: float = 10.0  # metres per network unit for positions
    step_scale: float = 1.0  # metres per network unit for per-step displacements

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {', '.join(VARIANTS)}")
        if self.aggregator not in AGGREGATORS:
            raise ValueError(f"unknown aggregator {self.aggregator!r}; choose from {', '.join(AGGREGATORS)}")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.alpha < 0 or (self.alpha > 0 and self.variant != "social-cvae"):
            raise ValueError("alpha > 0 is only meaningful for the social-cvae variant")
        if self.output_variance <= 0 or self.latent_dim < 1 or self.pos_scale <= 0 or self.step_scale <= 0:
            raise ValueError("output variance, latent size and position scale must be positive")

    @classmethod
    def for_mode(cls, mode: str, **kw) -> "VariantConfig":
        """Defaults for ``driving`` (target only, 16 latents) or ``pedestrian`` (all agents, 32 latents).

        Pedestrian scenes also get the lighter ``beta = 0.01`` and ``alpha = 0.2``.
        """
        if mode == "driving":
            base = dict(latent_dim=16, query="target", pos_scale=10.0, step_scale=1.0, beta=0.03, alpha=1.0)
        elif mode == "pedestrian":
            base = dict(latent_dim=32, query="all", pos_scale=2.0, step_scale=0.5, beta=0.01, alpha=0.2)
        else:
            raise ValueError(f"unknown scene mode {mode!r}")
        base.update(kw)
        if base.get("variant", "social-cvae") != "social-cvae" and "alpha" not in kw:
            base["alpha"] = 0.0
        return cls(**base)

    def header(self) -> dict[str, str]:
        return {k: repr(v) if isinstance(v, float) else str(v) for k, v in asdict(self).items()}

    @classmethod
    def from_header(cls, header: dict[str, str]) -> "VariantConfig":
        kw = {}
        for k, f in cls.__dataclass_fields__.items():
            if k in header:
                kw[k] = header[k]
                if f.type == "float":
                    kw[k] = float(header[k])
                elif f.type == "int":
                    kw[k] = int(header[k])
        return cls(**kw)


@dataclass
class DiagGaussian:
    mean: Tensor
    logvar: Tensor

    @classmethod
    def standard(cls, shape) -> "DiagGaussian":
        return cls(tc.constant(np.zeros(shape)), tc.constant(np.zeros(shape)))

    @property
    def var(self) -> np.ndarray:
        return np.exp(self.logvar.data)

    def sample(self, eps) -> Tensor:
        """Reparameterised draw ``mean + exp(logvar / 2) * eps``."""
        return self.mean + tc.exp(self.logvar * 0.5) * eps

    def kl(self, other: "DiagGaussian") -> Tensor:
        """Elementwise ``KL(self || other)``."""
        dm = self.mean - other.mean
        return 0.5 * (other.logvar - self.logvar + (tc.exp(self.logvar) + dm * dm) * tc.exp(-1.0 * other.logvar) - 1.0)


class GaussianHead(Module):
    def __init__(self, rng, n_in: int, hidden: int, latent: int):
        self.mlp = MLP(rng, n_in, hidden)
        self.mean = Linear(rng, hidden, latent)
        self.logvar = Linear(rng, hidden, latent)

    def __call__(self, x) -> DiagGaussian:
        h = self.mlp(x)
        return DiagGaussian(self.mean(h), self.logvar(h))


class TrajectoryDecoder(Module):
    """GRU rollout seeded from ``[T_i, z_i]`` emitting per-step displacements."""

    def __init__(self, rng, hidden: int, latent: int):
        self.init = Linear(rng, hidden + latent, hidden)
        self.gru = GRU(rng, hidden + latent, hidden)
        self.out = Linear(rng, hidden, 2)

    def __call__(self, context, z, horizon: int, start, scale: float) -> Tensor:
        if horizon <= 0:
            raise ValueError(f"prediction horizon must be positive, got {horizon}")
        x = tc.concat([tc.as_tensor(context), tc.as_tensor(z)], axis=-1)
        states = self.gru.rollout(x, tc.tanh(self.init(x)), horizon)  # (N, T_p, H)
        steps = self.out(states) * scale
        start = tc.as_tensor(start)
        return tc.cumsum(steps, axis=1) + start.reshape(start.shape[0], 1, 2)


@dataclass
class LossParts:
    total: Tensor
    reconstruction: float
    kl: float
    auxiliary: float
    weights: np.ndarray

    def components(self) -> dict[str, float]:
        return {"total": self.total.item(), "reconstruction": self.reconstruction, "kl": self.kl, "auxiliary": self.auxiliary}


class SocialCVAE(Module):
    def __init__(self, config: VariantConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        H, L = config.hidden, config.latent_dim
        self.config = config
        self.theta = _Group(
            gamp=SparseGAMP(rng, H, config.pos_scale, config.step_scale),
            future=TrackEncoder(rng, H, config.pos_scale, config.step_scale),
        )
        self.psi = _Group(head=GaussianHead(rng, 2 * H, H, L))
        self.phi = _Group(decoder=TrajectoryDecoder(rng, H, L))
        self.eta = _Group(head=GaussianHead(rng, H, H, L)) if config.variant != "vae" else None
        self.zeta = _Group(decoder=TrajectoryDecoder(rng, H, L)) if config.variant == "social-cvae" else None

    # -- pieces ----------------------------------------------------------------

    def groups(self) -> dict[str, Module]:
        return {k: g for k in ("theta", "psi", "phi", "eta", "zeta") if (g := getattr(self, k)) is not None}

    def context(self, graph: ContextGraph, histories=None) -> tuple[Tensor, np.ndarray]:
        return self.theta.gamp(graph, self.config.aggregator, histories)

    def posterior(self, context, future_embedding) -> DiagGaussian:
        return self.psi.head(tc.concat([tc.as_tensor(context), tc.as_tensor(future_embedding)], axis=-1))

    def conditional_prior(self, context) -> DiagGaussian:
        if self.eta is None:
            raise ValueError("the vae variant has no conditional prior; its prior is N(0, I)")
        return self.eta.head(context)

    def prior(self, context) -> DiagGaussian:
        if self.eta is None:
            return DiagGaussian.standard((context.shape[0], self.config.latent_dim))
        return self.conditional_prior(context)

    def decode(self, context, z, horizon: int, start) -> Tensor:
        return self.phi.decoder(context, z, horizon, start, self.config.step_scale)

    def aux_decode(self, context, z, horizon: int, start) -> Tensor:
        if self.zeta is None:
            raise ValueError("only the social-cvae variant has an auxiliary decoder")
        return self.zeta.decoder(context, z, horizon, start, self.config.step_scale)

    def graph(self, scenes, drop=None) -> ContextGraph:
        return build_graph(scenes, self.config.query, drop, self.config.pos_scale)

    # -- objective -------------------------------------------------------------

    def loss(self, graph: ContextGraph, noise_seed: int) -> LossParts:
        """``MSE + beta * KL + alpha * auxiliary MSE`` on the queried agents.

        MSE is averaged over agents, steps and coordinates (metres squared,
        divided by the fixed output variance); KL over agents and latent
        dimensions.
        """
        if graph.futures is None:
            raise ValueError("training graph has no future tracks")
        cfg = self.config
        rng = np.random.default_rng(noise_seed)
        q_idx = graph.query
        truth = graph.futures[q_idx]
        start = graph.histories[q_idx, -1]
        horizon = truth.shape[1]
        eps = rng.standard_normal((len(q_idx), cfg.latent_dim))
        eps_aux = rng.standard_normal((len(q_idx), cfg.latent_dim))

        context, weights = self.context(graph)
        post = self.posterior(context, self.theta.future(truth))
        pred = self.decode(context, post.sample(eps), horizon, start)
        err = pred - truth
        rec = tc.mean(err * err) * (1.0 / cfg.output_variance)
        prior = self.prior(context)
        kl = tc.mean(post.kl(prior))
        total = rec + cfg.beta * kl
        aux_value = 0.0
        if self.zeta is not None:
            aux_pred = self.aux_decode(context, prior.sample(eps_aux), horizon, start)
            aerr = aux_pred - truth
            aux = tc.mean(aerr * aerr) * (1.0 / cfg.output_variance)
            total = total + cfg.alpha * aux
            aux_value = aux.item()
        return LossParts(total, rec.item(), kl.item(), aux_value, weights)

    # -- inference ---------------------------------------------------------------

    def predict_mean(self, graph: ContextGraph, histories=None) -> tuple[Tensor, np.ndarray]:
        """Decode every queried agent at the prior mean; differentiable in ``histories``."""
        context, weights = self.context(graph, histories)
        z = self.prior(context).mean
        start = graph.histories[graph.query, -1] if histories is None else tc.gather_rows(histories, graph.query)[:, -1, :]
        if graph.futures is None:
            raise ValueError("horizon unknown: the graph carries no future tracks")
        horizon = graph.futures.shape[1]
        return self.decode(context, z, horizon, start), weights

    def sample_trajectories(self, graph: ContextGraph, k: int, seed: int = 0, horizon: int | None = None) -> np.ndarray:
        """``(len(query), k, T_p, 2)`` samples: the prior-mean track first, then ``k - 1`` prior draws."""
        if k < 1:
            raise ValueError(f"need at least one sample, got k={k}")
        if horizon is None:
            if graph.futures is None:
                raise ValueError("horizon unknown: pass it or include futures in the graph")
            horizon = graph.futures.shape[1]
        context, _ = self.context(graph)
        prior = self.prior(context)
        start = graph.histories[graph.query, -1]
        n = len(graph.query)
        zs = [prior.mean.data]
        if k > 1:
            eps = np.random.default_rng(seed).standard_normal((k - 1, n, self.config.latent_dim))
            std = np.exp(0.5 * prior.logvar.data)
            zs += [prior.mean.data + std * e for e in eps]
        z = np.concatenate(zs, axis=0)  # (k * n, L)
        ctx = np.tile(context.data, (k, 1))
        tracks = self.decode(ctx, z, horizon, np.tile(start, (k, 1))).data
        return tracks.reshape(k, n, horizon, 2).transpose(1, 0, 2, 3)

    # -- checkpoints -------------------------------------------------------------

    def save(self, path, extra: dict | None = None) -> None:
        header = self.config.header()
        header.update({k: str(v) for k, v in (extra or {}).items()})
        tmp = f"{path}.tmp"
        tc.write_params(tmp, self.named_parameters(), header)
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> tuple["SocialCVAE", dict[str, str]]:
        values, header = tc.read_params(path)
        model = cls(VariantConfig.from_header(header))
        params = model.named_parameters()
        missing = set(params) ^ set(values)
        if missing:
            raise ValueError(f"{path}: parameter names do not match the variant ({sorted(missing)[:3]} ...)")
        for name, p in params.items():
            if values[name].shape != p.shape:
                raise ValueError(f"{path}: {name} has shape {values[name].shape}, expected {p.shape}")
            p.data[...] = values[name]
        return model, header


class _Group(Module):
    def __init__(self, **children):
        for k, v in children.items():
            setattr(self, k, v)


def kl_monte_carlo(q: DiagGaussian, p: DiagGaussian, samples: int, seed: int = 0) -> np.ndarray:
    """Monte-Carlo estimate of ``KL(q || p)`` summed over dimensions, per row."""
    rng = np.random.default_rng(seed)
    mq, vq = q.mean.data, q.var
    mp, vp = p.mean.data, p.var
    out = np.zeros(mq.shape[0])
    chunk = 100_000
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        z = mq[None] + np.sqrt(vq)[None] * rng.standard_normal((m,) + mq.shape)
        logq = -0.5 * (np.log(2 * math.pi * vq) + (z - mq) ** 2 / vq)
        logp = -0.5 * (np.log(2 * math.pi * vp) + (z - mp) ** 2 / vp)
        out += (logq - logp).sum(axis=(0, 2))
        done += m
    return out / samples
