"""Parameterised building blocks: linear maps and one-layer MLPs with layer norm."""

from __future__ import annotations

import numpy as np

from . import tensor as tc
from .tensor import Tensor


class Module:
    """Anything owning named parameters, possibly through child modules."""

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                out[name] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(name + "."))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())


class Linear(Module):
    def __init__(self, rng: np.random.Generator, n_in: int, n_out: int, bias: bool = True):
        self.weight = tc.parameter(tc.init_uniform(rng, (n_in, n_out), n_in))
        self.bias = tc.parameter(tc.init_uniform(rng, (n_out,), n_in)) if bias else None
        self.n_in, self.n_out = n_in, n_out

    def __call__(self, x) -> Tensor:
        x = tc.as_tensor(x)
        if x.shape[-1] != self.n_in:
            raise tc.ShapeError(f"Linear expects last dim {self.n_in}, got input shape {x.shape}")
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    xc = x - tc.mean(x, axis=-1, keepdims=True)
    var = tc.mean(xc * xc, axis=-1, keepdims=True)
    return xc * tc.power(var + eps, -0.5) * gain + bias


class MLP(Module):
    """Linear -> LayerNorm -> ReLU."""

    def __init__(self, rng: np.random.Generator, n_in: int, n_out: int):
        self.linear = Linear(rng, n_in, n_out)
        self.ln_gain = tc.parameter(np.ones(n_out))
        self.ln_bias = tc.parameter(np.zeros(n_out))

    def __call__(self, x) -> Tensor:
        return tc.relu(layer_norm(self.linear(x), self.ln_gain, self.ln_bias))
