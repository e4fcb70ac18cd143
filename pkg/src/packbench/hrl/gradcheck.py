"""Central finite-difference check of scorer gradients, one parameter at a time.

Perturbed evaluations are batched with ``torch.func.vmap``, one parameter
tensor at a time, so a full sweep of a default-width scorer takes seconds.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch
from torch import nn
from torch.func import functional_call, vmap

LossFn = Callable[[Callable[..., torch.Tensor]], torch.Tensor]


@dataclass(frozen=True)
class GradCheckResult:
    max_rel_error: float
    worst_parameter: int
    n_parameters: int
    analytic: np.ndarray
    numeric: np.ndarray


def relative_errors(analytic: np.ndarray, numeric: np.ndarray, floor: float) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, floor)``; the floor keeps near-zero gradients from dividing by noise."""
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def finite_difference_check(
    net: nn.Module, loss_fn: LossFn, eps: float = 1e-4, floor: float = 1e-6, chunk: int = 1024
) -> GradCheckResult:
    """Compare autograd against central differences for every parameter of ``net`` (in float64).

    ``loss_fn(forward)`` must build a scalar loss from ``forward(*inputs)``.
    Perturbations are batched one parameter tensor at a time, ``chunk``
    entries per vmapped call.  In float64, ``eps = 1e-4`` balances truncation
    error against round-off for gradients down to the floor.
    """
    net = copy.deepcopy(net).double()
    params = {n: p.detach() for n, p in net.named_parameters()}

    def loss_with(name: str, value: torch.Tensor) -> torch.Tensor:
        return loss_fn(lambda *args: functional_call(net, {**params, name: value}, args))

    leaves = {n: p.clone().requires_grad_(True) for n, p in params.items()}
    loss = loss_fn(lambda *args: functional_call(net, leaves, args))
    grads = torch.autograd.grad(loss, list(leaves.values()))
    analytic = torch.cat([g.reshape(-1) for g in grads])

    numeric_parts = []
    with torch.no_grad():
        for name, p in params.items():
            flat = p.reshape(-1)
            m = flat.numel()
            batched = vmap(lambda v, name=name, shape=p.shape: loss_with(name, v.reshape(shape)))
            out = torch.empty(m, dtype=torch.float64)
            for start in range(0, m, chunk):
                idx = torch.arange(start, min(m, start + chunk))
                delta = torch.zeros(len(idx), m, dtype=torch.float64)
                delta[torch.arange(len(idx)), idx] = eps
                out[idx] = (batched(flat + delta) - batched(flat - delta)) / (2 * eps)
            numeric_parts.append(out)
    a, num = analytic.numpy(), torch.cat(numeric_parts).numpy()
    rel = relative_errors(a, num, floor)
    worst = int(np.argmax(rel))
    return GradCheckResult(float(rel[worst]), worst, len(a), a, num)


def randomize(net: nn.Module, rng: np.random.Generator, gain: float = 1.0) -> nn.Module:
    """Copy of ``net`` at a random parameter point: weights ``N(0, gain^2 / fan_in)``,
    biases ``N(0, 0.1^2)``.  Fan-in scaling keeps activations O(1) at any width, so
    the loss stays small enough for central differences to resolve."""
    out = copy.deepcopy(net)
    with torch.no_grad():
        for p in out.parameters():
            std = gain / np.sqrt(p[0].numel()) if p.dim() > 1 else 0.1
            p.copy_(torch.as_tensor(rng.normal(0.0, std, size=tuple(p.shape)), dtype=p.dtype))
    return out


def td_loss_fn(states: torch.Tensor, picks: torch.Tensor, targets: torch.Tensor) -> LossFn:
    """Squared TD error on chosen output entries: ``picks`` index the flattened per-sample outputs."""

    def loss(forward: Callable[..., torch.Tensor]) -> torch.Tensor:
        out = forward(states).reshape(states.shape[0], -1)
        chosen = out.gather(1, picks[:, None])[:, 0]
        return ((chosen - targets) ** 2).mean()

    return loss
