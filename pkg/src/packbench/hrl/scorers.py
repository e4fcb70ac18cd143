"""Compact convolutional Q-scorers.

The worker is a three-level encoder-decoder emitting one score grid per
orientation at input resolution, with the raw input planes fed again to a
pointwise layer before the head; the manager runs a shared conv trunk per
candidate slot, pools it, and scores all slots with a three-layer MLP over
the concatenated slot features.  SiLU keeps both maps smooth, which makes
finite-difference checks meaningful.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .features import MANAGER_CHANNELS, WORKER_CHANNELS


def _conv(cin: int, cout: int, stride: int = 1) -> nn.Conv2d:
    return nn.Conv2d(cin, cout, 3, stride=stride, padding=1)


class WorkerNet(nn.Module):
    def __init__(self, in_channels: int = WORKER_CHANNELS, widths: Sequence[int] = (16, 32, 32)):
        super().__init__()
        c1, c2, c3 = widths
        self.in_channels = in_channels
        self.widths = tuple(int(w) for w in widths)
        self.stem = _conv(in_channels, c1)
        self.down1 = _conv(c1, c2, stride=2)
        self.down2 = _conv(c2, c3, stride=2)
        self.down3 = _conv(c3, c3, stride=2)
        self.up3 = _conv(2 * c3, c3)
        self.up2 = _conv(c3 + c2, c2)
        self.up1 = _conv(c2 + c1, c1)
        self.mix = nn.Conv2d(c1 + in_channels, c1, 1)
        self.head = nn.Conv2d(c1, 1, 1)

    @property
    def descriptor(self) -> dict:
        return {"kind": "worker", "in_channels": self.in_channels, "widths": list(self.widths)}

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """``(N, C, H, W) -> (N, H, W)``."""
        e0 = F.silu(self.stem(x))
        e1 = F.silu(self.down1(e0))
        e2 = F.silu(self.down2(e1))
        e3 = F.silu(self.down3(e2))
        d2 = F.silu(self.up3(torch.cat([_up(e3, e2), e2], dim=1)))
        d1 = F.silu(self.up2(torch.cat([_up(d2, e1), e1], dim=1)))
        d0 = F.silu(self.up1(torch.cat([_up(d1, e0), e0], dim=1)))
        d0 = F.silu(self.mix(torch.cat([d0, x], dim=1)))
        return self.head(d0)[:, 0]

    def batch_values(self, states: Sequence[np.ndarray]) -> list[torch.Tensor]:
        """Flattened score grids for a list of ``(n_orient, C, H, W)`` inputs."""
        dtype = next(self.parameters()).dtype
        sizes = [len(s) for s in states]
        out = self(torch.as_tensor(np.concatenate(states), dtype=dtype))
        return [g.reshape(-1) for g in torch.split(out, sizes)]


def _up(x: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    return F.interpolate(x, size=like.shape[-2:], mode="bilinear", align_corners=False)


class ManagerNet(nn.Module):
    def __init__(
        self,
        k: int = 20,
        in_channels: int = MANAGER_CHANNELS,
        widths: Sequence[int] = (16, 32, 32),
        hidden: int = 64,
    ):
        super().__init__()
        if k < 1:
            raise ValueError("the manager needs at least one slot")
        c1, c2, c3 = widths
        self.k = int(k)
        self.in_channels = in_channels
        self.widths = tuple(int(w) for w in widths)
        self.hidden = int(hidden)
        self.conv1 = _conv(in_channels, c1)
        self.conv2 = _conv(c1, c2, stride=2)
        self.conv3 = _conv(c2, c3, stride=2)
        self.fc1 = nn.Linear(k * c3, hidden)
        self.fc2 = nn.Linear(hidden, hidden)
        self.fc3 = nn.Linear(hidden, k)

    @property
    def descriptor(self) -> dict:
        return {
            "kind": "manager",
            "k": self.k,
            "in_channels": self.in_channels,
            "widths": list(self.widths),
            "hidden": self.hidden,
        }

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """``(B, K, C, H, W) -> (B, K)``."""
        B, K, C, H, W = x.shape
        h = F.silu(self.conv1(x.reshape(B * K, C, H, W)))
        h = F.silu(self.conv2(h))
        h = F.silu(self.conv3(h))
        h = h.mean(dim=(-2, -1)).reshape(B, -1)
        h = F.silu(self.fc1(h))
        h = F.silu(self.fc2(h))
        return self.fc3(h)

    def batch_values(self, states: Sequence[np.ndarray]) -> list[torch.Tensor]:
        dtype = next(self.parameters()).dtype
        out = self(torch.as_tensor(np.stack(states), dtype=dtype))
        return list(out)


def build_scorer(descriptor: dict) -> nn.Module:
    kind = descriptor.get("kind")
    if kind == "worker":
        return WorkerNet(descriptor["in_channels"], descriptor["widths"])
    if kind == "manager":
        return ManagerNet(descriptor["k"], descriptor["in_channels"], descriptor["widths"], descriptor["hidden"])
    raise ValueError(f"unknown scorer kind {kind!r}")


def flat_parameters(net: nn.Module) -> np.ndarray:
    return nn.utils.parameters_to_vector(net.parameters()).detach().cpu().numpy()
