"""Epsilon-greedy selection, experience replay and the TD(0) update."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

from ..placement import NoSpace, ScoreMatrix
from .features import ManagerInput, WorkerInput


def pick_slot(scores: np.ndarray, live: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    """Argmax over live slots (first on ties) with probability 1 - epsilon, else uniform over live slots."""
    live_idx = np.flatnonzero(live)
    if len(live_idx) == 0:
        raise NoSpace("no candidate objects")
    if epsilon > 0 and rng.random() < epsilon:
        return int(live_idx[rng.integers(len(live_idx))])
    masked = np.where(live, scores, -np.inf)
    return int(np.argmax(masked))


@torch.no_grad()
def manager_scores(inp: ManagerInput, scorer: nn.Module) -> np.ndarray:
    return scorer.batch_values([inp.planes])[0].double().numpy()


def manager_select(inp: ManagerInput, scorer: nn.Module, epsilon: float, rng: np.random.Generator) -> str:
    slot = pick_slot(manager_scores(inp, scorer), inp.live, epsilon, rng)
    return inp.ids[slot]  # type: ignore[return-value]


@dataclass(frozen=True)
class WorkerChoice:
    orientation: int  # index into WorkerInput.shapes
    x: int
    y: int
    action: int  # flat index into the coarse (orientation, rx, ry) grid


def coarse_action(inp: WorkerInput, o: int, x: int, y: int) -> int:
    _, _, rx, ry = inp.planes.shape
    f = inp.factor
    return (o * rx + x // f) * ry + y // f


@torch.no_grad()
def worker_score_matrix(inp: WorkerInput, scorer: nn.Module) -> ScoreMatrix:
    """Coarse scores spread back to full resolution and zeroed on illegal cells."""
    grids = scorer.batch_values([inp.planes])[0].double().numpy().reshape(inp.planes.shape[0], *inp.planes.shape[2:])
    f = inp.factor
    full = np.repeat(np.repeat(grids, f, axis=1), f, axis=2)[:, : inp.legal.shape[1], : inp.legal.shape[2]]
    return ScoreMatrix(full, inp.legal, [s.index for s in inp.shapes])


def worker_select(inp: WorkerInput, scorer: nn.Module, epsilon: float, rng: np.random.Generator) -> WorkerChoice:
    """Best legal (orientation, x, y); ties go to the first in index order.  Raises ``NoSpace``."""
    if not inp.legal.any():
        raise NoSpace("no legal cell in any orientation")
    if epsilon > 0 and rng.random() < epsilon:
        cells = np.argwhere(inp.legal)
        o, x, y = (int(v) for v in cells[rng.integers(len(cells))])
    else:
        o, x, y = worker_score_matrix(inp, scorer).best()
    return WorkerChoice(o, x, y, coarse_action(inp, o, x, y))


# -- replay -----------------------------------------------------------------


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray | None
    next_legal: np.ndarray | None  # flat bool mask over the next state's actions
    j_prev: float
    j_next: float

    @property
    def done(self) -> bool:
        return self.next_state is None


class ReplayBuffer:
    """Fixed-capacity ring buffer; sampling draws from the caller's generator."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("replay capacity must be positive")
        self.capacity = capacity
        self._items: list[Transition] = []
        self._next = 0

    def __len__(self) -> int:
        return len(self._items)

    def push(self, t: Transition) -> None:
        if t.reward != t.j_next - t.j_prev:
            raise ValueError("transition reward does not match its recorded objective values")
        if len(self._items) < self.capacity:
            self._items.append(t)
        else:
            self._items[self._next] = t
        self._next = (self._next + 1) % self.capacity

    def sample(self, n: int, rng: np.random.Generator) -> list[Transition]:
        idx = rng.integers(len(self._items), size=min(n, len(self._items)))
        return [self._items[i] for i in idx]

    def __iter__(self):
        return iter(self._items)


def td_targets(batch: Sequence[Transition], net: nn.Module, discount: float) -> torch.Tensor:
    rewards = torch.tensor([t.reward for t in batch], dtype=torch.float64)
    live = [k for k, t in enumerate(batch) if not t.done]
    bootstrap = torch.zeros(len(batch), dtype=torch.float64)
    if live and discount > 0:
        with torch.no_grad():
            values = net.batch_values([batch[k].next_state for k in live])
        for k, v in zip(live, values):
            mask = torch.as_tensor(batch[k].next_legal)
            if mask.any():
                bootstrap[k] = v.double()[mask].max()
    return rewards + discount * bootstrap


def td_loss(batch: Sequence[Transition], scorer: nn.Module, targets: torch.Tensor) -> torch.Tensor:
    values = scorer.batch_values([t.state for t in batch])
    taken = torch.stack([v[t.action] for v, t in zip(values, batch)])
    return ((taken - targets.to(taken.dtype)) ** 2).mean()


def td_update(
    batch: Sequence[Transition],
    scorer: nn.Module,
    optimizer: torch.optim.Optimizer,
    discount: float,
    target: nn.Module | None = None,
) -> float:
    """One gradient step on the mean squared TD error; returns the loss before the step.

    Targets are ``r`` for terminal transitions and ``r + discount * max`` over
    the next state's legal actions, scored by ``target`` (default: ``scorer``).
    """
    if not batch:
        raise ValueError("empty batch")
    if not 0 <= discount < 1:
        raise ValueError("discount must be in [0, 1)")
    y = td_targets(batch, target if target is not None else scorer, discount)
    loss = td_loss(batch, scorer, y)
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return float(loss.detach())
