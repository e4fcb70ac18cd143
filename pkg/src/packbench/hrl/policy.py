"""Planner driven by the manager and worker scorers, with optional rollout recording."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from torch import nn

from ..placement import PackingState, Placement, place
from ..planners import HeuristicPlanner, PlannerConfig, bbox_sequence
from .features import ManagerInput, WorkerInput, input_factor, manager_features, worker_features
from .qlearning import Transition, manager_scores, pick_slot, worker_select


@dataclass
class _Decision:
    state: np.ndarray
    action: int
    legal: np.ndarray  # flat mask over this state's actions
    reward: float = 0.0
    j_prev: float = 0.0
    j_next: float = 0.0


@dataclass
class Recorder:
    """Collects committed decisions of one or more episodes and turns them into transitions."""

    manager: list[list[_Decision]] = field(default_factory=list)
    worker: list[list[_Decision]] = field(default_factory=list)

    def start_episode(self) -> None:
        self.manager.append([])
        self.worker.append([])

    @staticmethod
    def _chain(episodes: list[list[_Decision]]) -> list[Transition]:
        out = []
        for decisions in episodes:
            for t, d in enumerate(decisions):
                nxt = decisions[t + 1] if t + 1 < len(decisions) else None
                out.append(
                    Transition(
                        d.state,
                        d.action,
                        d.reward,
                        None if nxt is None else nxt.state,
                        None if nxt is None else nxt.legal,
                        d.j_prev,
                        d.j_next,
                    )
                )
        return out

    def manager_transitions(self) -> list[Transition]:
        return self._chain(self.manager)

    def worker_transitions(self) -> list[Transition]:
        return self._chain(self.worker)


class LearnedPlanner:
    """Manager and/or worker scorers plugged into the runner's select/place protocol.

    A ``learned`` sequence rule with ``k == 0`` or no manager falls back to the
    bounding-box order; non-learned placement rules delegate to the heuristics.
    """

    def __init__(
        self,
        config: PlannerConfig,
        worker: nn.Module | None = None,
        manager: nn.Module | None = None,
        k: int = 20,
        resolution: int = 50,
        epsilon: float = 0.0,
        name: str | None = None,
        recorder: Recorder | None = None,
    ):
        if config.placement_rule == "learned" and worker is None:
            raise ValueError("a learned placement rule needs a worker scorer")
        self.config = config
        self.worker = worker
        self.manager = manager
        self.k = k
        self.resolution = resolution
        self.epsilon = epsilon
        self.name = name or f"{config.sequence_rule}+{config.placement_rule}"
        self.recorder = recorder
        fallback = PlannerConfig(
            "bbox_volume_desc" if config.sequence_rule == "learned" else config.sequence_rule,
            "hm" if config.placement_rule == "learned" else config.placement_rule,
            config.stability_constrained,
            config.hm_downsample,
            config.seed,
        )
        self._heuristic = HeuristicPlanner(fallback)
        self._pending: dict[str, _Decision] = {}
        self._j = 0.0

    @classmethod
    def from_checkpoint(cls, path, config: PlannerConfig, k: int = 20, name: str | None = None) -> LearnedPlanner:
        from .checkpoint import load_checkpoint

        nets, meta = load_checkpoint(path)
        resolution = int(meta.get("schedule", {}).get("input_resolution", 50))
        manager = nets.get("manager")
        if manager is not None:
            k = min(k, manager.k)  # fewer candidates than slots leaves the rest zeroed
        return cls(config, nets.get("worker"), manager, k=k, resolution=resolution, name=name)

    @property
    def uses_manager(self) -> bool:
        return self.config.sequence_rule == "learned" and self.manager is not None and self.k > 0

    def reset(self, ctx) -> None:
        self._heuristic.reset(ctx)
        self._pending = {}
        self._j = 0.0
        if self.recorder is not None:
            self.recorder.start_episode()

    def _factor(self, state: PackingState) -> int:
        return input_factor(state.box.shape, self.resolution)

    def select(self, ctx, state: PackingState, live: Sequence[str]) -> str:
        self._pending = {}
        if not self.uses_manager:
            return self._heuristic.select(ctx, state, live)
        cands = bbox_sequence(ctx.cache.models[i] for i in live)[: self.k]
        inp: ManagerInput = manager_features(state, cands, self.manager.k, self._factor(state))
        slot = pick_slot(manager_scores(inp, self.manager), inp.live, self.epsilon, ctx.rng)
        self._pending["manager"] = _Decision(inp.planes, slot, inp.live)
        return inp.ids[slot]  # type: ignore[return-value]

    def place(self, ctx, state: PackingState, object_id: str) -> Placement:
        if self.config.placement_rule != "learned":
            return self._heuristic.place(ctx, state, object_id)
        shapes = ctx.cache.unique(object_id)
        inp: WorkerInput = worker_features(state, shapes, self._factor(state))
        choice = worker_select(inp, self.worker, self.epsilon, ctx.rng)
        self._pending["worker"] = _Decision(inp.planes, choice.action, inp.coarse_legal.reshape(-1))
        return place(state, object_id, shapes[choice.orientation], choice.x, choice.y)

    def observe(self, ctx, state: PackingState, reward: float, j: float) -> None:
        if self.recorder is not None:
            for level, d in self._pending.items():
                d.reward, d.j_prev, d.j_next = reward, self._j, j
                getattr(self.recorder, level)[-1].append(d)
        self._pending = {}
        self._j = j

