"""Episode runner, experiment configs, sweeps and plan export."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import os
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .geometry import HALF_PI, Heightmap, OrientationGrid
from .objects import EpisodeSet, generate_episode
from .placement import NoSpace, PackingState, Placement, apply_heights, apply_placement, drop_height_q
from .planners import PRESETS, HeuristicPlanner, PlannerConfig, ShapeCache
from .rewards import (
    MetricsRecord,
    ObjectiveWeights,
    StabilityThresholds,
    metrics,
    objective,
    stability_check,
    step_reward,
)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    box_mm: tuple[float, float, float] = (400.0, 400.0, 300.0)
    resolution: int = 200  # cells along the box length
    planner: str = "hm"
    hm_downsample: int = 50
    rp_interval: float = HALF_PI
    yaw_interval: float = HALF_PI
    k: int = 20
    alpha: float = 0.75
    beta: float = 0.25
    gamma: float = 0.25
    pos_tol: float = 20.0
    ang_tol: float = math.pi / 6
    stability_term: str = "latest"
    episodes: int = 1
    seed: int = 0
    difficulty: str = "easy"
    pool_size: int = 50
    per_axis_scale: bool = False
    checkpoint: str = ""
    record_latency: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "box_mm", tuple(float(v) for v in self.box_mm))
        self.validate()

    def validate(self) -> None:
        if len(self.box_mm) != 3 or min(self.box_mm) <= 0:
            raise ConfigError("box_mm needs three positive extents")
        if self.resolution < 1:
            raise ConfigError("resolution must be positive")
        cell = self.cell_size
        if abs(round(self.box_mm[1] / cell) * cell - self.box_mm[1]) > 1e-6:
            raise ConfigError("box width is not a whole number of cells at this resolution")
        if round(cell * 10) != cell * 10 or cell <= 0:
            raise ConfigError(f"cell size {cell} mm is not a whole number of 0.1 mm quanta")
        if self.planner not in PRESETS:
            raise ConfigError(f"planner must be one of {sorted(PRESETS)}")
        if self.difficulty not in ("easy", "hard"):
            raise ConfigError("difficulty must be 'easy' or 'hard'")
        if self.stability_term not in ("mean", "latest"):
            raise ConfigError("stability_term must be 'mean' or 'latest'")
        if self.k < 0 or self.episodes < 0 or self.pool_size < 0 or self.hm_downsample < 1:
            raise ConfigError("k, episodes, pool_size and hm_downsample must be non-negative")
        for name in ("rp_interval", "yaw_interval"):
            v = getattr(self, name)
            if not 0 < v <= 2 * math.pi:
                raise ConfigError(f"{name} must be in (0, 2*pi]")
        ObjectiveWeights(self.alpha, self.beta, self.gamma)
        StabilityThresholds(self.pos_tol, self.ang_tol)

    @property
    def cell_size(self) -> float:
        return self.box_mm[0] / self.resolution

    @property
    def weights(self) -> ObjectiveWeights:
        return ObjectiveWeights(self.alpha, self.beta, self.gamma)

    @property
    def thresholds(self) -> StabilityThresholds:
        return StabilityThresholds(self.pos_tol, self.ang_tol)

    def orientations(self) -> OrientationGrid:
        return OrientationGrid.from_intervals(self.rp_interval, self.yaw_interval)

    def planner_config(self) -> PlannerConfig:
        return replace(PRESETS[self.planner], hm_downsample=self.hm_downsample, seed=self.seed)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["box_mm"] = list(self.box_mm)
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def episode_seeds(self) -> list[int]:
        return [self.seed + k for k in range(self.episodes)]


CONFIG_KEYS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
_ANGLE = re.compile(r"^\s*(?:(?P<num>[0-9.]+)\s*\*?\s*)?pi(?:\s*/\s*(?P<den>[0-9.]+))?\s*$")


def _parse_value(key: str, text: str) -> Any:
    text = text.strip()
    default = getattr(ExperimentConfig, key)
    try:
        if key == "box_mm":
            parts = [float(v) for v in re.split(r"[x,\s]+", text) if v]
            return tuple(parts)
        if isinstance(default, bool):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            m = _ANGLE.match(text)
            if m:
                num = float(m.group("num") or 1.0)
                den = float(m.group("den") or 1.0)
                return num * math.pi / den
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r}") from exc


def parse_config_text(text: str) -> tuple[dict[str, Any], dict[str, list[Any]]]:
    """Parse ``key = value`` lines; ``sweep_<key> = a | b | c`` declares a sweep axis.

    Blank lines and ``#`` comments are ignored; unknown keys raise ``ConfigError``.
    """
    values: dict[str, Any] = {}
    sweeps: dict[str, list[Any]] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        target = key[len("sweep_") :] if key.startswith("sweep_") else key
        if target not in CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key.startswith("sweep_"):
            sweeps[target] = [_parse_value(target, v) for v in value.split("|")]
        else:
            values[key] = _parse_value(key, value)
    return values, sweeps


def load_config(path: str | Path, **overrides: Any) -> tuple[ExperimentConfig, list[ExperimentConfig]]:
    """Base config plus the cross-product of its sweep axes (in file order)."""
    values, sweeps = parse_config_text(Path(path).read_text())
    values.update({k: v for k, v in overrides.items() if v is not None})
    base = ExperimentConfig(**values)
    configs = [base]
    for key, options in sweeps.items():
        configs = [replace(c, **{key: v}) for c in configs for v in options]
    return base, configs


# -- running episodes -------------------------------------------------------


@dataclass
class PlanContext:
    episode: EpisodeSet
    orientations: OrientationGrid
    cache: ShapeCache
    rng: np.random.Generator
    config: ExperimentConfig


@dataclass
class EpisodeReport:
    config_hash: str
    planner: str
    episode_seed: int
    plan: list[Placement]
    metrics: MetricsRecord
    termination: str  # all_packed | no_space | planner_error
    j_trace: list[float]
    rewards: list[float]
    dropped: list[str] = field(default_factory=list)
    diagnostic: str = ""
    planning_time: float = 0.0
    state: PackingState | None = field(default=None, repr=False)

    @property
    def j_final(self) -> float:
        return self.j_trace[-1]


def make_planner(config: ExperimentConfig):
    pc = config.planner_config()
    if "learned" in (pc.sequence_rule, pc.placement_rule):
        from .hrl.policy import LearnedPlanner

        if not config.checkpoint:
            raise ConfigError(f"planner {config.planner!r} needs a checkpoint")
        return LearnedPlanner.from_checkpoint(config.checkpoint, pc, k=config.k, name=config.planner)
    return HeuristicPlanner(pc, name=config.planner)


def run_episode(config: ExperimentConfig, episode: EpisodeSet, planner, rng_seed: int | None = None) -> EpisodeReport:
    """Alternate object selection and placement until everything is packed or nothing fits.

    An object with no legal placement is set aside for good: the box surface
    only rises, so it cannot become placeable later.
    """
    orientations = config.orientations()
    seed = episode.seed if rng_seed is None else rng_seed
    ctx = PlanContext(episode, orientations, ShapeCache(episode.objects, orientations), np.random.default_rng(seed), config)
    state = PackingState.empty(episode.box_mm, episode.cell_size, [m.id for m in episode.objects])
    j_trace = [0.0]
    rewards: list[float] = []
    dropped: list[str] = []
    termination, diagnostic = "all_packed", ""
    planning = 0.0
    planner.reset(ctx)
    while True:
        live = [m.id for m in episode.objects if m.id in state.unpacked and m.id not in dropped]
        if not live:
            if dropped:
                termination = "no_space"
            break
        obj = None
        t0 = time.perf_counter()
        try:
            obj = planner.select(ctx, state, live)
            p = planner.place(ctx, state, obj)
        except NoSpace:
            planning += time.perf_counter() - t0
            if obj is None:
                termination = "no_space"
                break
            dropped.append(obj)
            continue
        except Exception as exc:  # surfaced in the report; the state stays consistent
            termination, diagnostic = "planner_error", f"{type(exc).__name__}: {exc}"
            break
        planning += time.perf_counter() - t0
        shape = ctx.cache.get(obj, p.orientation)
        try:
            stable = stability_check(state.box, p, shape.h_b, shape.com, config.thresholds)
            nxt = apply_placement(state, replace(p, stable=bool(stable)), shape.h_t, shape.h_b, volume=shape.volume)
        except Exception as exc:
            termination, diagnostic = "planner_error", f"{type(exc).__name__}: {exc}"
            break
        state = nxt
        j = objective(state, config.weights, config.stability_term)
        rewards.append(step_reward(j, j_trace[-1]))
        j_trace.append(j)
        if hasattr(planner, "observe"):
            planner.observe(ctx, state, rewards[-1], j)
    n = len(state.packed) + len(dropped)
    latency = planning / n if n else 0.0
    return EpisodeReport(
        config_hash=config.config_hash(),
        planner=getattr(planner, "name", type(planner).__name__),
        episode_seed=episode.seed,
        plan=list(state.packed),
        metrics=metrics(state, latency),
        termination=termination,
        j_trace=j_trace,
        rewards=rewards,
        dropped=dropped,
        diagnostic=diagnostic,
        planning_time=planning,
        state=state,
    )


def episode_for(config: ExperimentConfig, seed: int) -> EpisodeSet:
    return generate_episode(
        seed, config.difficulty, config.pool_size, config.cell_size, config.box_mm, config.per_axis_scale
    )


# -- sweeps -----------------------------------------------------------------

SWEEP_COLUMNS = ("config_hash", "label", "planner", "difficulty", "episodes", "failures", "C", "P", "S", "packed_count", "latency_s")


def _run_one(args: tuple[ExperimentConfig, int]) -> dict:
    config, seed = args
    try:
        report = run_episode(config, episode_for(config, seed), make_planner(config))
    except Exception as exc:
        return {"error": f"{type(exc).__name__}: {exc}"}
    if report.termination == "planner_error":
        return {"error": report.diagnostic}
    return report.metrics.as_dict()


def thread_cap() -> int:
    raw = os.environ.get("PACKBENCH_THREADS", "")
    if raw.strip():
        try:
            return max(1, int(raw))
        except ValueError as exc:
            raise ConfigError(f"PACKBENCH_THREADS must be an integer, got {raw!r}") from exc
    return os.cpu_count() or 1


def sweep_label(config: ExperimentConfig, base: ExperimentConfig) -> str:
    diff = [f"{k}={getattr(config, k)}" for k in CONFIG_KEYS if getattr(config, k) != getattr(base, k)]
    return ";".join(diff) or "base"


def run_sweep(configs: Sequence[ExperimentConfig], seeds: Sequence[int] | None = None, base: ExperimentConfig | None = None) -> list[dict]:
    """One aggregated row per config over the same episode seeds.

    Failed episodes are counted in ``failures`` and excluded from the means.
    """
    jobs = [(c, s) for c in configs for s in (seeds if seeds is not None else c.episode_seeds())]
    workers = min(thread_cap(), len(jobs)) if jobs else 1
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    rows = []
    base = base or (configs[0] if configs else None)
    for c in configs:
        mine = [r for (cfg, _), r in zip(jobs, results) if cfg is c]
        ok = [r for r in mine if "error" not in r]
        mean = lambda k: float(np.mean([r[k] for r in ok])) if ok else float("nan")  # noqa: E731
        row = {
            "config_hash": c.config_hash(),
            "label": sweep_label(c, base),
            "planner": c.planner,
            "difficulty": c.difficulty,
            "episodes": len(mine),
            "failures": len(mine) - len(ok),
            "C": mean("C"),
            "P": mean("P"),
            "S": mean("S"),
            "packed_count": mean("packed_count"),
            "latency_s": mean("latency_s") if c.record_latency else float("nan"),
        }
        rows.append(row)
    return rows


def rows_to_csv(rows: Iterable[dict], columns: Sequence[str] = SWEEP_COLUMNS) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([f"{row[c]:.6f}" if isinstance(row[c], float) else row[c] for c in columns])
    return buf.getvalue()


# -- export -----------------------------------------------------------------


def placement_record(p: Placement, step: int, orientations: OrientationGrid, cell: float) -> dict:
    roll, pitch, yaw = orientations.euler(*p.orientation)
    u, v = p.corner
    w, l = p.footprint
    return {
        "step": step,
        "object_id": p.object_id,
        "i": p.orientation[0],
        "j": p.orientation[1],
        "x": p.position[0],
        "y": p.position[1],
        "roll": round(roll, 12),
        "pitch": round(pitch, 12),
        "yaw": round(yaw, 12),
        "x_mm": round((u + w / 2) * cell, 6),
        "y_mm": round((v + l / 2) * cell, 6),
        "z_mm": p.z,
        "score": round(p.score, 9),
        "stable": p.stable,
    }


def plan_document(report: EpisodeReport, config: ExperimentConfig, episode: EpisodeSet) -> dict:
    orientations = config.orientations()
    m = report.metrics.as_dict()
    if not config.record_latency:
        m.pop("latency_s")
    m.update(
        {k: round(v, 12) for k, v in m.items() if isinstance(v, float)},
        J=round(report.j_final, 12),
        termination=report.termination,
        dropped=list(report.dropped),
    )
    return {
        "config_hash": report.config_hash,
        "config": config.to_dict(),
        "planner": report.planner,
        "episode": episode.manifest(),
        "placements": [placement_record(p, k, orientations, episode.cell_size) for k, p in enumerate(report.plan)],
        "metrics": m,
    }


def replay_frames(doc: dict) -> list[Heightmap]:
    """Box heightmaps before the first and after every placement of a plan document."""
    episode = EpisodeSet.from_manifest(doc["episode"])
    config = ExperimentConfig(**{k: v for k, v in doc["config"].items()})
    cache = ShapeCache(episode.objects, config.orientations())
    box = PackingState.empty(episode.box_mm, episode.cell_size).box
    frames = [box]
    for rec in doc["placements"]:
        shape = cache.get(rec["object_id"], (rec["i"], rec["j"]))
        w, l = shape.footprint
        z = drop_height_q(box, shape.h_b, rec["x"], rec["y"])
        box = apply_heights(box, shape.h_t, (rec["x"] - w // 2, rec["y"] - l // 2), z)
        frames.append(box)
    return frames


def pgm_bytes(hm: Heightmap) -> bytes:
    """16-bit binary PGM; rows are x indices, columns y, one gray level per 0.1 mm."""
    h = np.clip(hm.heights, 0, 65535).astype(">u2")
    rows, cols = h.shape
    return f"P5\n{cols} {rows}\n65535\n".encode() + h.tobytes()


def write_frames(frames: Sequence[Heightmap], out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, hm in enumerate(frames):
        path = out / f"frame_{k:03d}.pgm"
        path.write_bytes(pgm_bytes(hm))
        paths.append(path)
    return paths


def export_plan(report: EpisodeReport, config: ExperimentConfig, episode: EpisodeSet, out_dir: str | Path) -> Path:
    """Write ``plan.json`` and ``frames/frame_NNN.pgm`` (initial box plus one frame per step)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = plan_document(report, config, episode)
    path = out / "plan.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    write_frames(replay_frames(doc), out / "frames")
    return path
