from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest
import torch
from scipy.stats import chisquare
from torch import nn

from packbench.bench import run_episode
from packbench.geometry import Heightmap, OrientationGrid, orient_object
from packbench.hrl.checkpoint import CheckpointError, checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint
from packbench.hrl.features import (
    MANAGER_CHANNELS,
    WORKER_CHANNELS,
    ManagerInput,
    WorkerInput,
    block_reduce,
    input_factor,
    manager_features,
    worker_features,
)
from packbench.hrl.gradcheck import finite_difference_check, randomize, td_loss_fn
from packbench.hrl.policy import LearnedPlanner, Recorder
from packbench.hrl.qlearning import (
    ReplayBuffer,
    Transition,
    manager_select,
    td_targets,
    td_update,
    worker_score_matrix,
    worker_select,
)
from packbench.hrl.scorers import ManagerNet, WorkerNet, build_scorer, flat_parameters
from packbench.hrl.train import TrainSchedule, toy_config, toy_episode, toy_source, train
from packbench.objects import generate_episode
from packbench.placement import NoSpace, PackingState
from packbench.planners import PRESETS, PlannerConfig

from conftest import cuboid_model


class FixedScores(nn.Module):
    """Scorer returning preset flat score vectors regardless of input."""

    def __init__(self, values):
        super().__init__()
        self.values = nn.Parameter(torch.as_tensor(np.asarray(values, dtype=np.float64)))

    def batch_values(self, states):
        return [self.values.reshape(-1) for _ in states]


class LinearScorer(nn.Module):
    def __init__(self, n_in: int, n_out: int):
        super().__init__()
        self.lin = nn.Linear(n_in, n_out).double()

    def batch_values(self, states):
        return [self.lin(torch.as_tensor(s, dtype=torch.float64).reshape(-1)) for s in states]


def manager_input(ids):
    return ManagerInput(np.zeros((len(ids), MANAGER_CHANNELS, 2, 2), dtype=np.float32), list(ids))


# -- manager selection ------------------------------------------------------


def test_manager_argmax_and_shift_invariance():
    inp = manager_input(["a", "b", "c"])
    rng = np.random.default_rng(0)
    assert manager_select(inp, FixedScores([0.2, 0.9, 0.1]), 0.0, rng) == "b"
    assert manager_select(inp, FixedScores([5.2, 5.9, 5.1]), 0.0, rng) == "b"
    assert manager_select(inp, FixedScores([0.5, 0.5, 0.1]), 0.0, rng) == "a"


def test_manager_skips_zeroed_slots():
    inp = manager_input(["a", None, "c"])
    assert manager_select(inp, FixedScores([0.1, 9.0, 0.2]), 0.0, np.random.default_rng(0)) == "c"
    only = manager_input([None, "x", None])
    rng = np.random.default_rng(1)
    assert {manager_select(only, FixedScores([3.0, 0.0, 1.0]), e, rng) for e in (0.0, 0.5, 1.0) for _ in range(20)} == {"x"}
    with pytest.raises(NoSpace):
        manager_select(manager_input([None, None]), FixedScores([0.0, 0.0]), 0.0, rng)


def test_manager_epsilon_one_is_uniform_over_live():
    inp = manager_input(["a", None, "c", "d"])
    rng = np.random.default_rng(0)
    counts = {"a": 0, "c": 0, "d": 0}
    for _ in range(10_000):
        counts[manager_select(inp, FixedScores([9.0, 0.0, 0.0, 0.0]), 1.0, rng)] += 1
    assert chisquare(list(counts.values())).pvalue > 1e-3


# -- worker selection -------------------------------------------------------


def worker_input(legal: np.ndarray) -> WorkerInput:
    n, X, Y = legal.shape
    return WorkerInput(np.zeros((n, WORKER_CHANNELS, X, Y), dtype=np.float32), legal, np.zeros(legal.shape, dtype=np.int64), [SimpleNamespace(index=(k, 0)) for k in range(n)], 1)


def test_worker_single_legal_cell():
    legal = np.zeros((2, 4, 4), dtype=bool)
    legal[1, 3, 0] = True
    c = worker_select(worker_input(legal), FixedScores(np.ones(32)), 0.0, np.random.default_rng(0))
    assert (c.orientation, c.x, c.y) == (1, 3, 0)
    c = worker_select(worker_input(legal), FixedScores(np.ones(32)), 1.0, np.random.default_rng(0))
    assert (c.orientation, c.x, c.y) == (1, 3, 0)


def test_worker_ties_go_lexicographic():
    legal = np.ones((2, 4, 4), dtype=bool)
    legal[0, 0, 0] = False
    c = worker_select(worker_input(legal), FixedScores(np.full(32, 0.7)), 0.0, np.random.default_rng(0))
    assert (c.orientation, c.x, c.y) == (0, 0, 1)


def test_worker_recovers_planted_maximum():
    legal = np.ones((3, 5, 5), dtype=bool)
    scores = np.random.default_rng(3).random((3, 5, 5))
    scores[2, 1, 4] = 2.0
    scores[0, 0, 0] = 5.0  # larger, but illegal
    legal[0, 0, 0] = False
    inp = worker_input(legal)
    sm = worker_score_matrix(inp, FixedScores(scores))
    assert sm.scores[0, 0, 0] == 0.0
    c = worker_select(inp, FixedScores(scores), 0.0, np.random.default_rng(0))
    assert (c.orientation, c.x, c.y) == (2, 1, 4)
    assert c.action == (2 * 5 + 1) * 5 + 4


def test_worker_real_scorer_respects_legality(rng):
    torch.manual_seed(0)
    net = WorkerNet()
    m = cuboid_model(3, 2, 2, 10.0, "o")
    shapes = orient_object(m, OrientationGrid.from_intervals())[:6]
    for _ in range(5):
        box = rng.integers(0, 6, size=(10, 10)) * 100
        state = PackingState(Heightmap(box, 10.0), 800, (), frozenset(["o"]), ())
        inp = worker_features(state, shapes)
        if not inp.legal.any():
            continue
        sm = worker_score_matrix(inp, net)
        assert np.all(sm.scores[~inp.legal] == 0.0)
        for eps in (0.0, 1.0):
            c = worker_select(inp, net, eps, rng)
            assert inp.legal[c.orientation, c.x, c.y]


def test_worker_no_legal_cell():
    with pytest.raises(NoSpace):
        worker_select(worker_input(np.zeros((1, 3, 3), dtype=bool)), FixedScores(np.ones(9)), 0.0, np.random.default_rng(0))


# -- features ---------------------------------------------------------------


def test_manager_features_zero_absent_slots():
    ep = generate_episode(1, "easy", 3, 10.0)
    state = PackingState.empty(ep.box_mm, ep.cell_size, [m.id for m in ep.objects])
    inp = manager_features(state, ep.objects, 5)
    assert inp.planes.shape == (5, MANAGER_CHANNELS, 40, 40)
    assert inp.ids[3:] == [None, None]
    assert not inp.planes[3:].any() and inp.planes[:3, 1:].any()
    with pytest.raises(ValueError):
        manager_features(state, ep.objects, 2)


def test_block_reduce_and_factor():
    a = np.arange(25, dtype=float).reshape(5, 5)
    r = block_reduce(a, 2, np.max, 0.0)
    assert r.shape == (3, 3) and r[0, 0] == 6 and r[2, 2] == 24
    assert input_factor((200, 200), 50) == 4 and input_factor((10, 10), 50) == 1


def test_worker_features_coarse_shapes():
    m = cuboid_model(3, 3, 3, 4.0, "o")
    shapes = orient_object(m, OrientationGrid.identity())
    state = PackingState.empty((100.0, 100.0, 100.0), 4.0, ["o"])
    inp = worker_features(state, shapes, 2)
    assert inp.planes.shape == (1, WORKER_CHANNELS, 13, 13)
    assert inp.legal.shape == (1, 25, 25)
    assert inp.coarse_legal.shape == (1, 13, 13)


# -- scorers ----------------------------------------------------------------


@pytest.mark.parametrize("hw", [(10, 10), (7, 5), (50, 50)])
def test_worker_output_matches_grid(hw):
    net = WorkerNet()
    out = net(torch.zeros(3, WORKER_CHANNELS, *hw))
    assert out.shape == (3, *hw)
    x = torch.randn(2, WORKER_CHANNELS, *hw)
    assert torch.equal(net(x), net(x))


def test_manager_output_shape():
    net = ManagerNet(k=4)
    assert net(torch.zeros(2, 4, MANAGER_CHANNELS, 9, 9)).shape == (2, 4)
    with pytest.raises(ValueError):
        ManagerNet(k=0)


def test_scorer_descriptor_rebuilds():
    for net in (WorkerNet(widths=(4, 8, 8)), ManagerNet(3, widths=(4, 4, 4), hidden=8)):
        clone = build_scorer(net.descriptor)
        assert sum(p.numel() for p in clone.parameters()) == sum(p.numel() for p in net.parameters())


def test_small_scorers_pass_gradient_check():
    rng = np.random.default_rng(0)
    w = randomize(WorkerNet(widths=(4, 4, 4)), rng)
    states = torch.as_tensor(rng.random((2, WORKER_CHANNELS, 4, 4)))
    res = finite_difference_check(w, td_loss_fn(states, torch.tensor([3, 10]), torch.tensor([0.2, -0.1], dtype=torch.float64)))
    assert res.max_rel_error < 1e-3
    m = randomize(ManagerNet(3, widths=(4, 4, 4), hidden=8), rng)
    states = torch.as_tensor(rng.random((2, 3, MANAGER_CHANNELS, 4, 4)))
    res = finite_difference_check(m, td_loss_fn(states, torch.tensor([0, 2]), torch.tensor([0.5, 0.1], dtype=torch.float64)))
    assert res.max_rel_error < 1e-3


# -- TD learning ------------------------------------------------------------


def test_terminal_transition_at_target_is_a_no_op():
    net = LinearScorer(4, 3)
    with torch.no_grad():
        net.lin.weight.zero_()
        net.lin.bias.copy_(torch.tensor([0.0, 0.25, 0.0]))
    before = flat_parameters(net).copy()
    t = Transition(np.ones(4), 1, 0.25, None, None, 0.5, 0.75)
    loss = td_update([t], net, torch.optim.SGD(net.parameters(), lr=0.1), 0.9)
    assert loss == 0.0
    assert np.array_equal(flat_parameters(net), before)


def test_td_targets_by_hand():
    net = FixedScores([1.0, 3.0, 2.0])
    mask = np.array([True, False, True])
    live = Transition(np.zeros(1), 0, 0.5, np.zeros(1), mask, 0.0, 0.5)
    done = Transition(np.zeros(1), 0, 0.25, None, None, 0.5, 0.75)
    y = td_targets([live, done], net, 0.9)
    assert y.tolist() == pytest.approx([0.5 + 0.9 * 2.0, 0.25])
    with pytest.raises(ValueError):
        td_update([live], net, torch.optim.SGD(net.parameters(), lr=0.1), 1.0)


def test_single_transition_bandit_converges():
    torch.manual_seed(0)
    net = WorkerNet()
    state = np.random.default_rng(0).random((1, WORKER_CHANNELS, 6, 6)).astype(np.float32)
    t = Transition(state, 7, 0.3, None, None, 0.1, 0.4)
    opt = torch.optim.Adam(net.parameters(), lr=1e-3)
    for _ in range(500):
        td_update([t], net, opt, 0.0)
    with torch.no_grad():
        pred = float(net.batch_values([state])[0][7])
    assert abs(pred - 0.3) < 1e-3


def test_replay_rejects_inconsistent_rewards():
    buf = ReplayBuffer(2)
    with pytest.raises(ValueError):
        buf.push(Transition(np.zeros(1), 0, 0.3, None, None, 0.1, 0.5))
    for k in range(3):
        buf.push(Transition(np.full(1, k), 0, 0.0, None, None, 0.5, 0.5))
    assert len(buf) == 2 and sorted(float(t.state[0]) for t in buf) == [1.0, 2.0]


def test_recorded_transitions_match_objective_trace():
    torch.manual_seed(0)
    rec = Recorder()
    planner = LearnedPlanner(PRESETS["learned"], WorkerNet(), ManagerNet(20), epsilon=0.3, recorder=rec)
    cfg = toy_config()
    report = run_episode(cfg, toy_episode(3, 8), planner)
    ws, ms = rec.worker_transitions(), rec.manager_transitions()
    assert len(ws) == len(ms) == len(report.plan)
    for k, t in enumerate(ws):
        assert t.reward == t.j_next - t.j_prev
        assert t.j_next == report.j_trace[k + 1]
    assert ws[-1].done and not ws[0].done
    buf = ReplayBuffer(100)
    for t in ws + ms:
        buf.push(t)


# -- training ---------------------------------------------------------------

TINY = TrainSchedule(epochs=2, episodes_per_epoch=1, updates_per_epoch=2, batch_size=8)


def test_stage_one_freezes_the_manager():
    torch.manual_seed(1)
    manager = ManagerNet(20)
    before = checkpoint_bytes({"m": manager})
    res = train(toy_source(0, 6), TINY, toy_config(), seed=0, manager=manager)
    assert checkpoint_bytes({"m": res.manager}) == before


def test_zero_learning_rate_leaves_worker_identical():
    torch.manual_seed(2)
    worker = WorkerNet()
    before = checkpoint_bytes({"w": worker})
    train(toy_source(0, 6), replace(TINY, lr=0.0), toy_config(), seed=0, worker=worker)
    assert checkpoint_bytes({"w": worker}) == before


def test_training_changes_worker_and_logs():
    torch.manual_seed(3)
    worker = WorkerNet()
    before = flat_parameters(worker).copy()
    res = train(toy_source(0, 6), TINY, toy_config(), seed=0, worker=worker)
    assert not np.array_equal(flat_parameters(res.worker), before)
    header = res.log_csv().splitlines()[0]
    assert header == "epoch,stage,mean_J,mean_reward,loss_worker,loss_manager,epsilon"
    assert len(res.log) == 2


def test_joint_stage_runs_both_levels():
    sched = replace(TINY, stage="joint", epochs=4, manager_update_period=2)
    res = train(toy_source(0, 6), sched, toy_config(), seed=0)
    losses = [r["loss_manager"] for r in res.log]
    assert np.isnan(losses[0]) and not np.isnan(losses[1])


def test_same_seed_same_log():
    a = train(toy_source(5, 6), TINY, toy_config(), seed=5)
    b = train(toy_source(5, 6), TINY, toy_config(), seed=5)
    assert a.log_csv() == b.log_csv()
    assert checkpoint_bytes({"w": a.worker}) == checkpoint_bytes({"w": b.worker})


def test_schedule_validation_and_epsilon():
    s = TrainSchedule(epochs=10)
    assert s.epsilon(0) == 0.5 and s.epsilon(5) == pytest.approx(0.05) and s.epsilon(9) == pytest.approx(0.05)
    assert s.learning_rate == 1e-3 and TrainSchedule(stage="joint").learning_rate == 1e-4
    with pytest.raises(ValueError):
        TrainSchedule(discount=1.0)
    with pytest.raises(ValueError):
        TrainSchedule(stage="other")


# -- checkpoints ------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    torch.manual_seed(4)
    nets = {"worker": WorkerNet(), "manager": ManagerNet(5)}
    path = save_checkpoint(tmp_path / "c.pkqn", nets, {"seed": 4})
    loaded, meta = load_checkpoint(path)
    assert meta == {"seed": 4}
    assert checkpoint_bytes(loaded) == path.read_bytes()
    x = torch.rand(2, WORKER_CHANNELS, 10, 10)
    assert torch.equal(loaded["worker"](x), nets["worker"](x))
    data = path.read_bytes()
    assert data[:4] == b"PKQN"
    with pytest.raises(CheckpointError):
        parse_checkpoint(b"XXXX" + data[4:])
    with pytest.raises(CheckpointError):
        parse_checkpoint(data[:-4])


def test_learned_planner_from_checkpoint_packs(tmp_path):
    torch.manual_seed(5)
    path = save_checkpoint(tmp_path / "c.pkqn", {"worker": WorkerNet(), "manager": ManagerNet(20)}, {"schedule": {"input_resolution": 50}})
    planner = LearnedPlanner.from_checkpoint(path, PRESETS["learned"])
    report = run_episode(toy_config(), toy_episode(0, 10), planner)
    assert report.termination in ("all_packed", "no_space") and report.plan


def test_learned_sequence_without_manager_falls_back_to_bbox():
    planner = LearnedPlanner(PlannerConfig("learned", "hm"), None, None, k=0)
    a = run_episode(toy_config(), toy_episode(1, 8), planner)
    b = run_episode(toy_config(), toy_episode(1, 8), LearnedPlanner(PRESETS["hm"], None))
    assert [p.object_id for p in a.plan] == [p.object_id for p in b.plan]
