import numpy as np

from deconav.episodes import generate_episode
from deconav.evaluation import MemoryMode, compute_metrics, expert_policy, run_episode
from deconav.world import Action, generate_world


def test_expert_policy_solves_episodes():
    results = []
    for ws in range(3):
        w = generate_world(ws)
        results += [run_episode(w, generate_episode(w, s), expert_policy, MemoryMode.NONE) for s in range(35)]
    m = compute_metrics(results)
    assert m.sr >= 0.99 and m.spl >= 0.95


def test_immediate_stop_fails(world, episodes):
    r = run_episode(world, episodes[0], lambda nav: [Action.STOP] * 4)
    assert not r.success and r.agent_path_length == 0 and r.steps_taken == 0


def test_memory_modes_differ_only_in_bank(world, episodes):
    e = episodes[1]
    traces = {}
    for mode in MemoryMode:
        feats = []

        def act(nav, feats=feats):
            feats.append(nav.features())
            return [Action.MOVE_FORWARD, Action.TURN_LEFT, Action.MOVE_FORWARD, Action.TURN_RIGHT]
        r = run_episode(world, e, act, mode)
        traces[mode] = (np.array(feats), r)
    d = len(e.instruction.embedding)
    bank_slot = np.zeros(traces[MemoryMode.AMR][0].shape[1], dtype=bool)
    bank_slot[d:2 * d] = True
    bank_slot[4 * d] = True  # fill
    bank_slot[[4 * d + 2, 4 * d + 5]] = True  # bank relevance summaries
    amr, none = traces[MemoryMode.AMR], traces[MemoryMode.NONE]
    assert [s for s in amr[1].agent_path] == [s for s in none[1].agent_path]
    assert np.array_equal(amr[0][:, ~bank_slot], none[0][:, ~bank_slot])
    assert not np.array_equal(amr[0][:, bank_slot], none[0][:, bank_slot])
    assert all(b == [] for b in none[1].bank_trace)


def test_expert_action_examples():
    from deconav.expert import expert_action
    from deconav.world import AgentState, GridWorld, WorldGenParams
    w = GridWorld(np.zeros((40, 40), dtype=bool), [], WorldGenParams(width=40, height=40), 0)
    straight = [AgentState(*w.cell_center(c, 20), 0.0) for c in range(5, 35)]
    near = AgentState(*w.cell_center(30, 20), 0.0)
    assert expert_action(w, near, straight) == Action.STOP
    # 2 m beyond the success radius with the path dead ahead
    s = AgentState(*w.cell_center(34 - 20, 20), 0.0)
    assert expert_action(w, s, straight) == Action.MOVE_FORWARD
    up = [AgentState(*w.cell_center(10, r), 90.0) for r in range(10, 39)]
    facing_east = AgentState(*w.cell_center(10, 10), 0.0)
    assert expert_action(w, facing_east, up) == Action.TURN_LEFT
    assert expert_action(w, AgentState(facing_east.x, facing_east.y, 180.0), up) == Action.TURN_RIGHT
