import heapq
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deconav.serialization import record_world, rle_decode, rle_encode, world_record
from deconav.world import (Action, ActuationNoise, AgentState, GridWorld, Landmark, WorldError,
                           WorldGenParams, generate_world, geodesic_distance, instruction_embedding,
                           blocked_fraction, landmark_features, observe, polyline_length,
                           shortest_path, step)

SMALL = WorldGenParams(width=32, height=32)


def heap_dijkstra(occ: np.ndarray, src: tuple[int, int], cell: float) -> dict:
    """Textbook 8-neighbour Dijkstra over (col, row) cells; diagonals only need a free target."""
    h, w = occ.shape
    dist = {src: 0.0}
    heap = [(0.0, src)]
    while heap:
        d, (c, r) = heapq.heappop(heap)
        if d > dist[(c, r)]:
            continue
        for dc in (-1, 0, 1):
            for dr in (-1, 0, 1):
                if dc == dr == 0:
                    continue
                c2, r2 = c + dc, r + dr
                if not (0 <= c2 < w and 0 <= r2 < h) or occ[r2, c2]:
                    continue
                nd = d + cell * (math.sqrt(2.0) if dc and dr else 1.0)
                if nd < dist.get((c2, r2), math.inf):
                    dist[(c2, r2)] = nd
                    heapq.heappush(heap, (nd, (c2, r2)))
    return dist


def random_grid(rng) -> GridWorld:
    occ = rng.random((32, 32)) < rng.uniform(0.1, 0.4)
    return GridWorld(occ, [], SMALL, 0)


def test_geodesic_matches_heap_dijkstra_on_random_grids():
    rng = np.random.default_rng(7)
    for _ in range(100):
        world = random_grid(rng)
        free = world.free_cells()
        for idx in rng.choice(len(free), size=3, replace=False):
            src = tuple(int(v) for v in free[idx])
            oracle = heap_dijkstra(world.occupancy, src, world.cell_size)
            a = world.cell_center(*src)
            for c, r in free:
                b = world.cell_center(int(c), int(r))
                expect = oracle.get((int(c), int(r)), math.inf)
                got = geodesic_distance(world, a, b)
                assert got == round(expect, 9)


def test_geodesic_symmetry_and_triangle_inequality():
    rng = np.random.default_rng(3)
    world = generate_world(11)
    free = world.free_cells()
    pts = [world.cell_center(*map(int, free[i])) for i in rng.integers(0, len(free), 300)]
    for a, b in zip(pts[::2], pts[1::2]):
        assert geodesic_distance(world, a, b) == geodesic_distance(world, b, a)
    for _ in range(1000):
        a, b, c = (pts[i] for i in rng.integers(0, len(pts), 3))
        slack = 2 * world.cell_size
        assert geodesic_distance(world, a, c) <= geodesic_distance(world, a, b) + geodesic_distance(world, b, c) + slack


def test_generation_is_deterministic():
    a, b = generate_world(5), generate_world(5)
    assert np.array_equal(a.occupancy, b.occupancy)
    assert a.landmarks == b.landmarks
    s = AgentState(*a.cell_center(*map(int, a.free_cells()[0])), 30.0)
    assert np.array_equal(observe(a, s, 0).embedding, observe(b, s, 0).embedding)
    assert not np.array_equal(a.occupancy, generate_world(6).occupancy)


def test_world_largely_connected_with_landmarks():
    for seed in range(5):
        w = generate_world(seed)
        assert w.component_sizes().max() >= 0.8 * w.n_nodes
        assert len(w.landmarks) == w.params.landmark_count


def test_embeddings_are_unit_norm():
    w = generate_world(2)
    rng = np.random.default_rng(0)
    for c, r in w.free_cells()[rng.choice(w.n_nodes, 50, replace=False)]:
        f = observe(w, AgentState(*w.cell_center(int(c), int(r)), float(rng.integers(0, 24) * 15)), 0)
        assert abs(np.linalg.norm(f.embedding) - 1.0) < 1e-9
    e = instruction_embedding(w, [lm.id for lm in w.landmarks[:3]])
    assert abs(np.linalg.norm(e) - 1.0) < 1e-9


def test_blocked_forward_is_noop_and_turns_wrap():
    occ = np.zeros((4, 4), dtype=bool)
    occ[:, 3] = True
    w = GridWorld(occ, [], WorldGenParams(width=4, height=4), 0)
    s = AgentState(*w.cell_center(2, 1), 0.0)
    assert step(w, s, Action.MOVE_FORWARD) == s
    assert step(w, s, Action.TURN_RIGHT).heading == 345.0
    assert step(w, step(w, s, Action.TURN_LEFT), Action.TURN_RIGHT) == s
    assert step(w, s, Action.STOP) == s


def test_actuation_noise_is_bounded_and_seeded():
    w = generate_world(0)
    s = AgentState(*w.cell_center(*map(int, w.free_cells()[w.n_nodes // 2])), 0.0)
    n1, n2 = ActuationNoise(True, rng_seed=4), ActuationNoise(True, rng_seed=4)
    for a in (Action.TURN_LEFT, Action.TURN_RIGHT):
        t1, t2 = step(w, s, a, n1), step(w, s, a, n2)
        assert t1 == t2
        assert abs(((t1.heading - s.heading + 180) % 360 - 180)) == pytest.approx(15.0, abs=3.0 + 1e-9)


def test_unreachable_goal_and_blocked_points_raise():
    occ = np.zeros((6, 6), dtype=bool)
    occ[:, 3] = True
    w = GridWorld(occ, [], WorldGenParams(width=6, height=6), 0)
    a, b = w.cell_center(0, 0), w.cell_center(5, 5)
    assert math.isinf(geodesic_distance(w, a, b))
    with pytest.raises(WorldError):
        shortest_path(w, AgentState(*a, 0.0), b)
    with pytest.raises(WorldError):
        w.node_of(*w.cell_center(3, 0))


def test_invalid_params_rejected():
    with pytest.raises(ValueError):
        generate_world(0, WorldGenParams(width=0))
    with pytest.raises(ValueError):
        generate_world(0, WorldGenParams(door_landmark_fraction=1.5))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2 ** 32 - 1))
def test_rle_roundtrip(h, w, seed):
    occ = np.random.default_rng(seed).random((h, w)) < 0.5
    assert np.array_equal(rle_decode(rle_encode(occ), (h, w)), occ)


def test_world_record_roundtrip():
    w = generate_world(9)
    r = record_world(world_record(w))
    assert np.array_equal(r.occupancy, w.occupancy) and r.landmarks == w.landmarks
    assert r.params == w.params and r.seed == w.seed


def open_room(landmarks=(), size=20):
    return GridWorld(np.zeros((size, size), dtype=bool), list(landmarks), WorldGenParams(width=size, height=size), 0)


def test_step_examples():
    w = open_room()
    assert step(w, AgentState(1.0, 1.0, 0.0), Action.MOVE_FORWARD) == AgentState(1.25, 1.0, 0.0)
    assert step(w, AgentState(1.0, 1.0, 90.0), Action.TURN_LEFT) == AgentState(1.0, 1.0, 105.0)


def test_geodesic_examples():
    w = open_room()
    a = w.cell_center(3, 3)
    assert geodesic_distance(w, a, a) == 0.0
    assert geodesic_distance(w, a, w.cell_center(4, 3)) == 0.25
    with pytest.raises(WorldError):
        geodesic_distance(w, a, (-1.0, 0.5))


def test_observation_matches_formula():
    lm = Landmark(0, 3, (8, 10))
    w = open_room([lm])
    s = AgentState(*w.cell_center(4, 10), 0.0)  # landmark 1.0 m dead ahead
    v = np.zeros(w.params.n_categories + 2)
    v[3] = 1.0 / (1.0 + 1.0)
    v[-1] = 0.5  # heading 0 maps to 0.5; nothing blocks the cone
    expect = w.projection @ v
    assert np.allclose(observe(w, s, 3).embedding, expect / np.linalg.norm(expect), atol=1e-12)
    behind = observe(w, AgentState(s.x, s.y, 180.0), 3).embedding
    assert not np.allclose(behind, observe(w, s, 3).embedding)


def test_facing_wall_has_no_landmark_signal():
    occ = np.zeros((20, 20), dtype=bool)
    occ[:, 11:13] = True  # the landmark stands behind this wall
    w = GridWorld(occ, [Landmark(0, 3, (14, 10))], WorldGenParams(width=20, height=20), 0)
    s = AgentState(*w.cell_center(10, 10), 0.0)
    v = np.zeros(w.params.n_categories + 2)
    v[-2] = blocked_fraction(w, s)
    v[-1] = 0.5
    assert v[-2] > 0.9
    expect = w.projection @ v
    assert np.allclose(observe(w, s, 0).embedding, expect / np.linalg.norm(expect), atol=1e-12)


def test_instruction_embedding_examples():
    w = open_room([Landmark(0, 3, (2, 2)), Landmark(1, 5, (9, 9))])
    p = w.projection[:, 3]
    assert np.allclose(instruction_embedding(w, [0]), p / np.linalg.norm(p), atol=1e-12)
    u = w.projection[:, 3] + 0.9 * w.projection[:, 5]
    assert np.allclose(instruction_embedding(w, [0, 1]), u / np.linalg.norm(u), atol=1e-12)
    with pytest.raises(WorldError):
        instruction_embedding(w, [])
    with pytest.raises(WorldError):
        instruction_embedding(w, [7])


def test_instruction_relevance_favours_views_of_its_landmarks():
    from deconav.episodes import generate_episode
    w = generate_world(21)
    rng = np.random.default_rng(5)
    wins = trials = 0
    while trials < 100:
        e = generate_episode(w, int(rng.integers(1 << 30)))
        ids = set(e.instruction.waypoint_landmark_ids)
        seeing = none = None
        for s in rng.permutation(len(w.free_cells()))[:400]:
            c, r = map(int, w.free_cells()[s])
            st_ = AgentState(*w.cell_center(c, r), float(rng.integers(0, 24) * 15))
            v = landmark_features(w, st_)[:w.params.n_categories]
            cats = {w.landmark(i).category for i in ids}
            if seeing is None and any(v[k] > 0 for k in cats):
                seeing = st_
            elif none is None and not v.any():
                none = st_
            if seeing and none:
                break
        if seeing is None or none is None:
            continue
        trials += 1
        e_i = e.instruction.embedding
        wins += observe(w, seeing, 0).embedding @ e_i > observe(w, none, 0).embedding @ e_i
    assert wins >= 95


def test_shortest_path_shapes():
    w = open_room()
    start = AgentState(*w.cell_center(2, 5), 0.0)
    goal = w.cell_center(18, 5)
    path = shortest_path(w, start, goal)
    assert len({round(s.y, 9) for s in path}) == 1
    assert shortest_path(w, start, w.cell_center(4, 5)) == [start]
    occ = np.ones((12, 12), dtype=bool)
    occ[1, 1:11] = False
    occ[1:11, 10] = False  # L-shaped corridor
    lw = GridWorld(occ, [], WorldGenParams(width=12, height=12), 0)
    s = AgentState(*lw.cell_center(1, 1), 0.0)
    g = lw.cell_center(10, 10)
    route = shortest_path(lw, s, g)
    assert abs(polyline_length(route) - heap_dijkstra(occ, (1, 1), 0.25)[(10, 10)]) <= lw.cell_size


def test_worlds_without_landmarks_and_distinct_seeds():
    w = generate_world(7, WorldGenParams(landmark_count=0))
    assert w.landmarks == ()
    assert not np.array_equal(generate_world(7).occupancy, generate_world(8).occupancy)
