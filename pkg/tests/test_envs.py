from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from metricrl.envs import (HELD, EnvIndex, EnvSpec, build_hypermaze_walls, doorkey_spec, empty_spec,
                           enumerate_states, hypermaze_spec, inverse_action_check, make_env,
                           multigoal_spec, transition)
from metricrl.errors import ConfigError, ResourceError, UsageError

PLUS_X, MINUS_X, PLUS_Y, MINUS_Y = 0, 1, 2, 3


def bfs(env, start):
    dist = {start: 0}
    q = deque([start])
    while q:
        s = q.popleft()
        for a in range(env.n_actions):
            t = env.move(s, a)
            if t not in dist:
                dist[t] = dist[s] + 1
                q.append(t)
    return dist


def test_boundary_move_is_a_no_op():
    env = make_env(empty_spec(10))
    assert transition(env, (0, 0), MINUS_X) == ((0, 0), 0.0, False)


def test_entering_the_goal():
    env = make_env(empty_spec(10))
    assert transition(env, (9, 8), PLUS_Y) == ((9, 9), 1.0, True)


def test_invalid_action_is_usage_error():
    env = make_env(empty_spec(4))
    with pytest.raises(UsageError):
        env.step((0, 0), 4)
    with pytest.raises(UsageError):
        make_env(doorkey_spec(6)).step((0, 0, 1, 1, 0), 6)


def test_goal_is_absorbing():
    env = make_env(multigoal_spec(10))
    for g, _ in env.spec.goals:
        for a in range(env.n_actions):
            assert env.step(g, a) == (g, 0.0, True)


def test_doorkey_pickup_needs_adjacency():
    env = make_env(doorkey_spec(6))
    kx, ky = env.key
    far = next((x, y) for x in range(env.wall_x) for y in range(6)
               if abs(x - kx) + abs(y - ky) > 1)
    s = (far[0], far[1], kx, ky, 0)
    assert env.step(s, env.PICKUP) == (s, 0.0, False)
    near = next((x, y) for x in range(env.wall_x) for y in range(6) if abs(x - kx) + abs(y - ky) == 1)
    s = (near[0], near[1], kx, ky, 0)
    assert env.step(s, env.PICKUP)[0] == (near[0], near[1], HELD, HELD, 0)


def test_doorkey_door_needs_key_and_adjacency():
    env = make_env(doorkey_spec(6))
    dx, dy = env.door
    beside = (dx - 1, dy)
    kx, ky = env.key
    closed = (beside[0], beside[1], kx, ky, 0)
    assert env.step(closed, env.OPEN)[0] == closed
    assert env.step(closed, PLUS_X)[0] == closed          # door is a wall while closed
    held = (beside[0], beside[1], HELD, HELD, 0)
    opened = env.step(held, env.OPEN)[0]
    assert opened[4] == 1
    assert env.step(opened, PLUS_X)[0][:2] == (dx, dy)


def test_hypermaze_2d_is_a_corridor():
    env = make_env(hypermaze_spec(10, 2))
    walls = build_hypermaze_walls(2, 10)
    assert 0 < walls.mean() < 1
    for x0 in range(10):
        assert not walls[x0].all()
    free = int((~walls).sum())
    dist = bfs(env, (0, 0))
    assert len(dist) == free
    assert dist[(9, 9)] > 18


def test_hypermaze_3d_connected():
    walls = build_hypermaze_walls(3, 10)
    env = make_env(hypermaze_spec(10, 3))
    dist = bfs(env, (0, 0, 0))
    assert len(dist) == int((~walls).sum()) < 10**3


def test_hypermaze_too_small():
    with pytest.raises(ConfigError):
        build_hypermaze_walls(2, 3)
    with pytest.raises(ConfigError):
        build_hypermaze_walls(1, 10)


@pytest.mark.parametrize("dims,cells", [(2, 4), (2, 7), (3, 5), (4, 6), (2, 30)])
def test_hypermaze_connected_for_many_sizes(dims, cells):
    walls = build_hypermaze_walls(dims, cells)
    env = make_env(hypermaze_spec(cells, dims))
    assert len(bfs(env, (0,) * dims)) == int((~walls).sum())


def test_enumeration_counts():
    assert len(enumerate_states(make_env(empty_spec(10)))) == 100
    walls = build_hypermaze_walls(2, 10)
    assert len(enumerate_states(make_env(hypermaze_spec(10, 2)))) == int((~walls).sum())


def _doorkey_brute_force(env):
    """States satisfying the doorkey consistency rules, by exhaustive product."""
    m, wx = env.m, env.wall_x
    out = set()
    for x in range(m):
        for y in range(m):
            for held in (False, True):
                for door in (0, 1):
                    if door and not held:
                        continue
                    if x == wx and not ((x, y) == env.door and door):
                        continue
                    if x > wx and not door:
                        continue
                    if not held and (x, y) == env.key:
                        continue
                    k = (HELD, HELD) if held else env.key
                    out.add((x, y, k[0], k[1], door))
    return out


@pytest.mark.parametrize("cells", [6, 8])
def test_doorkey_enumeration_matches_brute_force(cells):
    env = make_env(doorkey_spec(cells))
    states = enumerate_states(env)
    assert len(states) == len(set(states))
    assert set(states) == _doorkey_brute_force(env)


def test_enumeration_cap():
    with pytest.raises(ResourceError):
        enumerate_states(make_env(empty_spec(10)), cap=50)


def test_enumeration_order_is_deterministic():
    env = make_env(hypermaze_spec(10, 2))
    assert enumerate_states(env) == enumerate_states(make_env(hypermaze_spec(10, 2)))


def test_inverse_actions():
    assert inverse_action_check(make_env(empty_spec(6))) == []
    assert inverse_action_check(make_env(hypermaze_spec(10, 2))) == []
    assert inverse_action_check(make_env(hypermaze_spec(6, 3))) == []
    env = make_env(doorkey_spec(6))
    report = inverse_action_check(env)
    actions = {a for _, a, _ in report}
    assert env.OPEN in actions and env.PICKUP in actions
    assert actions <= {env.OPEN, env.PICKUP}


@pytest.mark.parametrize("spec", [empty_spec(6), multigoal_spec(10), hypermaze_spec(8, 2),
                                  hypermaze_spec(6, 3), doorkey_spec(6), doorkey_spec(7, layout=3)])
def test_sparse_reward_and_injective_features(spec):
    index = EnvIndex.build(make_env(spec))
    env = index.env
    for i, s in enumerate(index.states):
        for a in range(env.n_actions):
            s2, r, term = env.step(s, a)
            if env.is_goal(s):
                assert (s2, r, term) == (s, 0.0, True)
            else:
                assert (r != 0) == env.is_goal(s2) == term
                if term:
                    assert r == env.goal_rewards[s2]
    feats = {tuple(f) for f in index.features}
    assert len(feats) == len(index.states)


def test_feature_encodings():
    env = make_env(empty_spec(10))
    assert np.allclose(env.encode((9, 0)), [1.0, 0.0])
    maze = make_env(hypermaze_spec(10, 2))
    assert maze.feature_dim == 2 + 4
    dk = make_env(doorkey_spec(6))
    f = dk.encode((1, 2, HELD, HELD, 1))
    assert np.allclose(f, [0.2, 0.4, -1.0, -1.0, 1.0])


def test_spec_validation():
    with pytest.raises(ConfigError):
        EnvSpec("lava")
    with pytest.raises(ConfigError):
        EnvSpec("empty", 2, 1)
    with pytest.raises(ConfigError):
        EnvSpec("empty", 2, 5, goals=(((5, 5), 1.0),))
    with pytest.raises(ConfigError):
        EnvSpec("empty", 2, 5, goals=(((1, 1), 0.0),))
    with pytest.raises(ConfigError):
        doorkey_spec(4) and make_env(doorkey_spec(4))


@settings(max_examples=30, deadline=None)
@given(kind=st.sampled_from(["empty", "hypermaze", "doorkey"]), cells=st.integers(5, 12),
       dims=st.integers(2, 3))
def test_spec_round_trip(kind, cells, dims):
    if kind == "doorkey":
        dims = 2
    spec = EnvSpec(kind, dims, cells)
    assert EnvSpec.from_dict(spec.to_dict()) == spec


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_transition_is_pure(seed):
    rng = np.random.default_rng(seed)
    env = make_env(doorkey_spec(6))
    states = enumerate_states(env)
    s = states[rng.integers(len(states))]
    a = int(rng.integers(env.n_actions))
    assert env.step(s, a) == env.step(s, a) == make_env(doorkey_spec(6)).step(s, a)
