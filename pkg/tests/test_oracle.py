import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import toy_dataset
from metricrl.datagen import collect
from metricrl.envs import EnvIndex, empty_spec, hypermaze_spec, make_env
from metricrl.errors import DataError, UsageError
from metricrl.oracle import (GeodesicTable, add_meta_state, build_graph, check_metric_axioms,
                             component_labels, dijkstra_from, env_optimal_value, export_adjacency,
                             export_values, geodesics_from, optimal_action_mask, optimal_greedy_policy,
                             optimal_value, value_iteration)
from metricrl.tensor import make_rng


def test_single_transition_graph():
    g = build_graph(toy_dataset([((0.0, 0.0), (0.0, 1.0))]))
    assert (g.n_nodes, g.n_edges, g.n_components) == (2, 1, 1)


def test_self_loops_and_duplicates_collapse():
    g = build_graph(toy_dataset([((0.0,), (0.0,)), ((0.0,), (1.0,)), ((1.0,), (0.0,)), ((0.0,), (1.0,))]))
    assert (g.n_nodes, g.n_edges) == (2, 1)
    assert all(i not in nb for i, nb in enumerate(g.adj))


def test_empty_dataset_is_usage_error():
    from metricrl.datagen import Dataset
    with pytest.raises(UsageError):
        build_graph(Dataset.empty(2))


def test_two_rooms_two_components_then_bridged():
    d = toy_dataset([((0.0,), (1.0,)), ((1.0,), (2.0,)), ((10.0,), (11.0,))], terminals=(1, 2))
    g = build_graph(d)
    assert g.n_components == 2
    h = add_meta_state(g)
    assert h.n_components == 1 and h.meta == g.n_nodes
    assert sorted(h.adj[h.meta]) == sorted(np.flatnonzero(g.terminal).tolist())


def test_connected_graph_left_alone_by_default():
    g = build_graph(toy_dataset([((0.0,), (1.0,))], terminals=(0,)))
    assert add_meta_state(g) is g
    forced = add_meta_state(g, force=True)
    assert forced.n_components == 1 and forced.meta is not None


def test_orphan_component_is_named():
    d = toy_dataset([((0.0,), (1.0,)), ((10.0,), (11.0,)), ((20.0,), (21.0,))], terminals=(0, 1))
    with pytest.raises(DataError, match="21.0|20.0"):
        add_meta_state(build_graph(d))


def test_no_terminals_to_join():
    d = toy_dataset([((0.0,), (1.0,)), ((10.0,), (11.0,))])
    with pytest.raises(DataError):
        add_meta_state(build_graph(d))


def test_random_empty_dataset_is_one_component(empty10):
    d = collect(empty10, "low", 2000, seed=1)
    g = build_graph(d)
    assert g.n_nodes <= 100
    # union-find oracle
    parent = list(range(g.n_nodes))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x
    for u, nbrs in enumerate(g.adj):
        for v in nbrs:
            parent[find(u)] = find(v)
    assert len({find(i) for i in range(g.n_nodes)}) == 1 == g.n_components


def test_geodesics_on_open_grid():
    idx = EnvIndex.build(make_env(empty_spec(3)))
    g = build_graph(idx)
    src = idx.index[(0, 0)]
    d = geodesics_from(g, src)
    assert d[src] == 0
    assert d[idx.index[(2, 2)]] == 4
    with pytest.raises(UsageError):
        geodesics_from(g, 999)


def test_unreachable_is_infinite():
    g = build_graph(toy_dataset([((0.0,), (1.0,)), ((5.0,), (6.0,))]))
    d = geodesics_from(g, 0)
    assert np.isinf(d[2]) and np.isinf(d[3])


@pytest.mark.parametrize("spec", [hypermaze_spec(10, 2), hypermaze_spec(6, 3), empty_spec(7)])
def test_bfs_matches_dijkstra(spec):
    idx = EnvIndex.build(make_env(spec))
    g = build_graph(idx)
    for src in range(0, g.n_nodes, max(1, g.n_nodes // 15)):
        assert np.array_equal(geodesics_from(g, src), dijkstra_from(g, src))


def test_meta_paths_excluded_by_default():
    d = toy_dataset([((0.0,), (1.0,)), ((10.0,), (11.0,))], terminals=(0, 1))
    g = add_meta_state(build_graph(d))
    a, b = g.node((1.0,)), g.node((11.0,))
    assert np.isinf(geodesics_from(g, a)[b])
    assert geodesics_from(g, a, through_meta=True)[b] == 2


def test_metric_axioms_hold(maze10):
    table = GeodesicTable(build_graph(maze10))
    assert check_metric_axioms(table, make_rng(0), 10_000) == 0


def test_value_arithmetic():
    g = build_graph(toy_dataset([((0.0,), (1.0,)), ((1.0,), (2.0,))], terminals=(1,)))
    v = optimal_value(g, [((2.0,), 1.0)], 0.9).values
    assert v[g.node((2.0,))] == 1.0
    assert v[g.node((0.0,))] == pytest.approx(0.81, abs=1e-15)


def test_unreachable_goal_gives_zero_and_is_flagged():
    g = build_graph(toy_dataset([((0.0,), (1.0,)), ((5.0,), (6.0,))]))
    rep = optimal_value(g, [((1.0,), 1.0)], 0.9)
    assert rep.values[g.node((5.0,))] == 0.0
    assert set(rep.unreachable) == {g.node((5.0,)), g.node((6.0,))}


def test_gamma_out_of_range():
    g = build_graph(toy_dataset([((0.0,), (1.0,))]))
    with pytest.raises(UsageError):
        optimal_value(g, [((1.0,), 1.0)], 1.0)


@pytest.mark.parametrize("name", ["empty10", "doorkey6", "maze10", "multigoal10"])
def test_geodesic_value_equals_value_iteration(name, request):
    idx = request.getfixturevalue(name)
    v_geo = env_optimal_value(idx, 0.95)
    v_vi, sweeps = value_iteration(idx, 0.95)
    assert sweeps < 10_000
    assert np.max(np.abs(v_geo - v_vi)) < 1e-9


def test_greedy_optimal_rollout_takes_geodesic_steps(empty10):
    v = env_optimal_value(empty10, 0.95)
    pi = optimal_greedy_policy(empty10, v)
    g = build_graph(empty10)
    goal = empty10.index[(9, 9)]
    d = geodesics_from(g, goal)
    for s in empty10.start_ids:
        cur, steps = s, 0
        while not empty10.terminal[cur]:
            cur = empty10.next_state[cur, pi[cur]]
            steps += 1
        assert steps == d[s]


def test_greedy_tie_rule_and_one_step(empty10):
    v = env_optimal_value(empty10, 0.95)
    pi = optimal_greedy_policy(empty10, v)
    assert pi[empty10.index[(9, 8)]] == 2      # +y enters the goal
    assert pi[empty10.index[(0, 0)]] == 0      # +x and +y both improve, lowest id
    mask = optimal_action_mask(empty10, v)
    assert mask[empty10.index[(0, 0)]].tolist() == [True, False, True, False]


def test_optimal_rollout_return_is_discounted_distance(maze10):
    from metricrl.agent import OraclePolicy
    from metricrl.harness import rollout
    pi = OraclePolicy(0.95).table(maze10)
    d = geodesics_from(build_graph(maze10), maze10.index[(9, 9)])
    starts = maze10.start_ids
    _, _, ret, _ = rollout(pi, maze10, starts, None, 0.95)
    assert np.allclose(ret, 0.95 ** d[starts], atol=1e-15)


def test_exports(tmp_path):
    g = build_graph(toy_dataset([((0.0,), (1.0,))], terminals=(0,)))
    assert export_adjacency(g) == "0 1\n1 0\n"
    text = export_values(g, [0.9, 1.0], tmp_path / "v.csv")
    assert text.splitlines()[0] == "state_key,value"
    assert (tmp_path / "v.csv").read_text() == text


@settings(max_examples=40, deadline=None)
@given(edges=st.lists(st.tuples(st.integers(0, 12), st.integers(0, 12)), min_size=1, max_size=30))
def test_random_graphs_bfs_dijkstra_and_axioms(edges):
    g = build_graph(toy_dataset([((float(a),), (float(b),)) for a, b in edges]))
    assert g.n_components == len(set(component_labels(g.adj).tolist()))
    for src in range(g.n_nodes):
        assert np.array_equal(geodesics_from(g, src), dijkstra_from(g, src))
    assert check_metric_axioms(GeodesicTable(g), make_rng(1), 200) == 0
