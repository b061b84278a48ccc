"""Exact optimal values on a few grid worlds.

With deterministic moves and one rewarded goal, the optimal value of a
state is gamma to the power of its shortest-path length times the reward.
This script computes that from breadth-first geodesics and checks it
against plain Bellman iteration.
"""
import numpy as np

from metricrl.envs import EnvIndex, doorkey_spec, empty_spec, hypermaze_spec, make_env
from metricrl.oracle import env_optimal_value, value_iteration


def main():
    for name, spec in [("empty 10x10", empty_spec(10)),
                       ("hypermaze 2D m=10", hypermaze_spec(10)),
                       ("doorkey 6x6", doorkey_spec(6))]:
        index = EnvIndex.build(make_env(spec))
        v_geo = env_optimal_value(index, 0.95)
        v_vi, sweeps = value_iteration(index, 0.95)
        print(f"{name:<20} states={len(index.states):<4} VI sweeps={sweeps:<4} "
              f"max |V_geo - V_vi| = {np.abs(v_geo - v_vi).max():.2e}")
    # the corner farthest from the goal on the open grid is 18 moves away
    index = EnvIndex.build(make_env(empty_spec(10)))
    v = env_optimal_value(index, 0.95)
    print("V*(0,0) =", v[index.index[(0, 0)]], "= 0.95**18 =", 0.95 ** 18)


if __name__ == "__main__":
    main()
