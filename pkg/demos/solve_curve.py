"""Updates needed to solve a maze, embedding learner against DQN.

Both learners see uniformly random transitions that grow as training runs.
Every 500 updates the greedy policy is tried from 25 random starts; the
run is solved when all 25 reach the goal.
"""
from metricrl.envs import hypermaze_spec
from metricrl.harness import SolveBudget, growth_ratio, solve_complexity_sweep


def main(sizes=(6, 10)):
    budget = SolveBudget(max_updates=60_000)
    points = solve_complexity_sweep(("metricrl", "dqn"), [hypermaze_spec(m) for m in sizes], budget)
    for p in points:
        print(f"{p.method:<9} m={p.size:<3} " + ("censored" if p.censored else f"{p.updates} updates"))
    for m in ("metricrl", "dqn"):
        print(f"{m} growth u({sizes[-1]})/u({sizes[0]}):", growth_ratio(points, m, sizes[0], sizes[-1]))


if __name__ == "__main__":
    main()
