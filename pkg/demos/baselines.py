"""Compare the greedy embedding policy with behaviour cloning, offline DQN
and the advantage-weighted actor on low and high quality data.

Cloning copies whatever the data does, so on mostly random data it only
matches the behaviour policy. The embedding only needs the data to cover
the space. The actor is trained twice: with the raw advantage, whose loss
has no lower bound for a categorical head, and with negative advantages
dropped.
"""
from dataclasses import replace

from metricrl import empty_spec
from metricrl.agent import PolicyConfig
from metricrl.harness import QualityBudget, quality_sweep, summarize_quality
from metricrl.metric import MetricConfig


def main():
    budget = QualityBudget(metric=MetricConfig(epochs=5, batches_per_epoch=200, audit_triples=0),
                           policy=PolicyConfig(epochs=5, batches_per_epoch=200),
                           data_episodes=500, eval_episodes=200)
    methods = ("metricrl", "metricrl-pg", "bc", "dqn", "random")
    rows = quality_sweep(empty_spec(10), ("low", "high"), methods, (0,), budget)
    pos = replace(budget, policy=replace(budget.policy, advantage="positive"))
    for r in quality_sweep(empty_spec(10), ("low", "high"), ("metricrl-pg",), (0,), pos):
        rows.append(dict(r, method="metricrl-pg+"))
    for (tier, method), (mean, _, _) in sorted(summarize_quality(rows).items()):
        print(f"{tier:<5} {method:<13} success {mean:.3f}")


if __name__ == "__main__":
    main()
