"""Learn a distance-monotonic embedding from poor data and act greedily on it.

The dataset comes from a behaviour policy that is random 90% of the time.
The embedding is trained so that consecutive states sit one unit apart
and random pairs are pushed apart. Its value estimate is gamma to the
latent distance to the goal, and the greedy policy steps to the successor
with the highest estimate.
"""
from metricrl import (EnvIndex, GreedyValuePolicy, MetricConfig, collect, empty_spec, evaluate,
                      make_env, make_rng, monotonicity_violation_rate, train)
from metricrl.oracle import build_graph


def main(epochs=5):
    index = EnvIndex.build(make_env(empty_spec(10)))
    data = collect(index, "low", 1000, seed=0)
    print(f"{len(data)} transitions from {data.manifest['episodes']} episodes "
          f"(epsilon {data.manifest['epsilon']})")

    cfg = MetricConfig(epochs=epochs, batches_per_epoch=200, audit_triples=1000)
    model, log = train(data, cfg, progress=lambda r: print(
        f"  epoch {r['epoch']:>2}  loss {r['mean_loss']:+.4f}  step residual {r['constraint_residual']:.4f}"
        f"  sampled violations {r['violation_rate_sample']:.4f}"))

    rep = monotonicity_violation_rate(model, build_graph(data), 10_000, make_rng(1))
    print(f"violation rate over 10k triples: {rep.rate:.4f}")
    r = evaluate(GreedyValuePolicy(model), index, 200, seed=0)
    print(f"greedy on embedding: success {r.success_rate:.3f}, mean return {r.mean_return:.3f}")


if __name__ == "__main__":
    main()
