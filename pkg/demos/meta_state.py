"""Training on a dataset whose graph falls apart into two rooms.

Random pairs from different rooms have no finite geodesic, so training
refuses such data. Joining all terminal states through one synthetic node
makes the graph connected and training goes ahead.
"""
from dataclasses import replace

from metricrl import EnvIndex, make_env, make_rng
from metricrl.datagen import collect
from metricrl.envs import EnvSpec
from metricrl.errors import DataError
from metricrl.metric import MetricConfig, monotonicity_violation_rate, train
from metricrl.oracle import add_meta_state, build_graph


def main():
    spec = EnvSpec("empty", 2, 10, "split", (((0, 9), 1.0), ((9, 9), 1.0)), 0)
    data = collect(EnvIndex.build(make_env(spec)), "low", 500, seed=0)
    cfg = MetricConfig(epochs=5, batches_per_epoch=200, audit_triples=0)
    try:
        train(data, cfg)
    except DataError as exc:
        print("without meta state:", exc)
    model, log = train(data, replace(cfg, meta_state=True))
    g = add_meta_state(build_graph(data))
    print(f"with meta state: {len(log.epochs)} epochs, "
          f"violation rate {monotonicity_violation_rate(model, g, 10_000, make_rng(0)).rate:.4f}")


if __name__ == "__main__":
    main()
