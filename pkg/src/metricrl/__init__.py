"""Goal-conditioned offline RL with distance-monotonic state embeddings.

A state encoder is trained so that one environment step maps to unit
latent distance while unrelated states are pushed apart. The value of a
state is then ``gamma ** d_latent(s, goal) * r`` and the policy acts
greedily on it. Exact graph oracles, baselines (BC, offline DQN) and an
experiment harness come with it.
"""
from .agent import (DQNConfig, GreedyValuePolicy, OraclePolicy, PolicyConfig, PolicyModel,
                    RandomPolicy, ValueModel, greedy_action, greedy_table, train_bc, train_dqn,
                    train_pg_actor, value, value_model_for_env)
from .datagen import Dataset, collect, pair_sampler, read_dataset, write_dataset
from .envs import (EnvIndex, EnvSpec, doorkey_spec, empty_spec, enumerate_states, hypermaze_spec,
                   inverse_action_check, make_env, multigoal_spec, transition)
from .errors import (ConfigError, DataError, DatasetIOError, MetricRLError, ResourceError,
                     TrainingError, UsageError)
from .harness import (EvalReport, SolveCurvePoint, evaluate, multi_goal_study, quality_sweep,
                      solve_complexity_sweep, verify_theorem)
from .metric import (EmbeddingModel, MetricConfig, loss_log, loss_raw, monotonicity_violation_rate,
                     train)
from .oracle import (GeodesicTable, add_meta_state, build_graph, env_optimal_value, geodesics_from,
                     optimal_value, value_iteration)
from .tensor import MlpParams, derive_seed, init_mlp, make_rng, mlp_backward, mlp_forward

__version__ = "0.1.0"
