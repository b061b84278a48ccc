"""Run configuration: INI files with one level of sections, layered under
command-line flags and over built-in defaults.

Precedence is flag > file > default. Every key has a typed default; unknown
sections or keys and unparsable values raise :class:`ConfigError` naming the
``section.key`` path.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field

from .agent import DQNConfig, PolicyConfig
from .envs import EnvSpec, parse_goals
from .errors import ConfigError
from .metric import MetricConfig

# (default, type, help). Values tagged [published] are the published defaults.
SCHEMA = {
    "env": {
        "kind": ("empty", str, "environment family: empty, hypermaze, doorkey"),
        "dims": (2, int, "grid dimensions"),
        "cells": (10, int, "cells per dimension"),
        "shape": ("", str, "layout: open|split (empty), s (hypermaze), layout seed (doorkey)"),
        "goals": ("", str, "goal list 'x:y@r|...'; empty means the far corner with r=1"),
        "max_steps": (0, int, "episode cap; 0 means 4 x graph diameter"),
    },
    "data": {
        "tier": ("low", str, "dataset tier: low, medium, high"),
        "epsilon": (-1.0, float, "random-action probability; negative uses the tier value"),
        "episodes": (1000, int, "episodes to collect"),
        "seed": (0, int, "collection seed"),
        "path": ("", str, "dataset directory"),
    },
    "metric": {
        "latent_dim": (128, int, "[published] latent dimension"),
        "lam": (1.0, float, "[published] contrastive weight lambda"),
        "variant": ("log", str, "loss variant: log or raw"),
        "eps_d": (1e-6, float, "distance floor inside the log"),
        "batch_size": (256, int, "[published] batch size"),
        "batches_per_epoch": (500, int, "[published] batches per epoch"),
        "epochs": (100, int, "[published] epochs"),
        "lr": (1e-3, float, "[published] Adam learning rate"),
        "seed": (0, int, "initialization and sampling seed"),
        "hidden": ("64,64,64", str, "[published] hidden layer widths"),
        "meta_state": (False, bool, "join terminal states through a meta state"),
        "audit_triples": (1000, int, "triples sampled for the per-epoch violation audit"),
    },
    "agent": {
        "gamma": (0.95, float, "[published] discount factor"),
        "mode": ("gamma-exp", str, "value form: gamma-exp or neg-distance"),
        "epochs": (100, int, "policy / DQN epochs"),
        "batches_per_epoch": (500, int, "policy / DQN batches per epoch"),
        "batch_size": (256, int, "policy / DQN batch size"),
        "lr": (1e-3, float, "policy / DQN learning rate"),
        "seed": (0, int, "policy / DQN seed"),
        "hidden": ("64,64,64", str, "policy / DQN hidden widths"),
        "target_sync": (500, int, "DQN target network period in updates"),
        "sample": (True, bool, "evaluate categorical policies by sampling"),
        "advantage": ("raw", str, "actor advantage weights: raw or positive (negatives dropped)"),
    },
    "harness": {
        "episodes": (200, int, "evaluation episodes"),
        "seed": (0, int, "evaluation seed"),
        "seeds": ("0,1,2,3,4", str, "[published] sweep seeds"),
        "tiers": ("low,medium,high", str, "sweep tiers"),
        "methods": ("metricrl,bc,dqn,random", str, "sweep methods"),
        "sizes": ("10,20,30", str, "maze sizes for the updates-to-solve sweep"),
        "max_updates": (100_000, int, "updates-to-solve budget per run"),
        "cadence": (500, int, "updates between solve checks"),
        "solve_episodes": (25, int, "[published] consecutive successes that count as solved"),
        "gammas": ("0.5,0.9,0.95,0.99,0.999", str, "[published] discounts for the multi-goal study"),
        "triples": (10_000, int, "sampled triples for violation rates"),
        "jobs": (1, int, "parallel sweep jobs"),
    },
    "run": {
        "out": ("", str, "output directory"),
        "model": ("", str, "embedding or policy checkpoint"),
        "policy": ("", str, "policy for eval: metricrl, oracle, random or a checkpoint path"),
        "force": (False, bool, "overwrite an existing output directory"),
    },
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def coerce(path, value, typ):
    if isinstance(value, typ) and not (typ is int and isinstance(value, bool)):
        return value
    text = str(value).strip()
    try:
        if typ is bool:
            if text.lower() in _TRUE:
                return True
            if text.lower() in _FALSE:
                return False
            raise ValueError(text)
        return typ(text)
    except ValueError:
        raise ConfigError(f"{path}: cannot parse {text!r} as {typ.__name__}") from None


def int_list(text):
    return tuple(int(x) for x in str(text).split(",") if x.strip())


def float_list(text):
    return tuple(float(x) for x in str(text).split(",") if x.strip())


def str_list(text):
    return tuple(x.strip() for x in str(text).split(",") if x.strip())


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: {s: {k: v[0] for k, v in keys.items()}
                                                  for s, keys in SCHEMA.items()})

    def __getitem__(self, path):
        section, key = path.split(".")
        return self.values[section][key]

    def set(self, path, value):
        try:
            section, key = path.split(".")
            typ = SCHEMA[section][key][1]
        except (ValueError, KeyError):
            raise ConfigError(f"unknown config key {path!r}") from None
        self.values[section][key] = coerce(path, value, typ)

    def merge_file(self, path):
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for section in parser.sections():
            if section not in SCHEMA:
                raise ConfigError(f"unknown config section [{section}]")
            for key, value in parser.items(section):
                self.set(f"{section}.{key}", value)
        return self

    def to_ini(self):
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        for section, keys in self.values.items():
            parser[section] = {k: _ini_value(v) for k, v in keys.items()}
        import io
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini_text(cls, text):
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        parser.read_string(text)
        cfg = cls()
        for section in parser.sections():
            if section not in SCHEMA:
                raise ConfigError(f"unknown config section [{section}]")
            for key, value in parser.items(section):
                cfg.set(f"{section}.{key}", value)
        return cfg

    def validate(self):
        g = self["agent.gamma"]
        if not 0 < g < 1:
            raise ConfigError(f"agent.gamma must lie in (0, 1), got {g}")
        for path in ("data.tier",):
            if self[path] not in ("low", "medium", "high"):
                raise ConfigError(f"{path}: expected low, medium or high, got {self[path]!r}")
        for path in ("harness.seeds", "harness.sizes"):
            try:
                int_list(self[path])
            except ValueError:
                raise ConfigError(f"{path}: expected comma-separated integers") from None
        try:
            gammas = float_list(self["harness.gammas"])
        except ValueError:
            raise ConfigError("harness.gammas: expected comma-separated floats") from None
        if not all(0 < x < 1 for x in gammas):
            raise ConfigError("harness.gammas: every discount must lie in (0, 1)")
        self.env_spec()
        self.metric_config()
        self.policy_config()
        self.dqn_config()
        return self

    # --- typed views ---

    def env_spec(self):
        v = self.values["env"]
        try:
            goals = parse_goals(v["goals"]) if v["goals"] else ()
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"env.goals: {exc}") from None
        return EnvSpec(kind=v["kind"], dims=v["dims"], cells=v["cells"], shape=v["shape"],
                       goals=goals, max_steps=v["max_steps"])

    def metric_config(self):
        v = dict(self.values["metric"])
        try:
            v["hidden"] = int_list(v["hidden"])
        except ValueError:
            raise ConfigError("metric.hidden: expected comma-separated integers") from None
        return MetricConfig(**v)

    def _agent_common(self):
        v = self.values["agent"]
        try:
            hidden = int_list(v["hidden"])
        except ValueError:
            raise ConfigError("agent.hidden: expected comma-separated integers") from None
        return dict(epochs=v["epochs"], batches_per_epoch=v["batches_per_epoch"],
                    batch_size=v["batch_size"], lr=v["lr"], seed=v["seed"], hidden=hidden)

    def policy_config(self):
        return PolicyConfig(advantage=self["agent.advantage"], **self._agent_common())

    def dqn_config(self):
        v = self.values["agent"]
        return DQNConfig(gamma=v["gamma"], target_sync=v["target_sync"], **self._agent_common())

    @property
    def epsilon(self):
        e = self["data.epsilon"]
        return None if e < 0 else e


def _ini_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)
