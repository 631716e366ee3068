"""Python bindings for the srl4h training library.

Configs are plain dicts in the same layout as the JSON files the CLI reads
(sections env, agent, srl, trainer, logging). Omitted keys take defaults.
"""

import json as _json

from . import _core
from ._core import (
    ConfigError,
    RuntimeFailure,
    UsageError,
    d_ncs,
    gae,
    ppo_policy_loss,
    srl_active,
    zero_masking,
)

__all__ = [
    "ConfigError",
    "RuntimeFailure",
    "UsageError",
    "Trainer",
    "VecEnv",
    "cli",
    "d_ncs",
    "evaluate_checkpoint",
    "evaluate_random",
    "gae",
    "ppo_policy_loss",
    "resolve_config",
    "srl_active",
    "zero_masking",
]


def _dump(config):
    return _json.dumps(config or {})


def resolve_config(config=None):
    """Full config with defaults filled in; raises ConfigError on bad keys."""
    return _json.loads(_core.resolve_config(_dump(config)))


class VecEnv(_core.VecEnv):
    def __init__(self, config=None):
        super().__init__(_dump(config))


class Trainer:
    """Thin wrapper returning metrics as dicts."""

    def __init__(self, config=None, out_dir=""):
        self._t = _core.Trainer(_dump(config), str(out_dir))

    @property
    def iteration(self):
        return self._t.iteration

    @property
    def learning_rate(self):
        return self._t.learning_rate

    def train_iteration(self):
        return _json.loads(self._t.train_iteration())

    def run(self):
        return [_json.loads(r) for r in self._t.run()]

    def save_checkpoint(self, path):
        self._t.save_checkpoint(str(path))

    def load_checkpoint(self, path):
        self._t.load_checkpoint(str(path))

    def act(self, policy_obs):
        return self._t.act(policy_obs)

    def value(self, obs):
        return self._t.value(obs)

    def evaluate(self, episodes, seed, deterministic=True):
        return _json.loads(self._t.evaluate(episodes, seed, deterministic))


def evaluate_checkpoint(checkpoint, config, episodes, deterministic=True):
    return _json.loads(_core.evaluate_checkpoint(str(checkpoint), _dump(config), episodes, deterministic))


def evaluate_random(config, episodes, seed):
    return _json.loads(_core.evaluate_random(_dump(config), episodes, seed))


def cli(args):
    """Runs the command-line tool in-process and returns its exit code."""
    return _core.cli_main([str(a) for a in args])
