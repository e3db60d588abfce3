"""Unsupervised few-shot video classification pipeline (Python bindings)."""

from ._muvfs import (
    ConfigError,
    RunConfig,
    accuracy_ci,
    attend,
    command_names,
    gradcheck,
    known_keys,
    mine_hard,
    nt_xent,
    run_command,
    symmetric_kl,
)

__all__ = [
    "ConfigError",
    "RunConfig",
    "accuracy_ci",
    "attend",
    "command_names",
    "gradcheck",
    "known_keys",
    "mine_hard",
    "nt_xent",
    "run_command",
    "symmetric_kl",
]
