"""Exception hierarchy; each class carries the CLI exit code it maps to."""

from __future__ import annotations


class SaltError(Exception):
    exit_code = 4


class ConfigError(SaltError, ValueError):
    """Invalid or inconsistent configuration (bad keys, missing vocab sets, ...)."""

    exit_code = 2


class InputError(SaltError, ValueError):
    """Caller passed malformed input: empty files, over-length sequences, bad ids."""

    exit_code = 3


class DataError(SaltError, ValueError):
    """Datasets that do not line up (dangling indices, unaligned test sets)."""

    exit_code = 3


class InternalError(SaltError, RuntimeError):
    """An invariant that upstream code guarantees was violated."""

    exit_code = 4


class TrainingDivergence(SaltError, RuntimeError):
    exit_code = 4
