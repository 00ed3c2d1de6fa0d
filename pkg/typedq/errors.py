#!/usr/bin/env python3
"""
Exception hierarchy for typedq.

Every error carries the process exit code the CLI uses when it escapes a
subcommand: 2 usage, 3 data/format, 4 numeric failure, 1 anything else.
"""


class TypedQError(Exception):
    """Base class for all typedq errors."""

    exit_code = 1


class UsageError(TypedQError):
    """Bad command-line usage or configuration."""

    exit_code = 2


class InvalidInputError(TypedQError):
    """An operation was called with arguments outside its preconditions."""

    exit_code = 3


class DataFormatError(TypedQError):
    """A corpus, lexicon or rule file is malformed."""

    exit_code = 3


class DataIOError(TypedQError):
    """An input file could not be read."""

    exit_code = 3


class CheckpointFormatError(DataFormatError):
    """A checkpoint or PMI table file is corrupt or does not match the session."""


class NumericError(TypedQError):
    """A computation produced NaN/Inf or lost all probability mass."""

    exit_code = 4


class UnderflowError(NumericError):
    """The HTD modulation mask removed (almost) all probability mass."""


class ShapeError(TypedQError):
    """Operand shapes do not conform to a primitive's rule."""


class StateError(TypedQError):
    """An object was used in a state that does not allow the call."""


class RangeError(TypedQError):
    """A token id lies outside the vocabulary."""


class UndefinedPairError(TypedQError):
    """PMI is undefined for a pair with no joint or marginal count."""


class PipelineError(TypedQError):
    """A pipeline stage failed; keeps the exit code of the underlying error."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
