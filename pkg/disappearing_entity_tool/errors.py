#!/usr/bin/env python
"""
Exception hierarchy shared by every stage. Each class maps onto a CLI exit code.
"""

from typing import Any, Dict, Optional

from .config import ERROR_MESSAGES


class ToolkitError(Exception):
    """Base class for expected, user-reportable failures."""

    exit_code = 1
    message_key: Optional[str] = None

    def __init__(self, message: Optional[str] = None, **details: Any):
        if message is None and self.message_key:
            message = ERROR_MESSAGES[self.message_key].format(**details)
        super().__init__(message or self.__class__.__name__)
        self.details: Dict[str, Any] = details


class ConfigError(ToolkitError):
    exit_code = 2
    message_key = 'config_invalid'


class ArgumentError(ToolkitError, ValueError):
    exit_code = 2


class MissingArtifactError(ToolkitError):
    exit_code = 3
    message_key = 'missing_artifact'


class InputFormatError(ToolkitError):
    exit_code = 4
    message_key = 'conll_format'


class AlignmentError(ToolkitError):
    exit_code = 4
    message_key = 'length_mismatch'


class IllegalTagSequenceError(ToolkitError, ValueError):
    exit_code = 4
    message_key = 'illegal_tags'


class EmptyVocabularyError(ToolkitError):
    exit_code = 4
    message_key = 'empty_vocab'


class WorldSpecError(ToolkitError):
    exit_code = 2
    message_key = 'world_invalid'


class TrainingDivergedError(ToolkitError):
    """Raised when the loss becomes NaN or infinite during training."""

    exit_code = 5
    message_key = 'diverged'
