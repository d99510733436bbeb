"""Exception types raised across the evaluator."""

from __future__ import annotations


class StefError(Exception):
    """Base class for every error this package raises on purpose."""


class EmptyInput(StefError):
    """A required input field is blank."""


class ParseError(StefError):
    """SQL text does not conform to the supported subset."""

    def __init__(self, message: str, position: int = -1):
        super().__init__(message)
        self.position = position


class UnterminatedString(ParseError):
    pass


class IllegalCharacter(ParseError):
    pass


class UnsupportedConstruct(StefError):
    """A recognizable SQL construct outside the supported subset.

    Carries the construct name so callers can report it and fall back to
    judge-only evaluation instead of failing the instance.
    """

    def __init__(self, construct: str):
        super().__init__(f"unsupported construct: {construct}")
        self.construct = construct


class InternalInvariantViolation(StefError):
    """An internal consistency check failed; indicates a bug, not bad input."""


class TemplateError(StefError):
    """Prompt template is missing a required placeholder."""


class MalformedJudgeOutput(StefError):
    """Judge reply could not be parsed even after one repair pass."""

    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class UnknownVerdict(MalformedJudgeOutput):
    pass


class ConfidenceOutOfRange(StefError):
    """Confidence is outside [0, 1] beyond the tolerated float slack."""


class TransportError(StefError):
    """Remote judge endpoint kept failing after bounded retries."""


class TimeoutExceeded(TransportError):
    pass


class JudgeUnavailable(StefError):
    """No usable judge verdict could be obtained for an instance."""


class ConfigError(StefError):
    """Fatal configuration problem (bad flags, missing credential)."""


class InputFormatError(StefError):
    """A batch input line is not a well-formed instance record."""

    def __init__(self, message: str, line_number: int = -1):
        super().__init__(message)
        self.line_number = line_number


class RuleParseError(StefError):
    """An application rules profile does not match the expected shape."""
