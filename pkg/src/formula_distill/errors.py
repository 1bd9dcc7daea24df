"""Shared exception types.

Every failure mode that callers are expected to branch on gets its own
class here; modules raise these instead of bare ValueError so the CLI can
map them onto stable exit codes.
"""


class FormulaDistillError(Exception):
    """Base class for package errors."""


class ConfigError(FormulaDistillError):
    """Invalid or inconsistent configuration value."""


class InvalidTokenKind(FormulaDistillError):
    """Token exists but is the wrong kind for the operation (e.g. arity of a reward token)."""


class Malformed(FormulaDistillError):
    """Token sequence is not a valid preorder traversal."""


class TrailingTokens(Malformed):
    """Tokens continue after the traversal already completed."""


class ArityMismatch(FormulaDistillError):
    """Tree node has a child count that disagrees with its operator arity."""


class ConstantCountMismatch(FormulaDistillError):
    """Number of supplied constants differs from the tree's placeholder count."""


class DomainViolation(FormulaDistillError):
    """Evaluation left the representable domain (log/sqrt/div/overflow)."""


class DegenerateTarget(FormulaDistillError):
    """Target values are all identical; R^2 is undefined."""


class SpecError(ConfigError):
    """Invalid sampling specification."""


class UnknownBenchmark(FormulaDistillError):
    """Benchmark name not present in the registry."""


class DimsError(FormulaDistillError):
    """Data dimensionality outside what the caller/model supports."""


class LengthError(FormulaDistillError):
    """Sequence longer than the configured maximum."""


class NonFiniteLoss(FormulaDistillError):
    """Training loss became NaN/Inf."""


class CheckpointMismatch(FormulaDistillError):
    """Checkpoint vocabulary or format does not match this build."""
