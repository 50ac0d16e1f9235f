"""Typed error hierarchy. Every failure surfaced by the library or CLI is a SelmError subclass."""


class SelmError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(SelmError):
    """Operands have incompatible or unexpected shapes."""


class InvalidValueError(SelmError):
    """Non-finite values where finite ones are required."""


class GraphError(SelmError):
    """Backward pass requested without a recorded forward graph, or on a non-scalar."""


class AlignmentError(SelmError):
    """Gradients do not line up with the parameters they should update."""


class EmptyLossError(SelmError):
    """A loss was requested over zero unmasked positions."""


class VocabularyError(SelmError):
    """Token id outside the vocabulary."""


class ConfigError(SelmError):
    """Invalid configuration value."""


class ContextOverflowError(SelmError):
    """Sequence does not fit into the model context window."""


class InputError(SelmError):
    """Caller-supplied input is empty or otherwise unusable."""


class DataError(SelmError):
    """Dataset-level violation (missing feature, bad counts, unknown class...)."""


class FormatError(SelmError):
    """Binary or text file does not match its documented format."""


class CheckpointError(SelmError):
    """Checkpoint container inconsistency or failed content-hash verification."""


class MetricError(SelmError):
    """A metric is undefined for the given inputs."""


class LeakageError(SelmError):
    """Train/test contamination detected."""


class UndefinedConditionalError(SelmError):
    """Conditional probability with zero evidence."""
