"""Exception hierarchy.

Three roots matter for the CLI exit codes: ConfigError (2), DataError (3)
and NumericalError (4). Everything raised by the library derives from
RagcnError so callers can catch broadly.
"""


class RagcnError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(RagcnError):
    """Invalid configuration, hyperparameter or argument domain violation."""


class DataError(RagcnError):
    """Malformed, inconsistent or missing input data."""


class NumericalError(RagcnError):
    """Numerical failure (NaN/Inf detected) during compute."""


# --- skeleton-core ---

class InvalidEdge(DataError):
    """Edge references an out-of-range joint, repeats, or is a self-loop."""


class DisconnectedGraph(DataError):
    """Skeleton graph is not connected."""


class InvalidSpec(ConfigError):
    """Synthetic dataset spec violates its domain."""


# --- ntu-ingest ---

class MalformedHeader(DataError):
    """A count line of a .skeleton file is not a valid integer."""


class TruncatedFile(DataError):
    """File ended before the declared structure was complete."""


class CountMismatch(DataError):
    """Declared frame/body/joint counts disagree with the actual content."""


class BadFilename(DataError):
    """Filename stem does not follow the SsssCcccPpppRrrrAaaa convention."""


class EmptySequence(DataError):
    """Recording contains no tracked bodies in any frame."""


# --- degrade ---

class SequenceTooShort(DataError):
    """Occlusion window does not fit into the sequence's real frames."""


class UnknownPart(ConfigError):
    """Part-occlusion id outside {1..5}."""


# --- autodiff ---

class ShapeMismatch(RagcnError):
    """Operand shapes do not conform."""


class NotScalar(RagcnError):
    """backward() requires a scalar loss."""


class TapeReuse(RagcnError):
    """A tape can only be walked backward once."""


class BadLabel(RagcnError):
    """Class label outside [0, num_classes)."""


# --- ragcn-model ---

class BadClass(RagcnError):
    """Requested class index has no classifier row."""


class MissingLabel(ConfigError):
    """Train-mode forward requires a ground-truth label."""


# --- harness ---

class CheckpointMismatch(DataError):
    """Checkpoint metadata disagrees with the requested configuration."""


class DatasetMissing(DataError):
    """Configured dataset path does not exist."""
