"""Exception types shared across the engine."""


class GroveError(Exception):
    """Base class for every error raised by this package."""


# --- case corpus ---

class MalformedCase(GroveError):
    """Case document is missing required fields or carries bad line numbers."""


class EmptyCorpus(GroveError):
    """A dataset operation was given zero cases."""


# --- tree operations ---

class UnknownNode(GroveError):
    """Referenced node id or path does not resolve to an active node."""


class UnknownParent(GroveError):
    """Insert target parent is missing or deprecated."""


class VerticalityViolation(GroveError):
    """Declared level does not equal parent level + 1 (or 1 for roots)."""


class ShapeGuardViolation(GroveError):
    """Operation would exceed the root, fan-out, or depth cap."""


class MissingApplyConditions(GroveError):
    """Every node must carry a nonempty apply_conditions predicate."""


class CycleError(GroveError):
    """Move would make a node its own ancestor."""


class DeprecatedNode(GroveError):
    """Operation requires an active node but the target is deprecated."""


# --- edit scripts ---

class JsonSyntaxError(GroveError):
    """Payload is not valid JSON."""


class SchemaError(GroveError):
    """JSON is well formed but violates the expected schema."""


class AmbiguousPath(GroveError):
    """A title-chain path matched more than one active node."""


class AtomicAbort(GroveError):
    """Script application failed; the tree was left untouched."""

    def __init__(self, op_index: int, cause: Exception):
        super().__init__(f"op {op_index} failed: {type(cause).__name__}: {cause}")
        self.op_index = op_index
        self.cause = cause


# --- agent transport and protocol ---

class TransportError(GroveError):
    """The completion endpoint could not be reached or answered garbage."""


class TimeoutError(TransportError):  # noqa: A001 - mirrors the transport contract name
    """The completion endpoint did not answer within the configured timeout."""


class AuthError(GroveError):
    """The credential environment variable is missing or empty."""


class AgentProtocolFailure(GroveError):
    """No schema-valid response after the configured number of retries."""


class ScriptedAgentExhausted(GroveError):
    """A scripted agent was asked for more responses than it was given."""


class NoScriptProduced(GroveError):
    """An edit session ended without the agent emitting an edit script."""


# --- validation ---

class DomainError(GroveError):
    """Arguments outside the mathematical domain of an estimator."""


class FixParseError(GroveError):
    """Model response carried no fenced code block to take a fix from."""


class ToolError(GroveError):
    """The external evaluator command could not be executed."""


# --- persistence ---

class IoError(GroveError):
    """Reading or writing an engine file failed."""


class TreeLocked(IoError):
    """Another command holds the advisory lock on this tree file."""


class FormatVersionError(GroveError):
    """Persisted tree document has an unsupported format version."""


class CorruptTree(GroveError):
    """A loaded or replayed tree violates the structural invariants."""
