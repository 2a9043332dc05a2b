"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: user-input problems exit 1,
run failures (transport exhaustion, suspended runs) exit 2.
"""


class VerilabelError(Exception):
    """Base class for all toolkit errors."""


class UserInputError(VerilabelError):
    """Bad input supplied by the operator (exit code 1)."""


class SpecParseError(UserInputError):
    """Malformed verifier(annotator) spec string."""


class CodebookError(UserInputError):
    """Codebook file cannot be loaded or is structurally invalid."""


class TranscriptError(UserInputError):
    """Corpus file cannot be loaded or violates transcript invariants."""


class ConfigError(UserInputError):
    """Run configuration is inconsistent or incomplete."""


class ContractError(VerilabelError):
    """An operation was called outside its contract."""


class TransportError(VerilabelError):
    """Remote backend failed after exhausting its retry policy."""


class AuthError(TransportError):
    """Remote backend rejected credentials; never retried."""


class RunSuspendedError(VerilabelError):
    """A run could not finish; persisted state supports resuming."""

    def __init__(self, message: str, run_dir=None):
        super().__init__(message)
        self.run_dir = run_dir


class DigestMismatchError(VerilabelError):
    """Persisted state does not match the manifest or sealed digest."""


class AdjudicationError(UserInputError):
    """Invalid adjudication packet operation."""
