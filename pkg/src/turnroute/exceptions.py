"""Exception hierarchy shared across the engine.

Each branch maps to a distinct CLI exit code (see ``turnroute.cli``):
configuration problems exit 2, data/validation problems exit 3, numeric
failures exit 4, and I/O or transport failures exit 5.
"""


class TurnrouteError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(TurnrouteError):
    """A config file, manifest, or ruleset could not be loaded or validated."""

    exit_code = 2


class DataError(TurnrouteError):
    """Invalid or inconsistent data: logs, schemas, pools, or checkpoints."""

    exit_code = 3


class NumericError(TurnrouteError):
    """A numeric computation produced non-finite or diverging values."""

    exit_code = 4


class TransportError(TurnrouteError):
    """An embedding provider or file could not be reached or written."""

    exit_code = 5


class HistoryOverBudgetError(DataError):
    """The task block alone exceeds the history token budget."""


class ProtocolError(DataError):
    """An operation was called outside its legal state (e.g. step after done)."""
