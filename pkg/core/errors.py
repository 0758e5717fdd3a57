"""
Error Types
Every failure raised by the simulator derives from FedLapError so that the
command layer can map it to an exit code.
"""


class FedLapError(Exception):
    """Root of all simulator errors."""


# --- Shared ---
class DimensionMismatch(FedLapError, ValueError):
    pass


class InvalidConfig(FedLapError, ValueError):
    pass


# --- Graph ---
class GraphError(FedLapError, ValueError):
    pass


class DuplicateEdge(GraphError):
    pass


class SelfLoop(GraphError):
    pass


class NegativeWeight(GraphError):
    pass


class IndexOutOfRange(GraphError):
    pass


class MissingLabelSets(GraphError):
    pass


# --- Models ---
class EmptyData(FedLapError, ValueError):
    pass


class BatchTooLarge(FedLapError, ValueError):
    pass


# --- Data ---
class TooFewSamples(FedLapError, ValueError):
    pass


class ParseError(FedLapError, ValueError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class SchemaError(FedLapError, ValueError):
    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


# --- Engine ---
class InvalidSampleSize(FedLapError, ValueError):
    pass


class InvalidAlpha(FedLapError, ValueError):
    pass


class NonFiniteParameter(FedLapError, ArithmeticError):
    """A parameter became NaN/inf. Carries where it happened for diagnostics."""

    def __init__(self, message, round=None, client=None, last_objective=None):
        super().__init__(message)
        self.round = round
        self.client = client
        self.last_objective = last_objective

    def __str__(self):
        base = super().__str__()
        return f"{base} (round={self.round}, client={self.client}, last_objective={self.last_objective})"


# --- Analysis ---
class SingularSystem(FedLapError, ArithmeticError):
    pass


class PreconditionViolated(FedLapError, ValueError):
    pass
