"""Exception hierarchy shared by every module.

The CLI maps the three top-level families onto exit codes: ``ConfigError``
-> 2, ``DataError`` -> 3, ``NumericalError`` -> 4.
"""


class KanError(Exception):
    """Base class for all package errors."""


class ConfigError(KanError, ValueError):
    """Invalid configuration values, including shapes and grid parameters."""


class GridError(ConfigError):
    pass


class ShapeError(ConfigError):
    pass


class DataError(KanError, ValueError):
    """Problems with input data files or dataset contents."""


class MissingColumnError(DataError):
    def __init__(self, column):
        super().__init__(f"missing column {column!r}")
        self.column = column


class EmptyDataError(DataError):
    pass


class UndefinedCorrelationError(DataError):
    """A correlation coefficient was requested for a constant input."""


class SchemaError(DataError):
    """Malformed model document. ``path`` points into the JSON document."""

    def __init__(self, message, path="$"):
        super().__init__(f"{path}: {message}")
        self.path = path


class UnknownBasisError(SchemaError):
    pass


class DimensionMismatchError(SchemaError):
    pass


class NumericalError(KanError, ArithmeticError):
    """Non-finite values during evaluation or training."""

    def __init__(self, message, layer=None, edge=None, step=None):
        where = []
        if layer is not None:
            where.append(f"layer {layer}")
        if edge is not None:
            where.append(f"edge {edge}")
        if step is not None:
            where.append(f"step {step}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)
        self.layer = layer
        self.edge = edge
        self.step = step


class DomainError(NumericalError):
    """A symbolic basis was evaluated at one of its singular points."""


class DivergenceError(NumericalError):
    def __init__(self, message, step, snapshot=None):
        super().__init__(message, step=step)
        self.snapshot = snapshot


class UnsnappedError(KanError):
    """A stage needed symbolic edges but found splines.

    ``edges`` lists ``(layer, in_node, out_node)`` triples.
    """

    def __init__(self, edges):
        coords = ", ".join(f"{l}/{i}/{j}" for l, i, j in edges)
        super().__init__(f"unsnapped spline edges: {coords}")
        self.edges = list(edges)
