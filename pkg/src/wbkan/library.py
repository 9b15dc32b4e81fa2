"""Library of univariate basis functions used to snap spline edges.

Each basis ``g`` is used inside the affine wrapper ``c * g(a * x + b) + d``.
The order of ``DEFAULT_LIBRARY`` is significant: it is the tie-break order
when two candidates fit equally well, simplest first.
"""
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import UnknownBasisError

LIBRARY_VERSION = 1

# arguments past this overflow exp() in float64
_EXP_LIMIT = 700.0


@dataclass(frozen=True)
class Basis:
    name: str
    fn: Callable
    deriv: Callable
    # template for rendering; "{}" is replaced by the argument text
    template: str
    singular: Optional[Callable] = None
    # (lo, hi) -> arguments in [lo, hi] where the basis has a pole
    poles: Optional[Callable] = None

    def pole_points(self, lo, hi):
        """Sorted pole arguments inside ``[lo, hi]`` (empty when there are none)."""
        if self.poles is None or not lo <= hi:
            return np.empty(0)
        return np.sort(np.asarray(self.poles(lo, hi), dtype=np.float64))

    def bad_points(self, u):
        """Boolean mask of arguments at which the basis is undefined."""
        u = np.asarray(u, dtype=np.float64)
        bad = ~np.isfinite(u)
        if self.singular is not None:
            with np.errstate(invalid="ignore"):
                bad |= self.singular(u)
        return bad

    @property
    def is_singular(self):
        return self.singular is not None

    def __call__(self, u):
        return self.fn(u)


def _sigmoid(u):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(u, dtype=np.float64)))


def _dsigmoid(u):
    s = _sigmoid(u)
    return s * (1.0 - s)


def _safe(fn):
    def wrapped(u):
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            return fn(np.asarray(u, dtype=np.float64))
    return wrapped


def _tan_singular(u):
    return np.abs(np.cos(u)) < 1e-12


def _tan_poles(lo, hi):
    k = np.arange(np.ceil((lo - np.pi / 2) / np.pi), np.floor((hi - np.pi / 2) / np.pi) + 1)
    return np.pi / 2 + k * np.pi


def _zero_pole(lo, hi):
    return [0.0] if lo <= 0.0 <= hi else []


_BASES = [
    Basis("constant", lambda u: np.ones_like(u), lambda u: np.zeros_like(u), "1"),
    Basis("identity", lambda u: u, lambda u: np.ones_like(u), "{}"),
    Basis("square", lambda u: u * u, lambda u: 2.0 * u, "({})**2"),
    Basis("cube", lambda u: u ** 3, lambda u: 3.0 * u * u, "({})**3"),
    Basis("reciprocal", _safe(lambda u: 1.0 / u), _safe(lambda u: -1.0 / (u * u)),
          "1/({})", singular=lambda u: np.abs(u) < 1e-12, poles=_zero_pole),
    Basis("sqrt", _safe(np.sqrt), _safe(lambda u: 0.5 / np.sqrt(u)), "sqrt({})",
          singular=lambda u: u <= 0.0),
    Basis("exp", _safe(np.exp), _safe(np.exp), "exp({})",
          singular=lambda u: u > _EXP_LIMIT),
    Basis("log", _safe(np.log), _safe(lambda u: 1.0 / u), "log({})",
          singular=lambda u: u <= 0.0),
    Basis("sin", np.sin, np.cos, "sin({})"),
    Basis("cos", np.cos, lambda u: -np.sin(u), "cos({})"),
    Basis("tan", _safe(np.tan), _safe(lambda u: 1.0 / np.cos(u) ** 2), "tan({})",
          singular=_tan_singular, poles=_tan_poles),
    Basis("arctan", np.arctan, lambda u: 1.0 / (1.0 + u * u), "arctan({})"),
    Basis("tanh", np.tanh, lambda u: 1.0 - np.tanh(u) ** 2, "tanh({})"),
    Basis("sigmoid", _sigmoid, _dsigmoid, "sigmoid({})"),
    Basis("gaussian", _safe(lambda u: np.exp(-u * u)),
          _safe(lambda u: -2.0 * u * np.exp(-u * u)), "exp(-({})**2)"),
    Basis("abs", np.abs, np.sign, "abs({})"),
]

DEFAULT_LIBRARY = {b.name: b for b in _BASES}
BASIS_NAMES = tuple(DEFAULT_LIBRARY)

# pairs related by an exact affine change of argument and output
EQUIVALENT = {
    "sin": {"sin", "cos"},
    "cos": {"sin", "cos"},
    "tanh": {"tanh", "sigmoid"},
    "sigmoid": {"tanh", "sigmoid"},
}

SIGMOID_FAMILY = frozenset({"arctan", "tanh", "sigmoid"})


def get_basis(name, library=None):
    lib = DEFAULT_LIBRARY if library is None else library
    try:
        return lib[name]
    except KeyError:
        raise UnknownBasisError(f"unknown basis_id {name!r}") from None


def equivalent(a, b):
    return a == b or b in EQUIVALENT.get(a, ())
