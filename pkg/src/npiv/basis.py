"""Trigonometric basis on [0, 1] and weighted coefficient arithmetic.

The basis is the usual real Fourier system indexed from 1: the constant
function first, then cosine/sine pairs of increasing frequency.  Weight
sequences attach a positive weight to each basis index and are the common
currency for smoothness classes, operator decay and risk norms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SQRT2 = math.sqrt(2.0)

# Smallest positive double.  Exponential-decay weights underflow past index
# ~27 at a = 1; saturating there keeps every weight strictly positive while
# downstream ratios harmlessly overflow to inf.
_TINY = np.nextafter(0.0, 1.0)

_PARAM_KINDS = ("sobolev", "derivative", "polynomial_decay", "exponential_decay")
_ALL_KINDS = ("constant", "custom") + _PARAM_KINDS


def frequency(j: int) -> int:
    """Frequency of basis index ``j`` (0 for the constant)."""
    return j // 2


def trig_eval(j: int, s: float) -> float:
    """Evaluate the ``j``-th basis function at a point ``s`` in [0, 1].

    Index 1 is the constant 1; even indices are sqrt(2)*cos(2*pi*f*s) and
    odd indices sqrt(2)*sin(2*pi*f*s) with f = j // 2.
    """
    if j < 1:
        raise ValueError(f"basis index must be >= 1, got {j}")
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"evaluation point must lie in [0, 1], got {s}")
    if j == 1:
        return 1.0
    ang = 2.0 * math.pi * (j // 2) * s
    return SQRT2 * math.cos(ang) if j % 2 == 0 else SQRT2 * math.sin(ang)


def trig_columns(points: np.ndarray, indices: np.ndarray) -> np.ndarray:
    """Evaluate selected basis functions at ``points``; shape (n, len(indices))."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 1:
        raise ValueError("points must be one-dimensional")
    if pts.size and (pts.min() < 0.0 or pts.max() > 1.0):
        raise ValueError("evaluation points must lie in [0, 1]")
    idx = np.asarray(indices, dtype=int)
    out = np.empty((pts.size, idx.size))
    # Column-at-a-time so each column's arithmetic is independent of which
    # other columns were requested; prefixes of larger designs then match
    # smaller designs bit for bit.
    for pos, j in enumerate(idx):
        if j < 1:
            raise ValueError(f"basis index must be >= 1, got {j}")
        if j == 1:
            out[:, pos] = 1.0
        else:
            ang = (2.0 * math.pi * (j // 2)) * pts
            out[:, pos] = SQRT2 * (np.cos(ang) if j % 2 == 0 else np.sin(ang))
    return out


def trig_design(points: np.ndarray, k: int) -> np.ndarray:
    """Design matrix of the first ``k`` basis functions at ``points``."""
    if k < 1:
        raise ValueError(f"design width must be >= 1, got {k}")
    return trig_columns(points, np.arange(1, k + 1))


def evaluate_coeffs(coeffs: np.ndarray, points) -> np.ndarray | float:
    """Evaluate the series with coefficient vector ``coeffs`` at ``points``."""
    c = np.asarray(coeffs, dtype=float)
    scalar = np.isscalar(points) or np.ndim(points) == 0
    pts = np.atleast_1d(np.asarray(points, dtype=float))
    vals = trig_design(pts, c.size) @ c if c.size else np.zeros(pts.size)
    return float(vals[0]) if scalar else vals


@dataclass(frozen=True)
class WeightSequence:
    """Strictly positive weights w_1, w_2, ... evaluated lazily by index.

    Built-in kinds are normalised so that w_1 = 1.  ``sobolev(r)`` and
    ``derivative(s)`` grow like j**(2r) and j**(2s); ``polynomial_decay(a)``
    falls like j**(-2a) and ``exponential_decay(a)`` like exp(-j**(2a)).
    ``custom`` wraps an explicit table and only covers its own length.
    """

    kind: str
    param: float | None = None
    table: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.kind not in _ALL_KINDS:
            raise ValueError(f"unknown weight kind {self.kind!r}")
        if self.kind in _PARAM_KINDS:
            if self.param is None:
                raise ValueError(f"weight kind {self.kind!r} needs a parameter")
            if self.kind in ("polynomial_decay", "exponential_decay") and self.param <= 0:
                raise ValueError("decay exponent must be positive")
            if self.kind in ("sobolev", "derivative") and self.param < 0:
                raise ValueError("growth exponent must be nonnegative")
        if self.kind == "custom":
            if not self.table:
                raise ValueError("custom weights need a nonempty table")
            if any(not math.isfinite(v) or v <= 0 for v in self.table):
                raise ValueError("custom weights must be finite and strictly positive")

    # -- constructors -----------------------------------------------------

    @classmethod
    def constant(cls) -> "WeightSequence":
        return cls("constant")

    @classmethod
    def sobolev(cls, r: float) -> "WeightSequence":
        return cls("sobolev", param=float(r))

    @classmethod
    def derivative(cls, s: float) -> "WeightSequence":
        return cls("derivative", param=float(s))

    @classmethod
    def polynomial_decay(cls, a: float) -> "WeightSequence":
        return cls("polynomial_decay", param=float(a))

    @classmethod
    def exponential_decay(cls, a: float) -> "WeightSequence":
        return cls("exponential_decay", param=float(a))

    @classmethod
    def custom(cls, values) -> "WeightSequence":
        return cls("custom", table=tuple(float(v) for v in values))

    # -- evaluation -------------------------------------------------------

    def values(self, k: int) -> np.ndarray:
        """The first ``k`` weights as an array."""
        if k < 0:
            raise ValueError(f"requested length must be >= 0, got {k}")
        if k == 0:
            return np.empty(0)
        if self.kind == "custom":
            if k > len(self.table):
                raise ValueError(
                    f"custom weight table has {len(self.table)} entries, index {k} requested"
                )
            return np.array(self.table[:k], dtype=float)
        j = np.arange(1, k + 1, dtype=float)
        if self.kind == "constant":
            return np.ones(k)
        if self.kind in ("sobolev", "derivative"):
            w = j ** (2.0 * self.param)
        elif self.kind == "polynomial_decay":
            w = j ** (-2.0 * self.param)
        else:  # exponential_decay
            w = np.maximum(np.exp(-(j ** (2.0 * self.param))), _TINY)
        w[0] = 1.0
        return w

    def value(self, j: int) -> float:
        if j < 1:
            raise ValueError(f"weight index must be >= 1, got {j}")
        if self.kind == "custom":
            if j > len(self.table):
                raise ValueError(
                    f"custom weight table has {len(self.table)} entries, index {j} requested"
                )
            return self.table[j - 1]
        return float(self.values(j)[-1])

    __call__ = value


def parse_weights(spec: str) -> WeightSequence:
    """Parse a command-line weight description.

    Accepted forms: ``const``, ``sobolev:R``, ``derivative:S``, ``poly:A``,
    ``exp:A`` and ``custom:V1,V2,...``.
    """
    name, _, arg = spec.strip().partition(":")
    name = name.lower()
    try:
        if name in ("const", "constant"):
            if arg:
                raise ValueError("constant weights take no parameter")
            return WeightSequence.constant()
        if name == "custom":
            return WeightSequence.custom(float(v) for v in arg.split(","))
        if not arg:
            raise ValueError(f"weight kind {name!r} needs a parameter, e.g. {name}:1")
        if name == "sobolev":
            return WeightSequence.sobolev(float(arg))
        if name in ("derivative", "deriv"):
            return WeightSequence.derivative(float(arg))
        if name in ("poly", "polynomial"):
            return WeightSequence.polynomial_decay(float(arg))
        if name in ("exp", "exponential"):
            return WeightSequence.exponential_decay(float(arg))
    except ValueError as exc:
        raise ValueError(f"bad weight spec {spec!r}: {exc}") from None
    raise ValueError(f"bad weight spec {spec!r}: unknown kind {name!r}")


def weighted_norm_sq(coeffs: np.ndarray, weights: WeightSequence) -> float:
    """Weighted squared norm sum_j w_j c_j**2 of a coefficient vector."""
    c = np.asarray(coeffs, dtype=float)
    if c.ndim != 1:
        raise ValueError("coefficient vector must be one-dimensional")
    if c.size == 0:
        return 0.0
    return float(np.dot(weights.values(c.size), c * c))


def in_ellipsoid(coeffs: np.ndarray, weights: WeightSequence, radius: float) -> bool:
    """Whether the weighted squared norm of ``coeffs`` is at most ``radius``."""
    if not radius > 0:
        raise ValueError(f"ellipsoid radius must be positive, got {radius}")
    return weighted_norm_sq(coeffs, weights) <= radius
