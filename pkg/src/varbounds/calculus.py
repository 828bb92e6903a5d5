"""Multi-index combinatorics, central finite differences, and moments of
canonical exponential families obtained from their moment-generating function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product as _cartesian
from typing import Callable, Iterable, Mapping

import numpy as np

from .errors import NaturalSpaceError, StencilError

#: Highest derivative order supported by the finite-difference path.  Central
#: differences beyond this lose essentially all significant digits in float64.
MAX_FD_ORDER = 4


class MultiIndex(tuple):
    """Vector of nonnegative integer derivative orders.

    Behaves like a plain tuple (hashable, compares equal to tuples with the
    same entries) and adds the componentwise operations used for derivative
    bookkeeping.
    """

    def __new__(cls, entries: Iterable[int]) -> "MultiIndex":
        vals = []
        for e in entries:
            i = int(e)
            if i != e:
                raise ValueError(f"multi-index entry {e!r} is not an integer")
            if i < 0:
                raise ValueError(f"multi-index entry {i} is negative")
            vals.append(i)
        return super().__new__(cls, vals)

    @property
    def order(self) -> int:
        return sum(self)

    def plus(self, other: "MultiIndex") -> "MultiIndex":
        return MultiIndex(a + b for a, b in zip(self, other, strict=True))

    def minus(self, other: "MultiIndex") -> "MultiIndex":
        return MultiIndex(a - b for a, b in zip(self, other, strict=True))

    def dominates(self, other: "MultiIndex") -> bool:
        """True iff self >= other componentwise."""
        return len(self) == len(other) and all(a >= b for a, b in zip(self, other))

    @classmethod
    def zero(cls, dim: int) -> "MultiIndex":
        return cls((0,) * dim)

    @classmethod
    def unit(cls, dim: int, axis: int) -> "MultiIndex":
        return cls(tuple(1 if k == axis else 0 for k in range(dim)))


def as_index(p, dim: int | None = None) -> MultiIndex:
    """Coerce an int or an iterable of ints to a MultiIndex, checking length."""
    if isinstance(p, MultiIndex):
        idx = p
    elif isinstance(p, (int, np.integer)):
        idx = MultiIndex((p,))
    else:
        idx = MultiIndex(p)
    if dim is not None and len(idx) != dim:
        raise ValueError(f"multi-index {tuple(idx)} has length {len(idx)}, expected {dim}")
    return idx


def multi_indices_leq(p) -> list[MultiIndex]:
    """All multi-indices q with q <= p componentwise, in lexicographic order."""
    p = as_index(p)
    return [MultiIndex(q) for q in _cartesian(*(range(k + 1) for k in p))]


def multi_binomial(p, q) -> int:
    """Product of componentwise binomial coefficients C(p_k, q_k)."""
    p = as_index(p)
    q = as_index(q, dim=len(p))
    if not p.dominates(q):
        raise ValueError(f"multi-index {tuple(q)} is not componentwise <= {tuple(p)}")
    out = 1
    for pk, qk in zip(p, q):
        out *= math.comb(pk, qk)
    return out


@dataclass(frozen=True)
class FDConfig:
    """Central-difference configuration: one spacing shared by every axis."""

    step: float
    scheme: str = "central_2nd_order"

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError(f"step must be positive, got {self.step}")
        if self.scheme != "central_2nd_order":
            raise ValueError(f"unknown scheme {self.scheme!r}")


# Central stencils of second-order accuracy; offsets are in units of the step.
_STENCILS: dict[int, tuple[tuple[int, ...], tuple[float, ...]]] = {
    0: ((0,), (1.0,)),
    1: ((-1, 1), (-0.5, 0.5)),
    2: ((-1, 0, 1), (1.0, -2.0, 1.0)),
    3: ((-2, -1, 1, 2), (-0.5, 1.0, -1.0, 0.5)),
    4: ((-2, -1, 0, 1, 2), (1.0, -4.0, 6.0, -4.0, 1.0)),
}


def default_steps(x0: np.ndarray, p: MultiIndex) -> np.ndarray:
    """Per-axis spacing scaled by max(1, |x0_k|): 1e-4 through total order
    two, 1e-3 for orders three and four.  The wider step for high orders
    keeps float64 rounding error (which grows like eps / prod(step^p_k))
    below the truncation error."""
    scale = np.maximum(1.0, np.abs(np.asarray(x0, dtype=float)))
    base = 1e-4 if as_index(p).order <= 2 else 1e-3
    return base * scale


def partial_derivative(f: Callable[[np.ndarray], float], x0, p,
                       cfg: FDConfig | None = None) -> float:
    """Mixed partial derivative of order p at x0 by tensor-product central
    differences, accurate to O(step^2) per differentiated axis.

    Total order is capped at MAX_FD_ORDER.  Non-finite values of f on the
    stencil raise StencilError naming the failing point.
    """
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    p = as_index(p, dim=x0.size)
    if p.order > MAX_FD_ORDER:
        raise ValueError(f"derivative order {p.order} exceeds cap {MAX_FD_ORDER}")

    if p.order == 0:
        val = float(f(x0))
        if not math.isfinite(val):
            raise StencilError(x0, val)
        return val

    steps = np.full(x0.size, cfg.step) if cfg is not None else default_steps(x0, p)

    axis_offsets = []
    axis_coeffs = []
    for k, order in enumerate(p):
        offs, coeffs = _STENCILS[order]
        axis_offsets.append(offs)
        # fold the 1/h^order normalization into the coefficients
        axis_coeffs.append(tuple(c / steps[k] ** order for c in coeffs))

    total = 0.0
    for combo in _cartesian(*(range(len(o)) for o in axis_offsets)):
        point = x0.copy()
        weight = 1.0
        for k, j in enumerate(combo):
            point[k] += axis_offsets[k][j] * steps[k]
            weight *= axis_coeffs[k][j]
        val = float(f(point))
        if not math.isfinite(val):
            raise StencilError(point, val)
        total += weight * val
    return total


def moment(model, x, p, cfg: FDConfig | None = None) -> float:
    """E_x{phi^p(y)}, the raw moment of the sufficient statistic.

    Uses the model's closed-form moments when available; otherwise central
    finite differences of the normalized moment-generating function, which
    requires p.order <= MAX_FD_ORDER and every stencil point inside the
    natural parameter space.
    """
    x = np.asarray(x, dtype=float)
    p = as_index(p, dim=model.param_dim)
    if p.order == 0:
        return 1.0
    if model.closed_moments is not None:
        return float(model.closed_moments(x, p))

    ll0 = float(model.log_lambda(x))
    if not math.isfinite(ll0):
        raise NaturalSpaceError(x)

    def normalized_mgf(z: np.ndarray) -> float:
        llz = float(model.log_lambda(z))
        if not math.isfinite(llz):
            raise NaturalSpaceError(z, context="finite-difference stencil point")
        return math.exp(llz - ll0)

    return partial_derivative(normalized_mgf, x, p, cfg)


def moment_table(model, x, cap, cfg: FDConfig | None = None) -> dict[MultiIndex, float]:
    """Raw moments E_x{phi^q} for every q <= cap componentwise."""
    cap = as_index(cap, dim=model.param_dim)
    return {q: moment(model, x, q, cfg) for q in multi_indices_leq(cap)}


def reciprocal_series(moments: Mapping[MultiIndex, float], cap) -> dict[MultiIndex, float]:
    """Scaled derivatives of the reciprocal moment-generating function.

    Returns nu_q = lambda(x) * d^q (1/lambda) / dx^q for q <= cap, computed
    from raw moments by inverting the Leibniz identity for lambda * (1/lambda) = 1.
    """
    cap = as_index(cap)
    zero = MultiIndex.zero(len(cap))
    nu: dict[MultiIndex, float] = {}
    for q in multi_indices_leq(cap):
        if q == zero:
            nu[q] = 1.0
            continue
        acc = 0.0
        for r in multi_indices_leq(q):
            if r == q:
                continue
            acc += multi_binomial(q, r) * nu[r] * moments[q.minus(r)]
        nu[q] = -acc
    return nu
