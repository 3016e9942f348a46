"""Convex envelopes for squares, bilinear products, and trig terms.

Each generator returns plain linear cuts over named variables plus, where
needed, a marker for the one conic cut (the ``w >= x**2`` side of the
square hull and the quadratic upper cut of the cosine). Cuts use the
convention ``sum_i coeff_i * var_i <= rhs``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import BoundsOutOfRange

__all__ = [
    "LinearCut",
    "trig_bounds",
    "square_envelope",
    "mccormick",
    "sin_envelope",
    "cos_envelope",
    "cos_quadratic_coeff",
]

HALF_PI = math.pi / 2.0


@dataclass(frozen=True)
class LinearCut:
    """Inequality ``sum(coeffs[v] * v) <= rhs``."""

    coeffs: dict[str, float]
    rhs: float

    def violation(self, values: dict[str, float]) -> float:
        lhs = sum(c * values[v] for v, c in self.coeffs.items())
        return lhs - self.rhs


def trig_bounds(theta_min: float, theta_max: float) -> tuple[float, float, float, float]:
    """Sine and cosine ranges over an angle window inside (-pi/2, pi/2).

    Returns ``(s_lo, s_hi, c_lo, c_hi)``. The cosine maximum is 1 when
    the window straddles zero, otherwise the larger endpoint cosine.
    """
    if not (-HALF_PI < theta_min <= theta_max < HALF_PI):
        raise BoundsOutOfRange(f"angle window [{theta_min}, {theta_max}] outside (-pi/2, pi/2)")
    s_lo, s_hi = math.sin(theta_min), math.sin(theta_max)
    c_lo = min(math.cos(theta_min), math.cos(theta_max))
    if theta_min * theta_max >= 0:
        c_hi = max(math.cos(theta_min), math.cos(theta_max))
    else:
        c_hi = 1.0
    return s_lo, s_hi, c_lo, c_hi


def square_envelope(x_min: float, x_max: float, x: str = "x", w: str = "w") -> list[LinearCut]:
    """Upper (chord) side of the convex hull of ``w = x**2``.

    The lower side ``w >= x**2`` is conic and is emitted by the program
    builder as a second-order cone; only the linear chord is returned:
    ``w <= (x_max + x_min) x - x_max x_min``.
    """
    if x_min > x_max:
        raise BoundsOutOfRange(f"square envelope needs x_min <= x_max, got [{x_min}, {x_max}]")
    return [LinearCut({w: 1.0, x: -(x_max + x_min)}, -x_max * x_min)]


def mccormick(
    x_min: float, x_max: float, y_min: float, y_max: float,
    x: str = "x", y: str = "y", z: str = "z",
) -> list[LinearCut]:
    """Four-inequality convex hull of the bilinear product ``z = x y``.

    Exact at the four corners of the box; a degenerate factor interval
    collapses the hull onto the line ``z = x_fixed * y``.
    """
    if not (math.isfinite(x_min) and math.isfinite(x_max)
            and math.isfinite(y_min) and math.isfinite(y_max)):
        raise BoundsOutOfRange("mccormick requires finite bounds on both factors")
    return [
        # z >= x_lo y + y_lo x - x_lo y_lo
        LinearCut({z: -1.0, y: x_min, x: y_min}, x_min * y_min),
        # z >= x_hi y + y_hi x - x_hi y_hi
        LinearCut({z: -1.0, y: x_max, x: y_max}, x_max * y_max),
        # z <= x_lo y + y_hi x - x_lo y_hi
        LinearCut({z: 1.0, y: -x_min, x: -y_max}, -x_min * y_max),
        # z <= x_hi y + y_lo x - x_hi y_lo
        LinearCut({z: 1.0, y: -x_max, x: -y_min}, -x_max * y_min),
    ]


def sin_envelope(theta_min: float, theta_max: float,
                 x: str = "th", s: str = "S") -> list[LinearCut]:
    """Convex envelope cuts for ``S = sin(x)`` over the angle window.

    Always emits the two tangent cuts at ``+/- x_m / 2`` where
    ``x_m = max(|lo|, |hi|)``; adds the chord as a lower cut when the
    window is nonnegative and as an upper cut when it is nonpositive.
    """
    if not (-HALF_PI < theta_min <= theta_max < HALF_PI):
        raise BoundsOutOfRange(f"angle window [{theta_min}, {theta_max}] outside (-pi/2, pi/2)")
    xm = max(abs(theta_min), abs(theta_max))
    cuts: list[LinearCut] = []
    if xm > 0:
        ch, sh = math.cos(xm / 2.0), math.sin(xm / 2.0)
        # S <= cos(xm/2) (x - xm/2) + sin(xm/2)
        cuts.append(LinearCut({s: 1.0, x: -ch}, -ch * xm / 2.0 + sh))
        # S >= cos(xm/2) (x + xm/2) - sin(xm/2)
        cuts.append(LinearCut({s: -1.0, x: ch}, ch * xm / 2.0 + sh))
    if theta_max > theta_min:
        slope = (math.sin(theta_min) - math.sin(theta_max)) / (theta_min - theta_max)
        intercept = math.sin(theta_min) - slope * theta_min
        if theta_min >= 0:
            # concave side: chord is a lower bound
            cuts.append(LinearCut({s: -1.0, x: slope}, intercept))
        elif theta_max <= 0:
            # convex side: chord is an upper bound
            cuts.append(LinearCut({s: 1.0, x: -slope}, -intercept))
    return cuts


def cos_quadratic_coeff(theta_min: float, theta_max: float) -> float:
    """Coefficient k of the conic cosine cut ``C <= 1 - k x**2``."""
    xm = max(abs(theta_min), abs(theta_max))
    if xm == 0:
        return 0.0
    return (1.0 - math.cos(xm)) / (xm * xm)


def cos_envelope(theta_min: float, theta_max: float,
                 x: str = "th", c: str = "C") -> list[LinearCut]:
    """Linear part of the cosine envelope: the chord lower cut.

    The quadratic upper cut ``C <= 1 - k x**2`` is conic; its
    coefficient comes from :func:`cos_quadratic_coeff` and the program
    builder emits it as a second-order cone (or ``C <= 1`` when the
    window degenerates to a point).
    """
    if not (-HALF_PI < theta_min <= theta_max < HALF_PI):
        raise BoundsOutOfRange(f"angle window [{theta_min}, {theta_max}] outside (-pi/2, pi/2)")
    cuts: list[LinearCut] = []
    if theta_max > theta_min:
        slope = (math.cos(theta_min) - math.cos(theta_max)) / (theta_min - theta_max)
        intercept = math.cos(theta_min) - slope * theta_min
        # C >= slope x + intercept
        cuts.append(LinearCut({c: -1.0, x: slope}, intercept))
    return cuts
