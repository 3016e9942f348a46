"""Mutable-by-copy bound state driving relaxation tightness."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .envelopes import trig_bounds
from .errors import InvalidBounds
from .network import NetworkCase

__all__ = ["VariableBounds"]


@dataclass(frozen=True)
class VariableBounds:
    """Voltage-magnitude boxes per bus and angle-difference windows per branch.

    Trig and product ranges are derived on demand so they always match
    the current windows.
    """

    v_min: np.ndarray
    v_max: np.ndarray
    theta_min: np.ndarray
    theta_max: np.ndarray

    def __post_init__(self):
        if np.any(self.v_min > self.v_max + 1e-15):
            raise InvalidBounds("v_min exceeds v_max")
        if np.any(self.v_min <= 0):
            raise InvalidBounds("voltage lower bounds must be positive")
        if np.any(self.theta_min > self.theta_max + 1e-15):
            raise InvalidBounds("theta_min exceeds theta_max")
        half_pi = math.pi / 2
        if np.any(self.theta_min <= -half_pi) or np.any(self.theta_max >= half_pi):
            raise InvalidBounds("angle windows must stay inside (-pi/2, pi/2)")

    @classmethod
    def from_case(cls, case: NetworkCase) -> "VariableBounds":
        return cls(
            v_min=np.array([b.V_min for b in case.buses], dtype=float),
            v_max=np.array([b.V_max for b in case.buses], dtype=float),
            theta_min=np.array([br.theta_min for br in case.branches], dtype=float),
            theta_max=np.array([br.theta_max for br in case.branches], dtype=float),
        )

    def shifted_window(self, case: NetworkCase, k: int) -> tuple[float, float]:
        """Angle window of branch k expressed on the shifted angle."""
        br = case.branches[k]
        return self.theta_min[k] - br.shift, self.theta_max[k] - br.shift

    def trig(self, case: NetworkCase, k: int) -> tuple[float, float, float, float]:
        lo, hi = self.shifted_window(case, k)
        return trig_bounds(lo, hi)

    def copy(self) -> "VariableBounds":
        return VariableBounds(
            v_min=self.v_min.copy(), v_max=self.v_max.copy(),
            theta_min=self.theta_min.copy(), theta_max=self.theta_max.copy(),
        )

    def widths(self) -> np.ndarray:
        return np.concatenate([self.v_max - self.v_min, self.theta_max - self.theta_min])

    def max_change_from(self, other: "VariableBounds") -> float:
        """Largest componentwise bound movement between two states."""
        return max(
            np.max(np.abs(self.v_min - other.v_min), initial=0.0),
            np.max(np.abs(self.v_max - other.v_max), initial=0.0),
            np.max(np.abs(self.theta_min - other.theta_min), initial=0.0),
            np.max(np.abs(self.theta_max - other.theta_max), initial=0.0),
        )

    def contained_in(self, other: "VariableBounds", slack: float = 1e-12) -> bool:
        return bool(
            np.all(self.v_min >= other.v_min - slack)
            and np.all(self.v_max <= other.v_max + slack)
            and np.all(self.theta_min >= other.theta_min - slack)
            and np.all(self.theta_max <= other.theta_max + slack)
        )

    def to_dict(self) -> dict:
        return {
            "v_min": [float(v) for v in self.v_min],
            "v_max": [float(v) for v in self.v_max],
            "theta_min": [float(v) for v in self.theta_min],
            "theta_max": [float(v) for v in self.theta_max],
        }
