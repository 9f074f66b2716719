"""Two-state hysteretic metal-insulator-transition (MIT) device.

The device is a resistor with two values, ``r_high`` in the insulating
state and ``r_low`` in the metallic state.  It switches to metallic when the
voltage across it reaches ``v_high_threshold`` and back to insulating when the
voltage falls to ``v_low_threshold``.  Both comparisons are inclusive.

All quantities are in normalized units: resistances in R0, voltages in V0,
currents in I0 = V0/R0.

Scalar helpers return :class:`DeviceState`; the ``*_array`` variants work on
numpy arrays of 0/1 state codes and are what the integrators use.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

__all__ = [
    "DeviceState",
    "DeviceParams",
    "conductance",
    "transition",
    "device_current",
    "conductance_array",
    "transition_array",
    "initial_state",
]


class DeviceState(IntEnum):
    INSULATING = 0
    METALLIC = 1

    @property
    def short(self) -> str:
        return "I" if self is DeviceState.INSULATING else "M"


@dataclass(frozen=True)
class DeviceParams:
    """Resistances and switching thresholds of one MIT device.

    ``r_high`` may be ``math.inf`` to model an insulating state with no leak.
    """

    r_high: float = 2.73
    r_low: float = 0.67
    v_low_threshold: float = 1.0
    v_high_threshold: float = 2.0

    def __post_init__(self):
        if not (self.r_low > 0):
            raise ValueError(f"r_low must be positive, got {self.r_low}")
        if not (self.r_high > self.r_low):
            raise ValueError(
                f"r_high ({self.r_high}) must exceed r_low ({self.r_low})")
        if not (0 < self.v_low_threshold < self.v_high_threshold):
            raise ValueError(
                "thresholds must satisfy 0 < v_low_threshold < v_high_threshold, "
                f"got v_low_threshold={self.v_low_threshold}, "
                f"v_high_threshold={self.v_high_threshold}")
        if not math.isfinite(self.v_high_threshold):
            raise ValueError("v_high_threshold must be finite")

    @property
    def g_insulating(self) -> float:
        return 0.0 if math.isinf(self.r_high) else 1.0 / self.r_high

    @property
    def g_metallic(self) -> float:
        return 1.0 / self.r_low


def conductance(state: DeviceState, params: DeviceParams) -> float:
    if DeviceState(state) is DeviceState.METALLIC:
        return params.g_metallic
    return params.g_insulating


def transition(state: DeviceState, v_device: float,
               params: DeviceParams) -> DeviceState:
    """Apply the hysteresis map to ``state`` at the device voltage ``v_device``.

    Insulating -> Metallic iff ``v_device >= v_high_threshold``;
    Metallic -> Insulating iff ``v_device <= v_low_threshold``; otherwise the
    state is kept.
    """
    state = DeviceState(state)
    if state is DeviceState.INSULATING and v_device >= params.v_high_threshold:
        return DeviceState.METALLIC
    if state is DeviceState.METALLIC and v_device <= params.v_low_threshold:
        return DeviceState.INSULATING
    return state


def device_current(state: DeviceState, v_device: float,
                   params: DeviceParams) -> float:
    return v_device * conductance(state, params)


def conductance_array(states: np.ndarray, params: DeviceParams) -> np.ndarray:
    return np.where(np.asarray(states, dtype=bool),
                    params.g_metallic, params.g_insulating)


def transition_array(states: np.ndarray, v_device: np.ndarray,
                     params: DeviceParams) -> np.ndarray:
    """Vectorized :func:`transition` on 0/1 state codes."""
    states = np.asarray(states, dtype=np.uint8)
    v_device = np.asarray(v_device, dtype=float)
    up = (states == 0) & (v_device >= params.v_high_threshold)
    down = (states == 1) & (v_device <= params.v_low_threshold)
    out = states.copy()
    out[up] = 1
    out[down] = 0
    return out


def initial_state(v_device: float, params: DeviceParams,
                  inside: DeviceState) -> DeviceState:
    """State consistent with ``v_device``; ``inside`` is used in the window.

    Voltages exactly at a threshold resolve to the post-transition state.
    """
    if v_device >= params.v_high_threshold:
        return DeviceState.METALLIC
    if v_device <= params.v_low_threshold:
        return DeviceState.INSULATING
    return DeviceState(inside)
