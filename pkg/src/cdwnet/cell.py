"""Single relaxation oscillators: the D-R and D-D circuits.

Both circuits have one state variable, the node voltage ``v`` across the
cell capacitance ``cap``.  Within a fixed combination of device states the
dynamics are linear::

    cap * dv/dt = b - G * v

so every branch relaxes exponentially toward ``v* = b / G``.  The D-R cell
has the MIT device on top (between ``v_dd`` and the node) and the series
resistor to ground; the D-D cell has device 1 on top and device 2 below.
Each device switches on its own terminal voltage: ``v_dd - v`` for the top
device, ``v`` for the bottom one.

Two right-hand sides are provided.  ``RhsModel.PAPER`` is the literal
piecewise form that drops the insulating leak on the charging/discharging
branches; ``RhsModel.EXACT`` keeps every branch conductance.  EXACT is the
default.

Time is measured in units of R0 times the capacitance unit, so with the
default ``cap = C0 = 0.01`` one t0 = R0*C0 equals 0.01 time units.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .device import (DeviceParams, DeviceState, conductance, initial_state,
                     transition)

__all__ = [
    "C0",
    "T0",
    "RhsModel",
    "DRConfig",
    "DDCellConfig",
    "CellState",
    "TransitionEvent",
    "Trace",
    "FixedPoint",
    "BranchDiagnostic",
    "OscillationReport",
    "PeriodInfo",
    "Segment",
    "NonOscillatingError",
    "dr_rhs",
    "dd_rhs",
    "fixed_points",
    "self_oscillation_check",
    "analytic_period",
    "simulate_cell",
    "default_initial_state",
    "stability_bound",
    "top_conductance",
    "dr_demo_config",
]

C0 = 0.01
T0 = 1.0 * C0

M = DeviceState.METALLIC
I = DeviceState.INSULATING


class RhsModel(str, Enum):
    PAPER = "paper"
    EXACT = "exact"


class NonOscillatingError(ValueError):
    """Raised when a configuration settles on a branch fixed point."""

    def __init__(self, message, branch=None, v_star=None):
        super().__init__(message)
        self.branch = branch
        self.v_star = v_star


@dataclass(frozen=True)
class DRConfig:
    device: DeviceParams = field(default_factory=DeviceParams)
    r_series: float = 1.0
    v_dd: float = 3.0
    cap: float = C0
    rhs_model: RhsModel = RhsModel.EXACT

    def __post_init__(self):
        object.__setattr__(self, "rhs_model", RhsModel(self.rhs_model))
        for name in ("r_series", "v_dd", "cap"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")

    @property
    def g_series(self) -> float:
        return 1.0 / self.r_series


@dataclass(frozen=True)
class DDCellConfig:
    device1: DeviceParams = field(default_factory=DeviceParams)
    device2: DeviceParams = field(default_factory=DeviceParams)
    v_dd: float = 3.0
    cap: float = C0
    rhs_model: RhsModel = RhsModel.EXACT

    def __post_init__(self):
        object.__setattr__(self, "rhs_model", RhsModel(self.rhs_model))
        for name in ("v_dd", "cap"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")


def dr_demo_config(**overrides) -> DRConfig:
    """D-R cell that self-oscillates: series resistance 2 R0, PAPER rhs.

    With the EXACT rhs the insulating leak holds the node at v* ~ 1.27 > v_l
    and the cell stops.
    """
    overrides.setdefault("r_series", 2.0)
    overrides.setdefault("rhs_model", RhsModel.PAPER)
    return DRConfig(**overrides)


@dataclass
class CellState:
    v: float
    state1: DeviceState
    state2: Optional[DeviceState] = None
    t: float = 0.0


class TransitionEvent(NamedTuple):
    t: float
    device: int
    new_state: DeviceState


@dataclass
class Trace:
    t: np.ndarray
    v: np.ndarray
    state1: np.ndarray
    state2: Optional[np.ndarray]
    events: list

    def __len__(self):
        return len(self.t)


class FixedPoint(NamedTuple):
    branch: str
    v_star: float
    stable: bool


class BranchDiagnostic(NamedTuple):
    branch: str
    v_star: float
    exit_level: float
    direction: str
    passes: bool


@dataclass(frozen=True)
class OscillationReport:
    oscillates: bool
    branches: tuple
    trapped_branch: Optional[str] = None

    def as_dict(self) -> dict:
        return {
            "oscillates": self.oscillates,
            "trapped_branch": self.trapped_branch,
            "branches": [b._asdict() for b in self.branches],
        }


class Segment(NamedTuple):
    states: tuple
    v_start: float
    v_end: float
    duration: float
    v_star: float
    rate: float


@dataclass(frozen=True)
class PeriodInfo:
    t_charge: float
    t_discharge: float
    period: float
    segments: tuple


# -- branch algebra --------------------------------------------------------

def _is_dd(cfg) -> bool:
    return isinstance(cfg, DDCellConfig)


def _branch_coefficients(cfg, s1, s2=None):
    """Return ``(b, G)`` with ``cap * dv/dt = b - G * v`` on this branch."""
    s1 = DeviceState(s1)
    if _is_dd(cfg):
        s2 = DeviceState(s2)
        g1m, g2m = cfg.device1.g_metallic, cfg.device2.g_metallic
        if cfg.rhs_model is RhsModel.PAPER:
            if (s1, s2) == (M, I):
                return cfg.v_dd * g1m, g1m
            if (s1, s2) == (I, M):
                return 0.0, g2m
        g1 = conductance(s1, cfg.device1)
        g2 = conductance(s2, cfg.device2)
        return cfg.v_dd * g1, g1 + g2
    gs = cfg.g_series
    if s1 is M:
        gd = cfg.device.g_metallic
        return cfg.v_dd * gd, gd + gs
    if cfg.rhs_model is RhsModel.PAPER:
        return 0.0, gs
    gd = cfg.device.g_insulating
    return cfg.v_dd * gd, gd + gs


def top_conductance(cfg, s1, s2=None) -> float:
    """Conductance of the branch between ``v_dd`` and the node.

    Follows the rhs model, so the PAPER discharge branch carries no supply
    current.
    """
    b, _ = _branch_coefficients(cfg, s1, s2)
    return b / cfg.v_dd


def _v_star(b, G):
    return b / G if G > 0 else math.nan


def dr_rhs(v: float, state: DeviceState, cfg: DRConfig) -> float:
    gs = cfg.g_series
    if DeviceState(state) is M:
        return ((cfg.v_dd - v) * cfg.device.g_metallic - v * gs) / cfg.cap
    if cfg.rhs_model is RhsModel.PAPER:
        return (-v * gs) / cfg.cap
    return ((cfg.v_dd - v) * cfg.device.g_insulating - v * gs) / cfg.cap


def dd_rhs(v: float, state1: DeviceState, state2: DeviceState,
           cfg: DDCellConfig) -> float:
    s1, s2 = DeviceState(state1), DeviceState(state2)
    if cfg.rhs_model is RhsModel.PAPER:
        if (s1, s2) == (M, I):
            return ((cfg.v_dd - v) * cfg.device1.g_metallic) / cfg.cap
        if (s1, s2) == (I, M):
            return (-v * cfg.device2.g_metallic) / cfg.cap
    g1 = conductance(s1, cfg.device1)
    g2 = conductance(s2, cfg.device2)
    return ((cfg.v_dd - v) * g1 - v * g2) / cfg.cap


def _main_branches(cfg):
    """(label, states, exit level, direction) for charge and discharge."""
    if _is_dd(cfg):
        d1, d2 = cfg.device1, cfg.device2
        up = min(cfg.v_dd - d1.v_low_threshold, d2.v_high_threshold)
        down = max(cfg.v_dd - d1.v_high_threshold, d2.v_low_threshold)
        return [("charging", (M, I), up, "up"),
                ("discharging", (I, M), down, "down")]
    d = cfg.device
    return [("metallic", (M,), cfg.v_dd - d.v_low_threshold, "up"),
            ("insulating", (I,), cfg.v_dd - d.v_high_threshold, "down")]


def fixed_points(cfg) -> list:
    """Per-branch equilibrium node voltage of the charge/discharge branches."""
    out = []
    for label, states, _, _ in _main_branches(cfg):
        b, G = _branch_coefficients(cfg, *states)
        out.append(FixedPoint(label, _v_star(b, G), G > 0))
    return out


def _apply_transitions(cfg, v, states):
    if _is_dd(cfg):
        s1 = transition(states[0], cfg.v_dd - v, cfg.device1)
        s2 = transition(states[1], v, cfg.device2)
        return (s1, s2)
    return (transition(states[0], cfg.v_dd - v, cfg.device),)


def _exit_levels(cfg, states):
    """Node voltages at which some device of the current branch toggles.

    Returns ``(rising_levels, falling_levels)``.
    """
    rising, falling = [], []
    top = cfg.device1 if _is_dd(cfg) else cfg.device
    if states[0] is M:
        rising.append(cfg.v_dd - top.v_low_threshold)
    else:
        falling.append(cfg.v_dd - top.v_high_threshold)
    if _is_dd(cfg):
        if states[1] is I:
            rising.append(cfg.device2.v_high_threshold)
        else:
            falling.append(cfg.device2.v_low_threshold)
    return rising, falling


def _branch_label(cfg, states):
    for label, st, _, _ in _main_branches(cfg):
        if tuple(st) == tuple(states):
            return label
    return "".join(s.short for s in states)


def _walk_cycle(cfg, max_segments=32):
    """Follow the closed-form branch sequence until it repeats.

    Raises :class:`NonOscillatingError` naming the branch that traps.
    """
    label, states, _, _ = _main_branches(cfg)[0]
    v = _main_branches(cfg)[1][2]
    states = _apply_transitions(cfg, v, states)
    seen = {}
    segments = []
    for _ in range(max_segments):
        key = (states, v)
        if key in seen:
            return segments[seen[key]:]
        seen[key] = len(segments)
        b, G = _branch_coefficients(cfg, *states)
        v_star = _v_star(b, G)
        rising, falling = _exit_levels(cfg, states)
        if G > 0 and v_star > v:
            reachable = [lv for lv in rising if v <= lv < v_star]
            level = min(reachable) if reachable else None
        elif G > 0 and v_star < v:
            reachable = [lv for lv in falling if v_star < lv <= v]
            level = max(reachable) if reachable else None
        else:
            level = None
        if level is None:
            name = _branch_label(cfg, states)
            raise NonOscillatingError(
                f"branch {name!r} settles at v*={v_star:.6g} before reaching "
                f"any switching level", branch=name, v_star=v_star)
        duration = (cfg.cap / G) * math.log((v_star - v) / (v_star - level))
        segments.append(Segment(states, v, level, duration, v_star, G / cfg.cap))
        v = level
        states = _apply_transitions(cfg, v, states)
    raise NonOscillatingError("branch sequence did not close", branch=None)


def self_oscillation_check(cfg) -> OscillationReport:
    """Load-line test: every branch must cross its exit level before settling.

    The charging-branch fixed point must lie above the switch-up level and
    the discharging one below the switch-down level.  A cycle that passes
    through a same-state transient branch is also followed; if that branch
    traps, the report names it.
    """
    diags = []
    for label, states, level, direction in _main_branches(cfg):
        b, G = _branch_coefficients(cfg, *states)
        v_star = _v_star(b, G)
        ok = (v_star > level) if direction == "up" else (v_star < level)
        diags.append(BranchDiagnostic(label, v_star, level, direction, bool(ok)))
    trapped = next((d.branch for d in diags if not d.passes), None)
    if trapped is None:
        try:
            _walk_cycle(cfg)
        except NonOscillatingError as exc:
            trapped = exc.branch or "unclosed"
    return OscillationReport(trapped is None, tuple(diags), trapped)


def analytic_period(cfg) -> PeriodInfo:
    """Closed-form period from the exponential branch segments.

    Raises :class:`NonOscillatingError` when a branch traps.
    """
    report = self_oscillation_check(cfg)
    if not report.oscillates:
        raise NonOscillatingError(
            f"configuration does not oscillate: branch {report.trapped_branch!r} traps",
            branch=report.trapped_branch)
    segments = _walk_cycle(cfg)
    t_charge = sum(s.duration for s in segments if s.v_end > s.v_start)
    t_discharge = sum(s.duration for s in segments if s.v_end < s.v_start)
    return PeriodInfo(t_charge, t_discharge, t_charge + t_discharge,
                      tuple(segments))


def default_initial_state(cfg, v: float, t: float = 0.0) -> CellState:
    """Device states consistent with ``v``; inside the window, charging."""
    if _is_dd(cfg):
        s1 = initial_state(cfg.v_dd - v, cfg.device1, M)
        s2 = initial_state(v, cfg.device2, I)
        return CellState(v, s1, s2, t)
    return CellState(v, initial_state(cfg.v_dd - v, cfg.device, M), None, t)


def stability_bound(cfg) -> float:
    """Largest explicit step, ``2 * cap / g_max`` over all branches."""
    if _is_dd(cfg):
        combos = [(a, b) for a in (I, M) for b in (I, M)]
    else:
        combos = [(I,), (M,)]
    g_max = max(_branch_coefficients(cfg, *c)[1] for c in combos)
    return 2.0 * cfg.cap / g_max


def simulate_cell(cfg, duration: float, initial: Optional[CellState] = None,
                  dt: Optional[float] = None, bisect: bool = True,
                  rel_tol: float = 1e-10) -> Trace:
    """Integrate one cell with threshold-crossing event detection.

    Each step advances on the closed-form exponential of the current branch.
    When the step end would toggle a device, the crossing instant is found
    by bisection on that exponential to ``rel_tol * dt``, the states toggle
    there and the rest of the step is integrated on the new branch.  With
    ``bisect=False`` the toggle is applied at the step end instead, which
    makes the period error O(dt).

    The trace holds one sample per step plus one sample at every transition
    instant (recorded with the post-transition states).
    """
    dt = 1e-3 * cfg.cap if dt is None else dt
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    bound = stability_bound(cfg)
    if dt >= bound:
        raise ValueError(f"dt={dt} exceeds the stability bound {bound}")
    if initial is None:
        initial = default_initial_state(cfg, 0.5 * cfg.v_dd)
    dd = _is_dd(cfg)
    states = (initial.state1, initial.state2) if dd else (initial.state1,)
    states = tuple(DeviceState(s) for s in states)
    v = float(initial.v)
    t0 = float(initial.t)
    if not math.isfinite(v):
        raise FloatingPointError("initial voltage is not finite")

    ts, vs, s1s, s2s = [t0], [v], [int(states[0])], [int(states[-1])]
    events = []

    def record(t, v, states):
        if t <= ts[-1]:
            ts.pop(); vs.pop(); s1s.pop(); s2s.pop()
        ts.append(t)
        vs.append(v)
        s1s.append(int(states[0]))
        s2s.append(int(states[-1]))

    def toggle(t, v, states):
        new = _apply_transitions(cfg, v, states)
        for k, (a, b) in enumerate(zip(states, new)):
            if a != b:
                events.append(TransitionEvent(t, k + 1, b))
        return new

    n_steps = int(math.floor(duration / dt + 1e-9)) if duration > 0 else 0
    t_targets = [t0 + k * dt for k in range(1, n_steps + 1)]
    if duration > 0 and t0 + duration - (t_targets[-1] if t_targets else t0) > 1e-12 * dt:
        t_targets.append(t0 + duration)

    t = t0
    for t_end in t_targets:
        while True:
            b, G = _branch_coefficients(cfg, *states)
            tau = t_end - t
            if G > 0:
                v_star = b / G
                rate = G / cfg.cap

                def advance(s, v=v, v_star=v_star, rate=rate):
                    return v_star + (v - v_star) * math.exp(-rate * s)
            else:
                slope = b / cfg.cap

                def advance(s, v=v, slope=slope):
                    return v + slope * s
            v_end = advance(tau)
            if not math.isfinite(v_end):
                raise FloatingPointError(f"non-finite voltage at t={t_end}")
            fires = _apply_transitions(cfg, v_end, states) != states
            if not fires:
                v, t = v_end, t_end
                break
            if not bisect:
                v, t = v_end, t_end
                states = toggle(t, v, states)
                break
            lo, hi = 0.0, tau
            tol = rel_tol * dt
            while hi - lo > tol:
                mid = 0.5 * (lo + hi)
                if mid <= lo or mid >= hi:
                    break
                if _apply_transitions(cfg, advance(mid), states) != states:
                    hi = mid
                else:
                    lo = mid
            v = advance(hi)
            t = t + hi if hi < tau else t_end
            states = toggle(t, v, states)
            if t >= t_end:
                break
            record(t, v, states)
        record(t, v, states)

    return Trace(np.array(ts), np.array(vs), np.array(s1s, dtype=np.uint8),
                 np.array(s2s, dtype=np.uint8) if dd else None, events)
