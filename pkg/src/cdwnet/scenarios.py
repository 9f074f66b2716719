"""Declarative network experiments.

A :class:`Scenario` bundles a coupling map, an initial condition, a list of
reconfiguration events and the run length.  Three built-in templates cover
the standard experiments:

* ``vortex``: a capacitive (Off) disk inside a resistive (On) grid, seeded
  with a small checkerboard so the disk leaves the in-phase state.
* ``wave``: the same map with every cell exactly in phase except one seed
  cell placed at the anti-phase point of the cycle.
* ``life``: Conway's rules played on an alive/dead phase classification,
  either driven by the rules each generation or by scripted events only.

Cells are 1-based ``(x, y)`` tuples as in :mod:`cdwnet.lattice`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

from .analysis import local_antiphase, live_phases
from .cell import C0, T0, DDCellConfig, analytic_period
from .lattice import (
    CouplingParams,
    EdgeMode,
    EventLogObserver,
    Lattice,
    NetworkSimulator,
    NetworkState,
    SnapshotObserver,
    build_lattice,
    run,
)

__all__ = [
    "Disk",
    "Rect",
    "Cells",
    "Whole",
    "AtTime",
    "PhaseCondition",
    "SetEdgeModes",
    "SetCellVoltage",
    "FlipPhase",
    "Event",
    "InitialCondition",
    "Scenario",
    "ScenarioResult",
    "LifeDriver",
    "apply_event",
    "reflect_voltage",
    "conway_step",
    "life_edge_modes",
    "template_vortex",
    "template_wave",
    "template_life",
    "run_scenario",
    "TEMPLATES",
]

Cell = Tuple[int, int]


# -- regions -----------------------------------------------------------------

@dataclass(frozen=True)
class Disk:
    """Cells at Euclidean distance <= ``radius`` from ``center``."""

    center: Cell
    radius: float

    def contains(self, cell: Cell) -> bool:
        dx, dy = cell[0] - self.center[0], cell[1] - self.center[1]
        return dx * dx + dy * dy <= self.radius * self.radius

    def cells(self, width: int, height: int) -> list:
        return [(x, y) for y in range(1, height + 1) for x in range(1, width + 1)
                if self.contains((x, y))]


@dataclass(frozen=True)
class Rect:
    """Inclusive rectangle ``[x0, x1] x [y0, y1]``."""

    x0: int
    y0: int
    x1: int
    y1: int

    def contains(self, cell: Cell) -> bool:
        return self.x0 <= cell[0] <= self.x1 and self.y0 <= cell[1] <= self.y1

    def cells(self, width: int, height: int) -> list:
        return [(x, y) for y in range(max(1, self.y0), min(height, self.y1) + 1)
                for x in range(max(1, self.x0), min(width, self.x1) + 1)]


@dataclass(frozen=True)
class Cells:
    """An explicit cell list.  Every listed cell must lie on the grid."""

    members: Tuple[Cell, ...]

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(tuple(int(v) for v in c) for c in self.members))

    def contains(self, cell: Cell) -> bool:
        return tuple(cell) in self.members

    def cells(self, width: int, height: int) -> list:
        for x, y in self.members:
            if not (1 <= x <= width and 1 <= y <= height):
                raise ValueError(f"cell {(x, y)} outside the {width}x{height} grid")
        return sorted(set(self.members), key=lambda c: (c[1], c[0]))


@dataclass(frozen=True)
class Whole:
    def contains(self, cell: Cell) -> bool:
        return True

    def cells(self, width: int, height: int) -> list:
        return [(x, y) for y in range(1, height + 1) for x in range(1, width + 1)]


Region = Union[Disk, Rect, Cells, Whole]


def _region_indices(lattice: Lattice, region: Region) -> np.ndarray:
    return np.array([lattice.index(c) for c in region.cells(lattice.width, lattice.height)],
                    dtype=np.intp)


def _require_on_grid(region: Region, width: int, height: int, what: str):
    if not region.cells(width, height):
        raise ValueError(f"{what} {region} does not intersect the {width}x{height} grid")


# -- events ------------------------------------------------------------------

@dataclass(frozen=True)
class AtTime:
    t: float


@dataclass(frozen=True)
class PhaseCondition:
    """Fires once the anti-phase fraction of ``region`` exceeds ``fraction``.

    A cell counts as anti-phase when its Off-edge neighbours are, on
    average, in opposite phase (``cos`` of the difference below zero).
    Cells without a measured phase count as not anti-phase.
    """

    region: Region
    fraction: float = 0.9


Trigger = Union[AtTime, PhaseCondition]


@dataclass(frozen=True)
class SetEdgeModes:
    """Set the mode of the edges of ``region``.

    ``scope="internal"`` touches edges with both ends in the region,
    ``"incident"`` those with at least one end in it.
    """

    region: Region
    mode: EdgeMode
    scope: str = "internal"

    def __post_init__(self):
        object.__setattr__(self, "mode", EdgeMode(self.mode))
        if self.scope not in ("internal", "incident"):
            raise ValueError(f"scope must be 'internal' or 'incident', got {self.scope!r}")


@dataclass(frozen=True)
class SetCellVoltage:
    region: Region
    v: float
    state1: Optional[int] = None
    state2: Optional[int] = None


@dataclass(frozen=True)
class FlipPhase:
    """Reflect the cells of ``region`` to the opposite point of the cycle."""

    region: Region


Action = Union[SetEdgeModes, SetCellVoltage, FlipPhase]


@dataclass(frozen=True)
class Event:
    trigger: Trigger
    action: Action
    name: str = ""


def reflect_voltage(cfg: DDCellConfig, v):
    """``v -> v_l + v_h - v`` using the bottom device's thresholds."""
    d = cfg.device2
    return d.v_low_threshold + d.v_high_threshold - np.asarray(v, dtype=float)


def _edge_selection(lattice: Lattice, idx: np.ndarray, scope: str) -> np.ndarray:
    member = np.zeros(lattice.n_cells, dtype=bool)
    member[idx] = True
    a, b = member[lattice.edges[:, 0]], member[lattice.edges[:, 1]]
    sel = (a & b) if scope == "internal" else (a | b)
    return np.flatnonzero(sel)


def apply_event(lattice: Lattice, target: Union[NetworkSimulator, NetworkState],
                event: Union[Event, Action]) -> None:
    """Apply an event's action in place, between integration steps.

    ``target`` is a running :class:`NetworkSimulator` or a bare
    :class:`NetworkState`.  An empty region is a no-op.
    """
    action = event.action if isinstance(event, Event) else event
    idx = _region_indices(lattice, action.region)
    if len(idx) == 0:
        return
    if isinstance(action, SetEdgeModes):
        edges = _edge_selection(lattice, idx, action.scope)
        if len(edges):
            lattice.set_edge_modes(edges, action.mode)
        return
    if isinstance(target, NetworkSimulator):
        v, s1, s2 = target.v, target.s1, target.s2
    else:
        v, s1, s2 = target.v, target.state1, target.state2
    if isinstance(action, SetCellVoltage):
        nv = np.full(len(idx), float(action.v))
        n1 = s1[idx] if action.state1 is None else np.full(len(idx), action.state1, np.uint8)
        n2 = s2[idx] if action.state2 is None else np.full(len(idx), action.state2, np.uint8)
    elif isinstance(action, FlipPhase):
        nv = reflect_voltage(lattice.cell, v[idx])
        n1, n2 = s2[idx].copy(), s1[idx].copy()
    else:
        raise TypeError(f"unknown action {action!r}")
    if isinstance(target, NetworkSimulator):
        target.set_state(v=nv, s1=n1, s2=n2, cells=idx)
    else:
        v[idx], s1[idx], s2[idx] = nv, n1, n2


# -- initial conditions ------------------------------------------------------

@dataclass(frozen=True)
class InitialCondition:
    """Common voltage/state plus per-cell overrides, perturbations and reflections.

    The default common point, ``v=1`` with the top device metallic and the
    bottom insulating, is the start of the charging branch.
    """

    v: float = 1.0
    state1: int = 1
    state2: int = 0
    overrides: Tuple[Tuple[Cell, float, int, int], ...] = ()
    perturb: Tuple[Tuple[Cell, float], ...] = ()
    reflect: Tuple[Cell, ...] = ()

    def build(self, lattice: Lattice) -> NetworkState:
        n = lattice.n_cells
        v = np.full(n, float(self.v))
        s1 = np.full(n, self.state1, np.uint8)
        s2 = np.full(n, self.state2, np.uint8)
        for cell, cv, c1, c2 in self.overrides:
            i = lattice.index(cell)
            v[i], s1[i], s2[i] = cv, c1, c2
        for cell, dv in self.perturb:
            v[lattice.index(cell)] += dv
        for cell in self.reflect:
            i = lattice.index(cell)
            v[i] = reflect_voltage(lattice.cell, v[i])
            s1[i], s2[i] = s2[i], s1[i]
        return NetworkState(v, s1, s2, 0.0)


# -- Game of Life ------------------------------------------------------------

def conway_step(alive, width: int, height: int) -> frozenset:
    """One generation of Conway's rules on a bounded grid (outside is dead)."""
    alive = frozenset(tuple(c) for c in alive)
    counts = {}
    for x, y in alive:
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                if dx or dy:
                    c = (x + dx, y + dy)
                    if 1 <= c[0] <= width and 1 <= c[1] <= height:
                        counts[c] = counts.get(c, 0) + 1
    return frozenset(c for c, k in counts.items()
                     if k == 3 or (k == 2 and c in alive))


def life_edge_modes(lattice: Lattice, alive, rule: str = "boundary") -> np.ndarray:
    """Edge modes for an alive set.

    ``"boundary"``: Off where exactly one end is alive, so alive cells stay
    in phase with each other and opposite to the dead ones.  ``"incident"``:
    Off on every edge touching an alive cell.
    """
    member = np.zeros(lattice.n_cells, dtype=bool)
    for c in alive:
        member[lattice.index(c)] = True
    a, b = member[lattice.edges[:, 0]], member[lattice.edges[:, 1]]
    if rule == "boundary":
        off = a != b
    elif rule == "incident":
        off = a | b
    else:
        raise ValueError(f"rule must be 'boundary' or 'incident', got {rule!r}")
    return np.where(off, EdgeMode.OFF, EdgeMode.ON).astype(np.uint8)


@dataclass
class Generation:
    t: float
    alive: frozenset
    ambiguous: int


class LifeDriver:
    """Classify, apply Conway's rules and actuate, once per generation.

    A cell is alive when its phase is opposite to the reference phase,
    ``cos(phi - ref) < 0``.  The reference is the circular mean phase of
    the cells that were dead in the previous generation.  A cell is
    ambiguous when its phase lies within ``pi/4`` of the decision boundary.
    """

    def __init__(self, lattice: Lattice, alive, generation_period: float, dt: float,
                 edge_rule: str = "boundary"):
        self.lattice = lattice
        self.edge_rule = edge_rule
        self.alive = frozenset(alive)
        self.every = int(round(generation_period / dt))
        self.nominal_period = analytic_period(lattice.cell).period
        self.generations = [Generation(0.0, self.alive, 0)]

    def classify(self, sim: NetworkSimulator):
        """Observed alive set and the number of ambiguous cells.

        Phases come from each cell's latest charging onset and the median
        recent period.  A cell with no onset in the last three periods has
        stopped oscillating; it counts as dead and ambiguous.
        """
        lat = self.lattice
        periods = sim.last_onset - sim.prev_onset
        known = np.isfinite(periods)
        period = float(np.median(periods[known])) if known.any() else self.nominal_period
        stale = ~(sim.t - sim.last_onset <= 3.0 * period)
        phi = 2.0 * math.pi * np.mod((sim.t - sim.last_onset) / period, 1.0)
        phi[stale] = np.nan
        dead = np.ones(lat.n_cells, dtype=bool)
        for c in self.alive:
            dead[lat.index(c)] = False
        ok = np.isfinite(phi)
        ref_set = dead & ok if (dead & ok).any() else ok
        if not ref_set.any():
            return frozenset(), lat.n_cells
        ref = float(np.angle(np.mean(np.exp(1j * phi[ref_set]))))
        d = np.cos(np.where(ok, phi, ref) - ref)
        alive_now = frozenset(lat.coords(i) for i in np.flatnonzero(ok & (d < 0)))
        ambiguous = int(np.sum(~ok | (np.abs(d) < math.cos(math.pi / 4))))
        return alive_now, ambiguous

    def __call__(self, sim: NetworkSimulator):
        if sim.n_steps % self.every:
            return
        lat = self.lattice
        observed, ambiguous = self.classify(sim)
        nxt = conway_step(observed, lat.width, lat.height)
        flip = sorted(nxt ^ observed, key=lambda c: (c[1], c[0]))
        lat.set_edge_modes(np.arange(lat.n_edges), EdgeMode.ON)
        modes = life_edge_modes(lat, nxt, self.edge_rule)
        off = np.flatnonzero(modes == EdgeMode.OFF)
        if len(off):
            lat.set_edge_modes(off, EdgeMode.OFF)
        if flip:
            apply_event(lat, sim, FlipPhase(Cells(tuple(flip))))
        self.alive = nxt
        self.generations.append(Generation(sim.t, observed, ambiguous))


# -- scenarios ---------------------------------------------------------------

@dataclass
class Scenario:
    name: str
    width: int
    height: int
    edge_modes: Callable[[Lattice], np.ndarray]
    initial: InitialCondition = field(default_factory=InitialCondition)
    events: Tuple[Event, ...] = ()
    duration: float = 10.0 * T0
    dt: float = 1e-3 * T0
    snapshot_cadence: float = 0.05 * T0
    cell_config: DDCellConfig = field(default_factory=DDCellConfig)
    coupling: CouplingParams = field(default_factory=CouplingParams)
    boundary: str = "open"
    life: Optional[dict] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("width and height must be >= 1")
        timed = [e.trigger.t for e in self.events if isinstance(e.trigger, AtTime)]
        if timed != sorted(timed):
            raise ValueError("timed events must be sorted by trigger time")
        for e in self.events:
            e.action.region.cells(self.width, self.height)
            if isinstance(e.trigger, PhaseCondition):
                e.trigger.region.cells(self.width, self.height)

    def build_lattice(self) -> Lattice:
        lat = build_lattice(self.width, self.height, self.cell_config, self.coupling,
                            boundary=self.boundary)
        modes = np.asarray(self.edge_modes(lat), dtype=np.uint8)
        for mode in (EdgeMode.OFF, EdgeMode.ON):
            sel = np.flatnonzero(modes == mode)
            if len(sel):
                lat.set_edge_modes(sel, mode)
        return lat

    def with_(self, **changes) -> "Scenario":
        return replace(self, **changes)


@dataclass
class ScenarioResult:
    scenario: Scenario
    lattice: Lattice
    state: NetworkState
    observers: list
    simulator: NetworkSimulator
    fired: list
    generations: list

    def observer(self, kind: str):
        for obs in self.observers:
            if obs.kind == kind:
                return obs
        raise KeyError(kind)


class _EventRunner:
    def __init__(self, lattice, events, dt, cadence):
        self.lattice = lattice
        self.pending = list(enumerate(events))
        self.dt = dt
        self.cond_every = max(1, int(round(cadence / dt)))
        self.fired = []

    def _holds(self, sim, trig: PhaseCondition) -> bool:
        lat = self.lattice
        idx = _region_indices(lat, trig.region)
        if len(idx) == 0:
            return False
        phi = live_phases(sim.t, sim.last_onset, sim.prev_onset)
        ok = np.isfinite(phi)
        emask = (lat.edge_modes == EdgeMode.OFF) & ok[lat.edges[:, 0]] & ok[lat.edges[:, 1]]
        anti = local_antiphase(np.nan_to_num(phi), lat.edges, emask)
        return float(anti[idx].mean()) > trig.fraction

    def __call__(self, sim):
        keep = []
        for k, ev in self.pending:
            trig = ev.trigger
            if isinstance(trig, AtTime):
                due = sim.n_steps >= int(round(trig.t / self.dt))
            else:
                due = sim.n_steps % self.cond_every == 0 and self._holds(sim, trig)
            if due:
                apply_event(self.lattice, sim, ev)
                self.fired.append((sim.t, ev.name or f"event{k}"))
            else:
                keep.append((k, ev))
        self.pending = keep


def run_scenario(scenario: Scenario, observers: Sequence = (), *,
                 snapshots: bool = True, progress: Optional[Callable] = None,
                 **sim_kwargs) -> ScenarioResult:
    """Run a scenario; an event log (and by default snapshots) is always recorded."""
    lat = scenario.build_lattice()
    initial = scenario.initial.build(lat)
    obs = list(observers)
    if not any(o.kind == "event-log" for o in obs):
        obs.append(EventLogObserver())
    if snapshots and not any(o.kind == "snapshot" for o in obs):
        obs.append(SnapshotObserver(scenario.snapshot_cadence))
    events = _EventRunner(lat, scenario.events, scenario.dt, scenario.snapshot_cadence)
    driver = None
    if scenario.life is not None and scenario.life.get("mode") == "conway":
        driver = LifeDriver(lat, scenario.life["alive"], scenario.life["generation_period"],
                            scenario.dt, scenario.life.get("edge_rule", "boundary"))

    def callback(sim):
        if events.pending:
            events(sim)
        if driver is not None:
            driver(sim)
        if progress is not None:
            progress(sim)

    res = run(lat, initial, scenario.dt, scenario.duration, obs, callback=callback,
              **sim_kwargs)
    return ScenarioResult(scenario, lat, res.state, res.observers, res.simulator,
                          events.fired, driver.generations if driver else [])


# -- templates ---------------------------------------------------------------

def _disk_map(disk: Disk):
    def modes(lat: Lattice) -> np.ndarray:
        inside = np.array([disk.contains(lat.coords(i)) for i in range(lat.n_cells)])
        both = inside[lat.edges[:, 0]] & inside[lat.edges[:, 1]] if lat.n_edges else np.zeros(0, bool)
        return np.where(both, EdgeMode.OFF, EdgeMode.ON).astype(np.uint8)
    return modes


def template_vortex(width: int = 30, height: int = 30, center: Cell = (15, 15),
                    radius: float = 7, *, seed_amplitude: float = 1e-2,
                    duration: float = 10.0 * T0, **kw) -> Scenario:
    """Capacitive disk in a resistive grid, disk seeded with a +-checkerboard.

    The seed adds ``+seed_amplitude`` to disk cells with odd ``x + y`` and
    subtracts it from the others.
    """
    disk = Disk(tuple(center), radius)
    _require_on_grid(Cells((tuple(center),)), width, height, "center")
    members = disk.cells(width, height)
    perturb = tuple((c, seed_amplitude if (c[0] + c[1]) % 2 else -seed_amplitude)
                    for c in members) if radius > 0 else ()
    return Scenario("vortex", width, height, _disk_map(disk),
                    InitialCondition(perturb=perturb), duration=duration,
                    meta={"center": list(center), "radius": radius,
                          "seed_amplitude": seed_amplitude}, **kw)


def template_wave(width: int = 30, height: int = 30, center: Cell = (15, 15),
                  radius: float = 7, seed_cell: Optional[Cell] = (2, 15), *,
                  duration: float = 40.0 * T0, **kw) -> Scenario:
    """Exact in-phase grid with one cell reflected to the anti-phase point."""
    disk = Disk(tuple(center), radius)
    _require_on_grid(Cells((tuple(center),)), width, height, "center")
    reflect = ()
    if seed_cell is not None:
        _require_on_grid(Cells((tuple(seed_cell),)), width, height, "seed cell")
        reflect = (tuple(seed_cell),)
    return Scenario("wave", width, height, _disk_map(disk), InitialCondition(reflect=reflect),
                    duration=duration,
                    meta={"center": list(center), "radius": radius,
                          "seed_cell": list(seed_cell) if seed_cell else None}, **kw)


def template_life(alive_region: Region = Rect(1, 1, 3, 3), generation_period: float = 4.0 * T0,
                  width: int = 30, height: int = 30, *, mode: str = "conway",
                  generations: int = 5, edge_rule: str = "boundary", watch_region: Optional[Region] = None,
                  cell_config: Optional[DDCellConfig] = None, **kw) -> Scenario:
    """Game of Life on the phase pattern.

    ``mode="conway"`` runs the rule driver every ``generation_period``;
    ``edge_rule`` selects the edge map it applies (see :func:`life_edge_modes`).
    ``mode="scripted"`` uses events only: the whole grid starts capacitive
    with ``alive_region`` reflected, and once ``watch_region`` (default the
    3x3 top-right corner) is mostly anti-phase the alive region's edges are
    switched On, which pulls it back in phase ("cell death").
    """
    cfg = cell_config or DDCellConfig()
    cells = alive_region.cells(width, height)
    if not cells:
        raise ValueError(f"alive region {alive_region} is empty on the {width}x{height} grid")
    period = analytic_period(cfg).period
    if generation_period < period:
        raise ValueError(
            f"generation_period {generation_period} shorter than one oscillation period {period:.6g}")
    init = InitialCondition(reflect=tuple(cells))
    meta = {"alive": [list(c) for c in cells], "generation_period": generation_period, "mode": mode}
    if mode == "conway":
        alive = frozenset(cells)
        return Scenario("life", width, height, lambda lat: life_edge_modes(lat, alive, edge_rule), init,
                        duration=kw.pop("duration", generations * generation_period),
                        cell_config=cfg, life={"mode": "conway", "alive": alive, "edge_rule": edge_rule,
                                               "generation_period": generation_period},
                        meta=meta, **kw)
    if mode == "scripted":
        watch = watch_region or Rect(width - 2, height - 2, width, height)
        kill = Event(PhaseCondition(watch, 0.9), SetEdgeModes(alive_region, EdgeMode.ON, "incident"),
                     name="kill-alive-region")
        return Scenario("life", width, height,
                        lambda lat: np.full(lat.n_edges, EdgeMode.OFF, np.uint8), init,
                        events=(kill,), duration=kw.pop("duration", 30.0 * T0),
                        cell_config=cfg, life={"mode": "scripted"}, meta=meta, **kw)
    raise ValueError(f"mode must be 'conway' or 'scripted', got {mode!r}")


TEMPLATES = {
    "vortex": template_vortex,
    "wave": template_wave,
    "life": template_life,
}
