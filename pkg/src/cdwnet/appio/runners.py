"""Config-driven runs: single cell, plain grid and built-in scenarios.

Each runner returns a :class:`RunArtifacts` that :func:`write_outputs`
serializes.  Runs are deterministic; the wall-clock goes to ``timing.json``
only, so everything else is byte-identical across reruns.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..analysis import InsufficientEventsError, supply_current
from ..cell import DRConfig, analytic_period, default_initial_state, self_oscillation_check, simulate_cell
from ..lattice import (CellTraceObserver, EdgeMode, EventLogObserver, SnapshotObserver,
                       build_lattice, run, uniform_state)
from ..scenarios import Cells, Disk, run_scenario, template_life, template_vortex, template_wave
from .config import SimConfig, echo_config
from .outputs import cell_metrics, network_metrics, write_outputs

__all__ = ["RunArtifacts", "run_check", "run_cell", "run_grid", "run_template", "scenario_from_config"]


@dataclass
class RunArtifacts:
    summary: dict
    traces: dict = field(default_factory=dict)
    snapshots: Optional[tuple] = None
    events: Optional[tuple] = None
    timing: dict = field(default_factory=dict)

    def write(self, out_dir) -> list:
        return write_outputs(out_dir, self.summary, self.traces, self.snapshots,
                             self.events, self.timing)


def _duration(cfg: SimConfig, default: float) -> float:
    return cfg["run.duration"] if "run.duration" in cfg.explicit else default


def run_check(cfg: SimConfig) -> dict:
    report = self_oscillation_check(cfg.cell_config()).as_dict()
    return {"kind": "check", "config": echo_config(cfg), "report": report}


def run_cell(cfg: SimConfig) -> RunArtifacts:
    cell = cfg.cell_config()
    duration = cfg["run.duration"]
    started = time.perf_counter()
    trace = simulate_cell(cell, duration, default_initial_state(cell, cfg["cell.v_init"]),
                          dt=cfg["run.dt"])
    elapsed = time.perf_counter() - started
    try:
        current = supply_current(trace, cell)
    except (InsufficientEventsError, ValueError):
        current = None
    s2 = None if isinstance(cell, DRConfig) else np.asarray(trace.state2)
    metrics = cell_metrics(trace.t, trace.v, trace.state1, s2, current)
    report = self_oscillation_check(cell)
    if report.oscillates:
        metrics["analytic_period"] = analytic_period(cell).period
    summary = {
        "kind": "cell",
        "config": echo_config(cfg),
        "t_end": float(trace.t[-1]),
        "n_transitions": len(trace.events),
        "oscillates": report.oscillates,
        "metrics": metrics,
    }
    return RunArtifacts(summary, {"cell": (trace.t, trace.v, trace.state1, s2)},
                        timing={"wall_clock_s": elapsed})


def _event_columns(lattice, arrays):
    t, c, d, s = arrays
    xy = np.array([lattice.coords(i) for i in c], dtype=np.int64).reshape(-1, 2)
    return (t, xy[:, 0], xy[:, 1], d, s)


def _traces(lattice, obs):
    if obs is None:
        return {}
    return {f"{x}_{y}": obs.arrays((x, y)) for x, y in obs.cells}


def _nominal_period(cell) -> float:
    return analytic_period(cell).period


def run_grid(cfg: SimConfig) -> RunArtifacts:
    """Uniform grid with one edge mode and an optional single-cell kick."""
    cell = cfg.dd_config()
    mode = EdgeMode.ON if cfg["grid.edge_mode"] == "on" else EdgeMode.OFF
    lat = build_lattice(cfg["grid.width"], cfg["grid.height"], cell, cfg.coupling(),
                        boundary=cfg["grid.boundary"], default_mode=mode)
    state = uniform_state(lat, 1.0)
    if cfg["grid.perturb_cell"] is not None:
        state.v[lat.index(cfg["grid.perturb_cell"])] += cfg["grid.perturb_dv"]
    trace_cells = [c for c in cfg["run.trace_cells"]]
    observers = [SnapshotObserver(cfg["run.snapshot_cadence"]), EventLogObserver()]
    tracer = CellTraceObserver(trace_cells) if trace_cells else None
    if tracer:
        observers.append(tracer)
    started = time.perf_counter()
    res = run(lat, state, cfg["run.dt"], cfg["run.duration"], observers)
    elapsed = time.perf_counter() - started
    snaps, log = observers[0], observers[1]
    arrays = log.arrays()
    target = "in-phase" if mode == EdgeMode.ON else "anti-phase"
    metrics = network_metrics(*arrays, lat.width, lat.height, res.state.t,
                              _nominal_period(cell), pair_target=target)
    summary = {
        "kind": "grid",
        "config": echo_config(cfg),
        "width": lat.width,
        "height": lat.height,
        "t_end": res.state.t,
        "max_residual": res.simulator.max_residual,
        "metrics": metrics,
    }
    return RunArtifacts(summary, _traces(lat, tracer), (snaps.times, snaps.frames),
                        _event_columns(lat, arrays), {"wall_clock_s": elapsed})


def scenario_from_config(cfg: SimConfig):
    name = cfg["scenario.template"]
    kw = dict(cell_config=cfg.dd_config(), coupling=cfg.coupling(), dt=cfg["run.dt"],
              snapshot_cadence=cfg["run.snapshot_cadence"], boundary=cfg["grid.boundary"])
    w, h = cfg["grid.width"], cfg["grid.height"]
    if name == "vortex":
        sc = template_vortex(w, h, cfg["scenario.center"], cfg["scenario.radius"],
                             seed_amplitude=cfg["scenario.seed_amplitude"], **kw)
    elif name == "wave":
        sc = template_wave(w, h, cfg["scenario.center"], cfg["scenario.radius"],
                           cfg["scenario.seed_cell"], **kw)
    elif name == "life":
        cell = kw.pop("cell_config")
        sc = template_life(Cells(cfg["scenario.alive"]), cfg["scenario.generation_period"], w, h,
                           mode=cfg["scenario.life_mode"], edge_rule=cfg["scenario.edge_rule"],
                           cell_config=cell, **kw)
    else:
        raise ValueError("scenario.template must name a built-in template (vortex, wave, life)")
    return sc.with_(duration=_duration(cfg, sc.duration))


def _groups(sc, lat):
    if "radius" not in sc.meta:
        return {}
    disk = Disk(tuple(sc.meta["center"]), sc.meta["radius"])
    inside = np.array([disk.contains(lat.coords(i)) for i in range(lat.n_cells)])
    return {"inside": inside, "outside": ~inside}


def _default_trace_cells(sc):
    cells = []
    for key in ("center", "seed_cell"):
        c = sc.meta.get(key)
        if c is not None and 1 <= c[0] <= sc.width and 1 <= c[1] <= sc.height:
            cells.append(tuple(c))
    return cells


def run_template(cfg: SimConfig, progress=None) -> RunArtifacts:
    sc = scenario_from_config(cfg)
    cells = list(dict.fromkeys(list(cfg["run.trace_cells"]) + _default_trace_cells(sc)))
    tracer = CellTraceObserver(cells) if cells else None
    started = time.perf_counter()
    res = run_scenario(sc, [tracer] if tracer else [], progress=progress)
    elapsed = time.perf_counter() - started
    lat = res.lattice
    arrays = res.observer("event-log").arrays()
    metrics = network_metrics(*arrays, lat.width, lat.height, res.state.t,
                              _nominal_period(lat.cell), groups=_groups(sc, lat))
    snaps = res.observer("snapshot")
    summary = {
        "kind": "scenario",
        "template": sc.name,
        "config": echo_config(cfg),
        "meta": sc.meta,
        "width": lat.width,
        "height": lat.height,
        "t_end": res.state.t,
        "max_residual": res.simulator.max_residual,
        "fired_events": [[t, name] for t, name in res.fired],
        "generations": [{"t": g.t, "alive": sorted(g.alive), "ambiguous": g.ambiguous}
                        for g in res.generations],
        "metrics": metrics,
    }
    return RunArtifacts(summary, _traces(lat, tracer), (snaps.times, snaps.frames),
                        _event_columns(lat, arrays), {"wall_clock_s": elapsed})
