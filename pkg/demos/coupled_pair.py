"""
Two coupled cells
=================

A resistive (On) edge pulls two cells in phase, a capacitive (Off) edge
pushes them half a period apart.  The second cell starts 1% of a period
ahead of the first.
"""
import numpy as np

from cdwnet.analysis import PhaseSeries, onsets_by_cell, phase_difference, sync_time
from cdwnet.cell import CellState, DDCellConfig, analytic_period, simulate_cell
from cdwnet.device import DeviceState
from cdwnet.lattice import EdgeMode, EventLogObserver, NetworkState, build_lattice, run

cfg = DDCellConfig()
period = analytic_period(cfg).period
dt = 1e-5

ahead = simulate_cell(cfg, 0.01 * period,
                      CellState(1.0, DeviceState.METALLIC, DeviceState.INSULATING), dt=dt)
v2, a2, b2 = ahead.v[-1], ahead.state1[-1], ahead.state2[-1]

for mode, target in ((EdgeMode.ON, "in-phase"), (EdgeMode.OFF, "anti-phase")):
    lat = build_lattice(2, 1, cfg, default_mode=mode)
    start = NetworkState(np.array([1.0, v2]), np.array([1, a2], np.uint8),
                         np.array([0, b2], np.uint8))
    log = EventLogObserver()
    run(lat, start, dt, 20 * period, [log])
    a, b = (PhaseSeries(o) for o in onsets_by_cell(log, 2))
    t = a.onsets[a.onsets <= b.end]
    dphi = phase_difference(a, b, t)
    print(mode.name, "edge: locks", target, "after", sync_time(a, b, target), "cycles")
    print("   phase difference per cycle:", np.round(np.abs(dphi), 3))
