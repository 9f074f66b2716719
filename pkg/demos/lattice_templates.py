"""
Vortex and wave templates
=========================

A capacitive disk inside a resistive grid.  The vortex template seeds the
disk with a small checkerboard; the wave template starts exactly in phase
with one cell reflected to the opposite point of its cycle.

A smaller grid than the default 30 x 30 keeps this quick.  Watch the
number of cells still oscillating: with the default coupling many cells
settle onto a fixed point inside the hysteresis window and stop.
"""
import numpy as np

from cdwnet.analysis import onsets_by_cell, order_parameter, PhaseSeries
from cdwnet.cell import T0, analytic_period
from cdwnet.scenarios import Disk, run_scenario, template_vortex, template_wave

W = H = 16
center, radius = (8, 8), 4
disk = Disk(center, radius)

for sc in (template_vortex(W, H, center, radius, duration=10 * T0),
           template_wave(W, H, center, radius, seed_cell=(2, 8), duration=10 * T0)):
    res = run_scenario(sc)
    lat = res.lattice
    period = analytic_period(lat.cell).period
    onsets = onsets_by_cell(res.observer("event-log"), lat.n_cells)
    t_end = res.state.t
    alive = np.array([len(o) >= 2 and o[-1] > t_end - 3 * period for o in onsets])
    inside = np.array([disk.contains(lat.coords(i)) for i in range(lat.n_cells)])
    print(sc.name, "template")
    print("   oscillating inside the disk: %d/%d" % ((alive & inside).sum(), inside.sum()))
    print("   oscillating outside:         %d/%d" % ((alive & ~inside).sum(), (~inside).sum()))
    if alive.any():
        t = min(onsets[i][-1] for i in np.flatnonzero(alive))
        phases = [PhaseSeries(onsets[i]).phase(t) for i in np.flatnonzero(alive)
                  if onsets[i][0] <= t]
        print("   order parameter of the oscillating cells: %.3f" % order_parameter(phases))

    # final voltage map, coarse
    frame = res.observer("snapshot").frames[-1]
    print(np.array2string(frame[::2, ::2], precision=2, max_line_width=120))
