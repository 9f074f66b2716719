"""
Game of Life on the phase pattern
=================================

Alive cells oscillate opposite to the dead background.  Every generation
the driver reads the phases, applies Conway's rules, rewires the coupling
edges and flips the cells whose fate changed.
"""
from cdwnet.cell import T0
from cdwnet.scenarios import Cells, conway_step, run_scenario, template_life

blinker = ((7, 8), (8, 8), (9, 8))
sc = template_life(Cells(blinker), 4 * T0, 16, 16, generations=5)
res = run_scenario(sc, snapshots=False)

expected = frozenset(blinker)
for gen in res.generations[1:]:
    print("t = %.3f  observed %s" % (gen.t, sorted(gen.alive)))
    print("           expected %s   ambiguous cells: %d" % (sorted(expected), gen.ambiguous))
    expected = conway_step(expected, 16, 16)
