import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.signal import convolve2d

from cdwnet.cell import T0, DDCellConfig, analytic_period
from cdwnet.lattice import EdgeMode, NetworkSimulator, build_lattice, uniform_state
from cdwnet.scenarios import (AtTime, Cells, Disk, Event, FlipPhase, InitialCondition, LifeDriver,
                              PhaseCondition, Rect, Scenario, SetCellVoltage, SetEdgeModes, Whole,
                              apply_event, conway_step, life_edge_modes, reflect_voltage,
                              run_scenario, template_life, template_vortex, template_wave)

DT = 1e-3 * T0


# -- regions -----------------------------------------------------------------

def test_disk_boundary_inclusive():
    d = Disk((5, 5), 2)
    assert d.contains((7, 5)) and d.contains((5, 3))
    assert not d.contains((7, 6))
    assert Disk((3, 3), 0).cells(5, 5) == [(3, 3)]


def test_rect_and_cells_regions():
    assert Rect(2, 2, 3, 3).cells(4, 4) == [(2, 2), (3, 2), (2, 3), (3, 3)]
    assert Rect(5, 5, 9, 9).cells(4, 4) == []
    assert Cells(((2, 1), (1, 1))).cells(3, 3) == [(1, 1), (2, 1)]
    with pytest.raises(ValueError):
        Cells(((4, 1),)).cells(3, 3)
    assert len(Whole().cells(3, 4)) == 12


# -- templates ---------------------------------------------------------------

def _brute_internal_edges(W, H, disk):
    n = 0
    for y in range(1, H + 1):
        for x in range(1, W + 1):
            for nb in ((x + 1, y), (x, y + 1)):
                if nb[0] <= W and nb[1] <= H and disk.contains((x, y)) and disk.contains(nb):
                    n += 1
    return n


@pytest.mark.parametrize("center,radius", [((15, 15), 7), ((1, 1), 4), ((10, 20), 3.5)])
def test_vortex_off_edge_count(center, radius):
    sc = template_vortex(30, 30, center, radius)
    lat = sc.build_lattice()
    n_off = int(np.sum(lat.edge_modes == EdgeMode.OFF))
    assert n_off == _brute_internal_edges(30, 30, Disk(center, radius))


def test_vortex_radius_zero_and_huge():
    lat = template_vortex(10, 10, (5, 5), 0).build_lattice()
    assert np.all(lat.edge_modes == EdgeMode.ON)
    lat = template_vortex(10, 10, (5, 5), 100).build_lattice()
    assert np.all(lat.edge_modes == EdgeMode.OFF)


def test_vortex_center_off_grid_rejected():
    with pytest.raises(ValueError):
        template_vortex(10, 10, (11, 5), 3)


def test_vortex_checkerboard_seed():
    sc = template_vortex(12, 12, (6, 6), 3, seed_amplitude=0.02)
    lat = sc.build_lattice()
    st_ = sc.initial.build(lat)
    disk = Disk((6, 6), 3)
    for i in range(lat.n_cells):
        c = lat.coords(i)
        if disk.contains(c):
            want = 1.0 + (0.02 if (c[0] + c[1]) % 2 else -0.02)
        else:
            want = 1.0
        assert st_.v[i] == pytest.approx(want, abs=1e-15)


def test_wave_seed_differs_in_exactly_one_cell():
    sc = template_wave(30, 30, (15, 15), 7, (2, 15))
    lat = sc.build_lattice()
    st_ = sc.initial.build(lat)
    ref = uniform_state(lat)
    diff = (st_.v != ref.v) | (st_.state1 != ref.state1) | (st_.state2 != ref.state2)
    assert np.flatnonzero(diff).tolist() == [lat.index((2, 15))]
    i = lat.index((2, 15))
    assert st_.v[i] == pytest.approx(2.0)
    assert (st_.state1[i], st_.state2[i]) == (0, 1)


def test_wave_without_seed_is_uniform():
    sc = template_wave(8, 8, (4, 4), 2, None)
    st_ = sc.initial.build(sc.build_lattice())
    assert np.ptp(st_.v) == 0


def test_wave_seed_off_grid_rejected():
    with pytest.raises(ValueError):
        template_wave(8, 8, (4, 4), 2, (9, 1))


def test_reflect_voltage_is_involution():
    cfg = DDCellConfig()
    v = np.linspace(1.0, 2.0, 7)
    np.testing.assert_allclose(reflect_voltage(cfg, reflect_voltage(cfg, v)), v)
    assert float(reflect_voltage(cfg, 1.25)) == pytest.approx(1.75)


# -- events ------------------------------------------------------------------

def test_apply_event_empty_region_is_noop():
    lat = build_lattice(4, 4)
    st_ = uniform_state(lat)
    before = lat.edge_modes.copy(), st_.v.copy()
    for action in (SetEdgeModes(Rect(9, 9, 10, 10), EdgeMode.OFF),
                   SetCellVoltage(Rect(9, 9, 10, 10), 1.9), FlipPhase(Rect(9, 9, 10, 10))):
        apply_event(lat, st_, action)
    np.testing.assert_array_equal(lat.edge_modes, before[0])
    np.testing.assert_array_equal(st_.v, before[1])


def test_set_edge_modes_scopes():
    lat = build_lattice(5, 5)
    apply_event(lat, uniform_state(lat), SetEdgeModes(Rect(2, 2, 3, 3), EdgeMode.OFF, "internal"))
    assert int(np.sum(lat.edge_modes == EdgeMode.OFF)) == 4
    lat = build_lattice(5, 5)
    apply_event(lat, uniform_state(lat), SetEdgeModes(Rect(2, 2, 3, 3), EdgeMode.OFF, "incident"))
    assert int(np.sum(lat.edge_modes == EdgeMode.OFF)) == 4 + 8
    with pytest.raises(ValueError):
        SetEdgeModes(Whole(), EdgeMode.OFF, "nearby")


def test_flip_phase_twice_restores_state():
    lat = build_lattice(3, 3)
    sim = NetworkSimulator(lat, uniform_state(lat, 1.3), DT)
    v0, s10, s20 = sim.v.copy(), sim.s1.copy(), sim.s2.copy()
    apply_event(lat, sim, FlipPhase(Cells(((2, 2),))))
    i = lat.index((2, 2))
    assert sim.v[i] == pytest.approx(1.7)
    assert (sim.s1[i], sim.s2[i]) == (0, 1)
    apply_event(lat, sim, FlipPhase(Cells(((2, 2),))))
    np.testing.assert_allclose(sim.v, v0)
    np.testing.assert_array_equal(sim.s1, s10)
    np.testing.assert_array_equal(sim.s2, s20)
    # the simulator must see the new states
    np.testing.assert_array_equal(sim._g1, NetworkSimulator(lat, sim.state, DT)._g1)


def test_set_cell_voltage_keeps_states_when_unspecified():
    lat = build_lattice(2, 2)
    st_ = uniform_state(lat)
    apply_event(lat, st_, Event(AtTime(0.0), SetCellVoltage(Cells(((1, 2),)), 1.6)))
    i = lat.index((1, 2))
    assert st_.v[i] == 1.6 and st_.state1[i] == 1 and st_.state2[i] == 0


def test_timed_event_fires_once_at_its_step():
    sc = Scenario("t", 3, 3, lambda lat: np.full(lat.n_edges, EdgeMode.ON, np.uint8),
                  events=(Event(AtTime(0.5 * T0), SetEdgeModes(Whole(), EdgeMode.OFF), "off"),),
                  duration=T0)
    res = run_scenario(sc, snapshots=False)
    assert len(res.fired) == 1
    t, name = res.fired[0]
    assert name == "off" and t == pytest.approx(0.5 * T0)
    assert np.all(res.lattice.edge_modes == EdgeMode.OFF)


def test_unsorted_timed_events_rejected():
    ev = (Event(AtTime(2.0), FlipPhase(Whole())), Event(AtTime(1.0), FlipPhase(Whole())))
    with pytest.raises(ValueError):
        Scenario("x", 2, 2, lambda lat: np.zeros(lat.n_edges, np.uint8), events=ev)


def test_event_region_off_grid_rejected():
    ev = (Event(AtTime(0.0), FlipPhase(Cells(((5, 5),)))),)
    with pytest.raises(ValueError):
        Scenario("x", 2, 2, lambda lat: np.zeros(lat.n_edges, np.uint8), events=ev)


def test_initial_condition_order():
    lat = build_lattice(3, 1)
    ic = InitialCondition(v=1.2, overrides=(((1, 1), 1.5, 0, 1),), perturb=(((2, 1), 0.1),),
                          reflect=((3, 1),))
    st_ = ic.build(lat)
    np.testing.assert_allclose(st_.v, [1.5, 1.3, 1.8])
    np.testing.assert_array_equal(st_.state1, [0, 1, 0])
    np.testing.assert_array_equal(st_.state2, [1, 0, 1])


# -- Game of Life -------------------------------------------------------------

def _life_oracle(alive, W, H):
    g = np.zeros((H, W), int)
    for x, y in alive:
        g[y - 1, x - 1] = 1
    k = np.ones((3, 3), int)
    k[1, 1] = 0
    n = convolve2d(g, k, mode="same", boundary="fill")
    nxt = (n == 3) | ((g == 1) & (n == 2))
    return frozenset((int(x) + 1, int(y) + 1) for y, x in zip(*np.nonzero(nxt)))


def test_conway_known_patterns():
    block = {(2, 2), (3, 2), (2, 3), (3, 3)}
    assert conway_step(block, 6, 6) == frozenset(block)
    blinker = {(2, 3), (3, 3), (4, 3)}
    vert = conway_step(blinker, 6, 6)
    assert vert == frozenset({(3, 2), (3, 3), (3, 4)})
    assert conway_step(vert, 6, 6) == frozenset(blinker)
    assert conway_step({(1, 1)}, 3, 3) == frozenset()


@settings(max_examples=40, deadline=None)
@given(st.sets(st.tuples(st.integers(1, 8), st.integers(1, 7)), max_size=30))
def test_conway_matches_convolution_oracle(alive):
    assert conway_step(alive, 8, 7) == _life_oracle(alive, 8, 7)


def test_life_edge_modes_rules():
    lat = build_lattice(4, 4)
    alive = {(2, 2), (3, 2)}
    b = life_edge_modes(lat, alive, "boundary")
    assert int(np.sum(b == EdgeMode.OFF)) == 6
    assert b[lat.edge_index((2, 2), (3, 2))] == EdgeMode.ON
    inc = life_edge_modes(lat, alive, "incident")
    assert int(np.sum(inc == EdgeMode.OFF)) == 7
    with pytest.raises(ValueError):
        life_edge_modes(lat, alive, "other")


def test_template_life_validation():
    with pytest.raises(ValueError):
        template_life(Rect(40, 40, 41, 41))
    p = analytic_period(DDCellConfig()).period
    with pytest.raises(ValueError):
        template_life(generation_period=0.5 * p)
    with pytest.raises(ValueError):
        template_life(mode="random")


def test_template_life_initial_pattern():
    sc = template_life(Cells(((2, 2), (3, 2), (2, 3), (3, 3))), 4 * T0, 8, 8)
    lat = sc.build_lattice()
    st_ = sc.initial.build(lat)
    alive = [lat.index(c) for c in ((2, 2), (3, 2), (2, 3), (3, 3))]
    assert np.all(st_.v[alive] == 2.0)
    assert int(np.sum(st_.v == 2.0)) == 4
    assert int(np.sum(lat.edge_modes == EdgeMode.OFF)) == 8


def test_template_life_scripted_event():
    sc = template_life(Rect(1, 1, 2, 2), 4 * T0, 8, 8, mode="scripted")
    lat = sc.build_lattice()
    assert np.all(lat.edge_modes == EdgeMode.OFF)
    assert len(sc.events) == 1 and isinstance(sc.events[0].trigger, PhaseCondition)


def test_life_driver_classifies_synthetic_phases():
    lat = build_lattice(4, 4)
    sim = NetworkSimulator(lat, uniform_state(lat), DT)
    p = analytic_period(lat.cell).period
    sim.t = 10 * p
    sim.prev_onset = np.full(16, 8 * p)
    sim.last_onset = np.full(16, 9 * p)
    alive = {(2, 2), (3, 3)}
    for c in alive:
        i = lat.index(c)
        sim.last_onset[i] += 0.5 * p
        sim.prev_onset[i] += 0.5 * p
    drv = LifeDriver(lat, alive, 4 * T0, DT)
    observed, ambiguous = drv.classify(sim)
    assert observed == frozenset(alive)
    assert ambiguous == 0


def test_life_driver_stale_cells_are_dead_and_ambiguous():
    lat = build_lattice(3, 3)
    sim = NetworkSimulator(lat, uniform_state(lat), DT)
    p = analytic_period(lat.cell).period
    sim.t = 20 * p
    sim.prev_onset = np.full(9, 18 * p)
    sim.last_onset = np.full(9, 19 * p)
    sim.last_onset[0] = 2 * p
    sim.prev_onset[0] = p
    drv = LifeDriver(lat, {(1, 1)}, 4 * T0, DT)
    observed, ambiguous = drv.classify(sim)
    assert (1, 1) not in observed
    assert ambiguous >= 1


def test_small_scenarios_run_deterministically():
    sc = template_vortex(8, 8, (4, 4), 2, duration=2 * T0)
    a = run_scenario(sc)
    b = run_scenario(sc)
    np.testing.assert_array_equal(a.state.v, b.state.v)
    ta = a.observer("event-log").arrays()
    tb = b.observer("event-log").arrays()
    for x, y in zip(ta, tb):
        np.testing.assert_array_equal(x, y)
    assert len(a.observer("snapshot").frames) == 41
    assert a.simulator.max_residual <= 1e-10


def test_life_scenario_records_generations():
    sc = template_life(Rect(2, 2, 3, 3), 4 * T0, 6, 6, generations=2)
    res = run_scenario(sc, snapshots=False)
    assert len(res.generations) == 3
    assert res.generations[0].alive == frozenset({(2, 2), (3, 2), (2, 3), (3, 3)})
