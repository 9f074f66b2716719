"""
Single oscillators
==================

One MIT device against a resistor (D-R) and two devices in series (D-D).
Times are in the internal unit where the default cell capacitance is 0.01,
so one t0 is 0.01.
"""
import numpy as np

from cdwnet.analysis import extract_phase, supply_current
from cdwnet.appio.calibrate import calibrate_physical
from cdwnet.cell import (DDCellConfig, RhsModel, analytic_period, default_initial_state,
                         dr_demo_config, fixed_points, self_oscillation_check, simulate_cell)

# With a 1 R0 series resistor the metallic branch has a stable fixed point
# below v_h, so the node never reaches the upper threshold.
trapped = dr_demo_config(r_series=1.0)
report = self_oscillation_check(trapped)
print("D-R, R_S = 1:", report.oscillates, "trapped on", report.trapped_branch)
for fp in fixed_points(trapped):
    print("   fixed point", fp.branch, round(fp.v_star, 4), "stable" if fp.stable else "")

# Doubling the series resistor pulls that fixed point above v_h
demo = dr_demo_config()
print("D-R, R_S = 2:", self_oscillation_check(demo).oscillates,
      "period", analytic_period(demo).period)

# The D-D cell oscillates under both right-hand sides
for model in RhsModel:
    cfg = DDCellConfig(rhs_model=model)
    info = analytic_period(cfg)
    tr = simulate_cell(cfg, 20 * info.period, default_initial_state(cfg, 1.5))
    sim_period = np.mean(extract_phase(tr).periods)
    print(f"D-D {model.value:5s}: closed form {info.period / cfg.cap:.5f}*c, "
          f"simulated {sim_period / cfg.cap:.5f}*c")

    # after the first switch the two devices are never in the same state
    after = tr.t > tr.events[0].t
    print("   complementary samples:",
          np.mean(np.asarray(tr.state1)[after] != np.asarray(tr.state2)[after]))
    print("   mean supply current:", round(supply_current(tr, cfg), 5))

# the D-R demo for comparison
tr = simulate_cell(demo, 20 * analytic_period(demo).period, default_initial_state(demo, 1.5))
print("D-R demo mean supply current:", round(supply_current(tr, demo), 5))

# Physical capacitance for a 2 MHz oscillator with R0 = 1 kOhm
cal = calibrate_physical(1e3, 2e6, DDCellConfig(rhs_model=RhsModel.PAPER))
print("C for 2 MHz at R0 = 1 kOhm: %.4g F" % cal.c_phys)
