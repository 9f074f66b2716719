"""Map the normalized oscillator onto a physical frequency."""
from __future__ import annotations

from dataclasses import dataclass

from ..cell import NonOscillatingError, analytic_period, self_oscillation_check

__all__ = ["Calibration", "calibrate_physical"]


@dataclass(frozen=True)
class Calibration:
    c_phys: float          # farads
    r0_phys: float         # ohms
    f_target: float        # hertz
    normalized_period: float
    period_check: float    # seconds, P_n * R0 * C; equals 1/f_target

    def as_dict(self) -> dict:
        return {"C_phys": self.c_phys, "R0_phys": self.r0_phys, "f_target": self.f_target,
                "normalized_period": self.normalized_period, "period_check": self.period_check}


def calibrate_physical(r0_phys: float, f_target: float, cfg) -> Calibration:
    """Capacitance that makes ``cfg`` oscillate at ``f_target`` with unit resistance ``r0_phys``.

    The normalized period ``P_n`` is the closed-form period in units of
    ``R0 * cap``; then ``C = 1 / (f * P_n * R0)``.  This calibrates the
    normalized model only, not the internal parameters of a real device.
    """
    if not (r0_phys > 0 and f_target > 0):
        raise ValueError(f"R0 and f must be positive, got R0={r0_phys}, f={f_target}")
    report = self_oscillation_check(cfg)
    if not report.oscillates:
        raise NonOscillatingError(
            f"configuration does not oscillate (branch {report.trapped_branch!r} traps)",
            branch=report.trapped_branch)
    p_n = analytic_period(cfg).period / cfg.cap
    c = 1.0 / (f_target * p_n * r0_phys)
    return Calibration(c, r0_phys, f_target, p_n, p_n * r0_phys * c)
