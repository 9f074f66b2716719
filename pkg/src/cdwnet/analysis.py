"""Phase extraction and collective metrics.

A cell's phase is defined by its charging onsets, the instants where the top
device switches Insulating -> Metallic (equivalently, the cell goes from
discharging to charging).  Between consecutive onsets the phase grows
linearly from 0 to 2*pi.  Charge and discharge segments generally differ in
length, so the phase is not uniform in the waveform; lock metrics compare
like-for-like events and are unaffected.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .cell import Trace, top_conductance
from .device import DeviceState

__all__ = [
    "InsufficientEventsError",
    "PhaseSeries",
    "extract_phase",
    "onsets_by_cell",
    "phase_difference",
    "wrap_phase",
    "order_parameter",
    "sync_time",
    "supply_current",
    "phase_winding",
    "phase_map",
    "common_time",
    "local_antiphase",
    "antiphase_onset_times",
    "phase_matrix",
    "live_phases",
    "classify_against_reference",
]

TWO_PI = 2.0 * math.pi


class InsufficientEventsError(ValueError):
    pass


def wrap_phase(x):
    """Wrap into (-pi, pi]."""
    y = np.mod(np.asarray(x, dtype=float) + math.pi, TWO_PI) - math.pi
    y = np.where(y == -math.pi, math.pi, y)
    return float(y) if np.ndim(y) == 0 else y


@dataclass(frozen=True)
class PhaseSeries:
    """Charging-onset times of one cell and the phase they define."""

    onsets: np.ndarray

    def __post_init__(self):
        o = np.asarray(self.onsets, dtype=float)
        object.__setattr__(self, "onsets", o)
        if len(o) < 2:
            raise InsufficientEventsError(
                f"need at least two charging onsets, got {len(o)}")
        if np.any(np.diff(o) <= 0):
            raise ValueError("onset times must be strictly increasing")

    @property
    def periods(self) -> np.ndarray:
        return np.diff(self.onsets)

    @property
    def start(self) -> float:
        return float(self.onsets[0])

    @property
    def end(self) -> float:
        return float(self.onsets[-1])

    def defined(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return (t >= self.onsets[0]) & (t <= self.onsets[-1])

    def phase(self, t):
        """Phase in [0, 2*pi) at ``t``; raises outside the onset span."""
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        if not np.all(self.defined(t_arr)):
            raise ValueError(
                f"phase undefined outside [{self.start}, {self.end}]")
        o = self.onsets
        k = np.searchsorted(o, t_arr, side="right") - 1
        k = np.minimum(k, len(o) - 2)
        phi = TWO_PI * (t_arr - o[k]) / (o[k + 1] - o[k])
        phi = np.where(phi >= TWO_PI, 0.0, phi)
        return float(phi[0]) if np.ndim(t) == 0 else phi


def _event_arrays(source):
    """Normalize an event log to ``(t, cell, device, new_state)`` arrays."""
    if hasattr(source, "arrays") and callable(source.arrays) and not isinstance(source, Trace):
        return source.arrays()
    if isinstance(source, tuple) and len(source) == 4 and np.ndim(source[0]) == 1:
        return tuple(np.asarray(a) for a in source)
    rows = list(source)
    if not rows:
        return (np.zeros(0), np.zeros(0, np.intp), np.zeros(0, np.uint8), np.zeros(0, np.uint8))
    arr = np.array([tuple(r) for r in rows], dtype=float)
    return arr[:, 0], arr[:, 1].astype(np.intp), arr[:, 2].astype(np.uint8), arr[:, 3].astype(np.uint8)


def extract_phase(source, cell: Optional[int] = None) -> PhaseSeries:
    """Phase series from a single-cell :class:`Trace` or a network event log.

    For a network log, ``cell`` is the flat cell index.
    """
    if isinstance(source, Trace):
        onsets = [e.t for e in source.events
                  if e.device == 1 and DeviceState(e.new_state) is DeviceState.METALLIC]
        return PhaseSeries(np.array(onsets))
    if cell is None:
        raise ValueError("cell index required for a network event log")
    t, c, d, s = _event_arrays(source)
    mask = (c == cell) & (d == 1) & (s == 1)
    return PhaseSeries(np.asarray(t)[mask])


def onsets_by_cell(source, n_cells: int) -> list:
    """Charging-onset times for every cell (possibly empty arrays)."""
    t, c, d, s = _event_arrays(source)
    mask = (d == 1) & (s == 1)
    t, c = np.asarray(t)[mask], np.asarray(c)[mask]
    order = np.argsort(c, kind="stable")
    t, c = t[order], c[order]
    bounds = np.searchsorted(c, np.arange(n_cells + 1))
    return [t[bounds[i]:bounds[i + 1]] for i in range(n_cells)]


def phase_difference(a: PhaseSeries, b: PhaseSeries, t):
    """Wrapped ``phi_a - phi_b`` in (-pi, pi]."""
    return wrap_phase(a.phase(t) - b.phase(t))


def order_parameter(phases) -> float:
    """Magnitude of the mean unit phasor."""
    phases = np.asarray(phases, dtype=float).ravel()
    if phases.size == 0:
        raise ValueError("order parameter of an empty phase map")
    r = abs(np.mean(np.exp(1j * phases)))
    return float(min(r, 1.0))


def sync_time(a: PhaseSeries, b: PhaseSeries, target: str = "anti-phase",
              tol: float = 0.05 * TWO_PI, consecutive: int = 3) -> Optional[int]:
    """Cycles of ``a`` until the target relation holds for ``consecutive`` cycles.

    The relation is checked at every charging onset of ``a`` at which ``b``
    has a defined phase; the count starts at 0 on the first such onset.
    Returns ``None`` when the run ends before the relation settles.
    """
    if target not in ("in-phase", "anti-phase"):
        raise ValueError(f"target must be 'in-phase' or 'anti-phase', got {target!r}")
    times = a.onsets[b.defined(a.onsets)]
    if len(times) == 0:
        raise InsufficientEventsError("the two series never overlap")
    dphi = phase_difference(a, b, times)
    offset = 0.0 if target == "in-phase" else math.pi
    ok = np.abs(wrap_phase(dphi - offset)) < tol
    run = 0
    for k, good in enumerate(ok):
        run = run + 1 if good else 0
        if run >= consecutive:
            return k - consecutive + 1
    return None


def supply_current(trace: Trace, cfg, window: Optional[tuple] = None) -> float:
    """Time-averaged current drawn from the bias rail.

    The average runs over ``window`` or, by default, between the first and
    last charging onsets so it spans a whole number of periods.  Each sample
    carries the device states valid until the next sample, and ``v`` is
    taken linear between samples.
    """
    t = np.asarray(trace.t)
    if window is None:
        onsets = extract_phase(trace).onsets
        window = (onsets[0], onsets[-1])
    t_a, t_b = window
    if not t_b > t_a:
        raise InsufficientEventsError("averaging window shorter than one period")
    if trace.state2 is None:
        table = np.array([top_conductance(cfg, s) for s in (0, 1)])
        g = table[trace.state1]
    else:
        table = np.array([[top_conductance(cfg, s1, s2) for s2 in (0, 1)] for s1 in (0, 1)])
        g = table[trace.state1, trace.state2]
    v = np.asarray(trace.v)
    k0 = np.searchsorted(t, t_a, side="left")
    k1 = np.searchsorted(t, t_b, side="right") - 1
    if k1 - k0 < 1:
        raise InsufficientEventsError("averaging window holds fewer than two samples")
    ts, vs, gs = t[k0:k1 + 1], v[k0:k1 + 1], g[k0:k1 + 1]
    dt = np.diff(ts)
    charge = np.sum(dt * gs[:-1] * (cfg.v_dd - 0.5 * (vs[:-1] + vs[1:])))
    return float(charge / (ts[-1] - ts[0]))


def phase_winding(phase_map: np.ndarray, loop: Sequence[tuple]) -> int:
    """Net number of 2*pi turns of the phase around a closed loop of cells.

    ``phase_map`` is indexed ``[y-1, x-1]``; ``loop`` lists 1-based ``(x, y)``
    cells, each a 4-neighbour of the next, and the last a neighbour of the
    first (a repeated first cell at the end is accepted).
    """
    loop = [tuple(c) for c in loop]
    if len(loop) > 1 and loop[0] == loop[-1]:
        loop = loop[:-1]
    if len(loop) < 4:
        raise ValueError("a closed grid loop needs at least four cells")
    closed = loop + [loop[0]]
    total = 0.0
    for (x0, y0), (x1, y1) in zip(closed[:-1], closed[1:]):
        if abs(x0 - x1) + abs(y0 - y1) != 1:
            raise ValueError(f"cells {(x0, y0)} and {(x1, y1)} are not adjacent: open path")
        total += wrap_phase(phase_map[y1 - 1, x1 - 1] - phase_map[y0 - 1, x0 - 1])
    return int(round(total / TWO_PI))


def common_time(series: Iterable[PhaseSeries]) -> float:
    """Latest time at which every series has a defined phase."""
    series = list(series)
    t = min(s.end for s in series)
    if t < max(s.start for s in series):
        raise InsufficientEventsError("series do not overlap")
    return t


def phase_map(onsets: Sequence[np.ndarray], width: int, height: int, t: float) -> np.ndarray:
    """Grid of phases at ``t`` (rows = y, columns = x) from per-cell onsets."""
    out = np.empty(width * height)
    for i, o in enumerate(onsets):
        out[i] = PhaseSeries(o).phase(t)
    return out.reshape(height, width)


def local_antiphase(phases: np.ndarray, edges: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Cells whose masked edges lead, on average, to anti-phase neighbours.

    ``phases`` is flat, ``edges`` an (E, 2) index array and ``mask`` selects
    the edges that count (e.g. the Off edges).  A cell with no selected edge
    is never classified anti-phase.
    """
    n = len(phases)
    a, b = edges[mask, 0], edges[mask, 1]
    c = np.cos(phases[a] - phases[b])
    total = np.bincount(a, c, minlength=n) + np.bincount(b, c, minlength=n)
    count = np.bincount(a, minlength=n) + np.bincount(b, minlength=n)
    return (count > 0) & (total < 0)


def phase_matrix(onsets: Sequence[np.ndarray], times) -> np.ndarray:
    """Phases of every cell at every time, shape ``(len(times), n_cells)``.

    NaN where a cell has fewer than two onsets or ``t`` lies outside its
    onset span.
    """
    times = np.asarray(times, dtype=float)
    out = np.full((len(times), len(onsets)), np.nan)
    for i, o in enumerate(onsets):
        if len(o) < 2:
            continue
        ok = (times >= o[0]) & (times <= o[-1])
        k = np.clip(np.searchsorted(o, times, side="right") - 1, 0, len(o) - 2)
        phi = TWO_PI * (times - o[k]) / (o[k + 1] - o[k])
        phi = np.where(phi >= TWO_PI, 0.0, phi)
        out[ok, i] = phi[ok]
    return out


def antiphase_onset_times(onsets: Sequence[np.ndarray], edges: np.ndarray,
                          mask: np.ndarray, times: np.ndarray) -> np.ndarray:
    """First of ``times`` at which each cell is locally anti-phase (NaN if never).

    The test is :func:`local_antiphase` over the masked edges whose two
    ends both have a phase at that time.
    """
    times = np.asarray(times, dtype=float)
    n = len(onsets)
    first = np.full(n, np.nan)
    sel = np.asarray(edges)[np.asarray(mask, bool)]
    if len(sel) == 0 or len(times) == 0:
        return first
    m = len(sel)
    rows = np.concatenate([np.arange(m), np.arange(m)])
    cols = np.concatenate([sel[:, 0], sel[:, 1]])
    scatter = sp.csr_matrix((np.ones(2 * m), (rows, cols)), shape=(m, n))
    for start in range(0, len(times), 512):
        chunk = times[start:start + 512]
        phases = phase_matrix(onsets, chunk)
        a, b = phases[:, sel[:, 0]], phases[:, sel[:, 1]]
        both = np.isfinite(a) & np.isfinite(b)
        c = np.where(both, np.cos(np.nan_to_num(a) - np.nan_to_num(b)), 0.0)
        total = np.asarray(scatter.T.dot(c.T)).T
        count = np.asarray(scatter.T.dot(both.T.astype(float))).T
        anti = (count > 0) & (total < 0)
        hit = anti.any(axis=0) & np.isnan(first)
        first[hit] = chunk[np.argmax(anti[:, hit], axis=0)]
    return first


def live_phases(t: float, last_onset: np.ndarray, prev_onset: np.ndarray) -> np.ndarray:
    """Phase estimate at ``t`` from the two latest onsets (NaN where unknown).

    Extrapolates with the most recent period, so it is meant for run-time
    triggers rather than post-hoc analysis.
    """
    period = last_onset - prev_onset
    with np.errstate(invalid="ignore", divide="ignore"):
        phi = TWO_PI * (t - last_onset) / period
    return np.mod(phi, TWO_PI)


def classify_against_reference(phases: np.ndarray, reference_phase: float) -> np.ndarray:
    """True where ``|wrap(phi - ref) - pi| < pi/2``, i.e. ``cos(phi - ref) < 0``."""
    return np.cos(np.asarray(phases) - reference_phase) < 0
