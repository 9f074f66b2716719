"""CSV/JSON run artifacts and the metrics stored in the run summary.

Layout of an output directory::

    summary.json            run summary (config echo, metrics, digests)
    timing.json             wall-clock only; the one file that varies between reruns
    trace_<name>.csv        t,v,state1,state2
    frames/frame_<index>_<time>.csv   voltage map, row = y, column = x
    events.csv              t,cell_x,cell_y,device,new_state

Numbers in CSV files carry 17 significant digits so they read back exactly.
Device states are 0 = insulating, 1 = metallic; ``state2`` is empty for a
D-R cell.  The metrics in ``summary.json`` are computed by the functions in
this module from the same arrays that are written, and
:mod:`cdwnet.appio.checker` recomputes them from the files.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
from typing import Dict, Optional, Sequence

import numpy as np

from ..analysis import PhaseSeries, order_parameter, sync_time

__all__ = [
    "fmt",
    "frame_name",
    "write_trace_csv",
    "write_frame_csv",
    "write_events_csv",
    "write_json",
    "write_outputs",
    "file_digest",
    "cell_metrics",
    "network_metrics",
]


def fmt(x) -> str:
    return "%.17g" % x


def frame_name(index: int, t: float) -> str:
    return f"frame_{index:05d}_{t:.8f}.csv"


def _open(path):
    try:
        return open(path, "w", encoding="utf-8", newline="\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


def write_trace_csv(path, t, v, state1, state2=None) -> None:
    with _open(path) as fh:
        fh.write("t,v,state1,state2\n")
        if state2 is None:
            for row in zip(t, v, state1):
                fh.write(f"{fmt(row[0])},{fmt(row[1])},{int(row[2])},\n")
        else:
            for row in zip(t, v, state1, state2):
                fh.write(f"{fmt(row[0])},{fmt(row[1])},{int(row[2])},{int(row[3])}\n")


def write_frame_csv(path, frame: np.ndarray) -> None:
    with _open(path) as fh:
        for row in np.atleast_2d(frame):
            fh.write(",".join(fmt(x) for x in row) + "\n")


def write_events_csv(path, t, cell_x, cell_y, device, new_state) -> None:
    with _open(path) as fh:
        fh.write("t,cell_x,cell_y,device,new_state\n")
        for row in zip(t, cell_x, cell_y, device, new_state):
            fh.write(f"{fmt(row[0])},{int(row[1])},{int(row[2])},{int(row[3])},{int(row[4])}\n")


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def write_json(path, obj) -> None:
    with _open(path) as fh:
        json.dump(_clean(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_outputs(out_dir, summary: dict, traces: Optional[Dict[str, tuple]] = None,
                  snapshots: Optional[tuple] = None, events: Optional[tuple] = None,
                  timing: Optional[dict] = None) -> list:
    """Write a run's artifacts; returns the paths written.

    ``traces`` maps a name to ``(t, v, state1, state2_or_None)``;
    ``snapshots`` is ``(times, frames)``; ``events`` is
    ``(t, cell_x, cell_y, device, new_state)``.  The SHA-256 of the event
    log is added to the summary as ``event_log_sha256``.
    """
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for name, arrays in (traces or {}).items():
        path = os.path.join(out_dir, f"trace_{name}.csv")
        write_trace_csv(path, *arrays)
        written.append(path)
    if snapshots is not None:
        frame_dir = os.path.join(out_dir, "frames")
        os.makedirs(frame_dir, exist_ok=True)
        for k, (t, frame) in enumerate(zip(*snapshots)):
            path = os.path.join(frame_dir, frame_name(k, t))
            write_frame_csv(path, frame)
            written.append(path)
    summary = dict(summary)
    if events is not None:
        path = os.path.join(out_dir, "events.csv")
        write_events_csv(path, *events)
        written.append(path)
        summary["event_log_sha256"] = file_digest(path)
    path = os.path.join(out_dir, "summary.json")
    write_json(path, summary)
    written.append(path)
    if timing is not None:
        path = os.path.join(out_dir, "timing.json")
        write_json(path, timing)
        written.append(path)
    return written


# -- metrics -----------------------------------------------------------------

def _onsets(t, state1) -> np.ndarray:
    """Times where ``state1`` switches 0 -> 1 (charging onsets)."""
    s = np.asarray(state1)
    idx = np.flatnonzero((s[1:] == 1) & (s[:-1] == 0)) + 1
    return np.asarray(t)[idx]


def cell_metrics(t, v, state1, state2, supply_current: Optional[float]) -> dict:
    """Periods and supply current of a single-cell trace."""
    onsets = _onsets(t, state1)
    periods = np.diff(onsets)
    return {
        "n_samples": int(len(t)),
        "charging_onsets": onsets,
        "periods": periods,
        "mean_period": float(np.mean(periods)) if len(periods) else None,
        "supply_current": supply_current,
    }


def network_metrics(t, cell, device, new_state, width: int, height: int, t_end: float,
                    nominal_period: float, groups: Optional[Dict[str, np.ndarray]] = None,
                    pair_target: Optional[str] = None) -> dict:
    """Collective metrics of a network run from its event log.

    A cell counts as oscillating when it has at least two charging onsets
    and one in the last three nominal periods.  Order parameters use the
    phases of oscillating cells at the latest time where all of them have
    a phase.  ``groups`` maps names to boolean cell masks for per-region
    order parameters.  For a two-cell run ``pair_target`` ("in-phase" or
    "anti-phase") adds the lock time in cycles.
    """
    n = width * height
    t, cell = np.asarray(t, float), np.asarray(cell, np.intp)
    device, new_state = np.asarray(device), np.asarray(new_state)
    mask = (device == 1) & (new_state == 1)
    ot, oc = t[mask], cell[mask]
    onsets = [ot[oc == i] for i in range(n)]
    counts = np.array([len(o) for o in onsets])
    alive = np.array([len(o) >= 2 and o[-1] >= t_end - 3.0 * nominal_period for o in onsets])
    out = {
        "n_events": int(len(t)),
        "n_onsets": int(counts.sum()),
        "oscillating_cells": int(alive.sum()),
    }
    periods = [np.diff(onsets[i]) for i in np.flatnonzero(alive)]
    out["mean_period"] = float(np.mean(np.concatenate(periods))) if periods else None
    order = {}
    if alive.any():
        t_c = min(onsets[i][-1] for i in np.flatnonzero(alive))
        t_c = max(t_c, max(onsets[i][0] for i in np.flatnonzero(alive)))
        phases = np.full(n, np.nan)
        for i in np.flatnonzero(alive):
            s = PhaseSeries(onsets[i])
            if s.defined(t_c):
                phases[i] = s.phase(t_c)
        out["phase_time"] = float(t_c)
        sets = {"all": np.ones(n, bool)}
        sets.update(groups or {})
        for name, m in sets.items():
            sel = np.asarray(m, bool) & np.isfinite(phases)
            order[name] = order_parameter(phases[sel]) if sel.any() else None
    out["order_parameter"] = order
    if pair_target is not None and n == 2 and all(c >= 2 for c in counts):
        try:
            out["lock_cycles"] = sync_time(PhaseSeries(onsets[0]), PhaseSeries(onsets[1]),
                                           pair_target)
        except ValueError:
            out["lock_cycles"] = None
    return out
