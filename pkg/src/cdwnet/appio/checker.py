"""Recompute a run summary's metrics from the CSV files it ships with.

Usage: ``python -m cdwnet.appio.checker OUT_DIR``.  Exit status 0 when every
metric matches within a relative tolerance of 1e-9, 1 otherwise.
"""
from __future__ import annotations

import csv
import json
import math
import os
import sys

import numpy as np

from ..analysis import InsufficientEventsError, supply_current
from ..cell import Trace, TransitionEvent, analytic_period
from ..device import DeviceState
from ..scenarios import Disk
from .config import parse_config
from .outputs import cell_metrics, file_digest, network_metrics

__all__ = ["read_trace_csv", "read_events_csv", "check_outputs", "main"]

REL_TOL = 1e-9


def read_trace_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != ["t", "v", "state1", "state2"]:
        raise ValueError(f"{path}: unexpected header {rows[0]}")
    body = rows[1:]
    t = np.array([float(r[0]) for r in body])
    v = np.array([float(r[1]) for r in body])
    s1 = np.array([int(r[2]) for r in body], dtype=np.uint8)
    s2 = None if not body or body[0][3] == "" else np.array([int(r[3]) for r in body], dtype=np.uint8)
    return t, v, s1, s2


def read_events_csv(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.size == 0:
        data = np.zeros((0, 5))
    return (data[:, 0], data[:, 1].astype(int), data[:, 2].astype(int),
            data[:, 3].astype(np.uint8), data[:, 4].astype(np.uint8))


def _events_from_states(t, s1, s2):
    events = []
    for k in range(1, len(t)):
        if s1[k] != s1[k - 1]:
            events.append(TransitionEvent(float(t[k]), 1, DeviceState(int(s1[k]))))
        if s2 is not None and s2[k] != s2[k - 1]:
            events.append(TransitionEvent(float(t[k]), 2, DeviceState(int(s2[k]))))
    return events


def _compare(reported, recomputed, path, out):
    if isinstance(reported, dict) and isinstance(recomputed, dict):
        for key in sorted(set(reported) | set(recomputed)):
            _compare(reported.get(key), recomputed.get(key), f"{path}.{key}", out)
        return
    if isinstance(recomputed, np.ndarray):
        recomputed = recomputed.tolist()
    if isinstance(reported, list) and isinstance(recomputed, list):
        if len(reported) != len(recomputed):
            out[path] = (False, f"length {len(reported)} != {len(recomputed)}")
            return
        bad = [i for i, (a, b) in enumerate(zip(reported, recomputed))
               if not _close(a, b)]
        out[path] = (not bad, f"{len(bad)} mismatches" if bad else "ok")
        return
    ok = _close(reported, recomputed)
    out[path] = (ok, "ok" if ok else f"{reported!r} != {recomputed!r}")


def _close(a, b) -> bool:
    if isinstance(b, (float, np.floating)) and not math.isfinite(b):
        b = None
    if a is None or b is None:
        return a is None and b is None
    if isinstance(a, (int, float)) and isinstance(b, (int, float, np.integer, np.floating)):
        return math.isclose(float(a), float(b), rel_tol=REL_TOL, abs_tol=0.0) or a == b
    return a == b


def check_outputs(out_dir) -> dict:
    """``{metric path: (ok, detail)}`` for every metric in ``summary.json``."""
    with open(os.path.join(out_dir, "summary.json")) as fh:
        summary = json.load(fh)
    cfg = parse_config(summary["config"])
    result = {}
    if summary["kind"] == "cell":
        t, v, s1, s2 = read_trace_csv(os.path.join(out_dir, "trace_cell.csv"))
        cell = cfg.cell_config()
        trace = Trace(t, v, s1, s2, _events_from_states(t, s1, s2))
        try:
            current = supply_current(trace, cell)
        except (InsufficientEventsError, ValueError):
            current = None
        metrics = cell_metrics(t, v, s1, s2, current)
        if "analytic_period" in summary["metrics"]:
            metrics["analytic_period"] = analytic_period(cell).period
    else:
        events_path = os.path.join(out_dir, "events.csv")
        result["event_log_sha256"] = (file_digest(events_path) == summary["event_log_sha256"],
                                      "digest")
        t, x, y, d, s = read_events_csv(events_path)
        w, h = summary["width"], summary["height"]
        cells = (y - 1) * w + (x - 1)
        groups = {}
        meta = summary.get("meta", {})
        if "radius" in meta:
            disk = Disk(tuple(meta["center"]), meta["radius"])
            inside = np.array([disk.contains((i % w + 1, i // w + 1)) for i in range(w * h)])
            groups = {"inside": inside, "outside": ~inside}
        target = None
        if summary["kind"] == "grid":
            target = "in-phase" if cfg["grid.edge_mode"] == "on" else "anti-phase"
        metrics = network_metrics(t, cells, d, s, w, h, summary["t_end"],
                                  analytic_period(cfg.dd_config()).period, groups=groups,
                                  pair_target=target)
    _compare(summary["metrics"], metrics, "metrics", result)
    return result


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 1:
        print("usage: python -m cdwnet.appio.checker OUT_DIR", file=sys.stderr)
        return 1
    result = check_outputs(argv[0])
    failed = {k: v[1] for k, v in result.items() if not v[0]}
    for key, (ok, detail) in sorted(result.items()):
        print(f"{'ok  ' if ok else 'FAIL'} {key}: {detail}")
    print(json.dumps({"status": "ok" if not failed else "mismatch", "checked": len(result),
                      "failed": sorted(failed)}))
    return 0 if not failed else 1


if __name__ == "__main__":
    sys.exit(main())
