"""2-D grid of D-D cells with switchable nearest-neighbour coupling.

Every grid edge carries a fixed coupling capacitor ``c_couple`` and a
resistor whose value is toggled by the coupling switch: ``r_on`` (On,
resistive, pulls neighbours in phase) or ``r_off`` (Off, the capacitor
dominates and neighbours settle in anti-phase).

Because the coupling capacitors tie node derivatives together, the network
obeys ``M v' = f(v, states)`` where ``M = c_cell*I + c_couple*L`` and ``L``
is the grid Laplacian.  ``M`` never changes at run time and is factorized
once.  ``f`` holds the cell branch currents plus the resistive coupling
currents.

Cells are addressed by 1-based ``(x, y)`` with ``x`` in ``1..width`` and
``y`` in ``1..height``; the flat index is row-major, ``(y-1)*width + (x-1)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable, Iterable, Mapping, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp
import scipy.linalg as sla
import scipy.sparse.linalg as spla
from scipy.linalg.lapack import dpbtrs as _pbtrs

from .cell import C0, T0, DDCellConfig, RhsModel
from .device import transition_array

__all__ = [
    "EdgeMode",
    "CouplingParams",
    "Lattice",
    "NetworkState",
    "CapMatrix",
    "NetworkSimulator",
    "NetworkEvent",
    "RunResult",
    "SnapshotObserver",
    "CellTraceObserver",
    "SupplyCurrentObserver",
    "EventLogObserver",
    "build_lattice",
    "assemble_cap_matrix",
    "network_rhs",
    "network_step",
    "set_edge_mode",
    "run",
    "uniform_state",
]

RESIDUAL_TOL = 1e-10
DENSE_MAX = 64  # networks up to this many cells use dense operators (less call overhead)


class EdgeMode(IntEnum):
    OFF = 0
    ON = 1


@dataclass(frozen=True)
class CouplingParams:
    """Coupling switch resistances and the fixed coupling capacitance.

    The default ``c_couple`` is 0.25 of the default cell capacitance.
    Resistances may be ``math.inf`` (no resistive path).
    """

    r_on: float = 0.1
    r_off: float = 10.0
    c_couple: float = 0.25 * C0

    def __post_init__(self):
        if not (0 < self.r_on <= self.r_off):
            raise ValueError(
                f"need 0 < r_on <= r_off, got r_on={self.r_on}, r_off={self.r_off}")
        if not self.c_couple >= 0:
            raise ValueError(f"c_couple must be >= 0, got {self.c_couple}")

    def conductance(self, mode: EdgeMode) -> float:
        r = self.r_on if EdgeMode(mode) is EdgeMode.ON else self.r_off
        return 0.0 if math.isinf(r) else 1.0 / r


Cell = tuple  # (x, y), 1-based


class Lattice:
    """Grid geometry, identical cell parameters and per-edge switch modes."""

    def __init__(self, width: int, height: int, cell: DDCellConfig,
                 coupling: CouplingParams, boundary: str = "open",
                 bias: Optional[np.ndarray] = None):
        if width < 1 or height < 1:
            raise ValueError(f"grid must be at least 1x1, got {width}x{height}")
        if boundary not in ("open", "periodic"):
            raise ValueError(f"boundary must be 'open' or 'periodic', got {boundary!r}")
        self.width = int(width)
        self.height = int(height)
        self.cell = cell
        self.coupling = coupling
        self.boundary = boundary
        self.edges = _grid_edges(self.width, self.height, boundary)
        self.edge_modes = np.full(len(self.edges), EdgeMode.ON, dtype=np.uint8)
        self._edge_lookup = {(int(a), int(b)): k for k, (a, b) in enumerate(self.edges)}
        n = self.n_cells
        self.bias = np.full(n, cell.v_dd) if bias is None else np.asarray(bias, float).copy()
        if self.bias.shape != (n,):
            raise ValueError(f"bias must have {n} entries")
        self._listeners = []

    @property
    def n_cells(self) -> int:
        return self.width * self.height

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def index(self, cell: Cell) -> int:
        x, y = cell
        if not (1 <= x <= self.width and 1 <= y <= self.height):
            raise IndexError(f"cell {cell} outside {self.width}x{self.height} grid")
        return (int(y) - 1) * self.width + (int(x) - 1)

    def coords(self, index: int) -> Cell:
        y, x = divmod(int(index), self.width)
        return (x + 1, y + 1)

    def all_cells(self):
        return [self.coords(i) for i in range(self.n_cells)]

    def edge_index(self, a: Cell, b: Cell) -> int:
        i, j = sorted((self.index(a), self.index(b)))
        try:
            return self._edge_lookup[(i, j)]
        except KeyError:
            raise KeyError(f"cells {a} and {b} are not grid neighbours") from None

    def edge_cells(self, k: int):
        i, j = self.edges[k]
        return self.coords(i), self.coords(j)

    def neighbors(self, cell: Cell):
        i = self.index(cell)
        out = []
        for a, b in self.edges:
            if a == i:
                out.append(self.coords(b))
            elif b == i:
                out.append(self.coords(a))
        return out

    def edge_conductances(self) -> np.ndarray:
        g_on = self.coupling.conductance(EdgeMode.ON)
        g_off = self.coupling.conductance(EdgeMode.OFF)
        return np.where(self.edge_modes == EdgeMode.ON, g_on, g_off)

    def set_edge_modes(self, edge_ids, mode: EdgeMode) -> None:
        edge_ids = np.asarray(list(edge_ids), dtype=np.intp)
        if len(edge_ids) == 0:
            return
        self.edge_modes[edge_ids] = EdgeMode(mode)
        for fn in self._listeners:
            fn()

    def subscribe(self, fn: Callable[[], None]) -> None:
        """Register a callback run after every edge-mode change."""
        self._listeners.append(fn)

    def mode_map(self) -> dict:
        return {self.edge_cells(k): EdgeMode(m) for k, m in enumerate(self.edge_modes)}

    def __repr__(self):
        n_off = int(np.sum(self.edge_modes == EdgeMode.OFF))
        return (f"Lattice({self.width}x{self.height}, edges={self.n_edges}, "
                f"off={n_off}, boundary={self.boundary!r})")


def _grid_edges(width, height, boundary):
    edges = set()
    for y in range(height):
        for x in range(width):
            i = y * width + x
            if x + 1 < width:
                edges.add((i, i + 1))
            elif boundary == "periodic" and width > 2:
                edges.add(tuple(sorted((i, y * width))))
            if y + 1 < height:
                edges.add((i, i + width))
            elif boundary == "periodic" and height > 2:
                edges.add(tuple(sorted((i, x))))
    return np.array(sorted(edges), dtype=np.intp).reshape(-1, 2)


def build_lattice(width: int = 30, height: int = 30,
                  cell_config: Optional[DDCellConfig] = None,
                  coupling: Optional[CouplingParams] = None,
                  edge_mode_map: Union[None, Mapping, Callable] = None,
                  boundary: str = "open",
                  default_mode: EdgeMode = EdgeMode.ON) -> Lattice:
    """Assemble a lattice; edges not named in ``edge_mode_map`` get ``default_mode``.

    ``edge_mode_map`` is either a mapping ``{((x1, y1), (x2, y2)): mode}`` or
    a callable ``f(cell_a, cell_b) -> mode`` evaluated on every edge.
    """
    lat = Lattice(width, height, cell_config or DDCellConfig(),
                  coupling or CouplingParams(), boundary)
    lat.edge_modes[:] = EdgeMode(default_mode)
    if callable(edge_mode_map):
        for k in range(lat.n_edges):
            a, b = lat.edge_cells(k)
            lat.edge_modes[k] = EdgeMode(edge_mode_map(a, b))
    elif edge_mode_map:
        for (a, b), mode in edge_mode_map.items():
            lat.edge_modes[lat.edge_index(a, b)] = EdgeMode(mode)
    return lat


def set_edge_mode(lattice: Lattice, edge, mode: EdgeMode) -> None:
    """Switch one edge, given as an index or a pair of neighbouring cells."""
    if isinstance(edge, (int, np.integer)):
        if not 0 <= edge < lattice.n_edges:
            raise KeyError(f"unknown edge {edge}")
        k = int(edge)
    else:
        k = lattice.edge_index(*edge)
    lattice.set_edge_modes([k], mode)


def incidence_matrix(lattice: Lattice) -> sp.csr_matrix:
    """Signed edge-cell incidence ``D`` with ``(D v)_e = v_a - v_b``."""
    E, n = lattice.n_edges, lattice.n_cells
    rows = np.repeat(np.arange(E), 2)
    cols = lattice.edges.ravel()
    vals = np.tile([1.0, -1.0], E)
    return sp.csr_matrix((vals, (rows, cols)), shape=(E, n))


@dataclass
class CapMatrix:
    """``M = c_cell*I + c_couple*L`` with its factorization.

    Open-boundary grids are banded (half-bandwidth = width) and get a banded
    Cholesky factor; other layouts fall back to sparse LU.  Networks of at
    most ``DENSE_MAX`` cells keep a dense inverse instead.

    :meth:`solve` splits ``M^-1 f = f/c_cell + w`` with
    ``M w = -(c_couple/c_cell) L f`` and evaluates ``L f`` through edge
    differences, so a uniform ``f`` gives an exactly uniform result.
    """

    matrix: sp.csc_matrix
    c_cell: float
    c_couple: float
    incidence: sp.csr_matrix

    def __post_init__(self):
        self._incidence_t = self.incidence.T.tocsr()
        self._band = None
        self._lu = None
        self._inv = None
        if self.n <= DENSE_MAX:
            self._incidence_t = self._incidence_t.toarray()
            self._dense_d = self.incidence.toarray()
            self._dense_m = self.matrix.toarray()
        else:
            self._dense_d = self._dense_m = None
        if self.c_couple > 0 and self.incidence.shape[0]:
            self._factorize()

    def _factorize(self):
        if self.n <= DENSE_MAX:
            self._inv = np.linalg.inv(self.matrix.toarray())
            return
        m = self.matrix.tocoo()
        bw = int(np.max(np.abs(m.row - m.col))) if m.nnz else 0
        n = self.n
        if bw < max(8, n // 4):
            ab = np.zeros((bw + 1, n))
            upper = m.col >= m.row
            ab[bw + m.row[upper] - m.col[upper], m.col[upper]] = m.data[upper]
            self._band = sla.cholesky_banded(ab, lower=False)
        else:
            self._lu = spla.splu(self.matrix.tocsc())

    @property
    def method(self) -> str:
        if self._inv is not None:
            return "dense-inverse"
        if self._band is not None:
            return "banded-cholesky"
        return "sparse-lu" if self._lu is not None else "diagonal"

    def _solve_factored(self, rhs):
        if self._inv is not None:
            return self._inv @ rhs
        if self._band is not None:
            x, info = _pbtrs(self._band, rhs)
            if info != 0:
                raise np.linalg.LinAlgError(f"banded solve failed (info={info})")
            return x
        return self._lu.solve(rhs)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def laplacian_apply(self, x: np.ndarray) -> np.ndarray:
        d = self.incidence if self._dense_d is None else self._dense_d
        return self._incidence_t @ (d @ x)

    def solve(self, f: np.ndarray) -> np.ndarray:
        base = f / self.c_cell
        if self.c_couple == 0 or self.incidence.shape[0] == 0:
            return base
        rhs = (-self.c_couple / self.c_cell) * self.laplacian_apply(f)
        return base + self._solve_factored(rhs)

    def residual(self, x: np.ndarray, f: np.ndarray) -> float:
        nf = np.linalg.norm(f)
        m = self.matrix if self._dense_m is None else self._dense_m
        r = np.linalg.norm(m @ x - f)
        return r / nf if nf > 0 else r

    def lambda_min(self) -> float:
        """Smallest eigenvalue; ``c_cell`` because ``L`` has the constant null vector."""
        return self.c_cell

    def checks(self) -> dict:
        m = self.matrix.tocsr()
        diag = m.diagonal()
        off = abs(m).sum(axis=1).A1 - np.abs(diag)
        return {
            "symmetric": bool(abs(m - m.T).max() == 0) if m.nnz else True,
            "positive_diagonal": bool(np.all(diag > 0)),
            "strictly_diagonally_dominant": bool(np.all(diag > off)),
            "row_sums_equal_c_cell": bool(np.allclose(m @ np.ones(self.n), self.c_cell,
                                                      rtol=1e-14, atol=0)),
        }


def assemble_cap_matrix(lattice: Lattice) -> CapMatrix:
    c_cell = lattice.cell.cap
    if not c_cell > 0:
        raise ValueError(f"cell capacitance must be positive, got {c_cell}")
    cc = lattice.coupling.c_couple
    D = incidence_matrix(lattice)
    L = (D.T @ D).tocsc()
    M = (c_cell * sp.identity(lattice.n_cells, format="csc") + cc * L).tocsc()
    M.sort_indices()
    return CapMatrix(M, c_cell, cc, D)


@dataclass
class NetworkState:
    v: np.ndarray
    state1: np.ndarray
    state2: np.ndarray
    t: float = 0.0

    def copy(self) -> "NetworkState":
        return NetworkState(self.v.copy(), self.state1.copy(), self.state2.copy(), self.t)


def uniform_state(lattice: Lattice, v: float = 1.0, state1=1, state2=0,
                  t: float = 0.0) -> NetworkState:
    """All cells at the same voltage and device states (default: start of charging)."""
    n = lattice.n_cells
    return NetworkState(np.full(n, float(v)), np.full(n, state1, dtype=np.uint8),
                        np.full(n, state2, dtype=np.uint8), t)


def _cell_conductances(lattice: Lattice, s1: np.ndarray, s2: np.ndarray):
    cfg = lattice.cell
    d1, d2 = cfg.device1, cfg.device2
    g1 = np.where(s1 == 1, d1.g_metallic, d1.g_insulating)
    g2 = np.where(s2 == 1, d2.g_metallic, d2.g_insulating)
    if cfg.rhs_model is RhsModel.PAPER:
        charging = (s1 == 1) & (s2 == 0)
        discharging = (s1 == 0) & (s2 == 1)
        g2 = np.where(charging, 0.0, g2)
        g1 = np.where(discharging, 0.0, g1)
    return g1, g2


def network_rhs(lattice: Lattice, state: NetworkState,
                incidence: Optional[sp.csr_matrix] = None) -> np.ndarray:
    """Node currents ``f``: cell branch currents plus resistive coupling."""
    g1, g2 = _cell_conductances(lattice, state.state1, state.state2)
    v = state.v
    f = (lattice.bias - v) * g1 - v * g2
    if lattice.n_edges:
        D = incidence_matrix(lattice) if incidence is None else incidence
        f = f - D.T @ (lattice.edge_conductances() * (D @ v))
    return f


class NetworkEvent(tuple):
    """``(t, cell_index, device, new_state)``."""

    __slots__ = ()

    def __new__(cls, t, cell, device, new_state):
        return tuple.__new__(cls, (t, cell, device, new_state))

    t = property(lambda s: s[0])
    cell = property(lambda s: s[1])
    device = property(lambda s: s[2])
    new_state = property(lambda s: s[3])


class NetworkSimulator:
    """Explicit RK4 integrator of ``M v' = f`` with event localization.

    Each step of length ``dt`` is taken with classical RK4.  If the step end
    would toggle any device, the crossing instants are estimated on the
    cubic Hermite interpolant of the step, the earliest one is refined by
    bracketed Newton iteration on re-integrated RK4 sub-steps (``M v' = f``
    re-solved at every trial point) to ``event_tol``, the devices toggling
    there (plus any whose estimated crossing lies within ``group_tol``)
    switch, and the remainder of the step is integrated again.  Step end
    times are ``t_start + n*dt`` so long runs do not drift.
    """

    def __init__(self, lattice: Lattice, state: NetworkState,
                 dt: float = 1e-3 * T0, cap: Optional[CapMatrix] = None,
                 event_tol: Optional[float] = None, group_tol: float = 1e-8 * T0,
                 check_residual: bool = True):
        if not dt > 0:
            raise ValueError(f"dt must be positive, got {dt}")
        self.lattice = lattice
        self.cap = cap if cap is not None else assemble_cap_matrix(lattice)
        bound = self.stability_bound()
        if dt >= bound:
            raise ValueError(f"dt={dt} exceeds the stability bound {bound:.6g}")
        n = lattice.n_cells
        if state.v.shape != (n,) or state.state1.shape != (n,) or state.state2.shape != (n,):
            raise ValueError(f"state vectors must have {n} entries")
        self.dt = float(dt)
        self.event_tol = 1e-10 * self.dt if event_tol is None else float(event_tol)
        self.group_tol = float(group_tol)
        self.check_residual = check_residual
        self.v = state.v.astype(float).copy()
        self.s1 = state.state1.astype(np.uint8).copy()
        self.s2 = state.state2.astype(np.uint8).copy()
        self.t_start = float(state.t)
        self.t = float(state.t)
        self.n_steps = 0
        self.max_residual = 0.0
        self.event_count = 0
        self.last_onset = np.full(n, np.nan)
        self.prev_onset = np.full(n, np.nan)
        self._D = self.cap.incidence
        self._Dt = self._D.T.tocsr()
        if n <= DENSE_MAX:
            self._D, self._Dt = self._D.toarray(), self._Dt.toarray()
        self._step_listeners = []
        self._substep_listeners = []
        self._event_listeners = []
        self._refresh_coupling()
        self._refresh_cells()
        lattice.subscribe(self._refresh_coupling)

    # -- configuration -------------------------------------------------------

    def stability_bound(self) -> float:
        """``2 * lambda_min(M) / g_max`` with every switch On."""
        lat = self.lattice
        d1, d2 = lat.cell.device1, lat.cell.device2
        g_cell = max(d1.g_metallic, d1.g_insulating) + max(d2.g_metallic, d2.g_insulating)
        deg = np.bincount(lat.edges.ravel(), minlength=lat.n_cells) if lat.n_edges else np.zeros(1)
        g_edge = max(lat.coupling.conductance(EdgeMode.ON), lat.coupling.conductance(EdgeMode.OFF))
        g_max = g_cell + float(deg.max()) * g_edge
        return 2.0 * self.cap.lambda_min() / g_max

    def _refresh_coupling(self):
        self._g_edge = self.lattice.edge_conductances()

    def _refresh_cells(self):
        self._g1, self._g2 = _cell_conductances(self.lattice, self.s1, self.s2)
        # cell current = bias*g1 - (g1 + g2)*v
        self._b = self.lattice.bias * self._g1
        self._gsum = self._g1 + self._g2
        self._has_edges = bool(self._D.shape[0])

    def on_step(self, fn):
        self._step_listeners.append(fn)

    def on_substep(self, fn):
        self._substep_listeners.append(fn)

    def on_event(self, fn):
        self._event_listeners.append(fn)

    @property
    def state(self) -> NetworkState:
        return NetworkState(self.v.copy(), self.s1.copy(), self.s2.copy(), self.t)

    def set_state(self, v=None, s1=None, s2=None, cells=None):
        """Overwrite voltages/states (all cells or the given flat indices)."""
        idx = slice(None) if cells is None else np.asarray(cells, dtype=np.intp)
        if v is not None:
            self.v[idx] = v
        if s1 is not None:
            self.s1[idx] = s1
        if s2 is not None:
            self.s2[idx] = s2
        self._refresh_cells()

    # -- dynamics ------------------------------------------------------------

    def currents(self, v: np.ndarray) -> np.ndarray:
        f = self._b - self._gsum * v
        if self._has_edges:
            f -= self._Dt @ (self._g_edge * (self._D @ v))
        return f

    def derivative(self, v: np.ndarray, check: bool = False) -> np.ndarray:
        """``M^-1 f(v)``; with ``check`` also the solve residual and finiteness.

        Non-finite values elsewhere surface in the step-end check.
        """
        f = self.currents(v)
        x = self.cap.solve(f)
        if check:
            if not np.all(np.isfinite(f)):
                raise FloatingPointError(f"non-finite currents at t={self.t}")
            res = self.cap.residual(x, f)
            self.max_residual = max(self.max_residual, res)
            if res > RESIDUAL_TOL:
                raise FloatingPointError(f"solve residual {res:.3g} above {RESIDUAL_TOL}")
        return x

    def _rk4(self, v, h, k1):
        k2 = self.derivative(v + (0.5 * h) * k1)
        k3 = self.derivative(v + (0.5 * h) * k2)
        k4 = self.derivative(v + h * k3)
        return v + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    def _margins(self, v):
        """Signed distance to the next switching level per device (>= 0 fires)."""
        lat = self.lattice
        d1, d2 = lat.cell.device1, lat.cell.device2
        vd1 = lat.bias - v
        m1 = np.where(self.s1 == 0, vd1 - d1.v_high_threshold, d1.v_low_threshold - vd1)
        m2 = np.where(self.s2 == 0, v - d2.v_high_threshold, d2.v_low_threshold - v)
        return m1, m2

    def _fires(self, v):
        lat = self.lattice
        n1 = transition_array(self.s1, lat.bias - v, lat.cell.device1)
        n2 = transition_array(self.s2, v, lat.cell.device2)
        return n1 != self.s1, n2 != self.s2

    def _hermite_roots(self, h, v0, v1, d0, d1, m_sign, level, idx):
        """Earliest root in (0, h] of the cubic Hermite interpolant per candidate.

        A few bisection passes bracket the root, Newton on the cubic finishes.
        """
        p0, p1 = v0[idx] - level, v1[idx] - level
        q0, q1 = d0[idx] * h, d1[idx] * h
        # p(s) = a + b s + c s^2 + d s^3 on s in [0, 1]
        a, b = p0, q0
        c = -3 * p0 - 2 * q0 + 3 * p1 - q1
        d = 2 * p0 + q0 - 2 * p1 + q1
        a, b, c, d = a * m_sign, b * m_sign, c * m_sign, d * m_sign
        lo = np.zeros(len(idx))
        hi = np.ones(len(idx))
        for _ in range(6):
            mid = 0.5 * (lo + hi)
            fired = a + mid * (b + mid * (c + mid * d)) >= 0
            hi = np.where(fired, mid, hi)
            lo = np.where(fired, lo, mid)
        s = 0.5 * (lo + hi)
        for _ in range(4):
            val = a + s * (b + s * (c + s * d))
            der = b + s * (2 * c + s * 3 * d)
            with np.errstate(divide="ignore", invalid="ignore"):
                s_new = s - val / der
            s = np.where(np.isfinite(s_new) & (s_new >= lo) & (s_new <= hi), s_new, s)
        return s * h

    def _localize(self, v, k1, h, v_end):
        """Return ``(tau, v_tau, fire1, fire2)`` for the earliest switching."""
        f1, f2 = self._fires(v_end)
        lat = self.lattice
        d1, d2 = lat.cell.device1, lat.cell.device2
        cells, signs, levels, dev = [], [], [], []
        i1 = np.flatnonzero(f1)
        if len(i1):
            cells.append(i1)
            # device 1 fires when v falls to bias - v_h (I) or rises to bias - v_l (M)
            signs.append(np.where(self.s1[i1] == 0, -1.0, 1.0))
            levels.append(np.where(self.s1[i1] == 0, lat.bias[i1] - d1.v_high_threshold,
                                   lat.bias[i1] - d1.v_low_threshold))
            dev.append(np.ones(len(i1), dtype=np.uint8))
        i2 = np.flatnonzero(f2)
        if len(i2):
            cells.append(i2)
            signs.append(np.where(self.s2[i2] == 0, 1.0, -1.0))
            levels.append(np.where(self.s2[i2] == 0, d2.v_high_threshold, d2.v_low_threshold))
            dev.append(np.full(len(i2), 2, dtype=np.uint8))
        cells = np.concatenate(cells)
        signs = np.concatenate(signs)
        levels = np.concatenate(levels)
        dev = np.concatenate(dev)
        d_end = self.derivative(v_end)
        tau_est = self._hermite_roots(h, v, v_end, k1, d_end, signs, levels, cells)
        first = int(np.argmin(tau_est))
        ci, sg, lv = cells[first], signs[first], levels[first]

        lo, hi, v_hi = 0.0, h, v_end
        x = min(max(tau_est[first], 0.0), h)
        for _ in range(16):
            if x >= hi:
                break
            vx = self._rk4(v, x, k1)
            m = sg * (vx[ci] - lv)
            if m >= 0:
                hi, v_hi = x, vx
            else:
                lo = x
            if hi - lo <= self.event_tol:
                break
            slope = sg * self.derivative(vx)[ci]
            xn = x - m / slope if slope > 0 else 0.5 * (lo + hi)
            if m < 0:
                # approach from the unfired side: land just past the root
                xn = max(xn, x + 0.5 * self.event_tol)
            if not lo < xn < hi:
                xn = 0.5 * (lo + hi)
            x = xn
        tau = hi
        grouped = tau_est <= tau + self.group_tol
        g1, g2 = self._fires(v_hi)
        sel1 = cells[grouped & (dev == 1)]
        sel2 = cells[grouped & (dev == 2)]
        g1[sel1] = True
        g2[sel2] = True
        return tau, v_hi, g1, g2

    def _toggle(self, t, fire1, fire2):
        i1 = np.flatnonzero(fire1)
        i2 = np.flatnonzero(fire2)
        onset = i1[self.s1[i1] == 0]
        self.s1[i1] ^= 1
        self.s2[i2] ^= 1
        self.prev_onset[onset] = self.last_onset[onset]
        self.last_onset[onset] = t
        self._refresh_cells()
        self.event_count += len(i1) + len(i2)
        if self._event_listeners:
            cells = np.concatenate([i1, i2])
            devices = np.concatenate([np.ones(len(i1), np.uint8), np.full(len(i2), 2, np.uint8)])
            new = np.concatenate([self.s1[i1], self.s2[i2]])
            order = np.lexsort((devices, cells))
            for fn in self._event_listeners:
                fn(t, cells[order], devices[order], new[order])

    def step(self) -> None:
        """Advance by one ``dt``, processing every switching event inside it."""
        t_target = self.t_start + (self.n_steps + 1) * self.dt
        first = True
        while True:
            h = t_target - self.t
            k1 = self.derivative(self.v, check=self.check_residual and first)
            first = False
            v_end = self._rk4(self.v, h, k1)
            if not np.all(np.isfinite(v_end)):
                raise FloatingPointError(f"non-finite voltages at t={t_target}")
            f1, f2 = self._fires(v_end)
            if not (f1.any() or f2.any()):
                self._emit_substep(self.t, self.v, t_target, v_end)
                self.v, self.t = v_end, t_target
                break
            tau, v_tau, g1, g2 = self._localize(self.v, k1, h, v_end)
            t_ev = self.t + tau if tau < h else t_target
            self._emit_substep(self.t, self.v, t_ev, v_tau)
            self.v, self.t = v_tau, t_ev
            self._toggle(t_ev, g1, g2)
            if t_ev >= t_target:
                break
        self.n_steps += 1
        for fn in self._step_listeners:
            fn(self)

    def _emit_substep(self, t0, v0, t1, v1):
        for fn in self._substep_listeners:
            fn(t0, v0, t1, v1, self._g1)

    def advance(self, n_steps: int) -> None:
        for _ in range(int(n_steps)):
            self.step()


def network_step(lattice: Lattice, cap: CapMatrix, state: NetworkState,
                 dt: float, **kwargs) -> NetworkState:
    """One step from ``state``; returns the new state."""
    sim = NetworkSimulator(lattice, state, dt, cap=cap, **kwargs)
    sim.step()
    return sim.state


# -- observers ---------------------------------------------------------------

class _Observer:
    cadence: Optional[float] = None

    def attach(self, sim: NetworkSimulator) -> None:
        self.sim = sim
        if self.cadence is None:
            self.every = 1
        else:
            ratio = self.cadence / sim.dt
            every = int(round(ratio))
            if every < 1 or abs(ratio - every) > 1e-6 * max(1.0, ratio):
                raise ValueError(
                    f"cadence {self.cadence} is not a positive multiple of dt={sim.dt}")
            self.every = every
        sim.on_step(self._maybe_sample)
        self.sample(sim)

    def _maybe_sample(self, sim):
        if sim.n_steps % self.every == 0:
            self.sample(sim)

    def sample(self, sim):
        pass

    def finish(self, sim):
        pass


class SnapshotObserver(_Observer):
    """Voltage maps (rows = y, columns = x) every ``cadence`` time units."""

    kind = "snapshot"

    def __init__(self, cadence: float = 0.05 * T0):
        self.cadence = cadence
        self.times = []
        self.frames = []

    def sample(self, sim):
        lat = sim.lattice
        self.times.append(sim.t)
        self.frames.append(sim.v.reshape(lat.height, lat.width).copy())

    @property
    def index_times(self):
        return list(enumerate(self.times))


class CellTraceObserver(_Observer):
    """Voltage and device states of selected cells, every step and at their events."""

    kind = "cell-trace"

    def __init__(self, cells: Sequence[Cell], cadence: Optional[float] = None):
        self.cells = [tuple(c) for c in cells]
        self.cadence = cadence
        self.t = []
        self.v = []
        self.s1 = []
        self.s2 = []

    def attach(self, sim):
        self._idx = np.array([sim.lattice.index(c) for c in self.cells], dtype=np.intp)
        sim.on_event(self._on_event)
        super().attach(sim)

    def sample(self, sim):
        if self.t and sim.t <= self.t[-1]:
            return
        self.t.append(sim.t)
        self.v.append(sim.v[self._idx].copy())
        self.s1.append(sim.s1[self._idx].copy())
        self.s2.append(sim.s2[self._idx].copy())

    def _on_event(self, t, cells, devices, new):
        if np.isin(cells, self._idx).any():
            # a step-end event is re-sampled by the step hook with the same time
            self.t.append(t)
            self.v.append(self.sim.v[self._idx].copy())
            self.s1.append(self.sim.s1[self._idx].copy())
            self.s2.append(self.sim.s2[self._idx].copy())

    def arrays(self, cell: Cell):
        k = self.cells.index(tuple(cell))
        t = np.array(self.t)
        return (t, np.array([v[k] for v in self.v]),
                np.array([s[k] for s in self.s1], dtype=np.uint8),
                np.array([s[k] for s in self.s2], dtype=np.uint8))


class SupplyCurrentObserver(_Observer):
    """Time integral of the current drawn from the bias rail, per cell.

    Between events the top conductance is constant and ``v`` is integrated
    with the trapezoidal rule on each (sub)step.
    """

    kind = "supply-current"

    def __init__(self):
        self.cadence = None
        self.charge = None
        self.t0 = None

    def attach(self, sim):
        self.charge = np.zeros(sim.lattice.n_cells)
        self.t0 = sim.t
        self._bias = sim.lattice.bias
        sim.on_substep(self._accumulate)
        super().attach(sim)

    def _accumulate(self, t0, v0, t1, v1, g1):
        self.charge += (t1 - t0) * g1 * (self._bias - 0.5 * (v0 + v1))

    def mean_current(self) -> np.ndarray:
        span = self.sim.t - self.t0
        return self.charge / span if span > 0 else np.zeros_like(self.charge)


class EventLogObserver(_Observer):
    """Every device transition as ``(t, cell_index, device, new_state)``."""

    kind = "event-log"

    def __init__(self):
        self.cadence = None
        self._chunks = []

    def attach(self, sim):
        sim.on_event(self._on_event)
        super().attach(sim)

    def _on_event(self, t, cells, devices, new):
        self._chunks.append((np.full(len(cells), t), cells.copy(), devices.copy(), new.copy()))

    def arrays(self):
        if not self._chunks:
            return (np.zeros(0), np.zeros(0, np.intp), np.zeros(0, np.uint8),
                    np.zeros(0, np.uint8))
        return tuple(np.concatenate(parts) for parts in zip(*self._chunks))

    @property
    def events(self):
        t, c, d, s = self.arrays()
        return [NetworkEvent(float(a), int(b), int(x), int(y)) for a, b, x, y in zip(t, c, d, s)]


@dataclass
class RunResult:
    state: NetworkState
    observers: list
    simulator: NetworkSimulator

    def observer(self, kind: str):
        for obs in self.observers:
            if obs.kind == kind:
                return obs
        raise KeyError(kind)


def run(lattice: Lattice, initial: NetworkState, dt: float, duration: float,
        observers: Iterable = (), simulator: Optional[NetworkSimulator] = None,
        callback: Optional[Callable[[NetworkSimulator], None]] = None,
        **sim_kwargs) -> RunResult:
    """Integrate for ``duration`` and feed the observers.

    ``duration`` is rounded to a whole number of steps.  ``callback`` runs
    after every step (scenario drivers hook in here).
    """
    sim = simulator or NetworkSimulator(lattice, initial, dt, **sim_kwargs)
    observers = list(observers)
    for obs in observers:
        obs.attach(sim)
    n = int(round(duration / sim.dt))
    for _ in range(n):
        sim.step()
        if callback is not None:
            callback(sim)
    for obs in observers:
        obs.finish(sim)
    return RunResult(sim.state, observers, sim)
