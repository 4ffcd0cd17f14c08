"""Forward simulation of the boundary-controlled wave system on an interval.

The system is ``u_tt - u_xx + q u = 0`` on ``0 < x < L``, ``u(0, t) = f(t)``,
``u(L, t) = 0`` and zero Cauchy data.  It is integrated by explicit leapfrog
at the "magic" step ``dt = h``, which transports data exactly when ``q = 0``::

    u[k+1, i] = u[k, i+1] + u[k, i-1] - u[k-1, i] - h^2 q_i u[k, i]

Two boundary traces are provided.  :func:`neumann_trace` is the second-order
one-sided difference.  :func:`flux_trace` is the first-order difference
``(u_0 - u_1) / h``; it is the trace for which summation by parts of the
scheme is exact, and it is the default for :func:`assemble_response`.

Controls for operator assembly are the grid hat functions at ``t_1 .. t_n``
(the node ``t_0`` is excluded, so every control vanishes at ``t = 0``).
Sampled on the grid, the hat function at ``t_j`` is the Kronecker delta.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatchError, InstabilityError
from .linop import LinOp, Space

# spatial reflections from x = L must not reach x = 0 within [0, 2T]
FAR_END_RATIO = 2.2


@dataclass(frozen=True)
class SimGrid:
    """Uniform grid on ``[0, L]`` with time step ``dt = h``.

    Parameters
    ----------
    length : float
        Interval length ``L``.
    horizon : float
        Observation half-window ``T``; controls live on ``[0, T]`` and the
        response is recorded on ``[0, 2T]``.
    n_x : int
        Number of spatial cells.
    """

    length: float
    horizon: float
    n_x: int
    n_t: int = field(init=False)

    def __post_init__(self):
        if self.n_x < 16:
            raise ValueError(f"n_x must be >= 16, got {self.n_x}")
        if not (0.0 < self.horizon < self.length):
            raise ValueError(f"need 0 < T < L, got T={self.horizon}, L={self.length}")
        ratio = self.horizon / self.h
        n_t = int(round(ratio))
        if abs(ratio - n_t) > 1e-9 * max(1.0, ratio):
            raise GridMismatchError(
                f"T={self.horizon} is not a multiple of dt={self.h} (T/dt={ratio})"
            )
        if n_t < 16:
            raise ValueError(f"T/h must be >= 16, got {n_t}")
        object.__setattr__(self, "n_t", n_t)

    @property
    def h(self):
        return self.length / self.n_x

    @property
    def dt(self):
        return self.h

    @property
    def x(self):
        return np.arange(self.n_x + 1) * self.h

    def steps(self, horizon):
        """Number of time steps covering ``[0, horizon]``."""
        ratio = horizon / self.dt
        k = int(round(ratio))
        if k < 1 or abs(ratio - k) > 1e-9 * max(1.0, ratio):
            raise GridMismatchError(f"horizon {horizon} is not a multiple of dt={self.dt}")
        return k

    def times(self, horizon):
        return np.arange(self.steps(horizon) + 1) * self.dt

    # sample spaces ----------------------------------------------------------
    def control_space(self, windows=1):
        """Controls on ``(0, windows*T]`` sampled at ``t_1 .. t_{windows*n_t}``."""
        tag = "T" if windows == 1 else f"{windows}T"
        return Space(f"t(0,{tag}]", windows * self.n_t, self.dt)

    def state_space(self):
        """Waves on the filled region ``[0, T)`` sampled at ``x_0 .. x_{n_t-1}``."""
        return Space("x[0,T)", self.n_t, self.h)

    def check_far_end(self):
        if self.length < FAR_END_RATIO * self.horizon * (1 - 1e-12):
            raise GridMismatchError(
                f"doubled window needs L >= {FAR_END_RATIO}*T "
                f"(L={self.length}, T={self.horizon})"
            )


@dataclass
class Potential:
    """Potential sampled at the grid nodes ``x_0 .. x_{n_x}``."""

    values: np.ndarray
    grid: SimGrid
    smoothness: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_x + 1,):
            raise ValueError(
                f"potential needs {self.grid.n_x + 1} samples, got {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("potential has non-finite samples")
        self.smoothness = smoothness_proxy(self.values, self.grid.h)

    @property
    def smoothness_proxy(self):
        """Largest finite-difference derivative magnitude over orders 0..4."""
        return float(np.max(self.smoothness))

    @classmethod
    def from_function(cls, fn, grid):
        return cls(np.asarray(fn(grid.x), dtype=float) * np.ones(grid.n_x + 1), grid)

    def __add__(self, other):
        vals = other.values if isinstance(other, Potential) else np.asarray(other)
        return Potential(self.values + vals, self.grid)


def smoothness_proxy(values, h, order=4):
    """``max |D^k q|`` for k = 0..order using k-th differences (centred at
    stencil midpoints)."""
    out = [np.max(np.abs(values))]
    d = np.asarray(values, dtype=float)
    for k in range(1, order + 1):
        d = np.diff(d)
        out.append(np.max(np.abs(d)) / h**k if d.size else 0.0)
    return np.array(out)


def zero_potential(grid):
    return Potential(np.zeros(grid.n_x + 1), grid)


def constant_potential(grid, c):
    return Potential(np.full(grid.n_x + 1, float(c)), grid)


def gaussian_bump(grid, center, width, depth, offset=0.0):
    """``offset - depth * exp(-((x - center) / width)^2)``."""
    x = grid.x
    return Potential(offset - depth * np.exp(-(((x - center) / width) ** 2)), grid)


def tabulated_potential(grid, xs, values):
    """Piecewise-linear interpolation of a table; constant beyond its ends."""
    xs = np.asarray(xs, dtype=float)
    values = np.asarray(values, dtype=float)
    if xs.ndim != 1 or xs.shape != values.shape or xs.size < 2:
        raise ValueError("potential table needs matching 1-D x and value lists (>= 2 rows)")
    if np.any(np.diff(xs) <= 0):
        raise ValueError("potential table x column must be strictly increasing")
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(values))):
        raise ValueError("potential table has non-finite entries")
    return Potential(np.interp(grid.x, xs, values), grid)


@dataclass
class TimeSignal:
    """Samples ``f(t_k)``, ``t_k = k dt``, k = 0..n, on ``[0, n dt]``."""

    samples: np.ndarray
    dt: float

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 1 or self.samples.size < 2:
            raise ValueError("a time signal needs at least two samples")

    @property
    def t(self):
        return np.arange(self.samples.size) * self.dt

    @property
    def duration(self):
        return (self.samples.size - 1) * self.dt

    @property
    def controls(self):
        """Coordinates in the hat basis at ``t_1 .. t_n``."""
        return self.samples[1:]

    @classmethod
    def from_function(cls, fn, grid, horizon):
        t = grid.times(horizon)
        return cls(np.asarray(fn(t), dtype=float) * np.ones_like(t), grid.dt)

    @classmethod
    def from_controls(cls, coords, dt):
        return cls(np.concatenate([[0.0], np.asarray(coords, dtype=float)]), dt)


@dataclass
class WaveField:
    """``u[k, i] = u(x_i, t_k)``."""

    u: np.ndarray
    grid: SimGrid

    @property
    def final(self):
        return self.u[-1]

    @property
    def t(self):
        return np.arange(self.u.shape[0]) * self.grid.dt


# --------------------------------------------------------------------------
# time stepping

def _march(q, controls, grid, record_field=False):
    """Leapfrog for a batch of controls.

    ``controls`` has shape (n_steps + 1, m); column j is one boundary control.
    Returns the final state (n_x + 1, m), the first three spatial rows over
    time (n_steps + 1, 3, m) and optionally the whole field.
    """
    controls = np.asarray(controls, dtype=float)
    if controls.ndim == 1:
        controls = controls[:, None]
    nsteps = controls.shape[0] - 1
    m = controls.shape[1]
    nx = grid.n_x
    hq = (grid.h * grid.h) * np.asarray(q, dtype=float)[1:nx, None]

    prev = np.zeros((nx + 1, m))
    cur = np.zeros((nx + 1, m))
    cur[0] = controls[1]  # start-up: interior stays 0 for zero Cauchy data
    rows = np.zeros((nsteps + 1, 3, m))
    rows[0] = prev[:3]
    rows[1] = cur[:3]
    full = None
    if record_field:
        full = np.zeros((nsteps + 1, nx + 1, m))
        full[1] = cur

    for k in range(1, nsteps):
        nxt = np.empty_like(cur)
        with np.errstate(over="ignore", invalid="ignore"):
            nxt[1:nx] = cur[2:] + cur[: nx - 1] - prev[1:nx] - hq * cur[1:nx]
        nxt[0] = controls[k + 1]
        nxt[nx] = 0.0
        if not np.isfinite(nxt).all():
            raise InstabilityError(k + 1)
        prev, cur = cur, nxt
        rows[k + 1] = cur[:3]
        if record_field:
            full[k + 1] = cur
    return cur, rows, full


def _q_values(q, grid):
    vals = q.values if isinstance(q, Potential) else np.asarray(q, dtype=float)
    if vals.shape != (grid.n_x + 1,):
        raise GridMismatchError("potential does not live on this grid")
    return vals


def solve_wave(q, f: TimeSignal, grid: SimGrid, horizon=None) -> WaveField:
    """Leapfrog solution on ``[0, horizon]`` for the boundary control ``f``.

    ``horizon`` defaults to the duration of ``f``; it must be a multiple of
    ``dt`` and match the number of samples of ``f``.
    """
    if horizon is None:
        horizon = f.duration
    nsteps = grid.steps(horizon)
    if abs(f.dt - grid.dt) > 1e-14 * grid.dt or f.samples.size != nsteps + 1:
        raise GridMismatchError(
            f"control has {f.samples.size} samples at dt={f.dt}; "
            f"expected {nsteps + 1} at dt={grid.dt}"
        )
    if f.samples[0] != 0.0:
        raise ValueError("controls must vanish at t = 0")
    _, _, full = _march(_q_values(q, grid), f.samples, grid, record_field=True)
    return WaveField(full[:, :, 0], grid)


def neumann_trace(u: WaveField) -> TimeSignal:
    """``d_nu u(0, t) = -u_x(0, t)`` by the one-sided stencil
    ``-(-3 u_0 + 4 u_1 - u_2) / (2h)``."""
    if u.u.shape[1] < 4:
        raise ValueError("neumann trace needs at least 3 spatial cells")
    h = u.grid.h
    a = u.u
    return TimeSignal((3.0 * a[:, 0] - 4.0 * a[:, 1] + a[:, 2]) / (2.0 * h), u.grid.dt)


def flux_trace(u: WaveField) -> TimeSignal:
    """First-order trace ``(u_0 - u_1) / h``."""
    if u.u.shape[1] < 2:
        raise ValueError("flux trace needs at least one spatial cell")
    return TimeSignal((u.u[:, 0] - u.u[:, 1]) / u.grid.h, u.grid.dt)


_TRACES = {
    "flux": lambda r, h: (r[:, 0] - r[:, 1]) / h,
    "second_order": lambda r, h: (3.0 * r[:, 0] - 4.0 * r[:, 1] + r[:, 2]) / (2.0 * h),
}


def trace_of(u: WaveField, stencil="flux") -> TimeSignal:
    return flux_trace(u) if stencil == "flux" else neumann_trace(u)


def _delta_controls(n):
    return np.vstack([np.zeros((1, n)), np.eye(n)])


def assemble_response(q, grid: SimGrid, stencil="flux") -> LinOp:
    """Response operator ``R^{2T}`` on controls over ``(0, 2T]``.

    Column j is the boundary trace, at ``t_1 .. t_{2 n_t}``, of the wave
    driven by the hat control at ``t_{j+1}``.  Columns are marched as
    independent lanes; no arithmetic mixes two columns.
    """
    if stencil not in _TRACES:
        raise ValueError(f"unknown trace stencil {stencil!r}")
    grid.check_far_end()
    n = 2 * grid.n_t
    _, rows, _ = _march(_q_values(q, grid), _delta_controls(n), grid)
    tr = _TRACES[stencil](rows, grid.h)[1:]
    space = grid.control_space(2)
    return LinOp(tr, space, space)


class OracleOp(LinOp):
    """An operator computed from the (hidden) potential; validation only."""

    oracle = True

    def like(self, matrix):
        return LinOp(matrix, self.dom, self.cod)


def assemble_control_operator(q, grid: SimGrid) -> OracleOp:
    """Control operator ``W^T f = u^f(., T)`` on the filled region ``[0, T)``.

    Uses the potential, so the result is tagged as an oracle.
    """
    k = grid.n_t
    final, _, _ = _march(_q_values(q, grid), _delta_controls(k), grid)
    return OracleOp(final[:k], grid.control_space(1), grid.state_space())


def discrete_energy(u: WaveField, q, k):
    """``1/2 sum h (u_t^2 + u_x^2 + q u^2)`` at step k (centred ``u_t``)."""
    g = u.grid
    if not 1 <= k < u.u.shape[0] - 1:
        raise ValueError("energy needs a step with both neighbours")
    qv = _q_values(q, g)
    ut = (u.u[k + 1] - u.u[k - 1]) / (2 * g.dt)
    ux = np.diff(u.u[k]) / g.h
    return 0.5 * g.h * (np.sum(ut**2) + np.sum(ux**2) + np.sum(qv * u.u[k] ** 2))
