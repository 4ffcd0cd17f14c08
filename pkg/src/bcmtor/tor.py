"""Reconstruction pipeline: from the response operator to the potential.

The pipeline is::

    R^{2T} -> C^T -> sqrt(C^T) -> F^T -> V^T = Y F^T -> W^T -> q

Control coordinates are hat-function coefficients at ``t_1 .. t_K``
(``K = T / dt``); wave profiles are sampled at the cells ``x_0 .. x_{K-1}``
of the filled region ``[0, T)``.  In one dimension the screen coordinate
equals ``x``, so the image operator is the identity relabeling.

Connecting operator
-------------------
For the leapfrog scheme at ``dt = h`` with the flux trace ``(u_0 - u_1)/h``
the Gram matrix of final states is reproduced exactly by::

    G = J R,   C[a, b] = G[a, b] + G[b, a] - G[2K-1-a, b] + [a = b = K-1]

(0-based), where ``J`` is the two-step integrator
``(J g)_l = dt * (g_{l-1} + g_{l-3} + ...)``.  This is the discrete form of
the odd-extension / integration representation; ``method="sandwich"`` builds
the literal ``1/2 S* R J S`` with the trapezoid integral instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.linalg import solveh_banded

from .errors import DataInconsistencyError, InsufficientIlluminationError
from .linop import LinOp, Space
from .opnest import NestSpec, canonical_factorize, FactorizationResult
from .wavesim import TimeSignal

SYMMETRY_LIMIT = 0.1


# --------------------------------------------------------------------------
# time-window operators on sampled signals

def odd_extend(f: TimeSignal) -> TimeSignal:
    """Odd extension about ``t = T``: ``f`` on ``[0, T]``, ``-f(2T - t)`` on
    ``(T, 2T]``.  The sample at ``t = T`` keeps ``f(T)``."""
    s = f.samples
    return TimeSignal(np.concatenate([s, -s[-2::-1]]), f.dt)


def adjoint_odd_extend(g: TimeSignal) -> TimeSignal:
    """Weighted transpose of :func:`odd_extend`:
    ``g(t) - g(2T - t)`` for ``t < T`` and ``g(T)`` at ``t = T``."""
    s = g.samples
    if s.size % 2 == 0:
        raise ValueError("a [0, 2T] signal needs an odd number of samples")
    k = (s.size - 1) // 2
    out = s[: k + 1].copy()
    out[:k] -= s[: k : -1]
    return TimeSignal(out, g.dt)


def time_integrate(g: TimeSignal) -> TimeSignal:
    """Cumulative trapezoid integral from 0."""
    return TimeSignal(cumulative_trapezoid(g.samples, dx=g.dt, initial=0.0), g.dt)


def time_reverse(f: TimeSignal) -> TimeSignal:
    """``(Y f)(t) = f(T - t)``."""
    return TimeSignal(f.samples[::-1].copy(), f.dt)


def odd_extension_matrix(k):
    """Odd extension on hat coordinates: ``t_1..t_K -> t_1..t_{2K}``."""
    S = np.zeros((2 * k, k))
    S[:k, :k] = np.eye(k)
    for l in range(k + 1, 2 * k):
        S[l - 1, 2 * k - l - 1] = -1.0
    return S


def trapezoid_matrix(n, dt):
    """Cumulative trapezoid integral on ``t_1..t_n`` for signals vanishing
    at ``t_0``."""
    J = np.tril(np.full((n, n), dt), -1)
    J[np.diag_indices(n)] = 0.5 * dt
    return J


def two_step_integration_matrix(n, dt):
    """``(J g)_l = dt * (g_{l-1} + g_{l-3} + ...)`` on ``t_1..t_n``.

    Integrates with spacing ``2 dt`` along the parity class opposite to
    the output sample, which is how the leapfrog scheme accumulates
    boundary fluxes.
    """
    J = np.zeros((n, n))
    for l in range(1, n):
        J[l, l - 1::-2] = dt
    return J


def reversal_matrix(k):
    return np.eye(k)[::-1].copy()


# --------------------------------------------------------------------------
# connecting operator

@dataclass
class ConnectingOperator:
    """Connecting operator on controls over ``(0, T]``.

    Attributes
    ----------
    C : LinOp
        Symmetrized operator with negative eigenvalues raised to 0.
    symmetry_defect : float
        ``||C - C*|| / ||C||`` before symmetrization.
    positivity_floor : float
        Floor applied to the spectrum (0 here; the factorization applies its
        own relative floor).
    n_negative : int
        Eigenvalues that were raised to the floor.
    min_eigenvalue : float
        Smallest eigenvalue before flooring.
    """

    C: LinOp
    symmetry_defect: float
    positivity_floor: float = 0.0
    n_negative: int = 0
    min_eigenvalue: float = 0.0


def _exact_connecting(R, k, dt):
    G = two_step_integration_matrix(2 * k, dt) @ R
    top = G[:k, :k]
    refl = G[2 * k - 1 - np.arange(1, k + 1), :k]
    C = top.T + top - refl
    C[k - 1, k - 1] += 1.0
    return C


def _sandwich_connecting(R, k, dt):
    S = odd_extension_matrix(k)
    J = trapezoid_matrix(2 * k, dt)
    return 0.5 * (S.T @ R @ J @ S)


def connecting_from_response(R2T: LinOp, method="exact",
                             symmetry_limit=SYMMETRY_LIMIT) -> ConnectingOperator:
    """Connecting operator from the response on the doubled window.

    Parameters
    ----------
    R2T : LinOp
        Response on hat controls at ``t_1 .. t_{2K}``.
    method : {"exact", "sandwich"}
        ``"exact"`` uses the two-step integrator identity of the scheme;
        ``"sandwich"`` is the literal ``1/2 S* R J S`` with trapezoid ``J``.
    symmetry_limit : float
        Largest tolerated relative symmetry defect (pass ``inf`` to inspect
        a broken operator).

    Raises
    ------
    DataInconsistencyError
        If the relative symmetry defect exceeds ``symmetry_limit``.
    """
    if getattr(R2T, "oracle", False):
        raise TypeError("oracle operators must not enter the reconstruction")
    n = R2T.shape[0]
    if R2T.shape != (n, n) or n % 2:
        raise ValueError("response must be square on an even number of samples")
    k = n // 2
    dt = R2T.dom.weight
    if method == "exact":
        Cm = _exact_connecting(R2T.matrix, k, dt)
    elif method == "sandwich":
        Cm = _sandwich_connecting(R2T.matrix, k, dt)
    else:
        raise ValueError(f"unknown method {method!r}")
    if not np.all(np.isfinite(Cm)):
        raise DataInconsistencyError("connecting operator has non-finite entries")
    nrm = np.linalg.norm(Cm, 2)
    sym = float(np.linalg.norm(Cm - Cm.T, 2) / nrm) if nrm > 0 else 0.0
    if sym > symmetry_limit:
        raise DataInconsistencyError(
            f"connecting operator symmetry defect {sym:.3g} exceeds {symmetry_limit}"
        )
    Cm = 0.5 * (Cm + Cm.T)
    lam, vec = np.linalg.eigh(Cm)
    n_neg = int(np.sum(lam < 0))
    if n_neg:
        Cm = (vec * np.maximum(lam, 0.0)) @ vec.T
        Cm = 0.5 * (Cm + Cm.T)
    space = Space("t(0,T]", k, dt)
    return ConnectingOperator(LinOp(Cm, space, space), sym, 0.0, n_neg, float(lam[0]))


# --------------------------------------------------------------------------
# control family

def _smoothstep(t, start, width):
    """Quintic smoothstep and its first two derivatives."""
    s = np.clip((t - start) / width, 0.0, 1.0)
    inside = ((t > start) & (t < start + width)).astype(float)
    val = s**3 * (10 - 15 * s + 6 * s**2)
    d1 = inside * 30 * s**2 * (1 - s) ** 2 / width
    d2 = inside * 60 * s * (1 - s) * (1 - 2 * s) / width**2
    return val, d1, d2


@dataclass(frozen=True)
class ControlFamily:
    """``f_i(t) = sigma(t) sin(i pi t / T)``, i = 1..m.

    ``sigma`` rises smoothly from 0 on ``[0, 0.1T]`` to 1 on ``[0.2T, T]``.
    """

    horizon: float
    m: int = 8
    ramp_start: float = 0.1
    ramp_width: float = 0.1

    def _parts(self, t):
        T = self.horizon
        t = np.asarray(t, dtype=float)
        sig, d1, d2 = _smoothstep(t, self.ramp_start * T, self.ramp_width * T)
        omega = np.arange(1, self.m + 1)[:, None] * np.pi / T
        g = np.sin(omega * t)
        g1 = omega * np.cos(omega * t)
        g2 = -(omega**2) * g
        return sig, d1, d2, g, g1, g2

    def values(self, t):
        """Array (m, len(t))."""
        sig, _, _, g, _, _ = self._parts(t)
        return sig * g

    def second_derivative(self, t):
        """Analytic ``(f_i)_tt`` by the product rule."""
        sig, d1, d2, g, g1, g2 = self._parts(t)
        return d2 * g + 2 * d1 * g1 + sig * g2

    def discrete_second_derivative(self, t, dt):
        """Three-point ``(f(t+dt) - 2 f(t) + f(t-dt)) / dt^2`` of the
        analytic members."""
        t = np.asarray(t, dtype=float)
        return (self.values(t + dt) - 2 * self.values(t) + self.values(t - dt)) / dt**2

    def signal(self, i, grid, horizon=None):
        """Member ``i`` (0-based) as a :class:`TimeSignal` on ``[0, horizon]``."""
        t = grid.times(self.horizon if horizon is None else horizon)
        v = self.values(t)[i]
        v[0] = 0.0
        return TimeSignal(v, grid.dt)


def default_family(horizon, m=8):
    return ControlFamily(horizon, m)


# --------------------------------------------------------------------------
# visualization and recovery

@dataclass
class SpaceProfile:
    """Function of ``x`` sampled at ``x``."""

    x: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.x.shape != self.values.shape:
            raise ValueError("profile abscissae and values differ in shape")


def screen_space(k, h):
    return Space("tau[0,T)", k, h)


def visualize(Fop: LinOp) -> LinOp:
    """``V = Y F``: wave images on the screen from the triangular factor."""
    k = Fop.shape[0]
    Y = LinOp(reversal_matrix(k), Fop.cod, screen_space(k, Fop.cod.weight))
    return Y @ Fop


def recover_control_operator(V: LinOp) -> LinOp:
    """Relabel screen points ``tau`` as positions ``x`` (1-D image map)."""
    return V.relabel(cod=Space("x[0,T)", V.cod.n, V.cod.weight))


def _second_difference(Y, h):
    ypp = np.full_like(Y, np.nan)
    ypp[1:-1] = (Y[2:] - 2 * Y[1:-1] + Y[:-2]) / h**2
    return ypp


def recover_potential(W_hat: LinOp, fam: ControlFamily, trim=0.1, ridge=1e-6,
                      derivative="discrete", return_residual=False):
    """Least-squares potential from the steady-state identity.

    With ``y_i = W f_i`` and ``w_i = W (f_i)_tt`` the waves satisfy
    ``y_i'' - q y_i = w_i``, so pointwise::

        q(x) = sum_i y_i (y_i'' - w_i) / (sum_i y_i^2 + eps)

    with ``eps = ridge * max |y|^2`` and ``y''`` by centred differences.

    Parameters
    ----------
    trim : float
        The estimate is returned on ``[trim*T, (1 - trim)*T)``.  The right
        end is open because every family member vanishes on ``[0, trim*T]``,
        so the point ``x = (1 - trim) T`` carries no wave at time ``T``.
    derivative : {"discrete", "analytic"}
        How ``(f_i)_tt`` is formed.  ``"discrete"`` applies the scheme's own
        three-point time difference to the analytic members, which commutes
        exactly with the leapfrog solution operator; ``"analytic"`` uses the
        product-rule derivative.

    Raises
    ------
    InsufficientIlluminationError
        If ``sum_i y_i^2 <= eps`` everywhere on the trimmed interval.
    """
    k = W_hat.dom.n
    dt = W_hat.dom.weight
    h = W_hat.cod.weight
    T = k * dt
    t = np.arange(1, k + 1) * dt
    F = fam.values(t)
    if derivative == "discrete":
        Ftt = fam.discrete_second_derivative(t, dt)
    elif derivative == "analytic":
        Ftt = fam.second_derivative(t)
    else:
        raise ValueError(f"unknown derivative mode {derivative!r}")
    Y = W_hat.matrix @ F.T
    Wt = W_hat.matrix @ Ftt.T
    ypp = _second_difference(Y, h)
    x = np.arange(W_hat.cod.n) * h
    mask = (x >= trim * T - 1e-9 * h) & (x < (1 - trim) * T - 1e-9 * h)
    mask[0] = mask[-1] = False
    Ym, rhs = Y[mask], ypp[mask] - Wt[mask]
    den = np.sum(Ym * Ym, axis=1)
    eps = ridge * float(np.max(np.abs(Y))) ** 2
    if not np.any(den > eps):
        raise InsufficientIlluminationError(
            "recovered waves vanish on the trimmed interval; use a larger family"
        )
    qh = np.sum(Ym * rhs, axis=1) / (den + eps)
    prof = SpaceProfile(x[mask], qh)
    if not return_residual:
        return prof
    # misfit of y'' - q y = w relative to the size of y''
    fit = rhs - qh[:, None] * Ym
    resid = float(np.linalg.norm(fit) / max(np.linalg.norm(ypp[mask]), 1e-300))
    return prof, resid


def h_minus2_norm(v, h):
    """``sqrt(h v^T (I + Lap^2)^{-1} v)`` with the Dirichlet 3-point
    Laplacian on the interior nodes carrying ``v``."""
    v = np.asarray(v, dtype=float)
    n = v.size
    if n == 0:
        return 0.0
    a = 1.0 / h**2
    # I + Lap^2 is pentadiagonal: 1 + 6a^2 (5a^2 at both ends), -4a^2, a^2
    diag = np.full(n, 1.0 + 6 * a * a)
    diag[0] = diag[-1] = 1.0 + 5 * a * a
    ab = np.zeros((3, n))
    ab[2] = diag
    ab[1, 1:] = -4 * a * a
    ab[0, 2:] = a * a
    z = solveh_banded(ab, v) if n > 2 else np.linalg.solve(_dense_biharm(n, a), v)
    return float(np.sqrt(max(h * float(v @ z), 0.0)))


def _dense_biharm(n, a):
    L = a * (np.diag(np.full(n, -2.0)) + np.diag(np.ones(n - 1), 1) + np.diag(np.ones(n - 1), -1))
    return np.eye(n) + L @ L


def interior_difference(qa: SpaceProfile, qb: SpaceProfile, h, horizon):
    """Zero-extended difference on the interior nodes of ``(0, T)``."""
    if qa.x.shape != qb.x.shape or np.any(np.abs(qa.x - qb.x) > 1e-12):
        raise ValueError("profiles live on different abscissae")
    k = int(round(horizon / h))
    v = np.zeros(k - 1)
    idx = np.round(qa.x / h).astype(int) - 1
    v[idx] = qa.values - qb.values
    return v


# --------------------------------------------------------------------------
# pipeline

@dataclass(frozen=True)
class PipelineOptions:
    floor_rel: float = 1e-6
    rank_tol: float = 1e-10
    conv_tol: float = 1e-10
    ridge: float = 1e-6
    trim: float = 0.1
    method: str = "exact"
    derivative: str = "discrete"


@dataclass
class ReconstructionResult:
    connecting: ConnectingOperator
    factorization: FactorizationResult
    V: LinOp
    W_hat: LinOp
    q_hat: SpaceProfile
    diagnostics: dict = field(default_factory=dict)

    @property
    def C(self):
        return self.connecting.C


def run_pipeline(R2T: LinOp, family: ControlFamily | None = None,
                 options: PipelineOptions = PipelineOptions()) -> ReconstructionResult:
    """Run every reconstruction stage on the response operator alone."""
    conn = connecting_from_response(R2T, options.method)
    C = conn.C
    k, dt = C.dom.n, C.dom.weight
    if family is None:
        family = default_family(k * dt)
    nest = NestSpec.delayed(k, dt)
    fact = canonical_factorize(C, nest, floor_rel=options.floor_rel,
                               rank_tol=options.rank_tol, conv_tol=options.conv_tol)
    V = visualize(fact.F)
    W_hat = recover_control_operator(V)
    q_hat, fit = recover_potential(W_hat, family, trim=options.trim, ridge=options.ridge,
                                   derivative=options.derivative, return_residual=True)
    diagnostics = {
        "symmetry_defect": conn.symmetry_defect,
        "n_negative_eigenvalues": conn.n_negative,
        "min_eigenvalue": conn.min_eigenvalue,
        "C_norm": C.norm(),
        "C_minus_identity": (C - LinOp.identity(C.dom)).norm(),
        "recovery_residual": fit,
        "response_integral_norm": (
            R2T.like(R2T.matrix @ trapezoid_matrix(R2T.shape[0], dt)).norm()
        ),
    }
    diagnostics.update(fact.summary())
    return ReconstructionResult(conn, fact, V, W_hat, q_hat, diagnostics)
