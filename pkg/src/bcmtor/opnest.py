"""Nests of coordinate subspaces, operator diagonals and triangular factors.

A nest is realized by an *entry order* of the coordinates: the subspace at
level m is spanned by the first m coordinates of the order, so ``X^m`` is a
0/1 diagonal matrix and ``X^0 = 0``, ``X^n = I``.  Two conventions cover the
wave setting:

* delayed controls, ``X^s`` keeps the samples with ``t > T - s``; the order
  runs from the latest sample back to the earliest;
* filled region, ``X^s`` keeps the cells with ``x < s``; the order runs from
  ``x = 0`` outward.

The diagonal of ``W`` is the limit of the partition sums
``sum_k (P^{s_k} - P^{s_{k-1}}) W (X^{s_k} - X^{s_{k-1}})``, where ``P^s`` is
the orthogonal projection onto ``W X^s``.  At the finest partition this is
Gram-Schmidt in nest order: if ``W[:, order] = Q R`` then column
``order[m]`` of the diagonal is ``Q[:, m] R[m, m]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NotPositiveError
from .linop import LinOp, as_linop

DEFAULT_RANK_TOL = 1e-10


# --------------------------------------------------------------------------
# nests and partitions

@dataclass(frozen=True)
class NestSpec:
    """Coordinate nest given by an entry order.

    Parameters
    ----------
    order : sequence of int
        Permutation of ``range(n)``; level m spans ``order[:m]``.
    step : float
        Parameter increment per level, so ``s = m * step`` and ``s = n*step``
        is the full space (``T`` for the wave nests).
    convention : str
        Free-form tag (``"delayed"``, ``"filled"``, ``"flag"``).
    """

    order: tuple
    step: float = 1.0
    convention: str = "flag"

    def __post_init__(self):
        order = tuple(int(i) for i in self.order)
        if sorted(order) != list(range(len(order))):
            raise ValueError("nest order must be a permutation of range(n)")
        object.__setattr__(self, "order", order)

    @classmethod
    def delayed(cls, n, dt=1.0):
        """Delayed-control nest on samples ``t_1 .. t_n``."""
        return cls(tuple(range(n - 1, -1, -1)), dt, "delayed")

    @classmethod
    def filled(cls, n, h=1.0):
        """Filled-region nest on cells ``x_0 .. x_{n-1}``."""
        return cls(tuple(range(n)), h, "filled")

    @classmethod
    def random_flag(cls, n, seed=0):
        rng = np.random.default_rng(seed)
        return cls(tuple(rng.permutation(n)), 1.0, "flag")

    @property
    def n(self):
        return len(self.order)

    @property
    def horizon(self):
        return self.n * self.step

    def level(self, s):
        """Grid level ``m`` of parameter ``s`` (rounded down, clipped)."""
        m = int(np.floor(s / self.step + 1e-9))
        return min(max(m, 0), self.n)

    def mask(self, m):
        out = np.zeros(self.n, dtype=bool)
        out[list(self.order[:m])] = True
        return out

    def projector(self, m, space=None) -> LinOp:
        """``X^m`` as an operator (on ``space`` if given)."""
        mat = np.diag(self.mask(m).astype(float))
        return LinOp(mat, space, space)

    def at(self, s, space=None) -> LinOp:
        return self.projector(self.level(s), space)


@dataclass(frozen=True)
class PartitionXi:
    """Partition ``0 = s_0 < ... < s_k = T`` with points on the nest grid."""

    levels: tuple
    step: float = 1.0

    def __post_init__(self):
        lv = tuple(int(m) for m in self.levels)
        if len(lv) < 2 or lv[0] != 0 or any(b <= a for a, b in zip(lv, lv[1:])):
            raise ValueError("partition levels must increase strictly from 0")
        object.__setattr__(self, "levels", lv)

    @classmethod
    def uniform(cls, nest: NestSpec, k):
        """``k`` (nearly) equal cells, rounded to the grid."""
        k = min(max(int(k), 1), nest.n)
        lv = np.unique(np.round(np.linspace(0, nest.n, k + 1)).astype(int))
        return cls(tuple(lv), nest.step)

    @property
    def points(self):
        return np.asarray(self.levels, dtype=float) * self.step

    @property
    def range(self):
        return float(np.max(np.diff(self.levels)) * self.step)

    def __len__(self):
        return len(self.levels) - 1


# --------------------------------------------------------------------------
# square roots, polar factors, projections

def _sym_matrix(C: LinOp, tol=1e-8):
    if not C.is_square:
        raise ValueError("expected an operator on a single space")
    M = C.matrix
    nrm = np.linalg.norm(M, 2) if M.size else 0.0
    if nrm > 0 and np.linalg.norm(M - M.T, 2) > tol * nrm:
        raise ValueError("operator is not symmetric within tolerance")
    return 0.5 * (M + M.T)


def clipped_eigh(C: LinOp, floor_rel):
    """Eigen-decomposition with eigenvalues clipped from below at
    ``floor_rel * lambda_max``.  Returns (eigenvalues, vectors, n_clipped)."""
    lam, vec = np.linalg.eigh(_sym_matrix(C))
    lam_max = lam[-1] if lam.size else 0.0
    if not lam_max > 0:
        raise NotPositiveError(f"largest eigenvalue is {lam_max:.3e}")
    floor = floor_rel * lam_max
    n_clipped = int(np.sum(lam < floor))
    return np.maximum(lam, floor), vec, n_clipped


def psd_sqrt(C: LinOp, floor_rel=1e-10) -> LinOp:
    """Positive square root of a symmetric operator after flooring its
    spectrum at ``floor_rel * lambda_max``."""
    C = as_linop(C)
    lam, vec, _ = clipped_eigh(C, floor_rel)
    S = (vec * np.sqrt(lam)) @ vec.T
    return C.like(0.5 * (S + S.T))


def clipped(C: LinOp, floor_rel=1e-10) -> LinOp:
    """The floored operator whose square root :func:`psd_sqrt` returns."""
    C = as_linop(C)
    lam, vec, _ = clipped_eigh(C, floor_rel)
    M = (vec * lam) @ vec.T
    return C.like(0.5 * (M + M.T))


def _aligned_basis(P, k):
    """First ``k`` orthonormal vectors obtained from ``P e_1, P e_2, ...``."""
    n = P.shape[0]
    basis = []
    for i in range(n):
        if len(basis) == k:
            break
        v = P[:, i].copy()
        for b in basis:
            v -= (b @ v) * b
        nv = np.linalg.norm(v)
        if nv > 1e-8:
            basis.append(v / nv)
    return np.array(basis).T.reshape(n, len(basis))


def polar_decompose(A, rank_tol=DEFAULT_RANK_TOL):
    """``A = Phi |A|`` with ``|A| = sqrt(A* A)``.

    The phase is isometric on the range of ``|A|``.  On the kernel it is
    completed to a unitary by mapping the identity-aligned basis of
    ``ker A`` onto the identity-aligned basis of ``(ran A)^perp``
    (both ordered by coordinate index).

    Returns
    -------
    phase, modulus : LinOp
    """
    A = as_linop(A)
    if A.shape[0] != A.shape[1]:
        raise ValueError("polar decomposition needs a square operator")
    scale = np.sqrt(A.cod.weight / A.dom.weight)
    M = scale * A.matrix
    U, s, Vt = np.linalg.svd(M)
    r = int(np.sum(s > rank_tol * s[0])) if s.size and s[0] > 0 else 0
    n = M.shape[0]
    Ur, Vr = U[:, :r], Vt[:r].T
    phase = Ur @ Vr.T
    if r < n:
        ker = np.eye(n) - Vr @ Vr.T
        coker = np.eye(n) - Ur @ Ur.T
        V0 = _aligned_basis(ker, n - r)
        U0 = _aligned_basis(coker, n - r)
        phase = phase + U0 @ V0.T
    modulus = (Vt.T * s) @ Vt
    modulus = 0.5 * (modulus + modulus.T)
    return (LinOp(phase / scale, A.dom, A.cod),
            LinOp(modulus, A.dom, A.dom))


def _orth(M, rank_tol):
    if M.shape[1] == 0:
        return np.zeros((M.shape[0], 0))
    U, s, _ = np.linalg.svd(M, full_matrices=False)
    r = int(np.sum(s > rank_tol * s[0])) if s[0] > 0 else 0
    return U[:, :r]


def range_projector(W, X_s, rank_tol=DEFAULT_RANK_TOL) -> LinOp:
    """Orthogonal projection onto ``W`` applied to the coordinates kept by
    the 0/1 diagonal ``X_s``.

    Singular values below ``rank_tol * sigma_max`` of the selected block
    are treated as zero.
    """
    W = as_linop(W)
    xs = X_s.matrix if isinstance(X_s, LinOp) else np.asarray(X_s, dtype=float)
    keep = (np.diag(xs) if xs.ndim == 2 else xs) > 0.5
    U = _orth(W.matrix[:, keep], rank_tol)
    return LinOp(U @ U.T, W.cod, W.cod)


class NestedRanges:
    """Orthonormal bases of ``ran W X^m`` for every level of a nest.

    When ``W`` is numerically of full column rank every block has full rank
    under the same relative cutoff, and a single Householder QR of the
    reordered columns yields all bases at once.  Otherwise each level gets
    its own SVD (cached).
    """

    def __init__(self, W, nest: NestSpec, rank_tol=DEFAULT_RANK_TOL):
        self.matrix = as_linop(W).matrix
        self.nest = nest
        self.rank_tol = rank_tol
        cols = self.matrix[:, list(nest.order)]
        s = np.linalg.svd(cols, compute_uv=False) if cols.size else np.zeros(0)
        self.full_rank = bool(
            s.size and s[0] > 0 and s[-1] > rank_tol * s[0]
            and cols.shape[0] >= cols.shape[1]
        )
        self._cache = {}
        if self.full_rank:
            Q, R = np.linalg.qr(cols)
            self.Q, self.R = Q, R

    def basis(self, m):
        if self.full_rank:
            return self.Q[:, :m]
        if m not in self._cache:
            keep = list(self.nest.order[:m])
            self._cache[m] = _orth(self.matrix[:, keep], self.rank_tol)
        return self._cache[m]

    def projector(self, m):
        U = self.basis(m)
        return U @ U.T

    def apply(self, m, v):
        U = self.basis(m)
        return U @ (U.T @ v)


class _CoordinateRanges:
    """Stand-in for :class:`NestedRanges` when the image nest is itself a
    coordinate nest."""

    def __init__(self, nest: NestSpec):
        self.nest = nest
        self.full_rank = False

    def projector(self, m):
        return np.diag(self.nest.mask(m).astype(float))

    def apply(self, m, v):
        return self.nest.mask(m)[:, None] * v if v.ndim == 2 else self.nest.mask(m) * v


def _ranges(W, nest, rank_tol, image_nest):
    if image_nest is not None:
        if image_nest.n != as_linop(W).shape[0]:
            raise ValueError("image nest size does not match the codomain")
        return _CoordinateRanges(image_nest)
    return NestedRanges(W, nest, rank_tol)


# --------------------------------------------------------------------------
# diagonals

@dataclass
class DiagonalResult:
    """Outcome of the refining partition sums.

    Attributes
    ----------
    D : LinOp
    partition : PartitionXi
        Finest partition evaluated.
    residual : float
        Operator-norm gap between the last two partition sums.
    intertwining_defect : float
        ``max_m ||D X^m - P^m D||``.
    converged : bool
        Whether the gap fell below the requested tolerance before the grid
        resolution was reached.
    history : list of (int, float)
        (number of cells, gap to the previous sum) per refinement.
    """

    D: LinOp
    partition: PartitionXi
    residual: float
    intertwining_defect: float
    converged: bool
    history: list = field(default_factory=list)


def _partition_sum(Wm, nest, levels, ranges):
    D = np.zeros_like(Wm)
    order = np.asarray(nest.order)
    for a, b in zip(levels, levels[1:]):
        cols = order[a:b]
        block = Wm[:, cols]
        D[:, cols] = ranges.apply(b, block) - ranges.apply(a, block)
    return D


def diagonal_sum(W, nest: NestSpec, part: PartitionXi, rank_tol=DEFAULT_RANK_TOL,
                 image_nest: NestSpec | None = None) -> LinOp:
    """Partition sum ``sum_k dP_k W dX_k`` for one partition.

    ``P^s`` is the projection onto ``ran W X^s`` unless ``image_nest`` is
    given, in which case its coordinate projections are used instead.
    Cells are accumulated in increasing k.
    """
    W = as_linop(W)
    if part.levels[-1] != nest.n:
        raise ValueError("partition must end at the full space")
    ranges = _ranges(W, nest, rank_tol, image_nest)
    return W.like(_partition_sum(W.matrix, nest, part.levels, ranges))


def _dyadic_counts(n):
    k = 2
    while k < n:
        yield k
        k *= 2
    yield n


def intertwining_defect(D, W, nest: NestSpec, rank_tol=DEFAULT_RANK_TOL,
                        image_nest: NestSpec | None = None, ranges=None):
    """``max_m ||D X^m - P^m D||`` over all grid levels."""
    D = as_linop(D)
    if ranges is None:
        ranges = _ranges(W, nest, rank_tol, image_nest)
    Dm = D.matrix
    scale = np.sqrt(D.cod.weight / D.dom.weight)
    worst = 0.0
    for m in range(nest.n + 1):
        left = Dm * nest.mask(m)[None, :]
        err = left - ranges.apply(m, Dm)
        worst = max(worst, float(np.linalg.norm(err, 2)))
    return scale * worst


def diagonal(W, nest: NestSpec, rank_tol=DEFAULT_RANK_TOL, conv_tol=1e-10,
             image_nest: NestSpec | None = None) -> DiagonalResult:
    """Diagonal of ``W`` by dyadic refinement up to the grid resolution.

    Sums are evaluated for 2, 4, 8, ... uniform cells and finally for one
    cell per grid level.  Refinement stops as soon as two successive sums
    differ by at most ``conv_tol`` in operator norm.  Lack of convergence
    is reported through ``residual`` and ``converged``, never raised.
    """
    W = as_linop(W)
    ranges = _ranges(W, nest, rank_tol, image_nest)
    scale = np.sqrt(W.cod.weight / W.dom.weight)
    prev = None
    history = []
    residual = np.inf
    converged = False
    part = PartitionXi.uniform(nest, 1)
    for k in _dyadic_counts(nest.n):
        part = PartitionXi.uniform(nest, k)
        cur = _partition_sum(W.matrix, nest, part.levels, ranges)
        if prev is not None:
            residual = scale * float(np.linalg.norm(cur - prev, 2))
            history.append((len(part), residual))
            if residual <= conv_tol:
                converged = True
                prev = cur
                break
        else:
            history.append((len(part), np.nan))
        prev = cur
    if not np.isfinite(residual):
        # a single usable level (n <= 2): compare against the trivial sum
        coarse = _partition_sum(W.matrix, nest, (0, nest.n), ranges)
        residual = scale * float(np.linalg.norm(prev - coarse, 2))
        converged = residual <= conv_tol
    D = W.like(prev)
    defect = intertwining_defect(D, W, nest, ranges=ranges)
    return DiagonalResult(D, part, residual, defect, converged, history)


# --------------------------------------------------------------------------
# triangular factorization

def triangularity_defect(F, nest: NestSpec):
    """``max_m ||F X^m - X^m F X^m|| / ||F||``.

    The defect at level m is the block of ``F`` mapping the first m
    coordinates of the order into the remaining ones.
    """
    F = as_linop(F)
    Fm = F.matrix[np.ix_(nest.order, nest.order)]
    nrm = np.linalg.norm(Fm, 2) if Fm.size else 0.0
    if nrm == 0.0:
        return 0.0
    worst = 0.0
    for m in range(1, nest.n):
        worst = max(worst, float(np.linalg.norm(Fm[m:, :m], 2)))
    return worst / nrm


@dataclass
class FactorizationResult:
    """Canonical triangular factorization ``C = F* F``.

    Attributes
    ----------
    sqrtC, D, F : LinOp
    residual_factor : float
        ``||F* F - C_clipped|| / ||C||``.
    triangular_defect : float
    canonicality_defect : float
        ``||D D* - I||`` of the raw diagonal.
    canonical_violated : bool
        True when the canonicality defect exceeds 0.1.
    diagonal : DiagonalResult
    n_clipped : int
        Number of eigenvalues raised to the floor.
    """

    sqrtC: LinOp
    D: LinOp
    F: LinOp
    residual_factor: float
    triangular_defect: float
    canonicality_defect: float
    canonical_violated: bool
    diagonal: DiagonalResult
    n_clipped: int = 0

    def summary(self):
        return {
            "residual_factor": self.residual_factor,
            "triangular_defect": self.triangular_defect,
            "canonicality_defect": self.canonicality_defect,
            "canonical_violated": self.canonical_violated,
            "diagonal_residual": self.diagonal.residual,
            "intertwining_defect": self.diagonal.intertwining_defect,
            "n_clipped": self.n_clipped,
        }


CANONICAL_LIMIT = 0.1


def canonical_factorize(C, nest: NestSpec, floor_rel=1e-10, rank_tol=DEFAULT_RANK_TOL,
                        conv_tol=1e-10, normalize=True) -> FactorizationResult:
    """Factor ``C = F* F`` through the diagonal of ``sqrt(C)``.

    With ``normalize=True`` the factor is ``F = Phi* sqrt(C)`` where ``Phi``
    is the polar phase of the diagonal ``D``.  When ``D D* = I`` this is
    exactly ``D* sqrt(C)``; otherwise the raw product loses the factor
    identity while the phase-normalized one keeps it and stays triangular.
    ``normalize=False`` returns the raw ``D* sqrt(C)``.
    """
    C = as_linop(C)
    lam, vec, n_clipped = clipped_eigh(C, floor_rel)
    Sm = (vec * np.sqrt(lam)) @ vec.T
    S = C.like(0.5 * (Sm + Sm.T))
    Ccl = (vec * lam) @ vec.T
    diag = diagonal(S, nest, rank_tol=rank_tol, conv_tol=conv_tol)
    D = diag.D
    if normalize:
        phase, _ = polar_decompose(D, rank_tol=rank_tol)
        F = phase.H @ S
    else:
        F = D.H @ S
    cnorm = C.norm()
    resid = (F.H @ F).matrix - Ccl
    residual_factor = float(np.linalg.norm(resid, 2)) * np.sqrt(
        C.cod.weight / C.dom.weight) / cnorm
    eye = np.eye(D.shape[0])
    canon = float(np.linalg.norm((D @ D.H).matrix - eye, 2))
    return FactorizationResult(
        sqrtC=S,
        D=D,
        F=F,
        residual_factor=residual_factor,
        triangular_defect=triangularity_defect(F, nest),
        canonicality_defect=canon,
        canonical_violated=canon > CANONICAL_LIMIT,
        diagonal=diag,
        n_clipped=n_clipped,
    )


# --------------------------------------------------------------------------
# regular convergence

def probe_set(n, seed=0, n_quantiles=10, n_gaussian=10):
    """Fixed probe vectors as columns: grid deltas at the quantiles
    0.05, 0.15, ..., 0.95 followed by seeded standard Gaussians."""
    probes = np.zeros((n, n_quantiles + n_gaussian))
    qs = (np.arange(n_quantiles) + 0.5) / n_quantiles
    idx = np.clip(np.round(qs * (n - 1)).astype(int), 0, n - 1)
    probes[idx, np.arange(n_quantiles)] = 1.0
    rng = np.random.default_rng(seed)
    probes[:, n_quantiles:] = rng.standard_normal((n, n_gaussian))
    return probes


@dataclass
class RegularityReport:
    """``rho[j]`` = max over levels of ``profile[j]``; ``profile[j, m]`` is
    the largest relative probe error of ``P_{B_j F^m} - P_{B F^m}``."""

    rho: np.ndarray
    profile: np.ndarray


def regularity_metric(B_seq, B_lim, nest: NestSpec, probes=None,
                      rank_tol=DEFAULT_RANK_TOL) -> RegularityReport:
    """Probe-set distance between the range projections of ``B_j X^m`` and
    ``B X^m`` for every level m."""
    B_lim = as_linop(B_lim)
    if probes is None:
        probes = probe_set(B_lim.shape[0])
    H = np.asarray(probes, dtype=float)
    if H.ndim == 1:
        H = H[:, None]
    hn = np.linalg.norm(H, axis=0)
    hn[hn == 0] = 1.0
    lim = NestedRanges(B_lim, nest, rank_tol)
    lim_proj = [lim.apply(m, H) for m in range(nest.n + 1)]
    profile = np.zeros((len(B_seq), nest.n + 1))
    for j, B in enumerate(B_seq):
        B = as_linop(B)
        if B.shape != B_lim.shape:
            raise ValueError("sequence operators must share the limit's shape")
        rj = NestedRanges(B, nest, rank_tol)
        for m in range(nest.n + 1):
            diff = rj.apply(m, H) - lim_proj[m]
            profile[j, m] = float(np.max(np.linalg.norm(diff, axis=0) / hn))
    rho = profile.max(axis=1) if profile.size else np.zeros(0)
    return RegularityReport(rho, profile)
