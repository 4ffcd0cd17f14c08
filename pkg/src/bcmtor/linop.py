"""Dense operators between uniformly weighted sample spaces.

Every space carries a single composite-rectangle quadrature weight (``dt`` for
time grids, ``h`` for space grids), so the inner product is
``(u, v) = weight * sum(u * v)``.  With uniform weights all adjoints reduce to
scaled transposes::

    A* = (w_cod / w_dom) * A^T
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Space:
    """A finite sample space with a uniform quadrature weight."""

    label: str
    n: int
    weight: float = 1.0

    def inner(self, u, v):
        return self.weight * float(np.dot(np.ravel(u), np.ravel(v)))

    def norm(self, u):
        return float(np.sqrt(self.weight) * np.linalg.norm(u))


def euclidean(n, label="R"):
    return Space(f"{label}^{n}", n, 1.0)


class LinOp:
    """Matrix of an operator ``dom -> cod``.

    Parameters
    ----------
    matrix : array_like, shape (cod.n, dom.n)
    dom, cod : Space
        If omitted, unit-weight Euclidean spaces of matching size are used.
    """

    __array_priority__ = 100

    def __init__(self, matrix, dom: Space | None = None, cod: Space | None = None):
        m = np.array(matrix, dtype=float)
        if m.ndim != 2:
            raise ValueError("LinOp needs a 2-D matrix")
        self.matrix = m
        self.dom = dom if dom is not None else euclidean(m.shape[1])
        self.cod = cod if cod is not None else euclidean(m.shape[0])
        if self.dom.n != m.shape[1] or self.cod.n != m.shape[0]:
            raise ValueError(
                f"matrix shape {m.shape} does not match spaces "
                f"{self.cod.n}x{self.dom.n}"
            )

    # construction helpers -------------------------------------------------
    @classmethod
    def identity(cls, space: Space):
        return cls(np.eye(space.n), space, space)

    @classmethod
    def zeros(cls, dom: Space, cod: Space):
        return cls(np.zeros((cod.n, dom.n)), dom, cod)

    def like(self, matrix):
        """Same spaces, new entries."""
        return LinOp(matrix, self.dom, self.cod)

    def relabel(self, dom: Space | None = None, cod: Space | None = None):
        return LinOp(self.matrix, dom or self.dom, cod or self.cod)

    # algebra --------------------------------------------------------------
    @property
    def shape(self):
        return self.matrix.shape

    @property
    def H(self):
        """Adjoint w.r.t. the weighted inner products."""
        return LinOp(self.matrix.T * (self.cod.weight / self.dom.weight), self.cod, self.dom)

    adjoint = H

    @property
    def is_square(self):
        return self.dom == self.cod

    def __matmul__(self, other):
        if isinstance(other, LinOp):
            if other.cod != self.dom:
                raise ValueError(f"cannot compose: {other.cod} -> {self.dom}")
            return LinOp(self.matrix @ other.matrix, other.dom, self.cod)
        return self.matrix @ np.asarray(other, dtype=float)

    def __call__(self, v):
        return self.matrix @ np.asarray(v, dtype=float)

    def _check_same(self, other):
        if not isinstance(other, LinOp):
            raise TypeError("expected LinOp")
        if other.dom != self.dom or other.cod != self.cod:
            raise ValueError("operators act between different spaces")

    def __add__(self, other):
        self._check_same(other)
        return self.like(self.matrix + other.matrix)

    def __sub__(self, other):
        self._check_same(other)
        return self.like(self.matrix - other.matrix)

    def __neg__(self):
        return self.like(-self.matrix)

    def __mul__(self, c):
        return self.like(self.matrix * float(c))

    __rmul__ = __mul__

    def __truediv__(self, c):
        return self.like(self.matrix / float(c))

    # norms ----------------------------------------------------------------
    def norm(self):
        """Spectral norm between the weighted spaces."""
        if self.matrix.size == 0:
            return 0.0
        scale = np.sqrt(self.cod.weight / self.dom.weight)
        return float(scale * np.linalg.norm(self.matrix, 2))

    def apply_norm_ratio(self, v):
        """``||A v|| / ||v||`` in the weighted norms (0 for v = 0)."""
        nv = self.dom.norm(v)
        if nv == 0.0:
            return 0.0
        return self.cod.norm(self.matrix @ v) / nv

    def symmetry_defect(self):
        """``||A - A*|| / ||A||`` for an operator on a single space."""
        if not self.is_square:
            raise ValueError("symmetry is defined for operators on one space")
        nrm = self.norm()
        if nrm == 0.0:
            return 0.0
        return (self - self.H).norm() / nrm

    def __repr__(self):
        return f"LinOp({self.cod.label}<-{self.dom.label}, shape={self.shape})"


def as_linop(A) -> LinOp:
    return A if isinstance(A, LinOp) else LinOp(A)
