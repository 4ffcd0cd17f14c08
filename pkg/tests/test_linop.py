import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from bcmtor.linop import LinOp, Space, as_linop

finite = st.floats(-10, 10, allow_nan=False)


def test_adjoint_is_weighted_transpose():
    dom, cod = Space("a", 3, 0.5), Space("b", 2, 2.0)
    A = LinOp(np.arange(6.0).reshape(2, 3), dom, cod)
    np.testing.assert_allclose(A.H.matrix, 4.0 * A.matrix.T)
    assert A.H.dom == cod and A.H.cod == dom


@settings(max_examples=50, deadline=None)
@given(arrays(float, (4, 3), elements=finite), arrays(float, 3, elements=finite),
       arrays(float, 4, elements=finite),
       st.floats(0.01, 10), st.floats(0.01, 10))
def test_adjoint_identity(M, u, v, wd, wc):
    A = LinOp(M, Space("d", 3, wd), Space("c", 4, wc))
    lhs = A.cod.inner(A(u), v)
    rhs = A.dom.inner(u, A.H(v))
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-9)


def test_weighted_norm_matches_ratio():
    A = LinOp(np.eye(3), Space("d", 3, 4.0), Space("c", 3, 1.0))
    assert A.norm() == pytest.approx(0.5)
    assert A.apply_norm_ratio(np.ones(3)) == pytest.approx(0.5)


def test_composition_checks_spaces():
    s1, s2 = Space("a", 2), Space("b", 2)
    A = LinOp(np.eye(2), s1, s2)
    with pytest.raises(ValueError):
        A @ A
    assert (A.H @ A).dom == s1


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        LinOp(np.zeros((2, 3)), Space("a", 2), Space("b", 2))
    with pytest.raises(ValueError):
        LinOp(np.zeros(3))


def test_algebra_and_symmetry_defect():
    A = as_linop([[1.0, 2.0], [0.0, 1.0]])
    assert (A - A).norm() == 0.0
    assert (2 * A / 2 - A).norm() == 0.0
    assert (A + A.H).symmetry_defect() == 0.0
    assert A.symmetry_defect() > 0.5
    assert LinOp.identity(Space("a", 3)).norm() == 1.0
