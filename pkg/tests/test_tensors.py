import numpy as np
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from activesusp.tensors import (deviatoric, dim_trace_free, from_coords, is_trace_free_symmetric, shear,
                                to_coords, trace_free_basis, unit_ball_volume, wrap)


def test_basis_is_orthonormal_and_trace_free():
    for d in (2, 3):
        Phi = trace_free_basis(d)
        assert Phi.shape == (dim_trace_free(d), d, d)
        gram = np.einsum("aij,bij->ab", Phi, Phi)
        assert np.allclose(gram, np.eye(len(Phi)), atol=1e-15)
        assert all(is_trace_free_symmetric(P) for P in Phi)


@settings(max_examples=50, deadline=None)
@given(st.sampled_from([2, 3]), st.data())
def test_coordinates_round_trip(d, data):
    M = data.draw(arrays(float, (d, d), elements=st.floats(-10, 10)))
    D = deviatoric(M)
    assert np.allclose(from_coords(to_coords(D), d), D, atol=1e-12)
    # Frobenius norm is preserved by the orthonormal coordinates
    assert np.isclose(np.linalg.norm(to_coords(D)), np.linalg.norm(D), atol=1e-12)


def test_shear_and_ball_volume():
    E = shear(3, 2.0, 0, 2)
    assert E[0, 2] == E[2, 0] == 1.0 and np.trace(E) == 0
    assert np.isclose(unit_ball_volume(2), np.pi)
    assert np.isclose(unit_ball_volume(3), 4 * np.pi / 3)


def test_wrap_minimal_image():
    assert np.allclose(wrap(np.array([9.0, -9.0, 4.0]), 10.0), [-1.0, 1.0, 4.0])
