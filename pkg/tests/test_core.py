import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msadmm.core import (
    apply,
    apply_adjoint,
    as_signal,
    convolution,
    forward_gradient,
    forward_gradient_adjoint,
    gaussian_noise,
    identity,
)
from msadmm.errors import InvalidInputError

import oracles


def test_identity_apply():
    np.testing.assert_array_equal(apply(identity(3), [1.0, 2.0, 3.0]), [1.0, 2.0, 3.0])


def test_delta_kernel_is_identity():
    A = convolution([1.0, 0, 0, 0], 4, center=0)
    np.testing.assert_array_equal(apply(A, [1.0, 2, 3, 4]), [1.0, 2, 3, 4])


def test_two_tap_kernel_matches_direct_sum():
    psf = np.array([0.5, 0.5, 0.0, 0.0])
    A = convolution(psf, 4, center=0)
    u = np.array([1.0, 0, 0, 0])
    expected = oracles.conv_matrix(psf, 4, 0) @ u
    np.testing.assert_allclose(expected, [0.5, 0.5, 0.0, 0.0])
    np.testing.assert_allclose(apply(A, u), expected, atol=1e-15)


def test_identity_adjoint():
    np.testing.assert_array_equal(apply_adjoint(identity(2), [5.0, 6.0]), [5.0, 6.0])


def test_symmetric_psf_self_adjoint():
    rng = np.random.default_rng(3)
    A = convolution([0.25, 0.5, 0.25], 10)
    v = rng.normal(size=10)
    np.testing.assert_allclose(apply_adjoint(A, v), apply(A, v), atol=1e-14)


@pytest.mark.parametrize("boundary", ["periodic", "zero"])
def test_asymmetric_adjoint_matches_correlation(boundary):
    rng = np.random.default_rng(4)
    psf = np.array([0.6, 0.3, 0.1])
    A = convolution(psf, 8, center=1, boundary=boundary, method="direct")
    M = oracles.conv_matrix(psf, 8, 1, periodic=boundary == "periodic")
    v = rng.normal(size=8)
    np.testing.assert_allclose(apply_adjoint(A, v), M.T @ v, atol=1e-14)
    np.testing.assert_allclose(apply(A, v), M @ v, atol=1e-14)


def test_2d_matches_direct_oracle():
    rng = np.random.default_rng(5)
    psf = rng.random((3, 4))
    u = rng.normal(size=(6, 7))
    for boundary in ("periodic", "zero"):
        A = convolution(psf, (6, 7), center=(1, 2), boundary=boundary)
        ref = oracles.conv2d_direct(psf, u, (1, 2), periodic=boundary == "periodic")
        np.testing.assert_allclose(apply(A, u), ref, atol=1e-13)


def _maps():
    rng = np.random.default_rng(6)
    yield identity(12)
    yield identity((5, 4))
    for boundary in ("periodic", "zero"):
        yield convolution(rng.random(5), 12, center=1, boundary=boundary)
        yield convolution(rng.random((3, 2)), (5, 4), center=(2, 0), boundary=boundary)
        yield convolution(rng.random((9, 9)), (16, 16), boundary=boundary)


@pytest.mark.parametrize("A", list(_maps()))
def test_adjoint_consistency(A):
    rng = np.random.default_rng(7)
    for _ in range(100):
        u = rng.normal(size=A.domain_shape)
        v = rng.normal(size=A.codomain_shape)
        lhs = np.vdot(apply(A, u), v)
        rhs = np.vdot(u, apply_adjoint(A, v))
        assert abs(lhs - rhs) <= 1e-10 * (1 + np.linalg.norm(u) * np.linalg.norm(v))


@settings(max_examples=40, deadline=None)
@given(
    n=st.integers(4, 40),
    taps=st.integers(1, 4),
    boundary=st.sampled_from(["periodic", "zero"]),
    seed=st.integers(0, 2**32 - 1),
)
def test_fft_and_direct_agree_1d(n, taps, boundary, seed):
    rng = np.random.default_rng(seed)
    psf = rng.normal(size=min(taps, n))
    A = convolution(psf, n, center=0, boundary=boundary)
    u = rng.normal(size=n)
    a = apply(A, u, method="fft")
    b = apply(A, u, method="direct")
    assert np.linalg.norm(a - b) <= 1e-10 * (1 + np.linalg.norm(b))
    a = apply_adjoint(A, u, method="fft")
    b = apply_adjoint(A, u, method="direct")
    assert np.linalg.norm(a - b) <= 1e-10 * (1 + np.linalg.norm(b))


@pytest.mark.parametrize("boundary", ["periodic", "zero"])
def test_fft_and_direct_agree_64x64(boundary):
    rng = np.random.default_rng(8)
    psf = rng.random((7, 5))
    A = convolution(psf, (64, 64), boundary=boundary)
    u = rng.normal(size=(64, 64))
    a, b = apply(A, u, method="fft"), apply(A, u, method="direct")
    assert np.linalg.norm(a - b) <= 1e-10 * np.linalg.norm(b)
    a, b = apply_adjoint(A, u, method="fft"), apply_adjoint(A, u, method="direct")
    assert np.linalg.norm(a - b) <= 1e-10 * np.linalg.norm(b)


def test_singular_value_bounds():
    assert identity(5).singular_value_bounds() == (1.0, 1.0)
    A = convolution([0.5, 0.5], 8, center=0)
    smin, smax = A.singular_value_bounds()
    s = np.linalg.svd(oracles.conv_matrix([0.5, 0.5], 8, 0), compute_uv=False)
    assert smin == pytest.approx(s.min(), abs=1e-12)
    assert smax == pytest.approx(s.max(), abs=1e-12)


def test_shape_mismatch_rejected():
    with pytest.raises(InvalidInputError):
        apply(identity(3), np.ones(4))
    with pytest.raises(InvalidInputError):
        apply_adjoint(convolution([1.0], 3), np.ones((3, 1)))


def test_non_finite_rejected():
    with pytest.raises(InvalidInputError):
        as_signal([1.0, np.nan])
    with pytest.raises(InvalidInputError):
        as_signal(np.ones((2, 2, 2)))


def test_bad_convolution_arguments():
    with pytest.raises(InvalidInputError):
        convolution(np.ones(5), 4)
    with pytest.raises(InvalidInputError):
        convolution(np.ones(3), 4, center=3)
    with pytest.raises(InvalidInputError):
        convolution(np.ones(3), 4, boundary="reflect")


def test_noise_zero_sigma():
    np.testing.assert_array_equal(gaussian_noise(7, 0.0, 1), np.zeros(7))


def test_noise_statistics():
    x = gaussian_noise(100_000, 0.05, 2024)
    # CLT: std of the sample std is about sigma / sqrt(2n) ~ 1e-4
    assert abs(x.std() - 0.05) <= 0.02 * 0.05
    assert abs(x.mean()) <= 5 * 0.05 / np.sqrt(x.size)


def test_noise_deterministic():
    a = gaussian_noise((8, 9), 1.0, 2**64 - 1)
    b = gaussian_noise((8, 9), 1.0, 2**64 - 1)
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, gaussian_noise((8, 9), 1.0, 5))


def test_noise_rejects_bad_inputs():
    with pytest.raises(InvalidInputError):
        gaussian_noise(4, -1.0, 0)
    with pytest.raises(InvalidInputError):
        gaussian_noise(4, 1.0, 2**64)
    with pytest.raises(InvalidInputError):
        gaussian_noise(4, 1.0, -1)


@pytest.mark.parametrize("shape", [(9,), (4, 6)])
def test_gradient_adjoint(shape):
    rng = np.random.default_rng(9)
    u = rng.normal(size=shape)
    g = forward_gradient(u)
    if len(shape) == 1:
        p = rng.normal(size=g.shape)
        lhs = np.vdot(g, p)
    else:
        p = (rng.normal(size=g[0].shape), rng.normal(size=g[1].shape))
        lhs = np.vdot(g[0], p[0]) + np.vdot(g[1], p[1])
    assert lhs == pytest.approx(np.vdot(u, forward_gradient_adjoint(p, shape)), abs=1e-12)
