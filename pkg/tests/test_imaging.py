import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import conv_matrix, diff_h_matrix, diff_v_matrix, subsample_matrix
from hsfuse.errors import DimensionError, ValidationError
from hsfuse.imaging import (
    ConvolutionKernel,
    Grid,
    SamplingLattice,
    SpectralImage,
    cyclic_convolve,
    diff_h,
    diff_v,
    embed_kernel,
    inner,
    kernel_to_frequency,
    subsample,
    upsample_zero,
)


def rand_img(rng, bands, rows, cols):
    return SpectralImage(rng.standard_normal((bands, rows * cols)), Grid(rows, cols))


# -- types -----------------------------------------------------------------------


def test_grid_validation():
    assert Grid(3, 4).n == 12
    for bad in [(0, 3), (3, -1), (2.5, 2), (True, 2)]:
        with pytest.raises(ValidationError):
            Grid(*bad)


def test_spectral_image_invariants():
    g = Grid(2, 3)
    img = SpectralImage(np.arange(12.0).reshape(2, 6), g)
    assert img.bands == 2
    assert img.cube.shape == (2, 2, 3)
    assert img.cube[1, 1, 0] == 9.0
    with pytest.raises(DimensionError):
        SpectralImage(np.zeros((2, 5)), g)
    with pytest.raises(ValidationError):
        SpectralImage(np.array([[np.nan] * 6]), g)
    with pytest.raises(ValueError):
        img.data[0, 0] = 1.0  # read-only


def test_kernel_validation_and_normalization():
    with pytest.raises(ValidationError):
        ConvolutionKernel(np.ones((2, 2)))
    with pytest.raises(ValidationError):
        ConvolutionKernel(np.ones((3, 5)))
    with pytest.raises(ValidationError):
        ConvolutionKernel(np.full((3, 3), np.inf))
    k = ConvolutionKernel(np.arange(1.0, 10.0).reshape(3, 3)).normalized()
    assert abs(k.dc_gain - 1.0) <= 1e-12
    with pytest.raises(ValidationError):
        ConvolutionKernel(np.zeros((3, 3))).normalized()


def test_lattice_validation():
    lat = SamplingLattice(Grid(8, 12), 4)
    assert lat.coarse == Grid(2, 3)
    with pytest.raises(DimensionError):
        SamplingLattice(Grid(8, 10), 4)
    with pytest.raises(ValidationError):
        SamplingLattice(Grid(8, 8), 2, phase=(2, 0))
    assert lat.mask().sum() == 6


# -- cyclic_convolve -----------------------------------------------------------------


def test_delta_kernel_is_identity():
    rng = np.random.default_rng(0)
    img = rand_img(rng, 3, 6, 5)
    out = cyclic_convolve(img, kernel_to_frequency(ConvolutionKernel.delta(3), img.grid))
    np.testing.assert_allclose(out.data, img.data, atol=1e-12)


def test_box_matches_spatial_convolution():
    rng = np.random.default_rng(1)
    img = rand_img(rng, 1, 4, 4)
    k = ConvolutionKernel(np.full((3, 3), 1.0 / 9))
    out = cyclic_convolve(img, kernel_to_frequency(k, img.grid))
    x = img.cube[0]
    ref = np.zeros_like(x)
    for i in range(4):
        for j in range(4):
            ref[i, j] = sum(x[(i + a) % 4, (j + b) % 4] for a in (-1, 0, 1) for b in (-1, 0, 1)) / 9
    np.testing.assert_allclose(out.cube[0], ref, atol=1e-10)


def test_constant_image_preserved_by_unit_dc_kernel():
    rng = np.random.default_rng(2)
    k = ConvolutionKernel(rng.random((5, 5))).normalized()
    img = SpectralImage(np.full((2, 49), 3.7), Grid(7, 7))
    out = cyclic_convolve(img, kernel_to_frequency(k, img.grid))
    np.testing.assert_allclose(out.data, 3.7, atol=1e-12)


def test_convolve_grid_mismatch():
    kf = kernel_to_frequency(ConvolutionKernel.delta(3), Grid(4, 4))
    with pytest.raises(DimensionError):
        cyclic_convolve(SpectralImage(np.zeros((1, 20)), Grid(4, 5)), kf)


# -- differences -------------------------------------------------------------------


def test_diff_of_constant_is_zero():
    img = SpectralImage(np.full((2, 12), 5.0), Grid(3, 4))
    assert np.all(diff_h(img).data == 0)
    assert np.all(diff_v(img).data == 0)


def test_diff_h_hand_example():
    img = SpectralImage(np.array([[1.0, 2.0, 3.0, 4.0]]), Grid(1, 4))
    np.testing.assert_array_equal(diff_h(img).data, [[1.0, 1.0, 1.0, -3.0]])


def test_diff_v_hand_example():
    img = SpectralImage(np.array([[1.0, 2.0, 3.0, 4.0]]), Grid(4, 1))
    np.testing.assert_array_equal(diff_v(img).data, [[1.0, 1.0, 1.0, -3.0]])


# -- subsampling ------------------------------------------------------------------------


def test_subsample_identity_for_unit_factor():
    rng = np.random.default_rng(3)
    img = rand_img(rng, 2, 3, 5)
    lat = SamplingLattice(img.grid, 1)
    np.testing.assert_array_equal(subsample(img, lat).data, img.data)
    np.testing.assert_array_equal(upsample_zero(img, lat).data, img.data)


def test_subsample_hand_example():
    img = SpectralImage(np.arange(1.0, 17.0)[None], Grid(4, 4))
    out = subsample(img, SamplingLattice(img.grid, 2))
    np.testing.assert_array_equal(out.cube[0], [[1, 3], [9, 11]])


def test_subsample_respects_phase():
    img = SpectralImage(np.arange(1.0, 17.0)[None], Grid(4, 4))
    out = subsample(img, SamplingLattice(img.grid, 2, phase=(1, 0)))
    np.testing.assert_array_equal(out.cube[0], [[5, 7], [13, 15]])


def test_upsample_zero_counts_and_inverse():
    rng = np.random.default_rng(4)
    lat = SamplingLattice(Grid(4, 4), 2)
    y = rand_img(rng, 1, 2, 2)
    up = upsample_zero(y, lat)
    assert up.grid == Grid(4, 4)
    assert np.count_nonzero(up.data == 0) == 12
    np.testing.assert_array_equal(subsample(up, lat).data, y.data)


def test_subsample_grid_errors():
    lat = SamplingLattice(Grid(4, 4), 2)
    with pytest.raises(DimensionError):
        subsample(SpectralImage(np.zeros((1, 36)), Grid(6, 6)), lat)
    with pytest.raises(DimensionError):
        upsample_zero(SpectralImage(np.zeros((1, 16)), Grid(4, 4)), lat)


# -- frequency fields -------------------------------------------------------------------------


def test_delta_kernel_frequency_is_all_ones():
    kf = kernel_to_frequency(ConvolutionKernel.delta(3), Grid(6, 5))
    np.testing.assert_allclose(kf.values, 1.0, atol=1e-14)


def test_dc_bin_equals_gain():
    rng = np.random.default_rng(5)
    k = ConvolutionKernel(rng.random((5, 5))).normalized()
    kf = kernel_to_frequency(k, Grid(8, 8))
    assert abs(kf.values[0, 0] - 1.0) <= 1e-12
    k2 = ConvolutionKernel(rng.random((3, 3)))
    assert abs(kernel_to_frequency(k2, Grid(5, 7)).values[0, 0] - k2.dc_gain) <= 1e-10


def test_box_field_matches_dense_circulant():
    k = ConvolutionKernel(np.full((3, 3), 1.0 / 9))
    A = conv_matrix(k.weights, 8, 8)
    first_col = A[:, 0].reshape(8, 8)
    np.testing.assert_allclose(kernel_to_frequency(k, Grid(8, 8)).values, np.fft.fft2(first_col), atol=1e-10)


def test_kernel_larger_than_grid():
    with pytest.raises(DimensionError):
        kernel_to_frequency(ConvolutionKernel.delta(5), Grid(4, 8))


def test_embedded_kernel_center_at_origin():
    w = np.zeros((3, 3))
    w[0, 2] = 1.0  # offset (-1, +1)
    e = embed_kernel(ConvolutionKernel(w), Grid(5, 5))
    assert e[4, 1] == 1.0 and e.sum() == 1.0


# -- dense-matrix fidelity and adjoints ---------------------------------------------------


@pytest.mark.parametrize("rows,cols", [(8, 8), (5, 7), (4, 6)])
def test_operators_match_dense_matrices(rows, cols):
    rng = np.random.default_rng(rows * 10 + cols)
    img = rand_img(rng, 3, rows, cols)
    w = rng.standard_normal((3, 3))
    kf = kernel_to_frequency(ConvolutionKernel(w), img.grid)
    A = conv_matrix(w, rows, cols)
    np.testing.assert_allclose(cyclic_convolve(img, kf).data, img.data @ A.T, atol=1e-10)
    np.testing.assert_allclose(cyclic_convolve(img, kf, adjoint=True).data, img.data @ A, atol=1e-10)
    Dh, Dv = diff_h_matrix(rows, cols), diff_v_matrix(rows, cols)
    np.testing.assert_allclose(diff_h(img).data, img.data @ Dh.T, atol=1e-12)
    np.testing.assert_allclose(diff_h(img, adjoint=True).data, img.data @ Dh, atol=1e-12)
    np.testing.assert_allclose(diff_v(img).data, img.data @ Dv.T, atol=1e-12)
    np.testing.assert_allclose(diff_v(img, adjoint=True).data, img.data @ Dv, atol=1e-12)


@pytest.mark.parametrize("d,phase", [(2, (0, 0)), (2, (1, 1)), (4, (3, 2))])
def test_sampling_matches_dense_matrix(d, phase):
    rng = np.random.default_rng(d)
    lat = SamplingLattice(Grid(8, 8), d, phase)
    S = subsample_matrix(8, 8, d, phase)
    x = rand_img(rng, 2, 8, 8)
    y = SpectralImage(rng.standard_normal((2, lat.coarse.n)), lat.coarse)
    np.testing.assert_array_equal(subsample(x, lat).data, x.data @ S.T)
    np.testing.assert_array_equal(upsample_zero(y, lat).data, y.data @ S)


@settings(max_examples=30, deadline=None)
@given(
    rows=st.integers(1, 8),
    cols=st.integers(1, 8),
    half=st.integers(0, 2),
    seed=st.integers(0, 2**31 - 1),
)
def test_adjoint_identities(rows, cols, half, seed):
    rng = np.random.default_rng(seed)
    s = 2 * half + 1
    if s > min(rows, cols):
        s = 1
    x, y = rand_img(rng, 2, rows, cols), rand_img(rng, 2, rows, cols)
    scale = x.norm() * y.norm()
    kf = kernel_to_frequency(ConvolutionKernel(rng.standard_normal((s, s))), x.grid)
    for op in (
        lambda z, adj: cyclic_convolve(z, kf, adj),
        lambda z, adj: diff_h(z, adj),
        lambda z, adj: diff_v(z, adj),
    ):
        assert abs(inner(op(x, False), y) - inner(x, op(y, True))) <= 1e-10 * scale


@settings(max_examples=20, deadline=None)
@given(d=st.integers(1, 4), cr=st.integers(1, 3), cc=st.integers(1, 3), seed=st.integers(0, 2**31 - 1))
def test_sampling_adjoint_and_contraction(d, cr, cc, seed):
    rng = np.random.default_rng(seed)
    lat = SamplingLattice(Grid(cr * d, cc * d), d, (int(rng.integers(d)), int(rng.integers(d))))
    x = rand_img(rng, 2, cr * d, cc * d)
    y = SpectralImage(rng.standard_normal((2, cr * cc)), lat.coarse)
    assert abs(inner(subsample(x, lat), y) - inner(x, upsample_zero(y, lat))) <= 1e-10 * x.norm() * y.norm()
    assert subsample(x, lat).norm() <= x.norm() + 1e-12
    np.testing.assert_array_equal(subsample(upsample_zero(y, lat), lat).data, y.data)


def test_convolution_commutes_with_differences():
    rng = np.random.default_rng(7)
    img = rand_img(rng, 2, 6, 8)
    kf = kernel_to_frequency(ConvolutionKernel(rng.random((3, 3))), img.grid)
    np.testing.assert_allclose(cyclic_convolve(diff_h(img), kf).data, diff_h(cyclic_convolve(img, kf)).data, atol=1e-10)
    np.testing.assert_allclose(cyclic_convolve(diff_v(img), kf).data, diff_v(cyclic_convolve(img, kf)).data, atol=1e-10)
