import hashlib
import math

import numpy as np
import pytest

from _oracles import conv_matrix, subsample_matrix
from hsfuse.degradation import (
    IKONOS_MS_UM,
    STARCK_MURTAGH,
    NoiseSpec,
    SceneSpec,
    Shape,
    SpectralResponse,
    add_noise_snr,
    boxcar_response,
    degrade_spatial,
    degrade_spectral,
    make_kernel,
    random_scene_spec,
    simulate,
    synthesize_scene,
    wavelength_ranges,
)
from hsfuse.errors import DegenerateError, DimensionError, ValidationError
from hsfuse.imaging import ConvolutionKernel, Grid, SamplingLattice, SpectralImage, kernel_to_frequency, cyclic_convolve, subsample


# -- spectral response ------------------------------------------------------------------


def test_response_invariants():
    with pytest.raises(ValidationError):
        SpectralResponse(np.array([[1.0, 0.5]]), np.array([[True, False]]))
    with pytest.raises(ValidationError):
        SpectralResponse(np.zeros((2, 3)), np.array([[True, True, True], [False, False, False]]))
    with pytest.raises(DimensionError):
        SpectralResponse(np.zeros((2, 3)), np.ones((3, 2), dtype=bool))
    R = SpectralResponse(np.ones((2, 3)))
    assert R.overlap_mask.all() and (R.n_ms, R.n_hs) == (2, 3)


def test_boxcar_examples():
    R = boxcar_response(10, [(0, 10)])
    np.testing.assert_allclose(R.matrix, np.full((1, 10), 0.1))
    R = boxcar_response(12, [(0, 3), (3, 7), (9, 12)])
    G = R.matrix @ R.matrix.T
    np.testing.assert_allclose(G - np.diag(np.diag(G)), 0.0)
    np.testing.assert_allclose(R.matrix.sum(axis=1), 1.0)
    with pytest.raises(ValidationError):
        boxcar_response(5, [(2, 2)])
    with pytest.raises(ValidationError):
        boxcar_response(5, [(3, 7)])


def test_four_band_mask_density():
    ranges = wavelength_ranges(200, IKONOS_MS_UM)
    R = boxcar_response(200, ranges)
    covered = sum(b - a for a, b in ranges)
    assert R.overlap_mask.mean() == pytest.approx(covered / (4 * 200))


def test_wavelength_range_errors():
    with pytest.raises(ValidationError):
        wavelength_ranges(10, [(3.0, 4.0)])


# -- scenes ---------------------------------------------------------------------------------


def test_single_pure_shape_scene():
    g = Grid(6, 7)
    spec = SceneSpec(g, 3, (Shape("rect", (0, 0, 6, 7), (1.0, 0.0, 0.0)),), seed=2, L_h=15)
    Z, E, A = synthesize_scene(spec)
    np.testing.assert_allclose(Z.data, np.repeat(E[:, :1], g.n, axis=1), atol=1e-15)


def test_scene_mixing_constraints_and_rank():
    g = Grid(32, 32)
    Z, E, A = synthesize_scene(random_scene_spec(g, 4, 30, seed=5))
    assert np.all(A.data >= 0)
    np.testing.assert_allclose(A.data.sum(axis=0), 1.0, atol=1e-12)
    assert np.all((E >= 0) & (E <= 1))
    s = np.linalg.svd(Z.data, compute_uv=False)
    assert np.sum(s > 1e-10 * s[0]) <= 4
    # each pixel is the endmember mix given by its abundances
    np.testing.assert_allclose(Z.data, E @ A.data, atol=1e-12)


def test_scene_determinism_and_shape_errors():
    g = Grid(16, 16)
    a = synthesize_scene(random_scene_spec(g, 3, 10, seed=1))[0]
    b = synthesize_scene(random_scene_spec(g, 3, 10, seed=1))[0]
    np.testing.assert_array_equal(a.data, b.data)
    for shape in (Shape("rect", (10, 10, 8, 2), (1.0, 0, 0)), Shape("disk", (2, 8, 4), (1.0, 0, 0))):
        with pytest.raises(ValidationError):
            synthesize_scene(SceneSpec(g, 3, (shape,), L_h=5))
    with pytest.raises(ValidationError):
        synthesize_scene(SceneSpec(g, 3, (Shape("rect", (0, 0, 2, 2), (0.5, 0.2, 0.2)),), L_h=5))


# -- kernels -----------------------------------------------------------------------------------


def test_kernel_examples():
    np.testing.assert_array_equal(make_kernel("box", 1).weights, [[1.0]])
    np.testing.assert_allclose(make_kernel("box", 5).weights, 1 / 25)
    g = make_kernel("gaussian", 5, 2.0).weights
    np.testing.assert_allclose(g, np.rot90(g), atol=1e-15)
    assert abs(g.sum() - 1.0) <= 1e-12
    with pytest.raises(ValidationError):
        make_kernel("box", 4)
    with pytest.raises(ValidationError):
        make_kernel("sinc", 5)


def test_starck_murtagh_table_checksum():
    # B3-spline: outer([1, 4, 6, 4, 1]) / 256
    expected = np.outer([1, 4, 6, 4, 1], [1, 4, 6, 4, 1]) / 256.0
    np.testing.assert_array_equal(STARCK_MURTAGH, expected)
    digest = hashlib.sha256(np.ascontiguousarray(STARCK_MURTAGH, dtype="<f8").tobytes()).hexdigest()
    assert digest == "4b7296fbf2d37713210533fec0a215441da40ef211ca5412a440c059a869a53b"
    k = make_kernel("starck_murtagh")
    assert k.support == 5 and k.dc_gain == 1.0


# -- degradations -------------------------------------------------------------------------


def test_spatial_degradation_examples():
    rng = np.random.default_rng(0)
    Z = SpectralImage(rng.random((3, 30)), Grid(5, 6))
    np.testing.assert_allclose(degrade_spatial(Z, ConvolutionKernel.delta(1), SamplingLattice(Z.grid, 1)).data, Z.data, atol=1e-12)
    C = SpectralImage(np.full((2, 64), 0.3), Grid(8, 8))
    out = degrade_spatial(C, make_kernel("gaussian", 5), SamplingLattice(C.grid, 4))
    assert out.grid == Grid(2, 2)
    np.testing.assert_allclose(out.data, 0.3, atol=1e-12)


def test_spatial_degradation_dense_oracle():
    ramp = SpectralImage(np.arange(64.0)[None], Grid(8, 8))
    k = make_kernel("box", 3)
    out = degrade_spatial(ramp, k, SamplingLattice(ramp.grid, 2))
    dense = subsample_matrix(8, 8, 2) @ conv_matrix(k.weights, 8, 8) @ ramp.data[0]
    np.testing.assert_allclose(out.data[0], dense, atol=1e-10)


def test_spatial_degradation_linear():
    rng = np.random.default_rng(1)
    g = Grid(8, 12)
    Z1, Z2 = (SpectralImage(rng.standard_normal((2, g.n)), g) for _ in range(2))
    k, lat = make_kernel("gaussian", 5), SamplingLattice(g, 4)
    lhs = degrade_spatial(SpectralImage(2.0 * Z1.data - 0.5 * Z2.data, g), k, lat).data
    rhs = 2.0 * degrade_spatial(Z1, k, lat).data - 0.5 * degrade_spatial(Z2, k, lat).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_spectral_degradation_examples():
    rng = np.random.default_rng(2)
    Z = SpectralImage(rng.random((6, 12)), Grid(3, 4))
    np.testing.assert_allclose(degrade_spectral(Z, SpectralResponse(np.eye(6))).data, Z.data)
    pan = degrade_spectral(Z, SpectralResponse(np.full((1, 6), 1 / 6)))
    np.testing.assert_allclose(pan.data[0], Z.data.mean(axis=0), atol=1e-15)
    R = boxcar_response(6, [(1, 3), (4, 6)])
    zeroed = Z.data.copy()
    zeroed[[0, 3]] = 0.0
    np.testing.assert_array_equal(degrade_spectral(Z, R).data, degrade_spectral(SpectralImage(zeroed, Z.grid), R).data)
    with pytest.raises(DimensionError):
        degrade_spectral(Z, SpectralResponse(np.ones((1, 5))))


def test_model_consistency_identity():
    # R Yh == Ym B M on noiseless data
    ds = simulate(rows=32, cols=32, L_h=100, snr_h=math.inf, snr_m=math.inf, sensor="ms", seed=4)
    lhs = ds.response.matrix @ ds.Yh.data
    kf = kernel_to_frequency(ds.kernel, ds.Ym.grid)
    rhs = subsample(cyclic_convolve(ds.Ym, kf), ds.lattice).data
    assert np.linalg.norm(lhs - rhs) <= 1e-8 * np.linalg.norm(lhs)


# -- noise --------------------------------------------------------------------------------------


def _snr(clean, noisy):
    return 10 * np.log10(np.mean(clean.data**2) / np.mean((noisy.data - clean.data) ** 2))


def test_noise_examples():
    rng = np.random.default_rng(3)
    img = SpectralImage(rng.random((50, 64 * 64)), Grid(64, 64))
    assert add_noise_snr(img, NoiseSpec(math.inf)) is img
    noisy = add_noise_snr(img, NoiseSpec(30.0, seed=9))
    assert abs(_snr(img, noisy) - 30.0) <= 0.2
    np.testing.assert_array_equal(noisy.data, add_noise_snr(img, NoiseSpec(30.0, seed=9)).data)
    with pytest.raises(DegenerateError):
        add_noise_snr(SpectralImage(np.zeros((1, 4)), Grid(2, 2)), NoiseSpec(20.0))
    with pytest.raises(ValidationError):
        NoiseSpec(float("nan"))


def test_noise_power_over_seeds():
    rng = np.random.default_rng(4)
    img = SpectralImage(rng.random((20, 32 * 32)), Grid(32, 32))
    snrs = [_snr(img, add_noise_snr(img, NoiseSpec(25.0, seed=s))) for s in range(10)]
    assert abs(np.mean(snrs) - 25.0) <= 0.1


def test_simulate_protocol():
    ds = simulate(rows=64, cols=64, L_h=30, seed=0)
    assert ds.Yh.grid == Grid(16, 16) and ds.Z.grid == Grid(64, 64)
    assert ds.Ym.bands == 1 and ds.Yh.bands == 30
    ds_ms = simulate(rows=32, cols=32, L_h=100, sensor="ms", seed=0)
    assert ds_ms.Ym.bands == 4
    with pytest.raises(ValidationError):
        simulate(rows=32, cols=32, sensor="rgb")
    again = simulate(rows=64, cols=64, L_h=30, seed=0)
    np.testing.assert_array_equal(ds.Yh.data, again.Yh.data)
    np.testing.assert_array_equal(ds.Ym.data, again.Ym.data)
