import numpy as np
import pytest
from scipy import ndimage

from hsipost.core import CodedMask, PSFStack, WavelengthGrid
from hsipost.errors import ConfigurationError, ShapeError
from hsipost.operators import (CASSI, OPTICS_SRF, SRF, CASSIOperator, NoiseModel, add_noise, adjoint,
                               apply_cassi, apply_optics, apply_srf, gen_cassi_mask, make_operator,
                               synth_psf)


def _ops(rng, k=6, m=7, n=9):
    q = rng.uniform(size=(k, 3))
    psf = synth_psf("gaussian", WavelengthGrid.uniform(400, 700, k), size=5)
    mask = gen_cassi_mask(m, n, seed=3)
    return [make_operator(SRF, (k, m, n), srf=q),
            make_operator(OPTICS_SRF, (k, m, n), srf=q, psf=psf),
            make_operator(CASSI, (k, m, n), mask=mask, shear=1)]


def test_identity_srf_replicates_channels(rng):
    y = rng.normal(size=(3, 4, 5))
    op = make_operator(SRF, (3, 4, 5), srf=np.eye(3))
    assert np.array_equal(adjoint(op, y), y)
    x = rng.normal(size=(3, 4, 5))
    assert np.array_equal(apply_srf(x, np.eye(3)), x)


def test_srf_matches_loop(rng):
    x = rng.uniform(size=(5, 3, 4))
    q = rng.uniform(size=(5, 3))
    ref = np.zeros((3, 3, 4))
    for c in range(3):
        for i in range(3):
            for j in range(4):
                ref[c, i, j] = sum(x[k, i, j] * q[k, c] for k in range(5))
    assert np.allclose(apply_srf(x, q), ref, atol=1e-14)


def _dense(op):
    size = int(np.prod(op.input_shape))
    cols = []
    for e in np.eye(size):
        cols.append(op.apply(e.reshape(op.input_shape)).ravel())
    return np.array(cols).T


def test_adjoint_equals_dense_transpose(rng):
    for op in _ops(rng, k=3, m=4, n=5):
        A = _dense(op)
        y = rng.normal(size=op.output_shape)
        assert np.allclose(op.adjoint(y).ravel(), A.T @ y.ravel(), atol=1e-12)


def test_inner_product_identity(rng):
    for op in _ops(rng):
        for _ in range(20):
            x = rng.normal(size=op.input_shape)
            y = rng.normal(size=op.output_shape)
            lhs = np.vdot(op.apply(x), y)
            rhs = np.vdot(x, op.adjoint(y))
            assert abs(lhs - rhs) <= 1e-8 * max(abs(lhs), abs(rhs), 1e-300)


def test_linearity(rng):
    for op in _ops(rng):
        x, z = rng.normal(size=(2,) + op.input_shape)
        a, b = 1.7, -0.3
        lhs = op.apply(a * x + b * z)
        rhs = a * op.apply(x) + b * op.apply(z)
        assert np.linalg.norm(lhs - rhs) <= 1e-10 * np.linalg.norm(rhs)


def test_optics_with_delta_kernels_is_srf(rng):
    k = np.zeros((6, 5, 5))
    k[:, 2, 2] = 1.0
    x = rng.uniform(size=(6, 8, 8))
    q = rng.uniform(size=(6, 3))
    assert np.max(np.abs(apply_optics(x, PSFStack(k), q) - apply_srf(x, q))) < 1e-10


def test_optics_is_circular_convolution(rng):
    psf = synth_psf("grating", WavelengthGrid.uniform(400, 700, 4), size=15)
    x = rng.uniform(size=(4, 16, 17))
    q = rng.uniform(size=(4, 3))
    blurred = np.stack([ndimage.convolve(x[b], psf.kernels[b], mode="wrap") for b in range(4)])
    assert np.allclose(apply_optics(x, psf, q), np.einsum("kc,kmn->cmn", q, blurred), atol=1e-12)


def test_cassi_shape_and_loop(rng):
    k, m, n, s = 4, 5, 6, 2
    mask = gen_cassi_mask(m, n, seed=1)
    x = rng.uniform(size=(k, m, n))
    y = apply_cassi(x, mask, shear=s)
    assert y.shape == (1, m, n + (k - 1) * s)
    ref = np.zeros(y.shape[1:])
    for b in range(k):
        for i in range(m):
            for j in range(n):
                ref[i, j + b * s] += mask.values[i, j] * x[b, i, j]
    assert np.allclose(y[0], ref)


def test_cassi_one_hot_adjoint(rng):
    k, m, n = 5, 4, 6
    mask = CodedMask(np.ones((m, n)))
    op = CASSIOperator(mask, k, 1)
    y = np.zeros(op.output_shape)
    y[0, 2, 4] = 1.0
    x = op.adjoint(y)
    ref = np.zeros((k, m, n))
    for b in range(k):
        j = 4 - b
        if 0 <= j < n:
            ref[b, 2, j] = mask.values[2, j]
    assert np.array_equal(x, ref)
    assert set(np.flatnonzero(x.sum(axis=(1, 2)))) == set(range(k))


def test_cassi_energy_bound(rng):
    k = 8
    op = CASSIOperator(gen_cassi_mask(10, 10, 5), k)
    for _ in range(10):
        x = rng.normal(size=op.input_shape)
        assert np.linalg.norm(op.apply(x)) <= np.linalg.norm(x) * np.sqrt(k) + 1e-12


def test_shape_errors(rng):
    op = make_operator(SRF, (4, 3, 3), srf=np.ones((4, 3)))
    with pytest.raises(ShapeError):
        op.apply(np.zeros((5, 3, 3)))
    with pytest.raises(ShapeError):
        op.adjoint(np.zeros((3, 2, 3)))
    with pytest.raises(ShapeError):
        apply_srf(np.zeros((5, 3, 3)), np.ones((4, 3)))
    with pytest.raises(ConfigurationError):
        make_operator("xray", (4, 3, 3))


def test_gaussian_psf_constant_sigma():
    psf = synth_psf("gaussian", WavelengthGrid.default(), size=7, sigma0=0.5, slope=0.0)
    k = psf.kernels
    assert np.allclose(k, k[0])
    assert np.allclose(k[0], k[0].T) and np.allclose(k[0], k[0][::-1, ::-1])
    assert np.allclose(k.sum(axis=(1, 2)), 1.0, atol=1e-12)


def test_gaussian_psf_widens_with_wavelength():
    k = synth_psf("gaussian", WavelengthGrid.default()).kernels
    r = np.arange(15) - 7
    spread = [(kk * (r[:, None] ** 2 + r[None, :] ** 2)).sum() for kk in k]
    assert np.all(np.diff(spread) > 0)


def test_grating_zero_dispersion():
    psf = synth_psf("grating", WavelengthGrid.default(), size=9, dispersion=0.0)
    k = psf.kernels
    assert np.allclose(k, k[0])
    assert np.isclose(k[0, 4, 4], 0.7) and np.isclose(k[0, 4, 5], 0.3)


def test_grating_satellite_offsets():
    k = synth_psf("grating", WavelengthGrid.default()).kernels
    lam = np.linspace(400, 700, 31)
    for b in range(31):
        offset = int(np.round(1 + 6 * (lam[b] - 400) / 300))
        assert np.isclose(k[b, 7, 7 + offset], 0.3)


def test_rotational_band_is_rotated_band0():
    grid = WavelengthGrid.default()
    psf = synth_psf("rotational", grid, size=21, lobe_sigma=2.0)
    k = psf.kernels
    dtheta = np.pi / 300 * 10
    for b in (1, 5, 10, 17, 30):
        rot = ndimage.rotate(k[0], -np.degrees(b * dtheta), reshape=False, order=5, mode="constant")
        assert np.abs(rot - k[b]).sum() < 1e-3


def test_even_psf_rejected():
    with pytest.raises(ConfigurationError):
        synth_psf("gaussian", WavelengthGrid.default(), size=8)
    with pytest.raises(ConfigurationError):
        synth_psf("gaussian", WavelengthGrid.default(), bogus=1)


def test_mask_generation():
    with pytest.raises(ConfigurationError):
        gen_cassi_mask(4, 4, 0, density=1.0)
    near = gen_cassi_mask(50, 50, 0, density=0.999999)
    assert near.values.mean() > 0.99
    a, b = gen_cassi_mask(32, 32, 9), gen_cassi_mask(32, 32, 9)
    assert np.array_equal(a.values, b.values)
    big = gen_cassi_mask(256, 256, 7, 0.5)
    assert 0.48 <= big.values.mean() <= 0.52


def test_noise():
    y = np.linspace(0, 1, 12).reshape(3, 2, 2)
    assert np.array_equal(add_noise(y, NoiseModel(0.0)), y)
    assert np.array_equal(add_noise(y, NoiseModel(0.1, 4)), add_noise(y, NoiseModel(0.1, 4)))
    z = np.zeros((1, 1000, 1000))
    assert 0.0099 <= add_noise(z, NoiseModel(0.01, 2)).std() <= 0.0101
    with pytest.raises(ConfigurationError):
        NoiseModel(-1.0)
