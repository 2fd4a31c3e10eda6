"""Linear measurement models (SRF, optics + SRF, CASSI), their adjoints,
synthetic PSF / mask generators and Gaussian measurement noise.

All operators act on arrays of shape ``(K, M, N)``.  RGB images come back as
``(3, M, N)`` and CASSI measurements as ``(1, M, N + (K - 1) * shear)``.
Convolution is circular so that the adjoint is exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CodedMask, PSFStack, SpectralResponse, WavelengthGrid
from .errors import ConfigurationError, ShapeError

SRF = "srf"
OPTICS_SRF = "optics"
CASSI = "cassi"

GAUSSIAN = "gaussian"
GRATING = "grating"
ROTATIONAL = "rotational"
PSF_KINDS = (GAUSSIAN, GRATING, ROTATIONAL)


def _cube_array(x):
    a = np.asarray(x, dtype=float)
    if a.ndim != 3:
        raise ShapeError(f"expected a (K, M, N) cube, got shape {a.shape}")
    return a


def _check_grids(a, b, what):
    ga = getattr(a, "grid", None)
    gb = getattr(b, "grid", None)
    if ga is not None and gb is not None and ga != gb:
        raise ShapeError(f"wavelength grid mismatch between cube and {what}")


def _srf_matrix(srf):
    return np.asarray(srf, dtype=float)


def otf(kernel, shape):
    """Real-FFT transfer function of a centered odd kernel, circular on ``shape``."""
    p = kernel.shape[0]
    c = p // 2
    m, n = shape
    padded = np.zeros((m, n))
    rows = (np.arange(p) - c) % m
    cols = (np.arange(p) - c) % n
    np.add.at(padded, (rows[:, None], cols[None, :]), kernel)
    return np.fft.rfft2(padded)


class ForwardOperator:
    """Linear map from a ``(K, M, N)`` cube to a measurement array."""

    kind: str
    input_shape: tuple
    output_shape: tuple

    def apply(self, x):
        raise NotImplementedError

    def adjoint(self, y):
        raise NotImplementedError

    def __call__(self, x):
        return self.apply(x)

    def _check_input(self, x):
        a = _cube_array(x)
        if a.shape != self.input_shape:
            raise ShapeError(f"{self.kind} operator expects input {self.input_shape}, got {a.shape}")
        return a

    def _check_output(self, y):
        a = np.asarray(y, dtype=float)
        if a.shape != self.output_shape:
            raise ShapeError(f"{self.kind} operator expects measurement {self.output_shape}, got {a.shape}")
        return a

    def describe(self):
        return {"kind": self.kind, "input_shape": list(self.input_shape),
                "output_shape": list(self.output_shape)}


class SRFOperator(ForwardOperator):
    kind = SRF

    def __init__(self, srf, spatial_shape):
        self.srf = srf
        self.Q = _srf_matrix(srf)
        k, c = self.Q.shape
        m, n = spatial_shape
        self.input_shape = (k, m, n)
        self.output_shape = (c, m, n)

    def apply(self, x):
        return np.einsum("kc,kmn->cmn", self.Q, self._check_input(x))

    def adjoint(self, y):
        return np.einsum("kc,cmn->kmn", self.Q, self._check_output(y))


class OpticsOperator(ForwardOperator):
    """Per-band circular blur followed by SRF mixing."""

    kind = OPTICS_SRF

    def __init__(self, psf, srf, spatial_shape):
        kernels = psf.kernels if isinstance(psf, PSFStack) else np.asarray(psf, dtype=float)
        if kernels.ndim != 3 or kernels.shape[1] != kernels.shape[2]:
            raise ShapeError(f"PSF stack must have shape (K, P, P), got {kernels.shape}")
        if kernels.shape[1] % 2 == 0:
            raise ConfigurationError(f"PSF kernel size must be odd, got {kernels.shape[1]}")
        self.Q = _srf_matrix(srf)
        if kernels.shape[0] != self.Q.shape[0]:
            raise ShapeError(f"PSF stack has {kernels.shape[0]} bands, SRF has {self.Q.shape[0]}")
        self.psf = psf
        self.srf = srf
        m, n = spatial_shape
        self.input_shape = (self.Q.shape[0], m, n)
        self.output_shape = (self.Q.shape[1], m, n)
        self._otf = np.stack([otf(k, (m, n)) for k in kernels])

    def blur(self, x):
        m, n = self.input_shape[1:]
        return np.fft.irfft2(np.fft.rfft2(x) * self._otf, s=(m, n))

    def blur_adjoint(self, x):
        m, n = self.input_shape[1:]
        return np.fft.irfft2(np.fft.rfft2(x) * np.conj(self._otf), s=(m, n))

    def apply(self, x):
        return np.einsum("kc,kmn->cmn", self.Q, self.blur(self._check_input(x)))

    def adjoint(self, y):
        return self.blur_adjoint(np.einsum("kc,cmn->kmn", self.Q, self._check_output(y)))


class CASSIOperator(ForwardOperator):
    """Coded mask, per-band shear along columns, sum onto one detector."""

    kind = CASSI

    def __init__(self, mask, n_bands, shear=1):
        if int(shear) != shear or shear < 0:
            raise ConfigurationError(f"CASSI shear must be a nonnegative integer, got {shear}")
        self.mask = mask
        self.M_ = np.asarray(mask.values if isinstance(mask, CodedMask) else mask, dtype=float)
        if self.M_.ndim != 2:
            raise ShapeError(f"mask must be 2-D, got shape {self.M_.shape}")
        self.shear = int(shear)
        m, n = self.M_.shape
        self.input_shape = (int(n_bands), m, n)
        self.output_shape = (1, m, n + (int(n_bands) - 1) * self.shear)

    def apply(self, x):
        x = self._check_input(x)
        k, m, n = x.shape
        y = np.zeros(self.output_shape)
        for band in range(k):
            off = band * self.shear
            y[0, :, off:off + n] += self.M_ * x[band]
        return y

    def adjoint(self, y):
        y = self._check_output(y)
        k, m, n = self.input_shape
        x = np.empty(self.input_shape)
        for band in range(k):
            off = band * self.shear
            x[band] = self.M_ * y[0, :, off:off + n]
        return x

    def describe(self):
        d = super().describe()
        d["shear"] = self.shear
        return d


class IdentityOperator(ForwardOperator):
    kind = "identity"

    def __init__(self, shape):
        self.input_shape = self.output_shape = tuple(shape)

    def apply(self, x):
        return self._check_input(x).copy()

    def adjoint(self, y):
        return self._check_output(y).copy()


class AffineInputOperator(ForwardOperator):
    """``x -> base(scale * x + offset)``.

    Lets a sampler working in the model range [-1, 1] guide against a
    measurement taken in reflectance units (``scale = offset = 0.5``).
    ``adjoint`` is the adjoint of the linear part, which is what gradients need.
    """

    def __init__(self, base, scale=0.5, offset=0.5):
        self.base = base
        self.scale = float(scale)
        self.offset = float(offset)
        self.kind = base.kind
        self.input_shape = base.input_shape
        self.output_shape = base.output_shape

    def apply(self, x):
        return self.base.apply(self.scale * self._check_input(x) + self.offset)

    def adjoint(self, y):
        return self.scale * self.base.adjoint(y)

    def describe(self):
        d = self.base.describe()
        d.update(input_scale=self.scale, input_offset=self.offset)
        return d


def apply_srf(cube, srf):
    """RGB image ``(C, M, N)`` with channel c = sum over bands of X * Q[:, c]."""
    x = _cube_array(cube)
    q = _srf_matrix(srf)
    if x.shape[0] != q.shape[0]:
        raise ShapeError(f"cube has {x.shape[0]} bands, SRF has {q.shape[0]}")
    _check_grids(cube, srf, "SRF")
    return SRFOperator(q, x.shape[1:]).apply(x)


def apply_optics(cube, psf, srf):
    x = _cube_array(cube)
    _check_grids(cube, srf, "SRF")
    _check_grids(cube, psf, "PSF stack")
    q = _srf_matrix(srf)
    if x.shape[0] != q.shape[0]:
        raise ShapeError(f"cube has {x.shape[0]} bands, SRF has {q.shape[0]}")
    return OpticsOperator(psf, q, x.shape[1:]).apply(x)


def apply_cassi(cube, mask, shear=1):
    x = _cube_array(cube)
    m = np.asarray(mask.values if isinstance(mask, CodedMask) else mask)
    if m.shape != x.shape[1:]:
        raise ShapeError(f"mask shape {m.shape} does not match cube spatial shape {x.shape[1:]}")
    return CASSIOperator(mask, x.shape[0], shear).apply(x)


def adjoint(op, y):
    return op.adjoint(y)


def make_operator(kind, shape, srf=None, psf=None, mask=None, shear=1):
    """Build an operator for a cube of shape ``(K, M, N)`` from its parts."""
    k, m, n = shape
    if kind == SRF:
        if srf is None:
            raise ConfigurationError("srf operator needs an SRF")
        op = SRFOperator(srf, (m, n))
    elif kind == OPTICS_SRF:
        if srf is None or psf is None:
            raise ConfigurationError("optics operator needs an SRF and a PSF stack")
        op = OpticsOperator(psf, srf, (m, n))
    elif kind == CASSI:
        if mask is None:
            raise ConfigurationError("cassi operator needs a mask")
        if np.shape(getattr(mask, "values", mask)) != (m, n):
            raise ShapeError(f"mask shape does not match cube spatial shape {(m, n)}")
        op = CASSIOperator(mask, k, shear)
    else:
        raise ConfigurationError(f"unknown operator kind {kind!r}")
    if op.input_shape != tuple(shape):
        raise ShapeError(f"operator input {op.input_shape} does not match cube {tuple(shape)}")
    return op


# -- synthetic PSFs -------------------------------------------------------


def _pixel_coords(size):
    c = size // 2
    r = np.arange(size) - c
    return np.meshgrid(r, r, indexing="ij")  # (row, col)


def _normalized(k):
    return k / k.sum()


def synth_psf(kind, grid=None, size=15, **params):
    """Synthetic wavelength-dependent PSF stacks.

    ``gaussian``: isotropic blur with ``sigma = sigma0 + slope * t``;
    ``grating``: central spot plus a satellite ``round(offset0 + dispersion * t)``
    pixels along +x carrying ``satellite_energy``;
    ``rotational``: two Gaussian lobes at ``radius`` rotated by ``rotation * t``.
    Here ``t = (wavelength - ref) / span``, defaults ``ref=400``, ``span=300``.
    """
    if grid is None:
        grid = WavelengthGrid.default()
    if int(size) != size or size < 1 or size % 2 == 0:
        raise ConfigurationError(f"PSF kernel size must be a positive odd integer, got {size}")
    size = int(size)
    ref = params.pop("ref", 400.0)
    span = params.pop("span", 300.0)
    t = (grid.samples - ref) / span
    rows, cols = _pixel_coords(size)
    c = size // 2
    kernels = []

    if kind == GAUSSIAN:
        sigma0 = params.pop("sigma0", 0.5)
        slope = params.pop("slope", 2.0)
        _no_extra(params)
        for tk in t:
            s = sigma0 + slope * tk
            if s <= 0:
                raise ConfigurationError(f"gaussian PSF width must stay positive, got {s}")
            kernels.append(_normalized(np.exp(-(rows**2 + cols**2) / (2 * s * s))))
    elif kind == GRATING:
        offset0 = params.pop("offset0", 1.0)
        dispersion = params.pop("dispersion", 6.0)
        energy = params.pop("satellite_energy", 0.3)
        _no_extra(params)
        if not 0 <= energy < 1:
            raise ConfigurationError(f"satellite energy must lie in [0, 1), got {energy}")
        for tk in t:
            off = int(np.round(offset0 + dispersion * tk))
            if abs(off) > c:
                raise ConfigurationError(f"satellite offset {off} does not fit a {size}x{size} kernel")
            k = np.zeros((size, size))
            k[c, c] += 1.0 - energy
            k[c, c + off] += energy
            kernels.append(k)
    elif kind == ROTATIONAL:
        radius = params.pop("radius", 3.0)
        lobe_sigma = params.pop("lobe_sigma", 1.0)
        rotation = params.pop("rotation", np.pi)
        _no_extra(params)
        for tk in t:
            kernels.append(_two_lobes(rows, cols, radius, lobe_sigma, rotation * tk))
    else:
        raise ConfigurationError(f"unknown PSF kind {kind!r}; expected one of {PSF_KINDS}")
    return PSFStack(np.stack(kernels), grid)


def _two_lobes(rows, cols, radius, sigma, theta):
    dx, dy = radius * np.cos(theta), radius * np.sin(theta)
    k = np.zeros(rows.shape)
    for sgn in (1.0, -1.0):
        # x runs along columns, y along rows
        k += np.exp(-((cols - sgn * dx) ** 2 + (rows - sgn * dy) ** 2) / (2 * sigma * sigma))
    return _normalized(k)


def _no_extra(params):
    if params:
        raise ConfigurationError(f"unknown PSF parameters: {sorted(params)}")


def gen_cassi_mask(M, N, seed, density=0.5):
    """I.i.d. Bernoulli(density) mask, reproducible from ``seed``."""
    if not 0.0 < density < 1.0:
        raise ConfigurationError(f"mask density must lie in (0, 1), got {density}")
    rng = np.random.default_rng(seed)
    values = (rng.random((M, N)) < density).astype(float)
    return CodedMask(values, seed=seed, density=density)


# -- noise ---------------------------------------------------------------


@dataclass(frozen=True)
class NoiseModel:
    sigma_y: float
    seed: int = 0

    def __post_init__(self):
        if not self.sigma_y >= 0:
            raise ConfigurationError(f"noise sigma must be >= 0, got {self.sigma_y}")


def add_noise(y, noise):
    y = np.asarray(y, dtype=float)
    if noise.sigma_y < 0:
        raise ConfigurationError(f"noise sigma must be >= 0, got {noise.sigma_y}")
    if noise.sigma_y == 0:
        return y.copy()
    rng = np.random.default_rng(noise.seed)
    return y + noise.sigma_y * rng.standard_normal(y.shape)
