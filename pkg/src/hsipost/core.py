"""Shared data model: wavelength grids, cubes, sensor responses and friends.

Cubes are stored band-major planar, i.e. as arrays of shape ``(K, M, N)``
(band, row, column).  Every container here is immutable once built; the
underlying arrays are flagged read-only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DataError, DomainError, ShapeError

REFLECTANCE = "reflectance"
MODEL = "model"
DOMAINS = (REFLECTANCE, MODEL)


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class WavelengthGrid:
    """Strictly increasing wavelength samples in nanometers."""

    samples: np.ndarray

    def __post_init__(self):
        s = _frozen(self.samples).ravel()
        if s.size < 2:
            raise ConfigurationError(f"wavelength grid needs at least 2 samples, got {s.size}")
        if not np.all(np.isfinite(s)) or np.any(np.diff(s) <= 0):
            raise ConfigurationError("wavelength grid must be finite and strictly increasing")
        object.__setattr__(self, "samples", s)

    @classmethod
    def default(cls):
        """31 samples, 400-700 nm inclusive, 10 nm step."""
        return cls(np.linspace(400.0, 700.0, 31))

    @classmethod
    def uniform(cls, start, stop, count):
        return cls(np.linspace(start, stop, count))

    def __len__(self):
        return self.samples.size

    def __eq__(self, other):
        if not isinstance(other, WavelengthGrid):
            return NotImplemented
        return self.samples.shape == other.samples.shape and bool(np.all(self.samples == other.samples))

    __hash__ = None

    @property
    def span(self):
        return float(self.samples[0]), float(self.samples[-1])


def _grid_for(k, grid):
    if grid is None:
        if k == 31:
            return WavelengthGrid.default()
        if k == 1:
            return None
        return WavelengthGrid.uniform(400.0, 700.0, k)
    if len(grid) != k:
        raise ShapeError(f"grid has {len(grid)} samples but data has {k} bands")
    return grid


@dataclass(frozen=True, eq=False)
class HSICube:
    """A hyperspectral cube with data laid out as ``(K, M, N)``.

    ``domain`` is ``"reflectance"`` for values in [0, 1] or ``"model"`` for
    values in [-1, 1].  The range itself is only enforced by the range maps;
    sampler outputs may legitimately stray outside.
    """

    data: np.ndarray
    grid: WavelengthGrid | None = None
    domain: str = REFLECTANCE

    def __post_init__(self):
        d = _frozen(self.data)
        if d.ndim != 3:
            raise ShapeError(f"cube data must be 3-D (K, M, N), got shape {d.shape}")
        if not np.all(np.isfinite(d)):
            bad = tuple(int(v) for v in np.argwhere(~np.isfinite(d))[0])
            raise DomainError(f"non-finite cube value at (band, row, col)={bad}")
        if self.domain not in DOMAINS:
            raise ConfigurationError(f"unknown cube domain {self.domain!r}")
        object.__setattr__(self, "data", d)
        if d.shape[0] > 1 or self.grid is not None:
            object.__setattr__(self, "grid", _grid_for(d.shape[0], self.grid))

    @property
    def K(self):
        return self.data.shape[0]

    @property
    def M(self):
        return self.data.shape[1]

    @property
    def N(self):
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape

    def value(self, i, j, band):
        """Value at row ``i``, column ``j`` and band index ``band``."""
        if not (0 <= i < self.M and 0 <= j < self.N and 0 <= band < self.K):
            raise IndexError(f"({i}, {j}, {band}) outside cube of shape M={self.M}, N={self.N}, K={self.K}")
        return float(self.data[band, i, j])

    def spectra(self):
        """Pixels-by-bands view of shape ``(M*N, K)``."""
        return self.data.reshape(self.K, -1).T

    def with_data(self, data, domain=None):
        return HSICube(data, self.grid, self.domain if domain is None else domain)

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.data
        return self.data.astype(dtype)


@dataclass(frozen=True, eq=False)
class SpectralResponse:
    """Camera spectral response ``Q`` of shape ``(K, C)``, C = 3 for RGB."""

    matrix: np.ndarray
    grid: WavelengthGrid | None = None

    def __post_init__(self):
        q = _frozen(self.matrix)
        if q.ndim != 2:
            raise ShapeError(f"SRF must be 2-D (K, C), got shape {q.shape}")
        if np.any(q < 0) or not np.all(np.isfinite(q)):
            raise DomainError("SRF entries must be finite and nonnegative")
        if np.any(q.max(axis=0) <= 0):
            raise DomainError("every SRF column needs at least one positive entry")
        object.__setattr__(self, "matrix", q)
        object.__setattr__(self, "grid", _grid_for(q.shape[0], self.grid))

    @property
    def K(self):
        return self.matrix.shape[0]

    @property
    def C(self):
        return self.matrix.shape[1]

    def __array__(self, dtype=None, copy=None):
        return self.matrix if dtype is None else self.matrix.astype(dtype)


@dataclass(frozen=True, eq=False)
class LabelMap:
    """Per-pixel texture class indices, contiguous from 1."""

    labels: np.ndarray

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 2:
            raise ShapeError(f"label map must be 2-D, got shape {lab.shape}")
        if not np.issubdtype(lab.dtype, np.integer):
            if not np.all(lab == np.round(lab)):
                raise DataError("label map must hold integers")
        lab = _frozen(lab, dtype=np.int64)
        if lab.size == 0:
            raise DataError("empty label map")
        if np.any(lab < 1):
            bad = tuple(int(v) for v in np.argwhere(lab < 1)[0])
            raise DataError(f"unlabeled pixel (class < 1) at (row, col)={bad}")
        present = np.unique(lab)
        if present[-1] != present.size:
            raise DataError(f"class indices must be contiguous from 1, got {present.tolist()[:10]}")
        object.__setattr__(self, "labels", lab)

    @property
    def n_classes(self):
        return int(self.labels.max())

    @property
    def shape(self):
        return self.labels.shape


@dataclass(frozen=True, eq=False)
class PSFStack:
    """One odd-sized, nonnegative, unit-sum kernel per band: ``(K, P, P)``."""

    kernels: np.ndarray
    grid: WavelengthGrid | None = None

    def __post_init__(self):
        k = _frozen(self.kernels)
        if k.ndim != 3 or k.shape[1] != k.shape[2]:
            raise ShapeError(f"PSF stack must have shape (K, P, P), got {k.shape}")
        if k.shape[1] % 2 == 0:
            raise ConfigurationError(f"PSF kernel size must be odd, got {k.shape[1]}")
        if np.any(k < 0) or not np.all(np.isfinite(k)):
            raise DomainError("PSF kernels must be finite and nonnegative")
        sums = k.sum(axis=(1, 2))
        bad = np.flatnonzero(np.abs(sums - 1.0) >= 1e-9)
        if bad.size:
            raise DomainError(f"PSF kernel for band {bad[0]} sums to {sums[bad[0]]!r}, expected 1")
        object.__setattr__(self, "kernels", k)
        object.__setattr__(self, "grid", _grid_for(k.shape[0], self.grid))

    @property
    def K(self):
        return self.kernels.shape[0]

    @property
    def size(self):
        return self.kernels.shape[1]


@dataclass(frozen=True, eq=False)
class CodedMask:
    """Binary coded aperture of shape ``(M, N)``."""

    values: np.ndarray
    seed: int | None = None
    density: float | None = None

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise ShapeError(f"mask must be 2-D, got shape {v.shape}")
        if not np.all((v == 0) | (v == 1)):
            raise DomainError("mask values must be 0 or 1")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def shape(self):
        return self.values.shape


def _first_outside(data, lo, hi):
    bad = np.argwhere((data < lo) | (data > hi))
    if bad.size == 0:
        return None
    band, i, j = (int(v) for v in bad[0])
    return (i, j, band), float(data[band, i, j])


def to_model_range(cube):
    """Map a reflectance cube in [0, 1] to the model range [-1, 1] via ``2x - 1``."""
    data = np.asarray(cube, dtype=float)
    hit = _first_outside(data, 0.0, 1.0)
    if hit is not None:
        raise DomainError(f"reflectance value {hit[1]!r} outside [0, 1] at (i, j, band)={hit[0]}")
    out = 2.0 * data - 1.0
    if isinstance(cube, HSICube):
        return cube.with_data(out, MODEL)
    return out


def to_reflectance_range(cube):
    """Inverse of :func:`to_model_range`: ``(x + 1) / 2``."""
    data = np.asarray(cube, dtype=float)
    hit = _first_outside(data, -1.0, 1.0)
    if hit is not None:
        raise DomainError(f"model value {hit[1]!r} outside [-1, 1] at (i, j, band)={hit[0]}")
    out = (data + 1.0) / 2.0
    if isinstance(cube, HSICube):
        return cube.with_data(out, REFLECTANCE)
    return out


CAMERA_PEAKS = ((600.0, 35.0), (540.0, 35.0), (460.0, 30.0))


def camera_srf(grid=None, peaks=CAMERA_PEAKS):
    """Smooth three-channel camera response: Gaussians at (center, width) nm, columns summing to 1."""
    grid = WavelengthGrid.default() if grid is None else grid
    lam = grid.samples
    q = np.stack([np.exp(-0.5 * ((lam - c) / w) ** 2) for c, w in peaks], axis=1)
    return SpectralResponse(q / q.sum(axis=0), grid)
