"""Camera metamers.

Two generators live here:

* black metamers: split each spectrum into its sensor-visible projection and
  the sensor-invisible remainder, then rescale the remainder by one random
  factor per texture class;
* partition-of-unity (PU) metamers: express the target chromaticity as a
  convex blend of basis-function chromaticities and rescale to the target
  luminance.

Both preserve the camera RGB exactly before the final clip to [0, 1].
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

from .core import HSICube, LabelMap, WavelengthGrid
from .errors import (
    ConfigurationError,
    DomainError,
    FeasibilityError,
    GamutError,
    NumericalError,
    SamplingError,
    ShapeError,
)

# tolerance on barycentric nonnegativity
BARY_TOL = 1e-12
MAX_CONDITION = 1e12


@dataclass(frozen=True, eq=False)
class SensorProjector:
    Q: np.ndarray
    R: np.ndarray
    null_basis: np.ndarray

    @property
    def K(self):
        return self.R.shape[0]


@dataclass(frozen=True)
class BlackDecomposition:
    fundamental: np.ndarray
    black: np.ndarray


def build_projector(srf):
    """Orthogonal projector ``R = Q (Q^T Q)^-1 Q^T`` plus a null-space basis of ``Q^T``."""
    q = np.asarray(srf, dtype=float)
    if q.ndim != 2:
        raise ShapeError(f"SRF must be 2-D, got shape {q.shape}")
    k, c = q.shape
    u, s, _ = np.linalg.svd(q, full_matrices=True)
    cond = s[0] / s[-1] if s[-1] > 0 else np.inf
    if c > k or cond > MAX_CONDITION:
        raise NumericalError(f"SRF is rank deficient (condition number {cond:.3e})")
    r = q @ np.linalg.solve(q.T @ q, q.T)
    r = 0.5 * (r + r.T)
    null = u[:, c:].copy()
    return SensorProjector(q.copy(), r, null)


def black_decompose(spectrum, proj):
    s = np.asarray(spectrum, dtype=float)
    if s.shape != (proj.K,):
        raise ShapeError(f"spectrum has shape {s.shape}, projector expects ({proj.K},)")
    s0 = proj.R @ s
    return BlackDecomposition(s0, s - s0)


def black_metamer_cube(cube, labels, proj, rng=None, alphas=None, clip=True,
                       alpha_range=(-1.0, 2.0)):
    """Texture-guided black metamer: ``S' = R S + alpha_c (I - R) S`` per pixel.

    One ``alpha`` per label class, drawn from ``U(alpha_range)`` unless given
    explicitly (``alphas[c - 1]`` for class ``c``).  Returns the metamer cube
    and the alphas used.
    """
    x = np.asarray(cube, dtype=float)
    lab = labels.labels if isinstance(labels, LabelMap) else LabelMap(labels).labels
    if lab.shape != x.shape[1:]:
        raise ShapeError(f"label map {lab.shape} does not match cube spatial shape {x.shape[1:]}")
    if x.shape[0] != proj.K:
        raise ShapeError(f"cube has {x.shape[0]} bands, projector expects {proj.K}")
    n_classes = int(lab.max())
    if alphas is None:
        if rng is None:
            raise ConfigurationError("need an rng or explicit alphas")
        alphas = rng.uniform(alpha_range[0], alpha_range[1], size=n_classes)
    alphas = np.asarray(alphas, dtype=float)
    if alphas.shape != (n_classes,):
        raise ShapeError(f"need {n_classes} alphas, got shape {alphas.shape}")

    k = x.shape[0]
    spectra = x.reshape(k, -1)
    fundamental = proj.R @ spectra
    black = spectra - fundamental
    out = fundamental + alphas[lab.ravel() - 1][None, :] * black
    out = out.reshape(x.shape)
    if clip:
        out = np.clip(out, 0.0, 1.0)
    if isinstance(cube, HSICube):
        out = cube.with_data(out)
    return out, alphas


# -- partition-of-unity basis ---------------------------------------------


@dataclass(frozen=True, eq=False)
class PUBasis:
    B: np.ndarray               # (K, M) partition of unity
    illuminant: np.ndarray      # (K,)
    B_lit: np.ndarray           # diag(illuminant) @ B
    rgb: np.ndarray             # (M, 3) camera RGB per basis function
    lum: np.ndarray             # (M,) luminance sums S_m
    r: np.ndarray
    g: np.ndarray
    triangles: np.ndarray       # (T, 3) vertex indices
    tri_inv: np.ndarray         # (T, 3, 3) inverses of the affine embeddings

    @property
    def M(self):
        return self.B.shape[1]

    def embedding(self, idx):
        """Columns ``(1, r_m, g_m)`` for the vertex indices ``idx``."""
        idx = np.asarray(idx)
        return np.vstack([np.ones(idx.size), self.r[idx], self.g[idx]])


def pu_spline_basis(grid, M, degree=2):
    """Clamped uniform B-spline basis on the grid span; rows sum to one."""
    if M < degree + 2:
        raise ConfigurationError(f"need at least {degree + 2} basis functions, got {M}")
    lo, hi = grid.span
    interior = np.linspace(lo, hi, M - degree + 1)[1:-1]
    knots = np.r_[[lo] * (degree + 1), interior, [hi] * (degree + 1)]
    B = BSpline(knots, np.eye(M), degree)(grid.samples)
    return np.clip(B, 0.0, None)


def build_pu_basis(grid, M, illuminant, srf, degree=2, det_tol=1e-12):
    if grid is None:
        grid = WavelengthGrid.default()
    if M < 4:
        raise ConfigurationError(f"PU basis needs M >= 4, got {M}")
    q = np.asarray(srf, dtype=float)
    if q.shape[0] != len(grid) or q.shape[1] != 3:
        raise ShapeError(f"SRF shape {q.shape} does not match grid of {len(grid)} samples and 3 channels")
    ell = np.ones(len(grid)) if illuminant is None else np.asarray(illuminant, dtype=float)
    if ell.shape != (len(grid),):
        raise ShapeError(f"illuminant has shape {ell.shape}, expected ({len(grid)},)")
    if np.any(ell <= 0):
        raise ConfigurationError("illuminant must be strictly positive")

    B = pu_spline_basis(grid, M, degree)
    B_lit = ell[:, None] * B
    rgb = (q.T @ B_lit).T
    lum = rgb.sum(axis=1)
    if np.any(lum <= 0):
        bad = int(np.flatnonzero(lum <= 0)[0])
        raise ConfigurationError(f"basis function {bad} has non-positive luminance {lum[bad]!r}")
    r = rgb[:, 0] / lum
    g = rgb[:, 1] / lum

    tris, invs = [], []
    for tri in itertools.combinations(range(M), 3):
        T = np.vstack([np.ones(3), r[list(tri)], g[list(tri)]])
        if abs(np.linalg.det(T)) > det_tol:
            tris.append(tri)
            invs.append(np.linalg.inv(T))
    if not tris:
        raise ConfigurationError("basis chromaticities are collinear; no usable triangles")
    return PUBasis(B, ell, B_lit, rgb, lum, r, g,
                   np.array(tris, dtype=int), np.array(invs))


def _chromaticity(rgb):
    t = np.asarray(rgb, dtype=float)
    if t.shape != (3,):
        raise ShapeError(f"target must be an RGB 3-vector, got shape {t.shape}")
    s = t.sum()
    if not s > 0:
        raise DomainError(f"target luminance R+G+B must be positive, got {s!r}")
    return s, t[0] / s, t[1] / s


def containing_triangles(basis, rgb):
    """All basis triangles whose barycentric coordinates for the target are >= 0.

    Returns a list of ``(triangle_index, a_T)``.
    """
    _, r, g = _chromaticity(rgb)
    xi = np.array([1.0, r, g])
    coords = basis.tri_inv @ xi
    ok = np.all(coords >= -BARY_TOL, axis=1)
    if not ok.any():
        raise GamutError(f"chromaticity (r={r:.6g}, g={g:.6g}) lies outside the basis ring")
    return [(int(t), coords[t]) for t in np.flatnonzero(ok)]


def free_geometry(basis, tri_index):
    """Free vertex indices and the map ``T^-1 F`` for a triangle."""
    tri = basis.triangles[tri_index]
    free = np.setdiff1d(np.arange(basis.M), tri)
    return free, basis.tri_inv[tri_index] @ basis.embedding(free)


def pu_weights(basis, rgb, tri_index, a_T, a_F=None):
    """Full barycentric coordinates ``a`` and luminance-scaled weights ``w``."""
    S, _, _ = _chromaticity(rgb)
    tri = basis.triangles[tri_index]
    free, geo = free_geometry(basis, tri_index)
    a_T = np.asarray(a_T, dtype=float)
    a_F = np.zeros(free.size) if a_F is None else np.asarray(a_F, dtype=float)
    if a_F.shape != (free.size,):
        raise ShapeError(f"need {free.size} free coordinates, got shape {a_F.shape}")
    if np.any(a_F < 0):
        i = int(np.argmin(a_F))
        raise FeasibilityError(f"free coordinate {i} is negative ({a_F[i]!r})")
    on_tri = a_T - geo @ a_F
    if np.any(on_tri < -BARY_TOL):
        i = int(np.argmin(on_tri))
        raise FeasibilityError(f"triangle coordinate {i} would be {on_tri[i]!r} < 0")
    a = np.zeros(basis.M)
    a[tri] = np.clip(on_tri, 0.0, None)
    a[free] = a_F
    w = S * a / basis.lum
    return a, w


def free_upper_bounds(a_T, geo):
    """Per-coordinate bounds on ``a_F`` from ``a_T - geo @ a_F >= 0``, each taken alone."""
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(geo > 0, np.clip(a_T, 0.0, None)[:, None] / geo, np.inf)
    return ratios.min(axis=0)


def sample_free_coords(a_T, geo, rng, shrink=0.8, max_tries=64, upper=None, accept=None):
    """Draw ``a_F ~ U(0, shrink * u)`` componentwise, rejecting jointly infeasible draws.

    ``upper`` tightens the per-coordinate bounds ``u``; ``accept`` is an extra
    predicate on a jointly feasible draw.
    """
    u = free_upper_bounds(a_T, geo)
    if upper is not None:
        u = np.minimum(u, upper)
    if np.any(~np.isfinite(u)):
        raise SamplingError("unbounded free coordinate")
    for _ in range(max_tries):
        a_F = rng.uniform(0.0, 1.0, size=u.size) * shrink * u
        if np.all(a_T - geo @ a_F >= -BARY_TOL) and (accept is None or accept(a_F)):
            return a_F
    raise SamplingError(f"no feasible free coordinates after {max_tries} draws")


def pu_metamer_pixel(basis, rgb, rng, shrink=0.8, max_tries=64, clip=True, physical=True):
    """One PU metamer spectrum for a camera RGB target.

    A containing triangle is picked uniformly at random and the free
    coordinates are drawn by rejection, falling back to ``a_F = 0`` when the
    budget runs dry.  With ``physical=True`` a draw is only accepted if the
    spectrum stays <= 1 before clipping (each free coordinate is also capped
    so that its own basis function cannot overshoot); if no draw on the chosen
    triangle qualifies, the remaining containing triangles are tried in random
    order and the least-overshooting fallback is kept.
    """
    S, _, _ = _chromaticity(rgb)
    found = containing_triangles(basis, rgb)
    order = rng.permutation(len(found)) if physical else [rng.integers(len(found))]
    peak = basis.B_lit.max(axis=0)
    best = None
    for o in order:
        tri_index, a_T = found[o]
        free, geo = free_geometry(basis, tri_index)

        def spectrum_for(a_F):
            return basis.B_lit @ pu_weights(basis, rgb, tri_index, a_T, a_F)[1]

        upper = accept = None
        if physical:
            upper = basis.lum[free] / (S * peak[free])
            accept = lambda a_F: spectrum_for(a_F).max() <= 1.0
        try:
            a_F = sample_free_coords(a_T, geo, rng, shrink, max_tries, upper, accept)
        except SamplingError:
            a_F = np.zeros(free.size)
        spectrum = spectrum_for(a_F)
        if not physical or spectrum.max() <= 1.0:
            best = spectrum
            break
        if best is None or spectrum.max() < best.max():
            best = spectrum
    return np.clip(best, 0.0, 1.0) if clip else best


@dataclass(frozen=True, eq=False)
class PUMetamerResult:
    cube: object
    out_of_gamut: int
    failures: int


def pixel_rng(seed, index):
    """Independent generator for one pixel, so results do not depend on scheduling."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(int(index),)))


def pu_metamer_cube(cube, basis, srf, seed, shrink=0.8, max_tries=64, clip=True, physical=True):
    """PU metamer of every pixel; out-of-gamut or black pixels pass through unchanged."""
    x = np.asarray(cube, dtype=float)
    q = np.asarray(srf, dtype=float)
    if x.shape[0] != q.shape[0] or q.shape[0] != basis.B.shape[0]:
        raise ShapeError("cube, SRF and basis disagree on band count")
    k = x.shape[0]
    spectra = x.reshape(k, -1)
    targets = q.T @ spectra
    out = spectra.copy()
    n_gamut = n_fail = 0
    for p in range(spectra.shape[1]):
        try:
            out[:, p] = pu_metamer_pixel(basis, targets[:, p], pixel_rng(seed, p),
                                         shrink, max_tries, clip, physical)
        except (GamutError, DomainError):
            n_gamut += 1
        except (FeasibilityError, SamplingError):
            n_fail += 1
    out = out.reshape(x.shape)
    if isinstance(cube, HSICube):
        out = cube.with_data(out)
    return PUMetamerResult(out, n_gamut, n_fail)
