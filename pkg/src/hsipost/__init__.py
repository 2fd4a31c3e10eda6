"""Bayesian hyperspectral reconstruction by guided diffusion sampling.

Forward operators, metameric augmentation, an EDM-style guided sampler with
a pluggable denoiser, and uncertainty-calibration metrics.
"""

from .core import (CodedMask, HSICube, LabelMap, PSFStack, SpectralResponse, WavelengthGrid,
                   camera_srf, to_model_range, to_reflectance_range)
from .errors import *  # noqa: F401,F403
from .metamer import (black_decompose, black_metamer_cube, build_projector, build_pu_basis,
                      containing_triangles, pu_metamer_cube, pu_metamer_pixel, pu_weights)
from .metrics import (CalibrationRecord, UncertaintyCube, bcm, gaussian_nll, pearson_calibration,
                      picp, posterior_stats, psnr, sam)
from .operators import (CASSI, OPTICS_SRF, SRF, NoiseModel, add_noise, adjoint, apply_cassi,
                        apply_optics, apply_srf, gen_cassi_mask, make_operator, synth_psf)
from .prior import (GaussianAnalyticPrior, edm_loss, gaussian_denoiser, karras_schedule,
                    score_from_denoiser)
from .sampler import (PosteriorEnsemble, SamplerConfig, guidance_weight, guided_sample,
                      likelihood_gradient, run_ensemble)
from .io import read_cube, write_cube

__version__ = "0.1.0"
