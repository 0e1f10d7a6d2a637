"""Image fitting with anisotropic 2D Gaussian splats and a progressive frequency loss."""

from .errors import FormatError, FreqSplatError, ParameterError, ShapeError, TrainingDiverged
from .field import GaussianSplat, SplatField, activate, init_field
from .raster import render, render_backward, set_threads
from .spectral import (AnnealSchedule, amp_discrepancy, amplitude, band_radius, dft2,
                       freq_loss, freq_loss_backward, make_highpass, make_lowpass, phase,
                       phase_discrepancy)
from .metrics import d_ssim, l1, psnr, ssim
from .densify import DensifyStats, accumulate, densify_step, prune
from .trainer import TrainConfig, region_gradient_diagnostic, total_loss, train
from .fixtures import make_fixture

__version__ = "0.1.0"
