"""Physics-constrained spatio-temporal super-resolution of stratified
internal-wave flow fields.

The package is organized as:

- ``autodiff``: dense-tensor reverse-mode automatic differentiation
- ``fields``: field grids, synthetic wave generator, pre-processing,
  interpolation baselines
- ``container``: the IWSR1 named-tensor file format
- ``encoder`` / ``decoder``: the feature U-Net and the coordinate MLP
- ``physics``: Navier-Stokes residual losses
- ``sampling``: adaptive edge-biased point sampling
- ``metrics``: PSNR / SSIM / kinetic-energy / spectral errors
- ``train``: deterministic Adam training, checkpoints, inference
- ``cli``: the ``iwsr`` command-line tool
"""

from .autodiff import Tensor, backward
from .container import load_grid, load_tensors, save_grid, save_tensors
from .decoder import Pcn, PcnConfig
from .encoder import Encoder, EncoderConfig
from .fields import (FieldGrid, GenConfig, NormStats, TopographyProfile,
                     baseline_upsample, downsample, generate_synthetic,
                     normalize, terrain_fill)
from .metrics import eval_report, fft_mse, ke_error, psnr, ssim
from .physics import PhysParams, StencilConfig, pde_loss, pde_residuals
from .sampling import SamplingConfig, assemble_batch, extract_edges
from .train import (TrainConfig, TrainState, load_checkpoint, save_checkpoint,
                    superresolve, train)

__version__ = "0.1.0"

__all__ = [
    "Tensor", "backward",
    "load_grid", "load_tensors", "save_grid", "save_tensors",
    "Pcn", "PcnConfig", "Encoder", "EncoderConfig",
    "FieldGrid", "GenConfig", "NormStats", "TopographyProfile",
    "baseline_upsample", "downsample", "generate_synthetic", "normalize",
    "terrain_fill",
    "eval_report", "fft_mse", "ke_error", "psnr", "ssim",
    "PhysParams", "StencilConfig", "pde_loss", "pde_residuals",
    "SamplingConfig", "assemble_batch", "extract_edges",
    "TrainConfig", "TrainState", "load_checkpoint", "save_checkpoint",
    "superresolve", "train",
]
