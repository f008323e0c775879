"""Zero-shot blind image restoration in the noise space of a deterministic
diffusion sampler.

A degraded image is inverted through the sampler to its terminal noise,
noise windows that sit in low-density regions of N(0, I) are detected with
a moment-based normality test, defective tiles are replaced by their
nearest neighbors from a bank of fresh normal patches, and the sampler
regenerates the restored image from the rectified noise.
"""
from .degrade import (
    DegradationSpec,
    apply,
    apply_adjoint_input,
    apply_adjoint_theta,
    gaussian_kernel,
    motion_kernel,
)
from .errors import (
    CapabilityError,
    ConfigError,
    DegenerateSampleError,
    FileFormatError,
    NoisefixError,
    NumericError,
)
from .estimator import NoiseSpaceRestorer
from .inversion import (
    InversionReport,
    invert_blind,
    invert_partial,
    kernel_from_theta,
)
from .io import read_image, read_tensor, write_image, write_tensor
from .metrics import psnr, ssim
from .normality import (
    DefectMask,
    OmnibusResult,
    omnibus_test,
    scan_mask,
    skew_kurt,
    tile_failure_rate,
    window_pvalues,
)
from .priors import (
    GaussianMixturePrior,
    MlpScore,
    NoiseSchedule,
    linear_schedule,
    load_gmm_components,
    load_mlp,
    save_gmm_components,
    save_mlp,
)
from .rectify import (
    PatchBank,
    RectifyReport,
    RestoreParams,
    RestoreResult,
    blend,
    build_bank,
    nearest_patch,
    restore,
    substitute,
)
from .sampler import (
    SamplerConfig,
    generate,
    generate_adjoint,
    generate_many,
    invert_ode,
)
from .tensor import Rng, Tensor3, draw_standard_normal

__version__ = "0.1.0"

__all__ = [
    "CapabilityError",
    "ConfigError",
    "DefectMask",
    "DegenerateSampleError",
    "DegradationSpec",
    "FileFormatError",
    "GaussianMixturePrior",
    "InversionReport",
    "MlpScore",
    "NoiseSchedule",
    "NoiseSpaceRestorer",
    "NoisefixError",
    "NumericError",
    "OmnibusResult",
    "PatchBank",
    "RectifyReport",
    "RestoreParams",
    "RestoreResult",
    "Rng",
    "SamplerConfig",
    "Tensor3",
    "apply",
    "apply_adjoint_input",
    "apply_adjoint_theta",
    "blend",
    "build_bank",
    "draw_standard_normal",
    "gaussian_kernel",
    "generate",
    "generate_adjoint",
    "generate_many",
    "invert_blind",
    "invert_ode",
    "invert_partial",
    "kernel_from_theta",
    "linear_schedule",
    "load_gmm_components",
    "load_mlp",
    "motion_kernel",
    "nearest_patch",
    "omnibus_test",
    "psnr",
    "read_image",
    "read_tensor",
    "restore",
    "save_gmm_components",
    "save_mlp",
    "scan_mask",
    "skew_kurt",
    "ssim",
    "substitute",
    "tile_failure_rate",
    "window_pvalues",
    "write_image",
    "write_tensor",
    "__version__",
]
