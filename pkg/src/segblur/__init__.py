"""Segmentation-based non-uniform motion blur synthesis."""

from .blur import (
    BlurConfig,
    BlurPair,
    PairRecord,
    RegionSet,
    add_noise,
    average_frames,
    blur_pair,
    compose_nonuniform,
    convolve,
    gamma_decode,
    gamma_encode,
    saturate,
    smooth_region_masks,
)
from .dataset import GenerationConfig, generate_dataset, select_illum_images, select_objects, verify_dataset
from .errors import (
    ConfigError,
    InvalidInputError,
    InvalidParameterError,
    KernelOverflowError,
    ManifestError,
    SegblurError,
)
from .illumination import IllumAugment, IllumParams, dynamic_scene_illum, hsv_to_rgb, rgb_to_hsv, varying_illum
from .kernels import (
    KernelSpec,
    Trajectory,
    center_kernel,
    generate_kernel,
    rasterize_kernel,
    sample_linear3d_trajectory,
    sample_spline_trajectory,
    sample_tremor_trajectory,
)
from .manifest import SourceManifest, load_manifest
from .metrics import psnr, ssim

__version__ = "0.1.0"
