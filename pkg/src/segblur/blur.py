"""Image formation: gamma CRF, convolution, saturation, noise and the
piecewise-constant non-uniform blur composition used to synthesize pairs.

Images are ``(H, W)`` or ``(H, W, C)`` float arrays. Operations keep the
floating dtype of their input; convolutions accumulate in float64.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy import fft as sp_fft

from .errors import InvalidInputError, InvalidParameterError
from .kernels import KernelSpec, generate_kernel

log = logging.getLogger(__name__)

BOUNDARIES = {"replicate": "edge", "reflect": "symmetric"}
BACKENDS = ("auto", "direct", "fft")

# 'auto' switches to the FFT path above this many kernel taps.
DIRECT_MAX_TAPS = 16

PARTITION_TOL = 1e-6


def _as_float(img):
    img = np.asarray(img)
    if not np.issubdtype(img.dtype, np.floating):
        img = img.astype(np.float64)
    return img


def _check_gamma(gamma):
    if not gamma > 0:
        raise InvalidParameterError(f"gamma must be > 0, got {gamma}")


def gamma_encode(photons, gamma):
    """Camera response ``x ** (1 / gamma)`` mapping irradiance to pixel values."""
    _check_gamma(gamma)
    x = _as_float(photons)
    if x.size and x.min() < 0:
        raise InvalidInputError(f"photon values must be >= 0, min is {x.min()}")
    if gamma == 1:
        return x.copy()
    return np.power(x, x.dtype.type(1.0 / gamma))


def gamma_decode(pixels, gamma):
    """Inverse CRF ``x ** gamma`` for pixel values in [0, 1]."""
    _check_gamma(gamma)
    x = _as_float(pixels)
    if x.size and (x.min() < 0 or x.max() > 1):
        raise InvalidInputError(f"pixel values must lie in [0, 1], got [{x.min()}, {x.max()}]")
    if gamma == 1:
        return x.copy()
    return np.power(x, x.dtype.type(gamma))


def saturate(img):
    return np.clip(_as_float(img), 0, 1)


def add_noise(img, std, rng):
    """Add i.i.d. zero-mean Gaussian noise; the result is not clipped."""
    if not std >= 0:
        raise InvalidParameterError(f"noise std must be >= 0, got {std}")
    x = _as_float(img)
    if std == 0:
        return x.copy()
    noise = rng.standard_normal(size=x.shape, dtype=np.float32 if x.dtype == np.float32 else np.float64)
    return (x + x.dtype.type(std) * noise).astype(x.dtype)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def _convolve_direct(padded, k, shape):
    h, w = shape
    n = k.shape[0]
    out = np.zeros((h, w) + padded.shape[2:])
    for i, j in zip(*np.nonzero(k)):
        out += k[i, j] * padded[n - 1 - i : n - 1 - i + h, n - 1 - j : n - 1 - j + w]
    return out


class _Convolver:
    """Convolves one image with many kernels.

    Padded copies and image spectra are cached per kernel size, so blurring
    the same image with several same-sized kernels costs one forward FFT.
    """

    def __init__(self, img, boundary):
        if boundary not in BOUNDARIES:
            raise InvalidParameterError(f"unknown boundary {boundary!r}, expected one of {list(BOUNDARIES)}")
        self.x = np.asarray(img, dtype=np.float64)
        self.boundary = boundary
        self._padded = {}
        self._spectra = {}

    def padded(self, n):
        if n not in self._padded:
            r = n // 2
            width = ((r, r), (r, r)) + ((0, 0),) * (self.x.ndim - 2)
            self._padded[n] = np.pad(self.x, width, mode=BOUNDARIES[self.boundary])
        return self._padded[n]

    def spectrum(self, n):
        if n not in self._spectra:
            padded = self.padded(n)
            fshape = tuple(sp_fft.next_fast_len(s, real=True) for s in padded.shape[:2])
            self._spectra[n] = (fshape, sp_fft.rfft2(padded, s=fshape, axes=(0, 1)))
        return self._spectra[n]

    def __call__(self, k, backend="auto", window=None):
        """Convolve with ``k``; ``window=(y0, y1, x0, x1)`` restricts the output block."""
        x = self.x
        h, w = x.shape[:2]
        if k.shape[0] > min(h, w):
            raise InvalidParameterError(f"kernel {k.shape} larger than image {x.shape[:2]}")
        if backend == "auto":
            backend = "direct" if np.count_nonzero(k) <= DIRECT_MAX_TAPS else "fft"
        n = k.shape[0]
        y0, y1, x0, x1 = window if window is not None else (0, h, 0, w)
        full = (y0, y1, x0, x1) == (0, h, 0, w)
        if backend == "direct":
            block = self.padded(n)[y0 : y1 + n - 1, x0 : x1 + n - 1]
            return _convolve_direct(block, k, (y1 - y0, x1 - x0))
        if full:
            fshape, spec = self.spectrum(n)
        else:
            block = self.padded(n)[y0 : y1 + n - 1, x0 : x1 + n - 1]
            fshape = tuple(sp_fft.next_fast_len(s, real=True) for s in block.shape[:2])
            spec = sp_fft.rfft2(block, s=fshape, axes=(0, 1))
        kf = sp_fft.rfft2(k, s=fshape)
        if x.ndim == 3:
            kf = kf[:, :, None]
        out = sp_fft.irfft2(spec * kf, s=fshape, axes=(0, 1))
        return out[n - 1 : n - 1 + y1 - y0, n - 1 : n - 1 + x1 - x0]


def _support_window(mask, grow, shape):
    """Bounding box of ``mask > 0`` grown by ``grow`` px, clipped to ``shape``."""
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(mask.any(axis=0))
    h, w = shape
    return (
        max(rows[0] - grow, 0),
        min(rows[-1] + 1 + grow, h),
        max(cols[0] - grow, 0),
        min(cols[-1] + 1 + grow, w),
    )


def _check_kernel(k):
    k = np.asarray(k, dtype=np.float64)
    if k.ndim != 2 or k.shape[0] != k.shape[1] or k.shape[0] % 2 == 0:
        raise InvalidParameterError(f"kernel must be odd and square, got {k.shape}")
    return k


def convolve(img, k, boundary="replicate", backend="auto"):
    """2D convolution ``k * img`` with boundary extension, per channel.

    ``backend`` selects a direct tap-accumulation loop or an FFT product;
    both compute the same linear convolution of the padded image.
    """
    x = _as_float(img)
    if x.ndim not in (2, 3):
        raise InvalidParameterError(f"image must be (H, W) or (H, W, C), got {x.shape}")
    if backend not in BACKENDS:
        raise InvalidParameterError(f"unknown backend {backend!r}")
    out = _Convolver(x, boundary)(_check_kernel(k), backend)
    return out.astype(x.dtype, copy=False)


# ---------------------------------------------------------------------------
# regions
# ---------------------------------------------------------------------------


@dataclass
class RegionSet:
    """Soft masks (background first) with one kernel per mask."""

    masks: list
    kernels: list

    def __post_init__(self):
        if len(self.masks) != len(self.kernels) or not self.masks:
            raise InvalidParameterError(
                f"need >= 1 mask and one kernel per mask, got {len(self.masks)} masks / {len(self.kernels)} kernels"
            )
        shapes = {np.shape(m) for m in self.masks}
        if len(shapes) != 1 or len(next(iter(shapes))) != 2:
            raise InvalidParameterError(f"masks must share one (H, W) shape, got {shapes}")

    @property
    def shape(self):
        return np.shape(self.masks[0])

    def __len__(self):
        return len(self.masks)

    def partition_error(self):
        """Largest per-pixel deviation of the mask sum from 1."""
        return float(np.abs(np.sum(self.masks, axis=0, dtype=np.float64) - 1).max())


def smooth_region_masks(binary_masks, kernels, boundary="replicate", backend="auto"):
    """Soften object masks with their own kernels and derive the background.

    ``kernels[0]`` is the background kernel, ``kernels[i + 1]`` belongs to
    ``binary_masks[i]``. Where smoothed objects overlap the masks are clamped
    and renormalized per pixel so they still sum to one.
    """
    if len(kernels) != len(binary_masks) + 1:
        raise InvalidParameterError(
            f"expected {len(binary_masks) + 1} kernels (background first), got {len(kernels)}"
        )
    kept_masks, kept_kernels = [], [np.asarray(kernels[0], dtype=np.float64)]
    for i, (m, k) in enumerate(zip(binary_masks, kernels[1:])):
        m = np.asarray(m, dtype=np.float64)
        if m.ndim != 2:
            raise InvalidParameterError(f"object mask {i} must be (H, W), got {m.shape}")
        if not m.any():
            log.warning("dropping empty object mask %d", i)
            continue
        k = _check_kernel(k)
        binary = (m > 0).astype(np.float64)
        # smoothing spreads a mask by at most the kernel radius
        y0, y1, x0, x1 = window = _support_window(binary, k.shape[0] // 2, binary.shape)
        smoothed = np.zeros_like(binary)
        smoothed[y0:y1, x0:x1] = _Convolver(binary, boundary)(k, backend, window)
        kept_masks.append(smoothed)
        kept_kernels.append(k)

    if kept_masks:
        objects = np.clip(np.stack(kept_masks), 0.0, 1.0)
        background = np.clip(1.0 - objects.sum(axis=0), 0.0, 1.0)
        stack = np.concatenate([background[None], objects])
        stack /= stack.sum(axis=0)
    else:
        if not binary_masks:
            raise InvalidParameterError("no masks given and no image shape to build a background from")
        stack = np.ones((1,) + np.shape(binary_masks[0]))
    return RegionSet(list(stack), kept_kernels)


def compose_nonuniform(photons, regions, boundary="replicate", backend="auto"):
    """Blend per-region blurred images: ``sum_b m_b * (k_b * u)``."""
    x = _as_float(photons)
    if x.ndim not in (2, 3):
        raise InvalidParameterError(f"image must be (H, W) or (H, W, C), got {x.shape}")
    if x.shape[:2] != regions.shape:
        raise InvalidParameterError(f"region shape {regions.shape} does not match image {x.shape[:2]}")
    if backend not in BACKENDS:
        raise InvalidParameterError(f"unknown backend {backend!r}")
    conv = _Convolver(x, boundary)
    out = np.zeros(x.shape)
    for m, k in zip(regions.masks, regions.kernels):
        m = np.asarray(m, dtype=np.float64)
        window = _support_window(m, 0, m.shape)
        if window is None:
            continue
        y0, y1, x0, x1 = window
        m = m[y0:y1, x0:x1]
        if x.ndim == 3:
            m = m[:, :, None]
        out[y0:y1, x0:x1] += m * conv(_check_kernel(k), backend, window)
    return out.astype(x.dtype, copy=False)


def average_frames(frames, gamma):
    """Mean of photon-space frames passed through the gamma CRF."""
    if len(frames) == 0:
        raise InvalidParameterError("need at least one frame")
    stack = [_as_float(f) for f in frames]
    if len({f.shape for f in stack}) != 1:
        raise InvalidParameterError("frames must share one shape")
    return gamma_encode(np.mean(stack, axis=0), gamma)


# ---------------------------------------------------------------------------
# pair synthesis
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BlurConfig:
    gamma: float = 2.2
    noise_std: float = 0.0
    boundary: str = "replicate"
    saturate: bool = True
    backend: str = "auto"

    def __post_init__(self):
        _check_gamma(self.gamma)
        if not self.noise_std >= 0:
            raise InvalidParameterError(f"noise_std must be >= 0, got {self.noise_std}")
        if self.boundary not in BOUNDARIES:
            raise InvalidParameterError(f"unknown boundary {self.boundary!r}")
        if self.backend not in BACKENDS:
            raise InvalidParameterError(f"unknown backend {self.backend!r}")


@dataclass
class PairRecord:
    """Provenance of one generated pair.

    :func:`blur_pair` fills the synthesis fields; the dataset pipeline adds
    source, seed and output-path fields before serializing.
    """

    gamma: float
    noise_std: float
    boundary: str
    kernel_model: str | None = None
    kernel_size: int | None = None
    illumination: dict = field(default_factory=dict)
    num_regions: int = 1
    source_id: str | None = None
    pair_index: int | None = None
    pair_seed: int | None = None
    source: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    generator: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


class BlurPair(NamedTuple):
    sharp: np.ndarray
    blurred: np.ndarray
    record: PairRecord
    regions: RegionSet


def _kernel_drawer(kernel_source, n):
    if isinstance(kernel_source, KernelSpec):
        return lambda rng: [generate_kernel(kernel_source, rng) for _ in range(n)]
    if callable(kernel_source):
        return lambda rng: [kernel_source(rng) for _ in range(n)]
    kernels = list(kernel_source)
    if len(kernels) != n:
        raise InvalidParameterError(f"need {n} explicit kernels (background first), got {len(kernels)}")
    return lambda rng: kernels


def blur_pair(
    sharp,
    binary_masks: Sequence,
    kernel_source,
    cfg: BlurConfig = BlurConfig(),
    illum: Callable | None = None,
    rng=None,
) -> BlurPair:
    """Synthesize one sharp/blurred pair.

    ``kernel_source`` is a :class:`KernelSpec`, a callable ``rng -> kernel``
    or an explicit list of kernels (background first). ``illum`` is called
    as ``illum(photons, rng)`` and returns ``(photons, params_dict)``.

    Random draws happen in a fixed order (kernels, illumination, noise), so
    a seeded ``rng`` reproduces the pair exactly.
    """
    if rng is None:
        rng = np.random.default_rng()
    u = _as_float(sharp)
    if u.ndim not in (2, 3):
        raise InvalidParameterError(f"sharp image must be (H, W) or (H, W, C), got {u.shape}")
    masks = [np.asarray(m) for m in binary_masks]
    for m in masks:
        if m.shape != u.shape[:2]:
            raise InvalidParameterError(f"mask shape {m.shape} does not match image {u.shape[:2]}")

    kernels = _kernel_drawer(kernel_source, len(masks) + 1)(rng)
    if masks:
        regions = smooth_region_masks(masks, kernels, cfg.boundary, cfg.backend)
    else:
        regions = RegionSet([np.ones(u.shape[:2])], [np.asarray(kernels[0], dtype=np.float64)])

    u_ph = gamma_decode(u, cfg.gamma)
    illum_params = {"mode": "identity"}
    if illum is not None:
        u_ph, illum_params = illum(u_ph, rng)
    v_ph = compose_nonuniform(u_ph, regions, cfg.boundary, cfg.backend)
    if cfg.noise_std > 0:
        v_ph = add_noise(v_ph, cfg.noise_std, rng)

    # negative photon counts (noise) have no gamma image; clamp before encoding
    sharp_out = saturate(gamma_encode(np.maximum(u_ph, 0), cfg.gamma))
    blurred = gamma_encode(np.maximum(v_ph, 0), cfg.gamma)
    if cfg.saturate:
        blurred = saturate(blurred)

    record = PairRecord(
        gamma=float(cfg.gamma),
        noise_std=float(cfg.noise_std),
        boundary=cfg.boundary,
        kernel_model=kernel_source.model if isinstance(kernel_source, KernelSpec) else None,
        kernel_size=int(regions.kernels[0].shape[0]),
        illumination=dict(illum_params),
        num_regions=len(regions),
    )
    return BlurPair(sharp_out, blurred, record, regions)
