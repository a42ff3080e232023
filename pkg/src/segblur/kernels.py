"""Random camera-shake blur kernels.

Three trajectory models are provided (hand tremor, six-point spline and
projected linear 3D camera motion). Every trajectory is rasterized with
bilinear splatting at uniform arc-length density and then canonicalized so
the kernel's center of mass sits on the window center.

Kernels are plain ``(K, K)`` float64 arrays, indexed ``[row, col]``.
Trajectories store points as ``(x, y)`` = ``(col, row)`` in pixel units.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidParameterError, KernelOverflowError
from .imageio import write_image

log = logging.getLogger(__name__)

MODELS = ("tremor", "spline6", "linear3d")

# Resamples allowed after the first draw overflows the window.
MAX_RESAMPLES = 16

# Arc-length step (px) used when depositing a trajectory onto the grid.
DEPOSIT_STEP = 0.02

SPLINE_JITTER = 0.1

_HEADER = struct.Struct("<II")


@dataclass(frozen=True)
class Trajectory:
    points: np.ndarray
    duration: float | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise InvalidParameterError(f"trajectory points must be (N, 2), got {pts.shape}")
        if len(pts) < 2:
            raise InvalidParameterError("trajectory needs at least 2 points")
        if not np.all(np.isfinite(pts)):
            raise InvalidParameterError("trajectory has non-finite coordinates")
        object.__setattr__(self, "points", pts)

    @property
    def length(self) -> float:
        return float(np.hypot(*np.diff(self.points, axis=0).T).sum())

    def bbox_diagonal(self) -> float:
        span = self.points.max(axis=0) - self.points.min(axis=0)
        return float(np.hypot(*span))


@dataclass(frozen=True)
class KernelSpec:
    """Parameters for one kernel generator.

    ``exposure`` is only used by the tremor model. When it is None, each
    kernel draws its exposure uniformly from ``exposure_range``. ``grid`` is
    the spline control-point box; it defaults to half the window.
    """

    model: str = "tremor"
    size: int = 65
    exposure: float | None = None
    exposure_range: tuple[float, float] = (1 / 100, 1 / 4)
    grid: int | None = None
    seed: int | None = None
    tremor: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.model not in MODELS:
            raise InvalidParameterError(f"unknown kernel model {self.model!r}, expected one of {MODELS}")
        if self.size < 3 or self.size % 2 == 0:
            raise InvalidParameterError(f"kernel size must be odd and >= 3, got {self.size}")
        if self.exposure is not None and not self.exposure > 0:
            raise InvalidParameterError(f"exposure must be > 0, got {self.exposure}")
        lo, hi = self.exposure_range
        if not 0 < lo <= hi:
            raise InvalidParameterError(f"bad exposure range {self.exposure_range}")
        if self.grid is not None and self.grid < 3:
            raise InvalidParameterError(f"spline grid must be >= 3, got {self.grid}")

    @property
    def spline_grid(self) -> int:
        return self.grid if self.grid is not None else max(3, self.size // 2)


# ---------------------------------------------------------------------------
# trajectory models
# ---------------------------------------------------------------------------


def sample_tremor_trajectory(
    exposure,
    rng,
    *,
    resonance=(8.0, 12.0),
    damping=0.2,
    amplitude=1.0,
    drift_speed=60.0,
    drift_time=0.1,
    rate=1000.0,
):
    """Hand-tremor camera path over one exposure.

    The path is the sum of a noise-driven damped oscillator (resonant
    frequency drawn from ``resonance`` in Hz, stationary std ``amplitude``
    px) and a slow drift whose velocity is an Ornstein-Uhlenbeck process
    (stationary std ``drift_speed`` px/s, correlation time ``drift_time``
    s). Both are integrated at ``rate`` Hz and the path starts at the origin.
    """
    if not exposure > 0:
        raise InvalidParameterError(f"exposure must be > 0, got {exposure}")

    n = max(1, int(np.ceil(exposure * rate - 1e-9)))
    dt = exposure / n
    omega = 2 * np.pi * rng.uniform(*resonance)
    # stationary x-variance of x'' + 2*z*w*x' + w^2*x = s*xi is s^2 / (4*z*w^3)
    sigma = amplitude * np.sqrt(4 * damping * omega**3)
    drift_sigma = drift_speed * np.sqrt(2 / drift_time)

    x = rng.normal(0.0, amplitude, 2)
    v = rng.normal(0.0, amplitude * omega, 2)
    d = np.zeros(2)
    dv = rng.normal(0.0, drift_speed, 2)
    noise = rng.standard_normal((n, 4)) * np.sqrt(dt)

    pts = np.empty((n + 1, 2))
    pts[0] = x
    for i in range(n):
        v = v + dt * (-2 * damping * omega * v - omega**2 * x) + sigma * noise[i, :2]
        x = x + dt * v
        dv = dv - dt * dv / drift_time + drift_sigma * noise[i, 2:]
        d = d + dt * dv
        pts[i + 1] = x + d
    return Trajectory(pts - pts[0], duration=float(exposure))


def catmull_rom_path(control_points, samples_per_segment=64):
    """Uniform Catmull-Rom curve through ``control_points`` (endpoints repeated)."""
    cp = np.asarray(control_points, dtype=np.float64)
    if len(cp) < 2:
        raise InvalidParameterError("need at least 2 control points")
    p = np.concatenate([cp[:1], cp, cp[-1:]])
    t = np.linspace(0.0, 1.0, samples_per_segment, endpoint=False)[:, None]
    t2, t3 = t * t, t * t * t
    w0 = -t3 + 2 * t2 - t
    w1 = 3 * t3 - 5 * t2 + 2
    w2 = -3 * t3 + 4 * t2 + t
    w3 = t3 - t2
    pieces = [
        0.5 * (w0 * p[i] + w1 * p[i + 1] + w2 * p[i + 2] + w3 * p[i + 3])
        for i in range(len(cp) - 1)
    ]
    pieces.append(cp[-1:])
    return np.concatenate(pieces)


def sample_spline_trajectory(rng, grid, samples_per_segment=64):
    """Six control points uniform in ``[0, grid]^2`` joined by a Catmull-Rom spline."""
    if grid < 3:
        raise InvalidParameterError(f"grid must be >= 3, got {grid}")
    control = rng.uniform(0.0, grid, size=(6, 2))
    return Trajectory(catmull_rom_path(control, samples_per_segment))


def project_linear3d_path(waypoints, point=(0.0, 0.0, 1.0), focal=1.0, samples_per_segment=32):
    """Project a scene point seen from a camera moving along 3D ``waypoints``.

    The camera moves linearly between consecutive waypoints. ``point`` is in
    camera-start coordinates with x/y in pixels at unit focal length.
    """
    wp = np.asarray(waypoints, dtype=np.float64)
    if wp.ndim != 2 or wp.shape[1] != 3 or len(wp) < 2:
        raise InvalidParameterError("waypoints must be (N>=2, 3)")
    t = np.linspace(0.0, 1.0, samples_per_segment, endpoint=False)[:, None]
    cam = np.concatenate([wp[i] + t * (wp[i + 1] - wp[i]) for i in range(len(wp) - 1)] + [wp[-1:]])
    rel = np.asarray(point, dtype=np.float64) - cam
    if np.any(rel[:, 2] <= 0):
        raise InvalidParameterError("scene point passes behind the camera")
    return Trajectory(focal * rel[:, :2] / rel[:, 2:3])


def sample_linear3d_trajectory(rng, *, max_segments=3, lateral_step=4.0, depth_step=0.03, spread=20.0):
    """Random piecewise-linear 3D camera motion, projected to the image plane."""
    n_seg = int(rng.integers(1, max_segments + 1))
    steps = np.column_stack(
        [rng.normal(0.0, lateral_step, (n_seg, 2)), rng.normal(0.0, depth_step, n_seg)]
    )
    waypoints = np.vstack([np.zeros(3), np.cumsum(steps, axis=0)])
    waypoints[:, 2] = np.clip(waypoints[:, 2], -0.5, 0.5)
    point = (*rng.uniform(-spread, spread, 2), 1.0)
    return project_linear3d_path(waypoints, point)


# ---------------------------------------------------------------------------
# rasterization and canonicalization
# ---------------------------------------------------------------------------


def arclength_samples(points, step=DEPOSIT_STEP):
    """Midpoint samples at uniform arc-length spacing along a polyline."""
    pts = np.asarray(points, dtype=np.float64)
    seg = np.hypot(*np.diff(pts, axis=0).T)
    keep = np.concatenate([[True], seg > 1e-12])
    pts, seg = pts[keep], seg[seg > 1e-12]
    total = seg.sum()
    if total <= 1e-12:
        return pts[:1].copy()
    n = max(1, int(np.ceil(total / step)))
    s = (np.arange(n) + 0.5) * (total / n)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    return np.column_stack([np.interp(s, cum, pts[:, 0]), np.interp(s, cum, pts[:, 1])])


def splat_bilinear(xs, ys, weights, shape):
    """Accumulate point masses onto a grid with bilinear weights.

    Mass falling outside the grid is discarded.
    """
    h, w = shape
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = xs - x0
    fy = ys - y0
    out = np.zeros(h * w)
    for dy, dx, wt in (
        (0, 0, (1 - fy) * (1 - fx)),
        (0, 1, (1 - fy) * fx),
        (1, 0, fy * (1 - fx)),
        (1, 1, fy * fx),
    ):
        r, c = y0 + dy, x0 + dx
        ok = (r >= 0) & (r < h) & (c >= 0) & (c < w)
        out += np.bincount(r[ok] * w + c[ok], weights=(weights * wt)[ok], minlength=h * w)
    return out.reshape(h, w)


def rasterize_kernel(traj, size):
    """Deposit a trajectory onto a ``size x size`` grid, normalized to unit sum.

    The path is translated by an integer offset so its arc-length centroid
    lands within half a pixel of the window center; the sub-pixel phase is
    kept and removed later by :func:`center_kernel`.
    """
    if size < 1 or size % 2 == 0:
        raise InvalidParameterError(f"kernel size must be odd, got {size}")
    if not isinstance(traj, Trajectory):
        traj = Trajectory(traj)
    samples = arclength_samples(traj.points)
    center = size // 2
    samples = samples + (center - np.floor(samples.mean(axis=0) + 0.5))
    lo, hi = samples.min(axis=0), samples.max(axis=0)
    if lo.min() < 0 or hi.max() > size - 1:
        raise KernelOverflowError(
            f"trajectory extent {hi - lo} px does not fit a {size}x{size} kernel"
        )
    k = splat_bilinear(samples[:, 0], samples[:, 1], np.ones(len(samples)), (size, size))
    return k / k.sum()


def center_of_mass(k):
    """(row, col) center of mass of a non-negative kernel."""
    k = np.asarray(k, dtype=np.float64)
    total = k.sum()
    rows = np.arange(k.shape[0]) @ k.sum(axis=1) / total
    cols = np.arange(k.shape[1]) @ k.sum(axis=0) / total
    return float(rows), float(cols)


def com_offset(k):
    """Euclidean distance between a kernel's center of mass and its window center."""
    r, c = center_of_mass(k)
    return float(np.hypot(r - (k.shape[0] - 1) / 2, c - (k.shape[1] - 1) / 2))


def _shift_clamped(k, dy, dx):
    h, w = k.shape
    rr, cc = np.mgrid[0:h, 0:w]
    ys = np.clip(rr.ravel() + dy, 0, h - 1)
    xs = np.clip(cc.ravel() + dx, 0, w - 1)
    return splat_bilinear(xs, ys, k.ravel(), (h, w))


def center_kernel(k, tol=1e-9, max_iter=50):
    """Translate a kernel (sub-pixel, bilinear) so its center of mass is centered.

    Mass pushed past the window edge is clamped onto the border, so the sum
    is preserved; the shift is repeated until the offset drops below ``tol``.
    """
    k = np.array(k, dtype=np.float64)
    if k.ndim != 2 or k.shape[0] != k.shape[1]:
        raise InvalidParameterError(f"kernel must be square, got {k.shape}")
    if np.any(k < 0) or not k.sum() > 0:
        raise InvalidParameterError("kernel must be non-negative with positive mass")
    k /= k.sum()
    c = (k.shape[0] - 1) / 2
    for _ in range(max_iter):
        r, col = center_of_mass(k)
        dy, dx = c - r, c - col
        if max(abs(dy), abs(dx)) < tol:
            break
        k = _shift_clamped(k, dy, dx)
        k /= k.sum()
    return k


def delta_kernel(size=1):
    k = np.zeros((size, size))
    k[size // 2, size // 2] = 1.0
    return k


def kernel_violations(k, sum_tol=1e-6, com_tol=0.5):
    """List the kernel invariants ``k`` breaks (empty when valid)."""
    k = np.asarray(k, dtype=np.float64)
    problems = []
    if k.ndim != 2 or k.shape[0] != k.shape[1] or k.shape[0] % 2 == 0:
        return [f"kernel shape {k.shape} is not odd and square"]
    if not np.all(np.isfinite(k)):
        return ["kernel has non-finite weights"]
    if k.min() < 0:
        problems.append(f"negative weight {k.min():.3g}")
    if abs(k.sum() - 1) >= sum_tol:
        problems.append(f"sum {k.sum():.9f} != 1")
    if k.sum() > 0 and com_offset(k) >= com_tol:
        problems.append(f"center of mass offset {com_offset(k):.3f} px")
    return problems


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


def sample_trajectory(spec, rng):
    if spec.model == "tremor":
        exposure = spec.exposure if spec.exposure is not None else rng.uniform(*spec.exposure_range)
        return sample_tremor_trajectory(exposure, rng, **spec.tremor)
    if spec.model == "spline6":
        return sample_spline_trajectory(rng, spec.spline_grid)
    return sample_linear3d_trajectory(rng)


def _jitter(k, rng, sigma=SPLINE_JITTER):
    support = k > 0
    k = k.copy()
    k[support] *= np.maximum(1.0 + sigma * rng.standard_normal(support.sum()), 0.0)
    if not k.sum() > 0:
        return None
    return k / k.sum()


def generate_kernel(spec, rng):
    """Draw one canonical kernel for ``spec``, resampling on overflow."""
    for attempt in range(MAX_RESAMPLES + 1):
        traj = sample_trajectory(spec, rng)
        try:
            k = rasterize_kernel(traj, spec.size)
        except KernelOverflowError:
            log.debug("kernel overflow on attempt %d (%s, K=%d)", attempt, spec.model, spec.size)
            continue
        if spec.model == "spline6":
            k = _jitter(k, rng)
            if k is None:
                continue
        return center_kernel(k)
    raise KernelOverflowError(
        f"{spec.model} trajectory did not fit K={spec.size} after {MAX_RESAMPLES} resamples"
    )


def generate_kernels(spec, count):
    """Yield ``count`` kernels from a generator seeded by ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    for _ in range(count):
        yield generate_kernel(spec, rng)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def kernel_to_bytes(k):
    k = np.asarray(k)
    return _HEADER.pack(k.shape[0], 0) + np.ascontiguousarray(k, dtype="<f4").tobytes()


def kernel_from_bytes(data):
    if len(data) < _HEADER.size:
        raise InvalidParameterError("kernel blob shorter than its header")
    size, _ = _HEADER.unpack_from(data)
    body = np.frombuffer(data, dtype="<f4", offset=_HEADER.size)
    if body.size != size * size:
        raise InvalidParameterError(f"kernel blob holds {body.size} weights, header says {size}x{size}")
    return body.reshape(size, size).astype(np.float64)


def write_kernel(path, k):
    Path(path).write_bytes(kernel_to_bytes(k))


def read_kernel(path):
    return kernel_from_bytes(Path(path).read_bytes())


def write_kernel_png(path, k):
    """16-bit grayscale preview scaled so the peak weight is white."""
    k = np.asarray(k, dtype=np.float64)
    peak = k.max()
    write_image(path, np.zeros(k.shape) if peak <= 0 else k / peak, bit_depth=16)
