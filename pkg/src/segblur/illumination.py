"""HSV-space illumination augmentation applied before blurring.

Two schemes are supported: a global exposure jitter of the value channel
(dynamic scenes) and a split gain that dims the scene while boosting the
light-source pixels so they saturate after blurring (varying illumination).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidInputError, InvalidParameterError

MODES = ("identity", "dynamic_scenes", "varying_illum")

V_GAIN_RANGE = (0.5, 1.5)
L_RANGE = (0.0, 0.75)
S_RANGE = (0.0, 1.0)
BASE_GAIN = 0.25


def rgb_to_hsv(img):
    """Hexcone HSV with h in [0, 1), s and v in [0, 1]."""
    rgb = np.asarray(img, dtype=np.float64)
    if rgb.shape[-1] != 3:
        raise InvalidParameterError(f"expected 3 channels, got shape {rgb.shape}")
    if rgb.size and (rgb.min() < 0 or rgb.max() > 1):
        raise InvalidInputError("rgb values must lie in [0, 1]")
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    v = rgb.max(axis=-1)
    c = v - rgb.min(axis=-1)
    s = np.divide(c, v, out=np.zeros_like(v), where=v > 0)

    safe_c = np.where(c > 0, c, 1.0)
    h = np.where(
        v == r,
        (g - b) / safe_c,
        np.where(v == g, 2.0 + (b - r) / safe_c, 4.0 + (r - g) / safe_c),
    )
    h = np.where(c > 0, (h / 6.0) % 1.0, 0.0)
    # a tiny negative hue rounds to exactly 1.0 under the modulo
    h[h >= 1.0] = 0.0
    return np.stack([h, s, v], axis=-1)


def hsv_to_rgb(img):
    """Inverse of :func:`rgb_to_hsv`; v may exceed 1 (over-exposed light)."""
    hsv = np.asarray(img, dtype=np.float64)
    if hsv.shape[-1] != 3:
        raise InvalidParameterError(f"expected 3 channels, got shape {hsv.shape}")
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    if hsv.size and (h.min() < 0 or h.max() >= 1 or s.min() < 0 or s.max() > 1 or v.min() < 0):
        raise InvalidInputError("hsv needs h in [0, 1), s in [0, 1], v >= 0")
    h6 = h * 6.0
    sector = np.floor(h6).astype(np.int64) % 6
    f = h6 - np.floor(h6)
    p = v * (1 - s)
    q = v * (1 - s * f)
    t = v * (1 - s * (1 - f))
    choices = [
        (v, t, p),
        (q, v, p),
        (p, v, t),
        (p, q, v),
        (t, p, v),
        (v, p, q),
    ]
    out = np.empty(hsv.shape)
    for ch in range(3):
        out[..., ch] = np.choose(sector, [c[ch] for c in choices])
    return out


def scale_value_hsv(img, gain):
    """Multiply the HSV value channel by ``gain`` through an explicit round trip."""
    hsv = rgb_to_hsv(img)
    hsv[..., 2] *= gain
    return hsv_to_rgb(hsv)


def _scale_value(img, gain):
    """Multiply the HSV value channel by ``gain`` (scalar or per-pixel map).

    With hue and saturation held fixed, every RGB channel is proportional to
    v, so this is a per-pixel scaling of the whole color vector;
    :func:`scale_value_hsv` is the slow equivalent.
    """
    x = np.asarray(img)
    dtype = x.dtype if np.issubdtype(x.dtype, np.floating) else np.float64
    if x.size and x.min() < 0:
        raise InvalidInputError("illumination input must be non-negative")
    gain = np.asarray(gain, dtype=np.float64)
    if x.ndim == 3 and gain.ndim == 2:
        gain = gain[:, :, None]
    return (x * gain).astype(dtype)


def dynamic_scene_illum(img, rng=None, *, gain=None):
    """Scale the value channel by one draw from U[0.5, 1.5]. Not clipped."""
    if gain is None:
        gain = rng.uniform(*V_GAIN_RANGE)
    return _scale_value(img, gain)


def varying_illum(img, sat_mask, rng=None, *, l=None, s=None):
    """Dim non-source pixels by ``0.25 + l`` and scale source pixels by ``0.25 + l + s``.

    ``l`` ~ U[0, 0.75] and ``s`` ~ U[0, 1] are drawn once per call when not
    given. Source pixels may exceed 1 so that clipping after blur saturates
    them.
    """
    mask = np.asarray(sat_mask) > 0
    if mask.shape != np.shape(img)[:2]:
        raise InvalidParameterError(f"saturation mask {mask.shape} does not match image {np.shape(img)[:2]}")
    if l is None:
        l = rng.uniform(*L_RANGE)
    if s is None:
        s = rng.uniform(*S_RANGE)
    gain = np.where(mask, BASE_GAIN + l + s, BASE_GAIN + l)
    return _scale_value(img, gain)


@dataclass(frozen=True)
class IllumParams:
    mode: str = "identity"
    v_gain: float | None = None
    l: float | None = None
    s: float | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidParameterError(f"unknown illumination mode {self.mode!r}")

    @classmethod
    def draw(cls, mode, rng):
        if mode == "dynamic_scenes":
            return cls(mode, v_gain=float(rng.uniform(*V_GAIN_RANGE)))
        if mode == "varying_illum":
            l = float(rng.uniform(*L_RANGE))
            return cls(mode, l=l, s=float(rng.uniform(*S_RANGE)))
        return cls(mode)

    def apply(self, img, sat_mask=None):
        if self.mode == "dynamic_scenes":
            return dynamic_scene_illum(img, gain=self.v_gain)
        if self.mode == "varying_illum":
            if sat_mask is None:
                raise InvalidParameterError("varying_illum needs a saturation mask")
            return varying_illum(img, sat_mask, l=self.l, s=self.s)
        return np.array(img, copy=True)

    def to_dict(self):
        return {k: v for k, v in asdict(self).items() if v is not None}


class IllumAugment:
    """Hook for :func:`segblur.blur.blur_pair`: draws parameters and applies them."""

    def __init__(self, mode, sat_mask=None):
        if mode not in MODES:
            raise InvalidParameterError(f"unknown illumination mode {mode!r}")
        if mode == "varying_illum" and sat_mask is None:
            raise InvalidParameterError("varying_illum needs a saturation mask")
        self.mode = mode
        self.sat_mask = sat_mask

    def __call__(self, img, rng):
        params = IllumParams.draw(self.mode, rng)
        return params.apply(img, self.sat_mask), params.to_dict()
