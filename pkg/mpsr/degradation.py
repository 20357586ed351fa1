# Author Toshihiko Aoki
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Forward operator U, linear predictor U-bar and residuals.

Low-resolution pixel i sits at high-resolution coordinate
alpha * i + (alpha - 1) / 2 for both operators, so a constant image survives a
downsample / upsample round trip and neither operator shifts content.
"""

import json
import math
from typing import NamedTuple

import torch
import torch.nn.functional as F

from .numerics import DTYPE, check_finite
from .utils import ConfigError


class DegradationModel(NamedTuple):
    """ Configuration"""
    factor: int = 4                    # Downsampling factor alpha (2, 3 or 4).
    taps_per_factor: int = 12          # Anti-alias length 12 * alpha (+1 centre tap).
    attenuation_db: float = 40.0       # Kaiser design stop-band attenuation.
    upsampler: str = 'bicubic'         # bicubic or bilinear.
    color: str = 'luminance'           # luminance or rgb.

    @classmethod
    def from_dict(cls, values):
        unknown = set(values) - set(cls._fields)
        if unknown:
            raise ConfigError('unknown degradation keys: {}'.format(sorted(unknown)))
        model = cls(**values)
        model.validate()
        return model

    @classmethod
    def from_json(cls, file):
        with open(file, "r", encoding="UTF-8") as reader:
            return cls.from_dict(json.load(reader))

    def validate(self):
        if self.factor not in (2, 3, 4):
            raise ConfigError('factor must be 2, 3 or 4, got {}'.format(self.factor))
        if self.taps_per_factor < 2 or self.taps_per_factor % 2:
            raise ConfigError('taps_per_factor must be a positive even count, got {}'.format(self.taps_per_factor))
        if self.attenuation_db <= 21:
            raise ConfigError('attenuation_db must exceed 21, got {}'.format(self.attenuation_db))
        if self.upsampler not in ('bicubic', 'bilinear'):
            raise ConfigError('unknown upsampler: {}'.format(self.upsampler))
        if self.color not in ('luminance', 'rgb'):
            raise ConfigError('unknown color mode: {}'.format(self.color))


def kaiser_beta(attenuation_db):
    if attenuation_db > 50:
        return 0.1102 * (attenuation_db - 8.7)
    return 0.5842 * (attenuation_db - 21) ** 0.4 + 0.07886 * (attenuation_db - 21)


def antialias_design(model):
    """(cutoff, transition width, beta) of the Kaiser windowed-sinc.

    The transition band ends at pi / alpha, the post-decimation Nyquist.
    """
    span = model.taps_per_factor * model.factor
    transition = (model.attenuation_db - 7.95) / (2.285 * span)
    cutoff = math.pi / model.factor - transition / 2
    return cutoff, transition, kaiser_beta(model.attenuation_db)


def antialias_taps(model):
    """1-D filter taps and their offsets, sampled around the decimation centre.

    Returns (offsets, taps) with taps summing to one. For even alpha the
    decimation centre falls between two pixels and the sinc is sampled half a
    pixel off its peak.
    """
    cutoff, _, beta = antialias_design(model)
    half = model.taps_per_factor * model.factor // 2
    shift = (model.factor - 1) / 2 - (model.factor - 1) // 2
    offsets = torch.arange(-half, half + 2, dtype=DTYPE)
    t = offsets - shift
    inside = t.abs() <= half
    window = torch.zeros_like(t)
    window[inside] = torch.i0(beta * torch.sqrt(1 - (t[inside] / half) ** 2)) / torch.i0(torch.tensor(beta, dtype=DTYPE))
    taps = (cutoff / math.pi) * torch.sinc(cutoff * t / math.pi) * window
    keep = taps != 0
    offsets, taps = offsets[keep], taps[keep]
    return offsets.long(), taps / taps.sum()


def _circular_kernel(length, offsets, taps):
    kernel = torch.zeros(length, dtype=DTYPE)
    kernel.index_add_(0, torch.remainder(offsets, length), taps)
    return kernel


def antialias_response(model, size):
    """Frequency response of the separable anti-alias filter on an (H, W) grid."""
    offsets, taps = antialias_taps(model)
    height, width = size
    ky = torch.fft.fft(_circular_kernel(height, offsets, taps))
    kx = torch.fft.fft(_circular_kernel(width, offsets, taps))
    # correlation: conjugate response
    return torch.conj(ky)[:, None] * torch.conj(kx)[None, :]


def _as_batch(img):
    if img.dim() == 3:
        return img.unsqueeze(0), True
    if img.dim() == 4:
        return img, False
    raise ValueError('expected (C, H, W) or (B, C, H, W), got {}'.format(tuple(img.shape)))


def downsample(y, model):
    """Anti-alias low-pass (circular), then keep pixels alpha * i + floor((alpha - 1) / 2)."""
    alpha = model.factor
    height, width = y.shape[-2:]
    if height % alpha or width % alpha:
        raise ValueError('image size {}x{} not divisible by factor {}'.format(height, width, alpha))
    check_finite(y, 'downsample input')
    response = antialias_response(model, (height, width))
    filtered = torch.fft.ifft2(torch.fft.fft2(y.to(DTYPE)) * response).real
    start = (alpha - 1) // 2
    return filtered[..., start::alpha, start::alpha].contiguous()


def linear_predict(x, model):
    """Upsample by alpha with bicubic (a = -0.75) interpolation on a circularly padded image."""
    alpha = model.factor
    batch, squeeze = _as_batch(x.to(DTYPE))
    pad = 2
    padded = F.pad(batch, (pad, pad, pad, pad), mode='circular')
    up = F.interpolate(padded, scale_factor=alpha, mode=model.upsampler, align_corners=False)
    crop = pad * alpha
    up = up[..., crop:up.shape[-2] - crop, crop:up.shape[-1] - crop].contiguous()
    return up[0] if squeeze else up


def residual(y, x, model):
    """r = y - linear_predict(x)."""
    alpha = model.factor
    if tuple(y.shape[-2:]) != (x.shape[-2] * alpha, x.shape[-1] * alpha) or y.shape[:-2] != x.shape[:-2]:
        raise ValueError('shape mismatch: y {} vs x {} at factor {}'.format(tuple(y.shape), tuple(x.shape), alpha))
    return y.to(DTYPE) - linear_predict(x, model)


def reconstruct(x, r, model):
    return linear_predict(x, model) + r


# ITU-R BT.601 full range, values in [0, 1]
_RGB_TO_YCBCR = torch.tensor([
    [0.299, 0.587, 0.114],
    [-0.168736, -0.331264, 0.5],
    [0.5, -0.418688, -0.081312],
], dtype=DTYPE)
_CHROMA_OFFSET = torch.tensor([0., 0.5, 0.5], dtype=DTYPE)


def rgb_to_ycbcr(img):
    if img.shape[-3] != 3:
        raise ValueError('expected 3 channels, got {}'.format(img.shape[-3]))
    out = torch.einsum('ij,...jhw->...ihw', _RGB_TO_YCBCR, img.to(DTYPE))
    return out + _CHROMA_OFFSET.view(3, 1, 1)


def ycbcr_to_rgb(img):
    if img.shape[-3] != 3:
        raise ValueError('expected 3 channels, got {}'.format(img.shape[-3]))
    centred = img.to(DTYPE) - _CHROMA_OFFSET.view(3, 1, 1)
    return torch.einsum('ij,...jhw->...ihw', torch.linalg.inv(_RGB_TO_YCBCR), centred)


def luminance(img):
    if img.shape[-3] == 1:
        return img.to(DTYPE)
    return rgb_to_ycbcr(img)[..., :1, :, :]
