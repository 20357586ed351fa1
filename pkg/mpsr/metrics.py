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
"""Image quality metrics, controlled degradations and stability curves."""

import csv
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from typing import NamedTuple, Tuple

import torch

from .numerics import DTYPE, frequency_grid
from .utils import ConfigError

logger = logging.getLogger(__name__)

STABILITY_FIELDS = ('kind', 'severity', 'pixel_rel_err', 'feature_rel_err', 'n_images')


def mse(a, b):
    if a.shape != b.shape:
        raise ValueError('shape mismatch: {} vs {}'.format(tuple(a.shape), tuple(b.shape)))
    return float(((a.to(DTYPE) - b.to(DTYPE)) ** 2).mean())


def psnr(a, b, peak=1.0):
    """10 log10(peak^2 / MSE) in dB; identical images give +inf."""
    if peak <= 0:
        raise ValueError('Invalid peak: {} - should be > 0'.format(peak))
    error = mse(a, b)
    if error == 0:
        return math.inf
    return 10 * math.log10(peak ** 2 / error)


def relative_error(a, b):
    """||a - b|| / ||a||."""
    if a.shape != b.shape:
        raise ValueError('shape mismatch: {} vs {}'.format(tuple(a.shape), tuple(b.shape)))
    reference = float(torch.linalg.vector_norm(a.to(DTYPE)))
    difference = float(torch.linalg.vector_norm(a.to(DTYPE) - b.to(DTYPE)))
    if reference == 0:
        if difference == 0:
            return 0.
        raise ValueError('relative error against a zero reference')
    return difference / reference


def shift_image(img, k, axis=-1):
    """Circular shift by k pixels along ``axis`` (-1 horizontal, -2 vertical)."""
    if axis not in (-1, -2):
        raise ValueError('Invalid axis: {} - should be -1 or -2'.format(axis))
    return torch.roll(img, shifts=int(k), dims=axis)


def gaussian_blur(img, sigma):
    """Multiply the spectrum by exp(-sigma^2 |w|^2 / 2); DC gain is exactly one."""
    if sigma < 0:
        raise ValueError('Invalid sigma: {} - should be >= 0'.format(sigma))
    if sigma == 0:
        return img.to(DTYPE).clone()
    wy, wx = frequency_grid(*img.shape[-2:])
    response = torch.exp(-(sigma ** 2) * (wy ** 2 + wx ** 2) / 2)
    return torch.fft.ifft2(torch.fft.fft2(img.to(DTYPE)) * response).real


def band_energy(img, factor):
    """(low, high) spectral energy split at max(|wy|, |wx|) = pi / factor."""
    wy, wx = frequency_grid(*img.shape[-2:])
    high = torch.maximum(wy.abs(), wx.abs()) > math.pi / factor
    power = torch.fft.fft2(img.to(DTYPE)).abs() ** 2
    return float(power[..., ~high].sum()), float(power[..., high].sum())


def high_band_fraction(img, factor):
    low, high = band_energy(img, factor)
    total = low + high
    return high / total if total > 0 else 0.


class StabilityConfig(NamedTuple):
    """ Configuration"""
    shifts: Tuple[int, ...] = (1, 2, 3, 4)            # Pixel shifts.
    blurs: Tuple[float, ...] = (0.5, 1.0, 1.5, 2.0)   # Gaussian blur widths.
    axis: int = -1                                      # Shift direction.
    renormalized: bool = True                           # Measure c^k renormalised features.
    center: bool = True                                 # Remove each image's mean first.
    crop: int = 64                                      # Centre crop side (0 keeps full images).
    max_images: int = 10
    threads: int = 1

    @classmethod
    def from_dict(cls, values):
        unknown = set(values) - set(cls._fields)
        if unknown:
            raise ConfigError('unknown stability keys: {}'.format(sorted(unknown)))
        values = dict(values)
        for key in ('shifts', 'blurs'):
            if key in values:
                values[key] = tuple(values[key])
        config = cls(**values)
        if config.axis not in (-1, -2) or config.max_images < 1 or config.threads < 1:
            raise ConfigError('invalid stability config: {}'.format(config))
        return config


class StabilityCurve(NamedTuple):
    kind: str
    severities: list
    pixel_rel_err: list
    feature_rel_err: list
    n_images: int


def _degrade(img, kind, severity, axis):
    if kind == 'shift':
        return shift_image(img, severity, axis)
    if kind == 'blur':
        return gaussian_blur(img, severity)
    raise ValueError('Invalid degradation: {} - should be shift or blur'.format(kind))


def _feature_map(psi, img, renormalized):
    with torch.no_grad():
        features = psi.features(img)
    if not renormalized and hasattr(psi, 'weights'):
        features = features / psi.weights.view(-1, 1, 1)
    return features


def stability_curve(images, psi, kind, grid, renormalized=True, center=True, axis=-1, threads=1):
    """Mean pixel and feature relative errors per severity, averaged in image order."""
    if len(images) == 0:
        raise ValueError('stability_curve needs at least one image')
    if center:
        images = [img - img.mean() for img in images]
    references = [_feature_map(psi, img, renormalized) for img in images]

    def errors(severity):
        pixel = feature = 0.
        for img, reference in zip(images, references):
            degraded = _degrade(img, kind, severity, axis)
            pixel += relative_error(img, degraded)
            feature += relative_error(reference, _feature_map(psi, degraded, renormalized))
        return pixel / len(images), feature / len(images)

    grid = list(grid)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            results = list(executor.map(errors, grid))
    else:
        results = [errors(s) for s in grid]
    return StabilityCurve(kind, grid, [r[0] for r in results], [r[1] for r in results], len(images))


def write_stability_csv(curves, path):
    dir_path = os.path.dirname(path)
    if dir_path != '':
        os.makedirs(dir_path, exist_ok=True)
    with open(path, 'w', newline='', encoding='UTF-8') as writer:
        out = csv.writer(writer)
        out.writerow(STABILITY_FIELDS)
        for curve in curves:
            for severity, pixel, feature in zip(curve.severities, curve.pixel_rel_err, curve.feature_rel_err):
                out.writerow([curve.kind, severity, repr(pixel), repr(feature), curve.n_images])
    return path


def read_stability_csv(path):
    with open(path, 'r', newline='', encoding='UTF-8') as reader:
        rows = list(csv.DictReader(reader))
    for row in rows:
        row['severity'] = float(row['severity'])
        row['pixel_rel_err'] = float(row['pixel_rel_err'])
        row['feature_rel_err'] = float(row['feature_rel_err'])
        row['n_images'] = int(row['n_images'])
    return rows


def format_table(curves):
    lines = ['{:<6} {:>8} {:>14} {:>16}'.format('kind', 'severity', 'pixel_rel_err', 'feature_rel_err')]
    for curve in curves:
        for severity, pixel, feature in zip(curve.severities, curve.pixel_rel_err, curve.feature_rel_err):
            lines.append('{:<6} {:>8} {:>14.6f} {:>16.6f}'.format(curve.kind, severity, pixel, feature))
    return '\n'.join(lines)
