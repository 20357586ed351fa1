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
"""Morlet filter bank, total-variation filter and Gaussian low-pass.

All filters are built directly in the frequency domain on the fundamental
cell [-pi, pi)^2 (truncated, not periodised). Orientations cover the full
circle, theta_l = 2 pi l / L, so orientation l + L/2 is the reflection of
orientation l through the frequency origin.
"""

import math
import os
from typing import NamedTuple

import torch

from .numerics import DTYPE, CDTYPE, frequency_grid

BANK_FORMAT = 'mpsr-filter-bank'
BANK_VERSION = 2
TV_SHARE = 0.5


class MorletParams(NamedTuple):
    sigma: float = 0.9                 # Envelope width at the finest scale (pixels).
    xi: float = 3 * math.pi / 4        # Centre frequency at the finest scale.
    slant: float = 0.6                 # Frequency-domain aspect ratio (< 1 widens orientations).
    eta_frame: float = 0.5             # Target lower Littlewood-Paley bound over the band.


def morlet_2d_fourier(wy, wx, sigma, xi, theta, slant):
    """Gaussian bump centred on xi * (cos theta, sin theta), DC not removed."""
    u = wx * math.cos(theta) + wy * math.sin(theta)
    v = -wx * math.sin(theta) + wy * math.cos(theta)
    return torch.exp(-(sigma ** 2) * ((u - xi) ** 2 + (slant ** 2) * v ** 2) / 2)


def gaussian_fourier(wy, wx, sigma):
    return torch.exp(-(sigma ** 2) * (wy ** 2 + wx ** 2) / 2)


def build_tv_filter(size, dilation=1):
    """psi_h = grad_x + i grad_y with circular forward differences.

    ``dilation`` d uses u(p + d e) - u(p); d = 1 is the finest scale.
    """
    height, width = size
    wy, wx = frequency_grid(height, width)
    one = torch.ones((), dtype=CDTYPE)
    dx = torch.exp(1j * dilation * wx.to(CDTYPE)) - one
    dy = torch.exp(1j * dilation * wy.to(CDTYPE)) - one
    return dx + 1j * dy


class FilterBank(object):
    """Band-pass psi_{j,theta}, optional TV filter and low-pass phi.

    ``bandpass`` is a complex tensor (J, L, H, W); ``tv_filter`` and
    ``tv_cascade`` are (H, W) planes or None; ``lowpass`` is (H, W).
    """

    def __init__(self, J, L, size, bandpass, lowpass, tv_filter=None, tv_cascade=None,
                 params=None, normalization=1.0, tv_scale=1.0, tv_next_scale=1.0):
        self.J = J
        self.L = L
        self.size = tuple(size)
        self.bandpass = bandpass
        self.lowpass = lowpass
        self.tv_filter = tv_filter
        self.tv_cascade = tv_cascade
        self.params = params if params is not None else MorletParams()
        self.normalization = normalization
        self.tv_scale = tv_scale
        self.tv_next_scale = tv_next_scale

    def psi(self, j, theta):
        return self.bandpass[j, theta]

    def metadata(self):
        return {
            'J': self.J,
            'L': self.L,
            'size': list(self.size),
            'params': self.params._asdict(),
            'normalization': self.normalization,
            'tv': self.tv_filter is not None,
            'tv_cascade': self.tv_cascade is not None,
            'tv_scale': self.tv_scale,
            'tv_next_scale': self.tv_next_scale,
        }

    def save(self, path):
        dir_path = os.path.dirname(path)
        if dir_path != '':
            os.makedirs(dir_path, exist_ok=True)
        torch.save({
            'format': BANK_FORMAT,
            'version': BANK_VERSION,
            'metadata': self.metadata(),
            'bandpass': self.bandpass,
            'lowpass': self.lowpass,
            'tv_filter': self.tv_filter,
            'tv_cascade': self.tv_cascade,
        }, path)

    @classmethod
    def load(cls, path):
        if not os.path.isfile(path):
            raise FileNotFoundError('filter bank not found : ' + str(path))
        saved = torch.load(path)
        if saved.get('format') != BANK_FORMAT or saved.get('version') != BANK_VERSION:
            raise ValueError('unsupported filter bank container : ' + str(path))
        meta = saved['metadata']
        return cls(
            meta['J'], meta['L'], meta['size'], saved['bandpass'], saved['lowpass'],
            tv_filter=saved['tv_filter'], tv_cascade=saved['tv_cascade'],
            params=MorletParams(**meta['params']), normalization=meta['normalization'],
            tv_scale=meta['tv_scale'], tv_next_scale=meta['tv_next_scale'])


def build_morlet_bank(J, L, size, params=None, include_tv=False, tv_cascade=False):
    if params is None:
        params = MorletParams()
    height, width = size
    if J < 1:
        raise ValueError("Invalid J: {} - should be >= 1".format(J))
    if L < 1:
        raise ValueError("Invalid L: {} - should be >= 1".format(L))
    if 2 ** J > min(height, width):
        raise ValueError('J={} too large for image size {}x{}'.format(J, height, width))

    wy, wx = frequency_grid(height, width)
    bandpass = torch.empty((J, L, height, width), dtype=DTYPE)
    for j in range(J):
        scale = 2 ** j
        for theta in range(L):
            angle = 2 * math.pi * theta / L
            bandpass[j, theta] = morlet_2d_fourier(
                wy, wx, params.sigma * scale, params.xi / scale, angle, params.slant)
    # zero mean
    bandpass[..., 0, 0] = 0.
    lowpass = gaussian_fourier(wy, wx, params.sigma * 2 ** J)

    # |phi|^2 + sum |psi|^2 + |tv|^2 <= 1; the TV filter takes at most TV_SHARE of the room
    room = 1. - lowpass ** 2
    tv_filter, tv_next = None, None
    tv_scale, tv_next_scale = 1., 1.
    if include_tv:
        tv_filter = build_tv_filter(size)
        tv_scale = _fit_scale(room, _mirror_average(tv_filter.abs() ** 2), share=TV_SHARE)
        tv_filter = tv_filter * tv_scale
        room = room - _mirror_average(tv_filter.abs() ** 2)
        if tv_cascade and J >= 2:
            tv_next = build_tv_filter(size, dilation=2)
            tv_next_scale = _fit_scale(1. - lowpass ** 2, _mirror_average(tv_next.abs() ** 2))
            tv_next = tv_next * tv_next_scale
    normalization = _fit_scale(room, _symmetrized_energy(bandpass))
    bandpass = bandpass * normalization

    return FilterBank(J, L, size, bandpass.to(CDTYPE), lowpass.to(CDTYPE),
                      tv_filter=tv_filter, tv_cascade=tv_next, params=params, normalization=normalization,
                      tv_scale=tv_scale, tv_next_scale=tv_next_scale)


def _fit_scale(room, energy, share=1.):
    """Largest a with a^2 * energy <= share * room wherever energy > 0."""
    positive = energy > 0
    if not bool(positive.any()):
        return 1.
    return math.sqrt(share * float(torch.min(room[positive] / energy[positive])))


def _mirror_average(power):
    mirrored = torch.roll(torch.flip(power, dims=(-2, -1)), shifts=(1, 1), dims=(-2, -1))
    return (power + mirrored) / 2


def _symmetrized_energy(bandpass):
    """1/2 sum_{j,theta} (|psi(w)|^2 + |psi(-w)|^2) on the FFT grid."""
    if bandpass.numel() == 0:
        return torch.zeros(bandpass.shape[-2:], dtype=DTYPE)
    return _mirror_average((bandpass.abs() ** 2).sum(dim=(0, 1)))


def band_mask(size, J, upper=7 * math.pi / 8):
    wy, wx = frequency_grid(*size)
    radius = torch.sqrt(wy ** 2 + wx ** 2)
    return (radius >= math.pi / 2 ** J) & (radius <= upper)


def littlewood_paley(bank):
    """(min, max) of |phi|^2 + 1/2 sum (|psi(w)|^2 + |psi(-w)|^2) over the band.

    The sum runs over the Morlet filters and, when present, the TV filter.

    The band [pi / 2^J, 7 pi / 8] leaves out DC and the corners where the
    analytic filters roll off.
    """
    energy = bank.lowpass.abs() ** 2 + _symmetrized_energy(bank.bandpass.abs())
    if bank.tv_filter is not None:
        energy = energy + _mirror_average(bank.tv_filter.abs() ** 2)
    retained = energy[band_mask(bank.size, bank.J)]
    return float(retained.min()), float(retained.max())


def frame_report(bank):
    low, high = littlewood_paley(bank)
    return {
        'min_energy': low,
        'max_energy': high,
        'eta_frame': bank.params.eta_frame,
        'meets_eta_frame': low >= bank.params.eta_frame,
        'non_expansive': high <= 1. + 1e-6,
    }


def negative_half_plane_fraction(bank, j, theta):
    """Share of a band-pass filter's energy on the far side of its axis."""
    wy, wx = frequency_grid(*bank.size)
    angle = 2 * math.pi * theta / bank.L
    u = wx * math.cos(angle) + wy * math.sin(angle)
    power = bank.psi(j, theta).abs() ** 2
    return float(power[u < 0].sum() / power.sum())
