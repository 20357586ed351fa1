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
"""Scattering network Psi and the feature-network interface."""

import json
import math
import os
from typing import NamedTuple, Tuple

import torch
import torch.nn as nn

from .numerics import DTYPE, CDTYPE
from .utils import ConfigError, fingerprint
from .wavelets import MorletParams, build_morlet_bank

COEFFICIENTS_FORMAT = 'mpsr-scattering-coefficients'
COEFFICIENTS_VERSION = 1
CALIBRATION_TARGET = 219


class ScatteringConfig(NamedTuple):
    """ Configuration"""
    J: int = 3                         # Number of scales; pooling window 2^J.
    L: int = 8                         # Orientations over the full circle.
    max_order: int = 2                 # Highest scattering order (1 or 2).
    include_tv: bool = True            # Total-variation channel at the finest scale.
    tv_cascade: bool = True            # TV channel propagates once to order 2 (219-channel convention).
    renorm_base: float = 4.0           # Each path is scaled by renorm_base ** k.
    oversampling: int = 0              # Output grid is subsampled by 2^(J - oversampling).
    sigma: float = 0.9                 # Morlet envelope width at the finest scale.
    xi: float = 3 * math.pi / 4        # Morlet centre frequency at the finest scale.
    slant: float = 0.6                 # Morlet frequency-domain aspect ratio.
    eta_frame: float = 0.5             # Littlewood-Paley lower bound diagnostic target.

    @classmethod
    def from_dict(cls, values):
        unknown = set(values) - set(cls._fields)
        if unknown:
            raise ConfigError('unknown scattering keys: {}'.format(sorted(unknown)))
        config = cls(**values)
        config.validate()
        return config

    @classmethod
    def from_json(cls, file):
        with open(file, "r", encoding="UTF-8") as reader:
            return cls.from_dict(json.load(reader))

    def validate(self):
        if self.J < 1:
            raise ConfigError('J must be >= 1, got {}'.format(self.J))
        if self.L < 1:
            raise ConfigError('L must be >= 1, got {}'.format(self.L))
        if self.max_order not in (1, 2):
            raise ConfigError('max_order must be 1 or 2, got {}'.format(self.max_order))
        if self.renorm_base < 1:
            raise ConfigError('renorm_base must be >= 1, got {}'.format(self.renorm_base))
        if not 0 <= self.oversampling <= self.J:
            raise ConfigError('oversampling must be in [0, J], got {}'.format(self.oversampling))

    @property
    def morlet(self):
        return MorletParams(sigma=self.sigma, xi=self.xi, slant=self.slant, eta_frame=self.eta_frame)

    @property
    def stride(self):
        return 2 ** (self.J - self.oversampling)

    @property
    def convention(self):
        tv = 'tv-cascade' if self.include_tv and self.tv_cascade else ('tv' if self.include_tv else 'no-tv')
        return '{}/order2-all-orientations'.format(tv)

    def fingerprint(self):
        return fingerprint(self)


class ScatteringPath(NamedTuple):
    order: int
    scales: Tuple[int, ...]
    orientations: Tuple[int, ...]     # index L marks the TV filter
    k: int

    def name(self, L):
        if self.order == 0:
            return 'phi'
        parts = []
        for j, theta in zip(self.scales, self.orientations):
            parts.append('tv{}'.format(j) if theta == L else 'j{}t{}'.format(j, theta))
        return '/'.join(parts)


def enumerate_paths(cfg):
    """Order 0, order 1 by (scale, orientation), order 2 lexicographic.

    The TV channel sits last within scale 0 at orientation index L. Its
    single order-2 continuation (TV filter dilated to scale 1) closes the list.
    """
    paths = [ScatteringPath(0, (), (), 0)]
    for j in range(cfg.J):
        for theta in range(cfg.L):
            paths.append(ScatteringPath(1, (j,), (theta,), 1))
        if j == 0 and cfg.include_tv:
            paths.append(ScatteringPath(1, (0,), (cfg.L,), 1))
    if cfg.max_order >= 2:
        for j1 in range(cfg.J):
            for theta1 in range(cfg.L):
                for j2 in range(j1 + 1, cfg.J):
                    for theta2 in range(cfg.L):
                        paths.append(ScatteringPath(2, (j1, j2), (theta1, theta2), 2))
        if _has_tv_cascade(cfg):
            paths.append(ScatteringPath(2, (0, 1), (cfg.L, cfg.L), 2))
    return paths


def _has_tv_cascade(cfg):
    return cfg.include_tv and cfg.tv_cascade and cfg.max_order >= 2 and cfg.J >= 2


def feature_shape(cfg, size):
    """(channels, h, w) that Psi produces from an image of ``size``."""
    height, width = size
    return (len(enumerate_paths(cfg)), height // cfg.stride, width // cfg.stride)


def calibration_report(cfg, target=CALIBRATION_TARGET):
    paths = enumerate_paths(cfg)
    per_order = [sum(1 for p in paths if p.order == order) for order in range(3)]
    tv_paths = sum(1 for p in paths if cfg.L in p.orientations)
    return {
        'convention': cfg.convention,
        'channels': len(paths),
        'target': target,
        'matches': len(paths) == target,
        'per_order': per_order,
        'tv_paths': tv_paths,
    }


def has_reference_geometry(cfg):
    """J = 3, L = 8, order 2: the geometry the channel target is defined for."""
    return (cfg.J, cfg.L, cfg.max_order) == (3, 8, 2)


def check_calibration(cfg, target=CALIBRATION_TARGET):
    report = calibration_report(cfg, target)
    if not report['matches']:
        raise ConfigError(
            'channel calibration failed: convention {convention} gives {channels} channels '
            '(order 0/1/2 = {per_order}, tv paths {tv_paths}), expected {target}'.format(**report))
    return report


def effective_coefficients(J, L, alpha):
    """Scattering path count for the J' = J - ceil(log2 alpha) scales left after
    downsampling by alpha (no TV channel). alpha = 1 keeps all J scales."""
    if alpha < 1:
        raise ValueError('Invalid downsampling factor: {} - should be >= 1'.format(alpha))
    if math.log2(alpha) >= J:
        raise ValueError('downsampling factor {} too large for J={}'.format(alpha, J))
    reduced = J - int(math.ceil(math.log2(alpha) - 1e-12))
    return 1 + reduced * L + L * L * reduced * (reduced - 1) // 2


def path_weights(paths, c):
    return torch.tensor([c ** p.k for p in paths], dtype=DTYPE)


class FeatureNetwork(nn.Module):
    """Differentiable map from (B, C, H, W) images to (B, P, h, w) features."""

    def output_shape(self, height, width):
        raise NotImplementedError

    def features(self, x):
        """Forward on a single (C, H, W) image or a batch."""
        if x.dim() == 3:
            return self(x.unsqueeze(0))[0]
        return self(x)

    def loss_grad(self, x, target):
        """0.5 ||Psi(x) - target||^2 and its input gradient."""
        x = x.detach().clone().requires_grad_(True)
        loss = 0.5 * ((self.features(x) - target) ** 2).sum()
        grad, = torch.autograd.grad(loss, x)
        return loss.detach(), grad


class IdentityNetwork(FeatureNetwork):

    def forward(self, x):
        return x

    def output_shape(self, height, width):
        return (1, height, width)


class Scattering(FeatureNetwork):
    """Order <= 2 scattering with modulus, phi pooling and c^k renormalisation.

    With ``trainable`` the band-pass planes become free complex parameters
    initialised from the Morlet bank; low-pass, TV filters and topology stay
    fixed.
    """

    def __init__(self, cfg, size, bank=None, trainable=False):
        super().__init__()
        cfg.validate()
        height, width = size
        if height % 2 ** cfg.J or width % 2 ** cfg.J:
            raise ValueError('image size {}x{} not divisible by 2^J={}'.format(height, width, 2 ** cfg.J))
        if bank is None:
            bank = build_morlet_bank(cfg.J, cfg.L, size, cfg.morlet,
                                     include_tv=cfg.include_tv, tv_cascade=_has_tv_cascade(cfg))
        if bank.J != cfg.J or bank.L != cfg.L or tuple(bank.size) != tuple(size):
            raise ValueError('filter bank (J={}, L={}, size={}) does not match config (J={}, L={}, size={})'.format(
                bank.J, bank.L, bank.size, cfg.J, cfg.L, tuple(size)))
        if cfg.include_tv and bank.tv_filter is None:
            raise ValueError('config requires a TV filter the bank does not carry')
        self.cfg = cfg
        self.size = (height, width)
        self.paths = enumerate_paths(cfg)
        self.trainable = trainable
        self._resized = {}

        psi = torch.view_as_real(bank.bandpass.to(CDTYPE)).clone()
        if trainable:
            self.psi_weight = nn.Parameter(psi)
        else:
            self.register_buffer('psi_weight', psi)
        self.register_buffer('phi_hat', bank.lowpass.to(CDTYPE).clone())
        if cfg.include_tv:
            self.register_buffer('tv_hat', bank.tv_filter.clone())
        if _has_tv_cascade(cfg):
            self.register_buffer('tv_next_hat', bank.tv_cascade.clone())
        self.register_buffer('weights', path_weights(self.paths, cfg.renorm_base))

    @property
    def psi_hat(self):
        return torch.view_as_complex(self.psi_weight)

    def output_shape(self, height, width):
        return (len(self.paths), height // self.cfg.stride, width // self.cfg.stride)

    def _pool(self, u):
        s = self.cfg.stride
        return torch.fft.ifft2(torch.fft.fft2(u) * self.phi_hat).real[..., ::s, ::s]

    def forward(self, x):
        if x.dim() != 4 or x.shape[1] != 1:
            raise ValueError('scattering expects (batch, 1, H, W), got {}'.format(tuple(x.shape)))
        if tuple(x.shape[-2:]) != self.size:
            raise ValueError('image {} does not match filter bank size {}'.format(tuple(x.shape[-2:]), self.size))
        cfg = self.cfg
        batch = x.shape[0]
        psi = self.psi_hat
        x_hat = torch.fft.fft2(x[:, 0].to(DTYPE))

        outputs = [self._pool(x[:, 0].to(DTYPE)).unsqueeze(1)]

        u1 = torch.abs(torch.fft.ifft2(x_hat[:, None, None] * psi))           # B, J, L, H, W
        s1 = self._pool(u1)
        for j in range(cfg.J):
            outputs.append(s1[:, j])
            if j == 0 and cfg.include_tv:
                u_tv = torch.abs(torch.fft.ifft2(x_hat * self.tv_hat))
                outputs.append(self._pool(u_tv).unsqueeze(1))

        if cfg.max_order >= 2:
            for j1 in range(cfg.J - 1):
                u1_hat = torch.fft.fft2(u1[:, j1])                              # B, L, H, W
                finer = psi[j1 + 1:]                                              # J2, L, H, W
                u2 = torch.abs(torch.fft.ifft2(u1_hat[:, :, None, None] * finer))
                s2 = self._pool(u2)
                outputs.append(s2.reshape(batch, -1, *s2.shape[-2:]))
            if _has_tv_cascade(cfg):
                u_tv2 = torch.abs(torch.fft.ifft2(torch.fft.fft2(u_tv) * self.tv_next_hat))
                outputs.append(self._pool(u_tv2).unsqueeze(1))

        coefficients = torch.cat(outputs, dim=1)
        return coefficients * self.weights[None, :, None, None]

    def for_size(self, size):
        """Same network on another grid; trained filters keep their spatial taps.
        Fixed banks are built once per size and reused."""
        size = tuple(size)
        if size == self.size:
            return self
        if not self.trainable:
            if size not in self._resized:
                self._resized[size] = Scattering(self.cfg, size)
            return self._resized[size]
        spatial = torch.fft.ifft2(self.psi_hat.detach())
        embedded = _embed_centered(spatial, size)
        bank = build_morlet_bank(self.cfg.J, self.cfg.L, size, self.cfg.morlet,
                                 include_tv=self.cfg.include_tv, tv_cascade=_has_tv_cascade(self.cfg))
        bank.bandpass = torch.fft.fft2(embedded)
        return Scattering(self.cfg, size, bank=bank, trainable=True)


def _embed_centered(spatial, size):
    """Place circular (h, w) taps, centred on the origin, on a larger grid."""
    height, width = spatial.shape[-2:]
    out_h, out_w = size
    if out_h < height or out_w < width:
        raise ValueError('cannot shrink trained filters from {} to {}'.format((height, width), size))
    shifted = torch.fft.fftshift(spatial, dim=(-2, -1))
    out = torch.zeros(spatial.shape[:-2] + (out_h, out_w), dtype=spatial.dtype)
    top, left = out_h // 2 - height // 2, out_w // 2 - width // 2
    out[..., top:top + height, left:left + width] = shifted
    return torch.fft.ifftshift(out, dim=(-2, -1))


class ScatteringCoefficients(object):
    """Feature maps Psi(r), one channel per path, with path metadata."""

    def __init__(self, paths, maps, cfg):
        if maps.shape[-3] != len(paths):
            raise ValueError('{} channels for {} paths'.format(maps.shape[-3], len(paths)))
        self.paths = list(paths)
        self.maps = maps
        self.cfg = cfg

    def energy_per_order(self):
        energy = [0., 0., 0.]
        for index, path in enumerate(self.paths):
            energy[path.order] += float((self.maps[..., index, :, :] ** 2).sum())
        return energy

    def summary(self):
        return {
            'channels': len(self.paths),
            'grid': list(self.maps.shape[-2:]),
            'energy_per_order': self.energy_per_order(),
            'convention': self.cfg.convention,
        }

    def save(self, path):
        dir_path = os.path.dirname(path)
        if dir_path != '':
            os.makedirs(dir_path, exist_ok=True)
        torch.save({
            'format': COEFFICIENTS_FORMAT,
            'version': COEFFICIENTS_VERSION,
            'config': self.cfg._asdict(),
            'convention': self.cfg.convention,
            'paths': [tuple(p) for p in self.paths],
            'maps': self.maps,
        }, path)

    @classmethod
    def load(cls, path):
        if not os.path.isfile(path):
            raise FileNotFoundError('coefficients not found : ' + str(path))
        saved = torch.load(path)
        if saved.get('format') != COEFFICIENTS_FORMAT or saved.get('version') != COEFFICIENTS_VERSION:
            raise ValueError('unsupported coefficients container : ' + str(path))
        cfg = ScatteringConfig.from_dict(saved['config'])
        paths = [ScatteringPath(order, tuple(scales), tuple(orientations), k)
                 for order, scales, orientations, k in saved['paths']]
        return cls(paths, saved['maps'], cfg)


def scatter_forward(r, bank, cfg):
    """Psi(r) for a single-channel (1, H, W) image."""
    if r.dim() != 3 or r.shape[0] != 1:
        raise ValueError('scatter_forward expects a (1, H, W) image, got {}'.format(tuple(r.shape)))
    network = Scattering(cfg, tuple(r.shape[-2:]), bank=bank)
    return ScatteringCoefficients(network.paths, network.features(r), cfg)


def scatter_loss_grad(r, target, bank, cfg):
    """0.5 ||Psi(r) - target||^2 and its exact input gradient."""
    if list(target.paths) != enumerate_paths(cfg):
        raise ValueError('target paths do not match the scattering config')
    network = Scattering(cfg, tuple(r.shape[-2:]), bank=bank)
    return network.loss_grad(r, target.maps)


def renormalize(coeffs, c):
    if c <= 0:
        raise ValueError('Invalid renormalization base: {} - should be > 0'.format(c))
    weights = path_weights(coeffs.paths, c).to(coeffs.maps.dtype)
    shape = [1] * coeffs.maps.dim()
    shape[-3] = len(coeffs.paths)
    return ScatteringCoefficients(coeffs.paths, coeffs.maps * weights.view(shape), coeffs.cfg)
