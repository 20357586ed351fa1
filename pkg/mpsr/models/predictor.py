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
"""Convolutional predictor Phi and the pixel-space baseline."""

import math
from typing import NamedTuple, Tuple

import torch
import torch.nn as nn

from ..numerics import DTYPE
from ..scattering import FeatureNetwork, feature_shape
from ..utils import ConfigError, make_generator, load, save

LAYER_KINDS = ('convolution', 'pointwise-nonlinearity', 'downsample', 'linear-output')


class LayerSpec(NamedTuple):
    kind: str
    out_channels: int = 0
    kernel: Tuple[int, int] = (1, 1)
    stride: int = 1
    nonlinearity: str = 'none'

    def validate(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigError('unknown layer kind: {}'.format(self.kind))
        if self.kind in ('convolution', 'linear-output'):
            if self.out_channels < 1:
                raise ConfigError('{} needs out_channels >= 1'.format(self.kind))
            if self.kernel[0] % 2 == 0 or self.kernel[1] % 2 == 0:
                raise ConfigError('kernel must be odd-sized, got {}'.format(tuple(self.kernel)))
        if self.stride not in (1, 2):
            raise ConfigError('stride must be 1 or 2, got {}'.format(self.stride))
        if self.nonlinearity not in ('relu', 'none'):
            raise ConfigError('unknown nonlinearity: {}'.format(self.nonlinearity))

    @classmethod
    def from_dict(cls, values):
        values = dict(values)
        if 'kernel' in values:
            values['kernel'] = tuple(values['kernel'])
        spec = cls(**values)
        spec.validate()
        return spec


def conv(out_channels, size, relu=True):
    return LayerSpec('convolution', out_channels, (size, size), 1, 'relu' if relu else 'none')


def phi_default_specs(out_channels=219):
    """32 9x9, 64 9x9, pool, 64 9x9, pool, 64 3x3, linear 1x1."""
    return [
        conv(32, 9),
        conv(64, 9),
        LayerSpec('downsample', stride=2),
        conv(64, 9),
        LayerSpec('downsample', stride=2),
        conv(64, 3),
        LayerSpec('linear-output', out_channels, (1, 1)),
    ]


def baseline_default_specs():
    """64 7x7, 64 3x3, 64 3x3, 32 5x5, linear 1x1 to one channel."""
    return [
        conv(64, 7),
        conv(64, 3),
        conv(64, 3),
        conv(32, 5),
        LayerSpec('linear-output', 1, (1, 1)),
    ]


class PredictorNetwork(FeatureNetwork):
    """Stack of 'same' zero-padded convolutions, ReLU and 2x2 average pooling.

    ``residual_skip`` adds the input image to the output (pixel regression).
    """

    def __init__(self, specs, input_channels=1, residual_skip=False, seed=0):
        super().__init__()
        specs = [s if isinstance(s, LayerSpec) else LayerSpec.from_dict(s) for s in specs]
        for spec in specs:
            spec.validate()
        if specs[-1].kind != 'linear-output':
            raise ConfigError('last layer must be linear-output, got {}'.format(specs[-1].kind))
        if residual_skip and specs[-1].out_channels != input_channels:
            raise ConfigError('residual skip needs out_channels == input_channels')
        self.specs = specs
        self.input_channels = input_channels
        self.residual_skip = residual_skip

        layers = []
        channels = input_channels
        for spec in specs:
            if spec.kind in ('convolution', 'linear-output'):
                kh, kw = spec.kernel
                layers.append(nn.Conv2d(channels, spec.out_channels, (kh, kw), stride=spec.stride,
                                        padding=(kh // 2, kw // 2)))
                channels = spec.out_channels
                if spec.nonlinearity == 'relu':
                    layers.append(nn.ReLU())
            elif spec.kind == 'downsample':
                layers.append(nn.AvgPool2d(2))
            else:
                layers.append(nn.ReLU())
        self.layers = nn.Sequential(*layers)
        self.out_channels = channels
        self.to(DTYPE)
        self.reset_parameters(seed)

    def reset_parameters(self, seed=0):
        self._generator = make_generator(seed)
        self.apply(self.init_weights)
        del self._generator

    def init_weights(self, module):
        """ Uniform +-sqrt(6 / fan_in), zero bias."""
        if isinstance(module, nn.Conv2d):
            fan_in = module.in_channels * module.kernel_size[0] * module.kernel_size[1]
            bound = math.sqrt(6. / fan_in)
            noise = torch.rand(module.weight.shape, generator=self._generator, dtype=DTYPE)
            module.weight.data.copy_((2 * noise - 1) * bound)
            module.bias.data.zero_()

    def forward(self, x):
        out = self.layers(x)
        if self.residual_skip:
            out = out + x
        return out

    def output_shape(self, height, width):
        for spec in self.specs:
            if spec.kind == 'downsample':
                height, width = height // 2, width // 2
            elif spec.stride == 2:
                height, width = (height + 1) // 2, (width + 1) // 2
        return (self.out_channels, height, width)

    def parameter_count(self):
        return sum(p.numel() for p in self.parameters())

    def spec_dicts(self):
        return [dict(s._asdict(), kernel=list(s.kernel)) for s in self.specs]


def build_phi_default(out_channels=219, seed=0, scattering_cfg=None, size=(64, 64)):
    net = PredictorNetwork(phi_default_specs(out_channels), input_channels=1, seed=seed)
    if scattering_cfg is not None:
        check_feature_grid(net, scattering_cfg, size)
    return net


def build_baseline_default(seed=0):
    return PredictorNetwork(baseline_default_specs(), input_channels=1, residual_skip=True, seed=seed)


def check_feature_grid(phi, scattering_cfg, size):
    """Like assert_grid_agreement, from the scattering config alone."""
    phi_shape = tuple(phi.output_shape(*size))
    psi_shape = feature_shape(scattering_cfg, size)
    if phi_shape != psi_shape:
        raise ConfigError('predictor output {} does not match feature grid {} for input {}'.format(
            phi_shape, psi_shape, tuple(size)))
    return phi_shape


def assert_grid_agreement(phi, psi, size):
    """Phi and Psi must produce the same (channels, h, w) from one image size."""
    phi_shape = tuple(phi.output_shape(*size))
    psi_shape = tuple(psi.output_shape(*size))
    if phi_shape != psi_shape:
        raise ConfigError('predictor output {} does not match feature grid {} for input {}'.format(
            phi_shape, psi_shape, tuple(size)))
    return phi_shape


def save_predictor(net, filename, scattering_cfg=None, optimizer=None, mode='feature', **extra):
    extra_fields = {
        'mode': mode,
        'specs': net.spec_dicts(),
        'input_channels': net.input_channels,
        'residual_skip': net.residual_skip,
        'scattering_config': scattering_cfg._asdict() if scattering_cfg is not None else None,
        'scattering_fingerprint': scattering_cfg.fingerprint() if scattering_cfg is not None else None,
    }
    extra_fields.update(extra)
    return save(net, filename, optimizer=optimizer, **extra_fields)


def load_predictor(filename, expected_scattering=None, device='cpu'):
    """Restore a predictor and check its scattering fingerprint.

    Returns (net, checkpoint dict).
    """
    checkpoint = load(filename, device=device)
    net = PredictorNetwork(checkpoint['specs'], input_channels=checkpoint['input_channels'],
                           residual_skip=checkpoint['residual_skip'])
    net.load_state_dict(checkpoint['model'])
    if expected_scattering is not None and checkpoint.get('mode') == 'feature':
        if checkpoint.get('scattering_fingerprint') != expected_scattering.fingerprint():
            raise ConfigError('checkpoint {} was trained for scattering {} but config gives {}'.format(
                filename, checkpoint.get('scattering_fingerprint'), expected_scattering.fingerprint()))
    return net, checkpoint

