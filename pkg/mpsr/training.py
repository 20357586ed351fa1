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
"""Predictor training: feature regression against Psi(r) or pixel regression against y."""

import json
import logging
from typing import NamedTuple, Tuple

import numpy as np
import torch
from torch.utils.data import TensorDataset

from .helper import Helper
from .models.predictor import assert_grid_agreement
from .numerics import DTYPE
from .optimization import get_optimizer, get_scheduler
from .utils import ConfigError

logger = logging.getLogger(__name__)


class TrainConfig(NamedTuple):
    """ Configuration"""
    mode: str = 'feature'              # feature (||Phi(x) - Psi(r)||^2) or pixel (||Phi(x) - y||^2).
    batch_size: int = 8
    steps: int = 2000
    optimizer: str = 'adam'            # adam or sgd.
    lr: float = 1e-3
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    schedule: str = 'constant'         # constant or warmup_linear.
    warmup_steps: int = 0
    max_grad_norm: float = 0.0         # 0 disables clipping.
    divergence_threshold: float = 1e6
    channel_weights: Tuple[float, ...] = None   # diagonal feature weighting, None is identity.
    patch_size: int = 64
    seed: int = 0

    @classmethod
    def from_dict(cls, values):
        unknown = set(values) - set(cls._fields)
        if unknown:
            raise ConfigError('unknown train keys: {}'.format(sorted(unknown)))
        values = dict(values)
        if 'betas' in values:
            values['betas'] = tuple(values['betas'])
        if values.get('channel_weights') is not None:
            values['channel_weights'] = tuple(values['channel_weights'])
        config = cls(**values)
        config.validate()
        return config

    @classmethod
    def from_json(cls, file):
        with open(file, "r", encoding="UTF-8") as reader:
            return cls.from_dict(json.load(reader))

    def validate(self):
        if self.mode not in ('feature', 'pixel'):
            raise ConfigError('mode must be feature or pixel, got {}'.format(self.mode))
        if self.optimizer not in ('adam', 'sgd'):
            raise ConfigError('optimizer must be adam or sgd, got {}'.format(self.optimizer))
        if self.lr < 0:
            raise ConfigError('Invalid learning rate: {} - should be >= 0.0'.format(self.lr))
        if self.batch_size < 1 or self.steps < 0:
            raise ConfigError('batch_size must be >= 1 and steps >= 0')


def _feature_targets(dataset, psi, cfg):
    inputs = torch.stack([dataset[i][0] for i in range(len(dataset))]).to(DTYPE)
    with torch.no_grad():
        targets = torch.cat([psi.features(dataset[i][1].unsqueeze(0)) for i in range(len(dataset))])
    if cfg.channel_weights is not None:
        if len(cfg.channel_weights) != targets.shape[1]:
            raise ConfigError('{} channel weights for {} feature channels'.format(
                len(cfg.channel_weights), targets.shape[1]))
    return TensorDataset(inputs, targets)


def train(net, dataset, psi, cfg, helper=None, save_dir=None):
    """Minimise the squared regression loss; returns (net, loss trace, optimizer).

    Feature mode needs ``psi`` and a dataset of (U-bar(x), r); targets Psi(r)
    are computed once. Pixel mode takes (U-bar(x), y).
    """
    cfg.validate()
    if len(dataset) == 0:
        raise ValueError('empty training dataset')
    if cfg.mode == 'feature':
        if psi is None:
            raise ValueError('feature regression needs a feature network')
        assert_grid_agreement(net, psi, tuple(dataset[0][0].shape[-2:]))
        train_set = _feature_targets(dataset, psi, cfg)
    else:
        train_set = TensorDataset(torch.stack([dataset[i][0] for i in range(len(dataset))]).to(DTYPE),
                                  torch.stack([dataset[i][1] for i in range(len(dataset))]).to(DTYPE))

    weights = None
    if cfg.channel_weights is not None and cfg.mode == 'feature':
        weights = torch.tensor(cfg.channel_weights, dtype=DTYPE).view(1, -1, 1, 1)

    def process(batch, model):
        inputs, targets = batch
        error = (model(inputs) - targets) ** 2
        if weights is not None:
            error = error * weights
        return error.flatten(1).sum(1).mean()

    if helper is None:
        helper = Helper(seeds=cfg.seed)
    optimizer = get_optimizer(net, cfg.optimizer, lr=cfg.lr, betas=cfg.betas, eps=cfg.eps)
    scheduler = get_scheduler(optimizer, cfg.schedule, warmup_steps=cfg.warmup_steps, max_steps=cfg.steps)
    logger.info('training {} regression: {} samples, {} steps, {} parameters'.format(
        cfg.mode, len(train_set), cfg.steps, sum(p.numel() for p in net.parameters())))
    trace = helper.train(
        process, net, train_set, optimizer, scheduler,
        batch_size=cfg.batch_size, steps=cfg.steps, save_dir=save_dir,
        max_grad_norm=cfg.max_grad_norm if cfg.max_grad_norm > 0 else None,
        divergence_threshold=cfg.divergence_threshold, desc=cfg.mode)
    net.eval()
    return net, trace, optimizer


def moving_average(trace, window=50):
    trace = np.asarray(trace, dtype=np.float64)
    if len(trace) < window:
        return trace.copy()
    kernel = np.ones(window) / window
    return np.convolve(trace, kernel, mode='valid')
