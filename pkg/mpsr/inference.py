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
"""Gibbs energy, mode sampling and super-resolution.

The conditional model is p(r | x) ~ exp(-||Phi(x) - Psi(r)||^2 - lambda TV(r)).
Samples are high-likelihood residuals found by descending the energy from an
initial residual; the returned residual is the lowest-energy iterate seen.
"""

import csv
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import NamedTuple, Tuple

import torch
from tqdm import tqdm

from .degradation import linear_predict, rgb_to_ycbcr, ycbcr_to_rgb
from .models.predictor import assert_grid_agreement
from .numerics import DTYPE
from .optimization import get_optimizer
from .scattering import Scattering
from .utils import ConfigError, DivergenceError, make_generator

logger = logging.getLogger(__name__)

INIT_KINDS = ('linear-predict', 'zeros', 'gaussian-noise', 'perturbed')


class InferenceConfig(NamedTuple):
    """ Configuration"""
    iterations: int = 100              # Descent iterations per sample.
    optimizer: str = 'adam'            # adam or gd (gradient descent with Armijo backtracking).
    lr: float = 0.05                   # Adam step size.
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    gd_step: float = 1.0               # Initial gd step before backtracking.
    armijo: float = 1e-4               # Sufficient decrease constant.
    backtrack: float = 0.5             # Step shrink factor.
    max_backtracks: int = 40
    init: str = 'linear-predict'       # linear-predict, zeros, gaussian-noise or perturbed.
    noise_sigma: float = 1.0           # gaussian-noise init standard deviation.
    perturb_sigma: float = 0.05        # perturbed init standard deviation.
    lambda_tv: float = 1e-8            # TV shrinkage weight.
    threads: int = 1                   # Workers for independent samples.
    seed: int = 0

    @classmethod
    def from_dict(cls, values):
        unknown = set(values) - set(cls._fields)
        if unknown:
            raise ConfigError('unknown inference keys: {}'.format(sorted(unknown)))
        values = dict(values)
        if 'betas' in values:
            values['betas'] = tuple(values['betas'])
        config = cls(**values)
        config.validate()
        return config

    @classmethod
    def from_json(cls, file):
        with open(file, "r", encoding="UTF-8") as reader:
            return cls.from_dict(json.load(reader))

    def validate(self):
        if self.iterations < 1:
            raise ConfigError('iterations must be >= 1, got {}'.format(self.iterations))
        if self.optimizer not in ('adam', 'gd'):
            raise ConfigError('optimizer must be adam or gd, got {}'.format(self.optimizer))
        if self.init not in INIT_KINDS:
            raise ConfigError('init must be one of {}, got {}'.format(INIT_KINDS, self.init))
        if self.lr <= 0 or self.gd_step <= 0:
            raise ConfigError('step sizes must be > 0')
        if not 0 < self.backtrack < 1:
            raise ConfigError('backtrack must be in (0, 1), got {}'.format(self.backtrack))
        if self.lambda_tv < 0:
            raise ConfigError('lambda_tv must be >= 0, got {}'.format(self.lambda_tv))
        if self.threads < 1:
            raise ConfigError('threads must be >= 1, got {}'.format(self.threads))


class GibbsModel(object):
    """Phi, Psi, the degradation model and the TV weight defining p(r | x).

    ``phi`` may be None when targets are supplied directly (synthesis).
    ``point_estimate`` optionally replaces the zero residual of the
    linear-predict init with a pixel-regression estimate.
    """

    def __init__(self, phi, psi, degradation, lambda_tv=0., point_estimate=None):
        if lambda_tv < 0:
            raise ValueError('Invalid lambda_tv: {} - should be >= 0'.format(lambda_tv))
        self.phi = phi
        self.psi = psi
        self.degradation = degradation
        self.lambda_tv = lambda_tv
        self.point_estimate = point_estimate
        if phi is not None and isinstance(psi, Scattering):
            assert_grid_agreement(phi, psi, psi.size)

    def feature_network(self, size):
        if isinstance(self.psi, Scattering):
            return self.psi.for_size(size)
        return self.psi

    def phi_input(self, x):
        return linear_predict(x, self.degradation)

    def phi_features(self, x):
        """Phi(U-bar(x)) for a single-channel low-resolution (1, h, w) image."""
        if self.phi is None:
            raise ValueError('model has no predictor')
        upsampled = self.phi_input(x)
        with torch.no_grad():
            features = self.phi.features(upsampled)
        expected = tuple(self.feature_network(tuple(upsampled.shape[-2:])).output_shape(*upsampled.shape[-2:]))
        if tuple(features.shape) != expected:
            raise ConfigError('predictor output {} does not match feature grid {}'.format(
                tuple(features.shape), expected))
        return features

    def base_residual(self, x):
        """Residual of the point estimate: zero for plain linear prediction."""
        upsampled = linear_predict(x, self.degradation)
        if self.point_estimate is None:
            return torch.zeros_like(upsampled)
        with torch.no_grad():
            return self.point_estimate.features(upsampled) - upsampled


class SampleResult(NamedTuple):
    r: torch.Tensor
    energy: float
    trace: list                        # (feature term, TV term) per iterate, initial point first
    best_iteration: int


def total_variation(r):
    """Sum of |grad r| with circular forward differences; subgradient 0 where grad r = 0."""
    dx = torch.roll(r, shifts=-1, dims=-1) - r
    dy = torch.roll(r, shifts=-1, dims=-2) - r
    return torch.abs(torch.complex(dx, dy)).sum()


def _energy_terms(psi, target, r, lambda_tv):
    features = psi.features(r)
    if features.shape != target.shape:
        raise ValueError('feature shape {} does not match target {}'.format(
            tuple(features.shape), tuple(target.shape)))
    feature_term = ((target - features) ** 2).sum()
    if lambda_tv > 0:
        tv_term = total_variation(r)
    else:
        tv_term = torch.zeros((), dtype=DTYPE)
    return feature_term, tv_term


def gibbs_energy(model, x_features, r):
    """||x_features - Psi(r)||^2 + lambda TV(r)."""
    psi = model.feature_network(tuple(r.shape[-2:]))
    with torch.no_grad():
        feature_term, tv_term = _energy_terms(psi, x_features, r, model.lambda_tv)
    return float(feature_term + model.lambda_tv * tv_term)


def initial_residual(model, x, cfg, shape=None, seed=None, sigma=None):
    seed = cfg.seed if seed is None else seed
    if x is not None:
        base = model.base_residual(x)
    else:
        base = torch.zeros(shape, dtype=DTYPE)
    if cfg.init == 'linear-predict':
        return base
    if cfg.init == 'zeros':
        return torch.zeros_like(base)
    noise = torch.randn(base.shape, generator=make_generator(seed), dtype=DTYPE)
    if cfg.init == 'gaussian-noise':
        return (cfg.noise_sigma if sigma is None else sigma) * noise
    return base + (cfg.perturb_sigma if sigma is None else sigma) * noise


def _evaluate(psi, target, r, lambda_tv, with_grad=True):
    r = r.detach().clone().requires_grad_(with_grad)
    with torch.set_grad_enabled(with_grad):
        feature_term, tv_term = _energy_terms(psi, target, r, lambda_tv)
        energy = feature_term + lambda_tv * tv_term
    if not bool(torch.isfinite(energy)):
        raise DivergenceError('non-finite energy', diagnostics={
            'feature': float(feature_term), 'tv': float(tv_term)})
    grad = torch.autograd.grad(energy, r)[0] if with_grad else None
    return float(energy), (float(feature_term), float(tv_term)), grad


def sample_mode(model, x, cfg, x_features=None, init=None, shape=None, progress=False):
    """Descend the Gibbs energy over the residual.

    ``x_features`` replaces Phi(x); ``init`` replaces the configured init;
    ``shape`` gives the residual shape when ``x`` is None.
    """
    cfg.validate()
    if x_features is None:
        x_features = model.phi_features(x)
    if init is None:
        if shape is None and x is None:
            raise ValueError('sample_mode needs x, init or shape')
        init = initial_residual(model, x, cfg, shape=shape)
    r = init.detach().clone().to(DTYPE)
    psi = model.feature_network(tuple(r.shape[-2:]))
    lam = model.lambda_tv

    energy, terms, grad = _evaluate(psi, x_features, r, lam)
    trace = [terms]
    best_energy, best_r, best_iteration = energy, r.clone(), 0
    iterations = tqdm(range(cfg.iterations), desc="sample : {:.4e} energy".format(energy),
                      disable=not progress, mininterval=1)

    if cfg.optimizer == 'adam':
        variable = r.clone().requires_grad_(True)
        optimizer = get_optimizer([variable], 'adam', lr=cfg.lr, betas=cfg.betas, eps=cfg.eps)
        for it in iterations:
            variable.grad = grad
            optimizer.step()
            energy, terms, grad = _evaluate(psi, x_features, variable, lam)
            trace.append(terms)
            if energy < best_energy:
                best_energy, best_r, best_iteration = energy, variable.detach().clone(), it + 1
            iterations.set_description("sample : {:.4e} energy".format(energy), refresh=False)
    else:
        step = cfg.gd_step
        for it in iterations:
            squared = float((grad ** 2).sum())
            accepted = False
            for _ in range(cfg.max_backtracks):
                candidate = r - step * grad
                cand_energy, cand_terms, _ = _evaluate(psi, x_features, candidate, lam, with_grad=False)
                if cand_energy <= energy - cfg.armijo * step * squared:
                    accepted = True
                    break
                step *= cfg.backtrack
            if accepted:
                r = candidate
                energy, terms, grad = _evaluate(psi, x_features, r, lam)
                step = min(cfg.gd_step, step / cfg.backtrack)
            trace.append(terms)
            if energy < best_energy:
                best_energy, best_r, best_iteration = energy, r.detach().clone(), it + 1
            iterations.set_description("sample : {:.4e} energy".format(energy), refresh=False)

    return SampleResult(best_r, best_energy, trace, best_iteration)


class IsoProbabilitySet(NamedTuple):
    samples: list
    energies: list
    distances: torch.Tensor            # pairwise pixel distances ||r_i - r_j||


def sample_isoprobability(model, x, n, sigma_perturb, cfg, x_features=None):
    """n descents from U-bar(x) + N(0, sigma_perturb^2); sample i uses seed + i."""
    if n < 1:
        raise ValueError('Invalid sample count: {} - should be >= 1'.format(n))
    if x_features is None:
        x_features = model.phi_features(x)
    base = model.base_residual(x)

    def run(index):
        noise = torch.randn(base.shape, generator=make_generator(cfg.seed + index), dtype=DTYPE)
        return sample_mode(model, x, cfg, x_features=x_features, init=base + sigma_perturb * noise)

    if cfg.threads > 1 and n > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as executor:
            samples = list(executor.map(run, range(n)))
    else:
        samples = [run(i) for i in range(n)]

    stacked = torch.stack([s.r.flatten() for s in samples])
    distances = torch.cdist(stacked, stacked)
    return IsoProbabilitySet(samples, [s.energy for s in samples], distances)


class SuperResolution(NamedTuple):
    image: torch.Tensor                # raw U-bar(x) + r'
    display: torch.Tensor              # clamped to [0, 1]
    residual: torch.Tensor
    samples: list                      # SampleResult per processed channel


def _super_resolve_channel(model, x, cfg, progress):
    result = sample_mode(model, x, cfg, progress=progress)
    return linear_predict(x, model.degradation) + result.r, result


def super_resolve(model, x, cfg, progress=False):
    """y-hat = U-bar(x) + r' for a (C, h, w) low-resolution image.

    Three-channel input is handled in YCbCr (only Y goes through the model,
    chroma is upsampled) unless the degradation asks for rgb.
    """
    if x.dim() != 3:
        raise ValueError('expected (C, h, w), got {}'.format(tuple(x.shape)))
    x = x.to(DTYPE)
    samples = []
    if x.shape[0] == 3 and model.degradation.color == 'luminance':
        ycbcr = rgb_to_ycbcr(x)
        luma, result = _super_resolve_channel(model, ycbcr[:1], cfg, progress)
        samples.append(result)
        chroma = linear_predict(ycbcr[1:], model.degradation)
        image = ycbcr_to_rgb(torch.cat([luma, chroma]))
    else:
        channels = []
        for c in range(x.shape[0]):
            channel, result = _super_resolve_channel(model, x[c:c + 1], cfg, progress)
            channels.append(channel)
            samples.append(result)
        image = torch.cat(channels)
    res = image - linear_predict(x, model.degradation)
    return SuperResolution(image, image.clamp(0., 1.), res, samples)


def synthesize(psi, target, cfg, shape, progress=False):
    """Residual whose Psi statistics match ``target``, from Gaussian-noise init."""
    model = GibbsModel(None, psi, None, lambda_tv=cfg.lambda_tv)
    noise_cfg = cfg._replace(init='gaussian-noise')
    init = initial_residual(model, None, noise_cfg, shape=shape)
    return sample_mode(model, None, noise_cfg, x_features=target, init=init, progress=progress)


def feature_error(psi, target, r):
    with torch.no_grad():
        return float(torch.linalg.vector_norm(psi.features(r) - target))


def write_trace_csv(trace, path):
    dir_path = os.path.dirname(path)
    if dir_path != '':
        os.makedirs(dir_path, exist_ok=True)
    with open(path, 'w', newline='', encoding='UTF-8') as writer:
        out = csv.writer(writer)
        out.writerow(['iteration', 'feature', 'tv'])
        for iteration, (feature, tv) in enumerate(trace):
            out.writerow([iteration, repr(feature), repr(tv)])
    return path


def energy_values(trace, lambda_tv):
    return [feature + lambda_tv * tv for feature, tv in trace]


def is_non_increasing(values, tolerance=0.):
    return all(b <= a + tolerance * max(1., abs(a)) for a, b in zip(values, values[1:]))

