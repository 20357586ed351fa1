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
"""Likelihood-gradient fine-tuning of Phi and Psi.

For E(r) = ||Phi(x) - Psi(r)||^2 the estimators below are half of the
negative log-likelihood gradient, with the model expectation replaced by an
average over negative samples r'.

  Psi: -dPsi(r)^T (Phi(x) - Psi(r)) + 1/L sum dPsi(r')^T (Phi(x) - Psi(r'))
  Phi: dPhi(x)^T (1/L sum Psi(r') - Psi(r))

Models are duck-typed: ``phi``, ``phi_input(x)`` and ``feature_network(size)``
are all the estimators use, so the same code runs on ``GibbsModel`` and on
the enumerable ``ToyGibbsOracle``.
"""

import csv
import json
import logging
import math
import os
from typing import NamedTuple

import numpy as np
import torch
import torch.nn as nn
from tqdm import tqdm

from .inference import InferenceConfig, sample_isoprobability
from .numerics import DTYPE
from .optimization import get_optimizer
from .scattering import FeatureNetwork
from .utils import ConfigError, DivergenceError, make_generator

logger = logging.getLogger(__name__)

DIAGNOSTIC_FIELDS = ('step', 'phase', 'data_energy', 'negative_energy', 'energy_gap',
                     'phi_grad_norm', 'psi_grad_norm')


class FineTuneConfig(NamedTuple):
    """ Configuration"""
    steps: int = 50                    # Alternation cycles (Phi phase then Psi phase).
    batch_size: int = 4                # Data points per update.
    negatives: int = 1                 # Negative samples L per data point.
    sigma_perturb: float = 0.05        # Sampler init perturbation.
    eta: float = 1e-4                  # Psi learning-rate factor; 0 freezes Psi.
    phi_lr: float = 1e-4
    psi_base_lr: float = 1e-2          # Psi learning rate is psi_base_lr * eta.
    optimizer: str = 'sgd'             # sgd keeps Psi updates linear in eta; adam also accepted.
    phi_steps: int = 1                 # Phi updates per cycle.
    psi_steps: int = 1                 # Psi updates per cycle.
    dry_run: bool = False              # Report estimator statistics without updating.
    grad_norm_limit: float = 1e6       # Larger gradient norms abort.
    max_gap_flips: int = 0             # Consecutive energy-gap sign flips that abort; 0 disables.
    chunk_size: int = 64               # Negatives per autograd pass.
    seed: int = 0

    @classmethod
    def from_dict(cls, values):
        unknown = set(values) - set(cls._fields)
        if unknown:
            raise ConfigError('unknown finetune keys: {}'.format(sorted(unknown)))
        config = cls(**values)
        config.validate()
        return config

    @classmethod
    def from_json(cls, file):
        with open(file, "r", encoding="UTF-8") as reader:
            return cls.from_dict(json.load(reader))

    def validate(self):
        if self.negatives < 1:
            raise ConfigError('negatives must be >= 1, got {}'.format(self.negatives))
        if not 0 <= self.eta <= 1:
            raise ConfigError('eta must be in [0, 1], got {}'.format(self.eta))
        if self.phi_lr < 0 or self.psi_base_lr < 0:
            raise ConfigError('learning rates must be >= 0')
        if self.optimizer not in ('sgd', 'adam'):
            raise ConfigError('optimizer must be sgd or adam, got {}'.format(self.optimizer))
        if self.batch_size < 1 or self.phi_steps < 0 or self.psi_steps < 0 or self.chunk_size < 1:
            raise ConfigError('batch_size and chunk_size must be >= 1, phase steps >= 0')


def trainable(module):
    return [p for p in module.parameters() if p.requires_grad]


def _grad(output, params):
    grads = torch.autograd.grad(output, params, allow_unused=True)
    return [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]


def _chunks(samples, size):
    for start in range(0, len(samples), size):
        yield torch.stack(samples[start:start + size])


def _phi_output(model, x):
    with torch.no_grad():
        return model.phi(model.phi_input(x).unsqueeze(0))


def grad_psi_estimate(model, x, r, samples, chunk_size=64):
    """Psi-parameter estimator, one tensor per trainable Psi parameter."""
    if len(samples) == 0:
        raise ValueError('grad_psi_estimate needs at least one negative sample')
    psi = model.feature_network(tuple(r.shape[-2:]))
    params = trainable(psi)
    if not params:
        raise ValueError('feature network has no trainable parameters')
    target = _phi_output(model, x)

    features = psi(r.unsqueeze(0))
    g_data = _grad(((target - features).detach() * features).sum(), params)

    g_neg = [torch.zeros_like(p) for p in params]
    for batch in _chunks(samples, chunk_size):
        features = psi(batch)
        for acc, g in zip(g_neg, _grad(((target - features).detach() * features).sum(), params)):
            acc.add_(g)
    count = len(samples)
    return [-gd + gn / count for gd, gn in zip(g_data, g_neg)]


def grad_phi_estimate(model, x, r, samples, chunk_size=64):
    """Phi-parameter estimator, one tensor per trainable Phi parameter."""
    if len(samples) == 0:
        raise ValueError('grad_phi_estimate needs at least one negative sample')
    psi = model.feature_network(tuple(r.shape[-2:]))
    params = trainable(model.phi)
    with torch.no_grad():
        data_features = psi(r.unsqueeze(0))
        negative = torch.zeros_like(data_features)
        for batch in _chunks(samples, chunk_size):
            negative = negative + psi(batch).sum(0, keepdim=True)
        direction = negative / len(samples) - data_features
    output = model.phi(model.phi_input(x).unsqueeze(0))
    return _grad((direction * output).sum(), params)


def data_energy(model, x, r):
    psi = model.feature_network(tuple(r.shape[-2:]))
    with torch.no_grad():
        return float(((_phi_output(model, x) - psi(r.unsqueeze(0))) ** 2).sum())


def _norm(grads):
    return math.sqrt(sum(float((g ** 2).sum()) for g in grads))


def isoprobability_sampler(inference_cfg):
    """Negatives from gradient-descent sampling around the linear prediction."""

    def sampler(model, x, r, count, seed, sigma):
        cfg = inference_cfg._replace(seed=seed)
        return [s.r for s in sample_isoprobability(model, x, count, sigma, cfg).samples]

    return sampler


class FineTuneResult(NamedTuple):
    model: object
    diagnostics: list


def _dump_state(model, path):
    if path is None:
        return None
    dump_path = os.path.splitext(path)[0] + '.divergence.pt'
    dir_path = os.path.dirname(dump_path)
    if dir_path != '':
        os.makedirs(dir_path, exist_ok=True)
    torch.save({
        'phi': model.phi.state_dict(),
        'psi': model.psi.state_dict(),
    }, dump_path)
    return dump_path


def write_diagnostics_csv(rows, path):
    dir_path = os.path.dirname(path)
    if dir_path != '':
        os.makedirs(dir_path, exist_ok=True)
    with open(path, 'w', newline='', encoding='UTF-8') as writer:
        out = csv.DictWriter(writer, fieldnames=DIAGNOSTIC_FIELDS)
        out.writeheader()
        for row in rows:
            out.writerow(row)
    return path


def finetune(model, dataset, cfg, sampler=None, inference_cfg=None, diagnostics_path=None, progress=False):
    """Alternate Phi-phase and Psi-phase updates over minibatches of (x, r).

    ``sampler(model, x, r, count, seed, sigma)`` returns ``count`` negatives;
    the default descends the energy from perturbed linear predictions.
    """
    cfg.validate()
    if len(dataset) == 0:
        raise ValueError('empty fine-tuning dataset')
    if sampler is None:
        sampler = isoprobability_sampler(inference_cfg if inference_cfg is not None else InferenceConfig())
    psi = model.psi
    phi_params = trainable(model.phi)
    psi_params = trainable(psi)
    phi_optimizer = get_optimizer(phi_params, cfg.optimizer, lr=cfg.phi_lr) if phi_params else None
    psi_optimizer = get_optimizer(psi_params, cfg.optimizer, lr=cfg.psi_base_lr * cfg.eta) if psi_params else None

    rng = np.random.RandomState(cfg.seed)
    diagnostics = []
    previous_gap = None
    flips = 0
    draw = 0
    phases = ['phi'] * cfg.phi_steps + ['psi'] * cfg.psi_steps
    iter_bar = tqdm(range(cfg.steps), desc="finetune : XX.XXXX gap", disable=not progress, mininterval=1)
    for step in iter_bar:
        for phase in phases:
            if phase == 'phi' and phi_optimizer is None or phase == 'psi' and psi_optimizer is None:
                continue
            indices = rng.choice(len(dataset), size=min(cfg.batch_size, len(dataset)), replace=False)
            params = phi_params if phase == 'phi' else psi_params
            total = [torch.zeros_like(p) for p in params]
            data_total = negative_total = 0.
            for index in indices:
                x, r = dataset[int(index)]
                if phase == 'psi' and model.feature_network(tuple(r.shape[-2:])) is not psi:
                    raise ValueError('fine-tuned feature network is tied to its own grid, got {}'.format(tuple(r.shape)))
                negatives = sampler(model, x, r, cfg.negatives, cfg.seed + draw, cfg.sigma_perturb)
                draw += 1
                if phase == 'phi':
                    grads = grad_phi_estimate(model, x, r, negatives, cfg.chunk_size)
                else:
                    grads = grad_psi_estimate(model, x, r, negatives, cfg.chunk_size)
                for acc, g in zip(total, grads):
                    acc.add_(g)
                data_total += data_energy(model, x, r)
                negative_total += sum(data_energy(model, x, n) for n in negatives) / len(negatives)
            grads = [g / len(indices) for g in total]
            norm = _norm(grads)
            row = {
                'step': step,
                'phase': phase,
                'data_energy': data_total / len(indices),
                'negative_energy': negative_total / len(indices),
                'phi_grad_norm': norm if phase == 'phi' else '',
                'psi_grad_norm': norm if phase == 'psi' else '',
            }
            row['energy_gap'] = row['negative_energy'] - row['data_energy']
            diagnostics.append(row)

            gap_sign = math.copysign(1., row['energy_gap'])
            flips = flips + 1 if previous_gap is not None and gap_sign != previous_gap else 0
            previous_gap = gap_sign
            if not math.isfinite(norm) or norm > cfg.grad_norm_limit or not math.isfinite(row['energy_gap']) \
                    or (cfg.max_gap_flips > 0 and flips >= cfg.max_gap_flips):
                dump = _dump_state(model, diagnostics_path)
                if diagnostics_path is not None:
                    write_diagnostics_csv(diagnostics, diagnostics_path)
                raise DivergenceError('fine-tuning diverged at step {} ({} phase)'.format(step, phase),
                                      diagnostics=dict(row, state_dump=dump))

            if not cfg.dry_run:
                optimizer = phi_optimizer if phase == 'phi' else psi_optimizer
                optimizer.zero_grad()
                for p, g in zip(params, grads):
                    p.grad = g.clone()
                optimizer.step()
            iter_bar.set_description("finetune : {:2.4f} gap".format(row['energy_gap']), refresh=False)

    if diagnostics_path is not None:
        write_diagnostics_csv(diagnostics, diagnostics_path)
    return FineTuneResult(model, diagnostics)


class ToyFeatureNetwork(FeatureNetwork):
    """Mean plus smoothed moduli of trainable length-3 circular filters.

    sqrt(z^2 + eps) replaces |z| so the map is differentiable in its
    parameters at every quantised state.
    """

    def __init__(self, kernels=2, eps=1e-2, seed=0):
        super().__init__()
        generator = make_generator(seed)
        self.kernels = nn.Parameter(torch.randn((kernels, 3), generator=generator, dtype=DTYPE))
        self.eps = eps

    def forward(self, r):
        neighbours = torch.stack([torch.roll(r, 1, dims=-1), r, torch.roll(r, -1, dims=-1)], dim=-1)
        z = torch.einsum('bnj,kj->bkn', neighbours, self.kernels)
        return torch.cat([r.mean(-1, keepdim=True), torch.sqrt(z ** 2 + self.eps).mean(-1)], dim=-1)

    def features(self, r):
        if r.dim() == 1:
            return self(r.unsqueeze(0))[0]
        return self(r)

    def output_shape(self, *size):
        return (1 + self.kernels.shape[0],)


class ToyGibbsOracle(object):
    """Conditional Gibbs model on n-sample signals over a small alphabet.

    All |alphabet|^n states are enumerated, so the partition function, the
    negative log-likelihood, its gradient and exact samples are available.
    Phi is affine in the conditioning vector x.
    """

    def __init__(self, n=6, alphabet=(-1., 0., 1.), x_dim=2, kernels=2, eps=1e-2, seed=0):
        if n > 10 or len(alphabet) > 3:
            raise ValueError('toy oracle supports n <= 10 and at most 3 values, got n={} and {}'.format(
                n, len(alphabet)))
        self.n = n
        self.alphabet = tuple(alphabet)
        self.states = torch.cartesian_prod(*[torch.tensor(self.alphabet, dtype=DTYPE)] * n).reshape(-1, n)
        self.psi = ToyFeatureNetwork(kernels, eps, seed)
        self.phi = nn.Linear(x_dim, 1 + kernels).to(DTYPE)
        generator = make_generator(seed + 1)
        with torch.no_grad():
            self.phi.weight.copy_(torch.randn(self.phi.weight.shape, generator=generator, dtype=DTYPE))
            self.phi.bias.copy_(torch.randn(self.phi.bias.shape, generator=generator, dtype=DTYPE))

    def phi_input(self, x):
        return x

    def feature_network(self, size=None):
        return self.psi

    def energies(self, x):
        target = self.phi(x.unsqueeze(0))
        return ((target - self.psi(self.states)) ** 2).sum(-1)

    def log_partition(self, x):
        return torch.logsumexp(-self.energies(x), dim=0)

    def probabilities(self, x):
        with torch.no_grad():
            return torch.softmax(-self.energies(x), dim=0)

    def nll(self, data):
        """Mean of E(r | x) + log Z(x) over (x, r) pairs."""
        total = 0.
        for x, r in data:
            energy = ((self.phi(x.unsqueeze(0)) - self.psi(r.unsqueeze(0))) ** 2).sum()
            total = total + energy + self.log_partition(x)
        return total / len(data)

    def exact_half_gradients(self, data):
        """(Phi grads, Psi grads) of nll / 2."""
        half = 0.5 * self.nll(data)
        phi_params, psi_params = trainable(self.phi), trainable(self.psi)
        grads = _grad(half, phi_params + psi_params)
        return grads[:len(phi_params)], grads[len(phi_params):]

    def sample(self, x, count, seed=0):
        index = torch.multinomial(self.probabilities(x), count, replacement=True,
                                  generator=make_generator(seed))
        return [self.states[i].clone() for i in index]

    def sampler(self, model, x, r, count, seed, sigma=None):
        return self.sample(x, count, seed)
