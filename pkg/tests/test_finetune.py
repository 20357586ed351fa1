import csv
import os
import tempfile
import unittest

import torch

from mpsr.degradation import DegradationModel, downsample, residual
from mpsr.finetune import (
    FineTuneConfig, DIAGNOSTIC_FIELDS, ToyGibbsOracle, grad_psi_estimate, grad_phi_estimate, finetune,
)
from mpsr.inference import GibbsModel, InferenceConfig
from mpsr.models.predictor import LayerSpec, PredictorNetwork
from mpsr.numerics import DTYPE
from mpsr.scattering import Scattering, ScatteringConfig
from mpsr.utils import ConfigError, DivergenceError
from images import dead_leaves


def _relative(estimate, exact):
    difference = sum(float(((a - b) ** 2).sum()) for a, b in zip(estimate, exact)) ** 0.5
    norm = sum(float((b ** 2).sum()) for b in exact) ** 0.5
    return difference / norm


def _toy_data(count=4, seed=0):
    generator = torch.Generator().manual_seed(seed)
    source = ToyGibbsOracle(seed=seed + 7)
    data = []
    for i in range(count):
        x = torch.randn(2, generator=generator, dtype=DTYPE)
        data.append((x, source.sample(x, 1, seed=i)[0]))
    return data


class EstimatorTestCase(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.oracle = ToyGibbsOracle(n=6, seed=0)
        cls.x = torch.tensor([0.5, -1.0], dtype=DTYPE)
        with torch.no_grad():
            cls.r = cls.oracle.states[int(torch.argmax(cls.oracle.energies(cls.x)))].clone()

    def test_cancellation(self):
        for g in grad_psi_estimate(self.oracle, self.x, self.r, [self.r]):
            self.assertTrue(torch.equal(g, torch.zeros_like(g)))
        for g in grad_phi_estimate(self.oracle, self.x, self.r, [self.r]):
            self.assertTrue(torch.equal(g, torch.zeros_like(g)))

    def test_matches_enumerated_gradient(self):
        exact_phi, exact_psi = self.oracle.exact_half_gradients([(self.x, self.r)])
        samples = self.oracle.sample(self.x, 10000, seed=1)
        estimate_psi = grad_psi_estimate(self.oracle, self.x, self.r, samples, chunk_size=2048)
        estimate_phi = grad_phi_estimate(self.oracle, self.x, self.r, samples, chunk_size=2048)
        self.assertLess(_relative(estimate_psi, exact_psi), 0.05)
        self.assertLess(_relative(estimate_phi, exact_phi), 0.05)

    def test_probabilities(self):
        probabilities = self.oracle.probabilities(self.x)
        self.assertEqual(3 ** 6, len(probabilities))
        self.assertAlmostEqual(1., float(probabilities.sum()))

    def test_single_draw_estimator_unbiased(self):
        exact_phi, exact_psi = self.oracle.exact_half_gradients([(self.x, self.r)])
        draws = self.oracle.sample(self.x, 10000, seed=3)
        mean_psi = [torch.zeros_like(g) for g in exact_psi]
        mean_phi = [torch.zeros_like(g) for g in exact_phi]
        for sample in draws:
            for acc, g in zip(mean_psi, grad_psi_estimate(self.oracle, self.x, self.r, [sample])):
                acc.add_(g / len(draws))
            for acc, g in zip(mean_phi, grad_phi_estimate(self.oracle, self.x, self.r, [sample])):
                acc.add_(g / len(draws))
        self.assertLess(_relative(mean_psi, exact_psi), 0.05)
        self.assertLess(_relative(mean_phi, exact_phi), 0.05)

    def test_phi_direction_lowers_nll(self):
        oracle = ToyGibbsOracle(n=6, seed=2)
        data = _toy_data(count=4, seed=2)
        params = list(oracle.phi.parameters())
        total = [torch.zeros_like(p) for p in params]
        for i, (x, r) in enumerate(data):
            for acc, g in zip(total, grad_phi_estimate(oracle, x, r, oracle.sample(x, 2000, seed=10 + i))):
                acc.add_(g / len(data))
        with torch.no_grad():
            before = float(oracle.nll(data))
            for p, g in zip(params, total):
                p.sub_(1e-3 * g)
            after = float(oracle.nll(data))
        self.assertLess(after, before)

    def test_needs_samples(self):
        with self.assertRaises(ValueError):
            grad_psi_estimate(self.oracle, self.x, self.r, [])
        with self.assertRaises(ValueError):
            grad_phi_estimate(self.oracle, self.x, self.r, [])


class ToyFineTuneTestCase(unittest.TestCase):

    def test_nll_decreases(self):
        oracle = ToyGibbsOracle(seed=0)
        data = _toy_data()
        with torch.no_grad():
            before = float(oracle.nll(data))
        cfg = FineTuneConfig(steps=200, batch_size=4, negatives=8, eta=1., phi_lr=0.02, psi_base_lr=0.02)
        result = finetune(oracle, data, cfg, sampler=oracle.sampler)
        with torch.no_grad():
            after = float(oracle.nll(data))
        self.assertLess(after, before)
        self.assertEqual(400, len(result.diagnostics))

    def test_psi_update_linear_in_eta(self):
        deltas = []
        for eta in (0.1, 0.2):
            oracle = ToyGibbsOracle(seed=4)
            before = [p.detach().clone() for p in oracle.psi.parameters()]
            cfg = FineTuneConfig(steps=1, batch_size=2, eta=eta, phi_lr=0., psi_base_lr=0.5)
            finetune(oracle, _toy_data(), cfg, sampler=oracle.sampler)
            deltas.append([p.detach() - b for p, b in zip(oracle.psi.parameters(), before)])
        for small, large in zip(*deltas):
            self.assertGreater(float(small.abs().max()), 0.)
            self.assertLess(float((large - 2 * small).abs().max()), 1e-12)

    def test_frozen_when_rates_zero(self):
        oracle = ToyGibbsOracle(seed=1)
        before = [p.detach().clone() for p in list(oracle.phi.parameters()) + list(oracle.psi.parameters())]
        cfg = FineTuneConfig(steps=3, batch_size=2, eta=0., phi_lr=0.)
        finetune(oracle, _toy_data(), cfg, sampler=oracle.sampler)
        after = list(oracle.phi.parameters()) + list(oracle.psi.parameters())
        for a, b in zip(before, after):
            self.assertTrue(torch.equal(a, b))

    def test_dry_run(self):
        oracle = ToyGibbsOracle(seed=2)
        before = [p.detach().clone() for p in oracle.psi.parameters()]
        cfg = FineTuneConfig(steps=2, batch_size=2, eta=1., psi_base_lr=1., phi_lr=1., dry_run=True)
        result = finetune(oracle, _toy_data(), cfg, sampler=oracle.sampler)
        self.assertEqual(4, len(result.diagnostics))
        self.assertEqual(['phi', 'psi'], [row['phase'] for row in result.diagnostics[:2]])
        for a, b in zip(before, oracle.psi.parameters()):
            self.assertTrue(torch.equal(a, b))

    def test_divergence_dump(self):
        oracle = ToyGibbsOracle(seed=3)
        cfg = FineTuneConfig(steps=2, batch_size=2, grad_norm_limit=1e-12)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'diagnostics.csv')
            with self.assertRaises(DivergenceError) as context:
                finetune(oracle, _toy_data(), cfg, sampler=oracle.sampler, diagnostics_path=path)
            dump = context.exception.diagnostics['state_dump']
            self.assertTrue(os.path.isfile(dump))
            self.assertTrue(os.path.isfile(path))

    def test_config_validation(self):
        with self.assertRaises(ConfigError):
            FineTuneConfig.from_dict({'eta': 2.})
        with self.assertRaises(ConfigError):
            FineTuneConfig.from_dict({'negatives': 0})
        with self.assertRaises(ConfigError):
            FineTuneConfig.from_dict({'temperature': 1.})


class ImageFineTuneTestCase(unittest.TestCase):

    def test_runs_with_trainable_scattering(self):
        degradation = DegradationModel(factor=2)
        psi = Scattering(ScatteringConfig(J=2, L=4), (16, 16), trainable=True)
        phi = PredictorNetwork([
            LayerSpec('convolution', 4, (3, 3), 1, 'relu'),
            LayerSpec('downsample', stride=2),
            LayerSpec('downsample', stride=2),
            LayerSpec('linear-output', 27, (1, 1)),
        ], seed=0)
        model = GibbsModel(phi, psi, degradation)
        data = []
        for seed in range(2):
            y = dead_leaves(16, seed=seed, rmax=6., count=40)
            x = downsample(y, degradation)
            data.append((x, residual(y, x, degradation)))
        before = psi.psi_weight.detach().clone()
        cfg = FineTuneConfig(steps=2, batch_size=2, eta=0.5, psi_base_lr=1e-2, phi_lr=1e-3)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'diagnostics.csv')
            result = finetune(model, data, cfg, inference_cfg=InferenceConfig(iterations=3), diagnostics_path=path)
            with open(path, newline='', encoding='UTF-8') as reader:
                rows = list(csv.DictReader(reader))
        self.assertEqual(list(DIAGNOSTIC_FIELDS), list(rows[0].keys()))
        self.assertEqual(4, len(result.diagnostics))
        self.assertFalse(torch.equal(before, psi.psi_weight.detach()))

    def test_psi_tied_to_patch_grid(self):
        degradation = DegradationModel(factor=2)
        psi = Scattering(ScatteringConfig(J=2, L=4), (16, 16), trainable=True)
        phi = PredictorNetwork([LayerSpec('downsample', stride=2), LayerSpec('downsample', stride=2),
                                LayerSpec('linear-output', 27, (1, 1))])
        model = GibbsModel(phi, psi, degradation)
        y = dead_leaves(32, seed=0)
        x = downsample(y, degradation)
        cfg = FineTuneConfig(steps=1, batch_size=1, phi_steps=0)
        with self.assertRaises(ValueError):
            finetune(model, [(x, residual(y, x, degradation))], cfg, inference_cfg=InferenceConfig(iterations=2))


if __name__ == '__main__':
    unittest.main()
