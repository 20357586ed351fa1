import os
import tempfile
import unittest

import torch

from mpsr.dataset.patch_dataset import DatasetManifest, PatchDataset, extract_patches
from mpsr.degradation import DegradationModel
from mpsr.metrics import psnr
from mpsr.models.predictor import LayerSpec, PredictorNetwork
from mpsr.optimization import get_optimizer, get_scheduler, get_step
from mpsr.scattering import Scattering, ScatteringConfig
from mpsr.training import TrainConfig, train, moving_average
from mpsr.utils import ConfigError, DivergenceError
from images import dead_leaves

PHI_SPECS = [
    LayerSpec('convolution', 8, (3, 3), 1, 'relu'),
    LayerSpec('downsample', stride=2),
    LayerSpec('convolution', 8, (3, 3), 1, 'relu'),
    LayerSpec('downsample', stride=2),
    LayerSpec('linear-output', 27, (1, 1)),
]
BASELINE_SPECS = [
    LayerSpec('convolution', 4, (3, 3), 1, 'relu'),
    LayerSpec('linear-output', 1, (1, 1)),
]


class TrainingTestCase(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.model = DegradationModel(factor=2)
        cls.scattering = ScatteringConfig(J=2, L=4)
        manifest = DatasetManifest([], patch_size=16, patches_per_image=2, seed=0)
        images = [dead_leaves(32, seed=s, rmax=8., count=80) for s in range(4)]
        cls.triples = extract_patches(manifest, cls.model, cls.scattering, images=images)
        cls.psi = Scattering(cls.scattering, (16, 16))

    def test_feature_loss_decreases(self):
        dataset = PatchDataset(self.triples, self.model, mode='feature')
        self.assertEqual(8, len(dataset))
        cfg = TrainConfig(batch_size=8, steps=200, lr=1e-2)
        net, trace, _ = train(PredictorNetwork(PHI_SPECS, seed=0), dataset, self.psi, cfg)
        self.assertEqual(200, len(trace))
        self.assertLess(sum(trace[-10:]) / 10, sum(trace[:10]) / 10)

    def test_pixel_loss_decreases(self):
        dataset = PatchDataset(self.triples, self.model, mode='pixel')
        cfg = TrainConfig(mode='pixel', batch_size=4, steps=100, lr=1e-3)
        net = PredictorNetwork(BASELINE_SPECS, residual_skip=True, seed=0)
        _, trace, _ = train(net, dataset, None, cfg)
        self.assertLess(sum(trace[-10:]) / 10, sum(trace[:10]) / 10)

    def test_zero_learning_rate(self):
        dataset = PatchDataset(self.triples, self.model, mode='feature')
        net = PredictorNetwork(PHI_SPECS, seed=1)
        before = [p.detach().clone() for p in net.parameters()]
        train(net, dataset, self.psi, TrainConfig(batch_size=2, steps=5, lr=0.))
        for a, b in zip(before, net.parameters()):
            self.assertTrue(torch.equal(a, b))

    def test_deterministic_trace(self):
        dataset = PatchDataset(self.triples, self.model, mode='feature')
        cfg = TrainConfig(batch_size=2, steps=6, lr=1e-3, seed=5)
        _, first, _ = train(PredictorNetwork(PHI_SPECS, seed=2), dataset, self.psi, cfg)
        _, second, _ = train(PredictorNetwork(PHI_SPECS, seed=2), dataset, self.psi, cfg)
        self.assertEqual(first, second)

    def test_divergence(self):
        dataset = PatchDataset(self.triples, self.model, mode='feature')
        cfg = TrainConfig(batch_size=2, steps=3, divergence_threshold=1e-12)
        with self.assertRaises(DivergenceError):
            train(PredictorNetwork(PHI_SPECS, seed=0), dataset, self.psi, cfg)

    def test_feature_mode_needs_psi(self):
        dataset = PatchDataset(self.triples, self.model, mode='feature')
        with self.assertRaises(ValueError):
            train(PredictorNetwork(PHI_SPECS), dataset, None, TrainConfig(steps=1))

    def test_checkpoint_written(self):
        dataset = PatchDataset(self.triples, self.model, mode='feature')
        with tempfile.TemporaryDirectory() as tmp:
            train(PredictorNetwork(PHI_SPECS), dataset, self.psi, TrainConfig(batch_size=2, steps=2), save_dir=tmp)
            self.assertTrue(os.path.isfile(os.path.join(tmp, 'train_model.pt')))

    def test_config_validation(self):
        with self.assertRaises(ConfigError):
            TrainConfig.from_dict({'mode': 'latent'})
        with self.assertRaises(ConfigError):
            TrainConfig.from_dict({'lr': -1.})
        with self.assertRaises(ConfigError):
            TrainConfig.from_dict({'epochs': 3})

    def test_moving_average(self):
        self.assertEqual([1.5, 2.5], list(moving_average([1., 2., 3.], window=2)))


class OverfitTestCase(unittest.TestCase):
    """Eight 16x16 dead-leaves patches at factor 2."""

    @classmethod
    def setUpClass(cls):
        cls.model = DegradationModel(factor=2)
        cls.scattering = ScatteringConfig(J=2, L=4)
        manifest = DatasetManifest([], patch_size=16, patches_per_image=2, seed=1)
        images = [dead_leaves(32, seed=10 + s, rmax=8., count=80) for s in range(4)]
        cls.triples = extract_patches(manifest, cls.model, cls.scattering, images=images)

    def test_phi_fits_training_features(self):
        psi = Scattering(self.scattering, (16, 16))
        dataset = PatchDataset(self.triples, self.model, mode='feature')
        self.assertEqual(8, len(dataset))
        specs = [
            LayerSpec('convolution', 32, (3, 3), 1, 'relu'),
            LayerSpec('downsample', stride=2),
            LayerSpec('convolution', 32, (3, 3), 1, 'relu'),
            LayerSpec('downsample', stride=2),
            LayerSpec('linear-output', 27, (1, 1)),
        ]
        cfg = TrainConfig(batch_size=8, steps=2000, lr=3e-3)
        _, trace, _ = train(PredictorNetwork(specs, seed=0), dataset, psi, cfg)
        self.assertLess(sum(trace[-10:]) / 10, 0.1 * trace[0])
        averages = list(moving_average(trace, window=50)[::50])
        for previous, current in zip(averages, averages[1:]):
            self.assertLessEqual(current, previous * 1.05)

    def test_pixel_baseline_beats_bicubic(self):
        dataset = PatchDataset(self.triples, self.model, mode='pixel')
        specs = [
            LayerSpec('convolution', 16, (3, 3), 1, 'relu'),
            LayerSpec('convolution', 16, (3, 3), 1, 'relu'),
            LayerSpec('linear-output', 1, (3, 3)),
        ]
        cfg = TrainConfig(mode='pixel', batch_size=8, steps=1500, lr=1e-3)
        net, _, _ = train(PredictorNetwork(specs, residual_skip=True, seed=0), dataset, None, cfg)
        upsampled = torch.stack([dataset[i][0] for i in range(len(dataset))])
        truth = torch.stack([dataset[i][1] for i in range(len(dataset))])
        with torch.no_grad():
            predicted = net(upsampled)
        self.assertGreater(psnr(predicted, truth), psnr(upsampled, truth) + 1.)


class OptimizationTestCase(unittest.TestCase):

    def test_adam_step_count(self):
        weight = torch.nn.Parameter(torch.ones(3, dtype=torch.float64))
        optimizer = get_optimizer([weight], 'adam', lr=0.1)
        for _ in range(3):
            optimizer.zero_grad()
            (weight ** 2).sum().backward()
            optimizer.step()
        self.assertEqual(3, get_step(optimizer))
        self.assertLess(float(weight.max()), 1.)
        self.assertIsInstance(optimizer, torch.optim.Adam)
        self.assertIsInstance(get_optimizer(torch.nn.Linear(2, 1), 'sgd'), torch.optim.SGD)
        self.assertEqual(0, get_step(get_optimizer([weight], 'adam')))

    def test_sgd_update(self):
        weight = torch.nn.Parameter(torch.ones(2, dtype=torch.float64))
        optimizer = get_optimizer([weight], 'sgd', lr=0.5)
        weight.grad = torch.ones(2, dtype=torch.float64)
        optimizer.step()
        self.assertTrue(torch.equal(weight.detach(), torch.full((2,), 0.5, dtype=torch.float64)))

    def test_warmup_schedule(self):
        weight = torch.nn.Parameter(torch.ones(1, dtype=torch.float64))
        optimizer = get_optimizer([weight], 'sgd', lr=1.)
        scheduler = get_scheduler(optimizer, 'warmup_linear', warmup_steps=2, max_steps=4)
        self.assertEqual(0., optimizer.param_groups[0]['lr'])
        scheduler.step()
        self.assertEqual(0.5, optimizer.param_groups[0]['lr'])

    def test_invalid(self):
        with self.assertRaises(ValueError):
            get_optimizer([torch.nn.Parameter(torch.ones(1))], 'rmsprop')
        with self.assertRaises(ValueError):
            get_optimizer([torch.nn.Parameter(torch.ones(1))], 'adam', lr=-1.)


if __name__ == '__main__':
    unittest.main()
