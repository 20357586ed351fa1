import math
import os
import tempfile
import unittest

import torch

from mpsr.metrics import (
    psnr, mse, relative_error, shift_image, gaussian_blur, high_band_fraction, stability_curve,
    write_stability_csv, read_stability_csv, format_table, StabilityConfig, StabilityCurve,
)
from mpsr.scattering import Scattering, ScatteringConfig
from mpsr.utils import ConfigError
from images import dead_leaves, random_image


class QualityTestCase(unittest.TestCase):

    def test_psnr(self):
        a = random_image((1, 8, 8))
        self.assertEqual(math.inf, psnr(a, a.clone()))
        zeros = torch.zeros((1, 8, 8), dtype=torch.float64)
        self.assertAlmostEqual(0., psnr(zeros, torch.ones_like(zeros)))
        self.assertAlmostEqual(20., psnr(zeros, torch.full_like(zeros, 0.1)))
        with self.assertRaises(ValueError):
            psnr(a, a, peak=0)

    def test_mse_shape(self):
        with self.assertRaises(ValueError):
            mse(torch.zeros((1, 4, 4)), torch.zeros((1, 4, 5)))

    def test_relative_error(self):
        a = random_image((1, 8, 8), seed=1)
        self.assertEqual(0., relative_error(a, a.clone()))
        self.assertAlmostEqual(1., relative_error(a, torch.zeros_like(a)))
        self.assertAlmostEqual(2., relative_error(a, -a))
        zeros = torch.zeros_like(a)
        self.assertEqual(0., relative_error(zeros, zeros))
        with self.assertRaises(ValueError):
            relative_error(zeros, a)


class DegradationTestCase(unittest.TestCase):

    def test_shift(self):
        a = random_image((1, 8, 8), seed=2)
        self.assertTrue(torch.equal(a, shift_image(a, 0)))
        self.assertTrue(torch.equal(a, shift_image(a, 8)))
        self.assertTrue(torch.equal(a[..., 0], shift_image(a, 1)[..., 1]))
        self.assertTrue(torch.equal(a[..., 0, :], shift_image(a, 1, axis=-2)[..., 1, :]))
        with self.assertRaises(ValueError):
            shift_image(a, 1, axis=0)

    def test_blur(self):
        a = random_image((1, 16, 16), seed=3)
        self.assertTrue(torch.equal(a, gaussian_blur(a, 0.)))
        self.assertLess(float((a - gaussian_blur(a, 1e-4)).abs().max()), 1e-6)
        blurred = gaussian_blur(a, 2.)
        self.assertAlmostEqual(float(a.mean()), float(blurred.mean()))
        self.assertLess(float(blurred.std()), float(a.std()))
        with self.assertRaises(ValueError):
            gaussian_blur(a, -1.)

    def test_high_band_fraction(self):
        self.assertAlmostEqual(0., high_band_fraction(torch.ones((1, 16, 16), dtype=torch.float64), 4))
        n = torch.arange(16, dtype=torch.float64)
        alternating = torch.cos(math.pi * n).expand(16, 16).unsqueeze(0)
        self.assertAlmostEqual(1., high_band_fraction(alternating, 4))


class StabilityTestCase(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.images = [dead_leaves(64, seed=s) for s in range(10)]
        cls.psi = Scattering(ScatteringConfig(oversampling=1), (64, 64))

    def test_zero_severity(self):
        curve = stability_curve(self.images[:2], self.psi, 'shift', [0])
        self.assertEqual([0.], curve.pixel_rel_err)
        self.assertEqual([0.], curve.feature_rel_err)

    def test_shift_features_more_stable_than_pixels(self):
        curve = stability_curve(self.images, self.psi, 'shift', [1, 2, 3, 4])
        self.assertEqual(10, curve.n_images)
        for pixel, feature in zip(curve.pixel_rel_err, curve.feature_rel_err):
            self.assertLess(feature, pixel)

    def test_blur_features_less_stable_than_pixels(self):
        curve = stability_curve(self.images, self.psi, 'blur', [0.5, 1.0, 1.5, 2.0])
        for pixel, feature in zip(curve.pixel_rel_err, curve.feature_rel_err):
            self.assertGreater(feature, pixel)

    def test_threads_match(self):
        sequential = stability_curve(self.images[:2], self.psi, 'shift', [1, 2])
        parallel = stability_curve(self.images[:2], self.psi, 'shift', [1, 2], threads=2)
        self.assertEqual(sequential, parallel)

    def test_invalid(self):
        with self.assertRaises(ValueError):
            stability_curve([], self.psi, 'shift', [1])
        with self.assertRaises(ValueError):
            stability_curve(self.images[:1], self.psi, 'rotate', [1])
        with self.assertRaises(ConfigError):
            StabilityConfig.from_dict({'axis': 0})
        with self.assertRaises(ConfigError):
            StabilityConfig.from_dict({'angles': [1]})


class TableTestCase(unittest.TestCase):

    def test_csv_and_table(self):
        curves = [StabilityCurve('shift', [1, 2], [0.5, 0.7], [0.1, 0.2], 3),
                  StabilityCurve('blur', [0.5], [0.05], [0.3], 3)]
        with tempfile.TemporaryDirectory() as tmp:
            path = write_stability_csv(curves, os.path.join(tmp, 'out', 'stability.csv'))
            rows = read_stability_csv(path)
        self.assertEqual(3, len(rows))
        self.assertEqual('shift', rows[0]['kind'])
        self.assertEqual(0.7, rows[1]['pixel_rel_err'])
        self.assertEqual(0.3, rows[2]['feature_rel_err'])
        self.assertEqual(3, rows[2]['n_images'])
        table = format_table(curves).splitlines()
        self.assertEqual(4, len(table))
        self.assertTrue(table[0].startswith('kind'))


if __name__ == '__main__':
    unittest.main()
