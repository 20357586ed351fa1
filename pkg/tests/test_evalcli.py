import contextlib
import io
import json
import os
import tempfile
import unittest

import numpy as np
import torch

from mpsr.config import RunConfig
from mpsr.dataset.image_io import save_image, load_image
from mpsr.dataset.patch_dataset import DatasetManifest
from mpsr.evalcli import (
    main, cmd_scatter, cmd_train, cmd_super_resolve, cmd_synthesize, cmd_finetune, cmd_eval_stability,
)
from mpsr.metrics import read_stability_csv
from mpsr.models.predictor import save_predictor
from mpsr.utils import load, file_sha256
from images import dead_leaves

CONFIG_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'config')
DEFAULT_CONFIG = os.path.join(CONFIG_DIR, 'gibbs_sr.json')
TINY_CONFIG = os.path.join(CONFIG_DIR, 'gibbs_sr_tiny.json')


def _quiet(function, *args, **kwargs):
    with contextlib.redirect_stdout(io.StringIO()):
        return function(*args, **kwargs)


class MainTestCase(unittest.TestCase):

    def _main(self, argv):
        stderr = io.StringIO()
        with contextlib.redirect_stdout(io.StringIO()), contextlib.redirect_stderr(stderr):
            code = main(argv)
        return code, stderr.getvalue()

    def test_config_error(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'bad.json')
            with open(path, 'w', encoding='UTF-8') as writer:
                json.dump({'schema_version': 1, 'scattering': {'Q': 1}}, writer)
            code, stderr = self._main(['scatter', 'image.npy', '--config', path])
        self.assertEqual(3, code)
        self.assertIn('mpsr-error\tkind=config\tcommand=scatter\tmessage=', stderr)

    def test_io_error(self):
        with tempfile.TemporaryDirectory() as tmp:
            code, stderr = self._main(['scatter', 'image.npy', '--config', os.path.join(tmp, 'none.json')])
        self.assertEqual(5, code)
        self.assertIn('kind=io', stderr)

    def test_usage(self):
        self.assertEqual(2, self._main(['upscale'])[0])
        self.assertEqual(2, self._main([])[0])
        self.assertEqual(0, self._main(['--help'])[0])

    def test_non_finite_image(self):
        with tempfile.TemporaryDirectory() as tmp:
            data = np.zeros((1, 16, 16))
            data[0, 3, 5] = np.nan
            image = os.path.join(tmp, 'nan.npy')
            np.save(image, data)
            code, stderr = self._main(['scatter', image, '--config', TINY_CONFIG])
        self.assertEqual(6, code)
        self.assertIn('mpsr-error\tkind=non-finite\tcommand=scatter\tmessage=', stderr)

    def test_calibration_checked_before_image(self):
        values = RunConfig.from_json(DEFAULT_CONFIG).to_dict()
        values['scattering']['tv_cascade'] = False
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'no_cascade.json')
            with open(path, 'w', encoding='UTF-8') as writer:
                json.dump(values, writer)
            code, stderr = self._main(['scatter', os.path.join(tmp, 'missing.npy'), '--config', path])
        self.assertEqual(3, code)
        self.assertIn('channel calibration failed', stderr)

    def test_scatter_through_main(self):
        with tempfile.TemporaryDirectory() as tmp:
            image = save_image(dead_leaves(16, seed=0), os.path.join(tmp, 'img.npy'))
            output = os.path.join(tmp, 'coefficients.pt')
            code, _ = self._main(['scatter', image, '--config', TINY_CONFIG, '--output', output])
            self.assertEqual(0, code)
            self.assertTrue(os.path.isfile(output))


class CommandTestCase(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.tiny = RunConfig.from_json(TINY_CONFIG)

    def tearDown(self):
        self.tmp.cleanup()

    def path(self, name):
        return os.path.join(self.tmp.name, name)

    def _manifest(self, count=2, size=32):
        paths = [save_image(dead_leaves(size, seed=s, rmax=8., count=80), self.path('img{}.npy'.format(s)))
                 for s in range(count)]
        return DatasetManifest.build(paths, patch_size=16).save(self.path('manifest.json'))

    def _checkpoint(self, config, name='phi.pt'):
        return save_predictor(config.predictor.build_phi(config.scattering), self.path(name),
                              scattering_cfg=config.scattering)

    def test_scatter_default_config(self):
        config = RunConfig.from_json(DEFAULT_CONFIG)
        image = save_image(dead_leaves(64, seed=1), self.path('img.npy'))
        summary = _quiet(cmd_scatter, image, config, self.path('coefficients.pt'))
        self.assertEqual(219, summary['channels'])
        self.assertEqual([16, 16], summary['grid'])
        self.assertEqual(219, summary['calibration']['channels'])

    def test_train(self):
        manifest = self._manifest()
        summary = _quiet(cmd_train, manifest, self.tiny, self.path('phi.pt'))
        self.assertEqual('feature', summary['mode'])
        self.assertEqual(4, summary['samples'])
        checkpoint = load(self.path('phi.pt'))
        self.assertEqual(self.tiny.scattering.fingerprint(), checkpoint['scattering_fingerprint'])
        pixel = _quiet(cmd_train, manifest, self.tiny, self.path('baseline.pt'), mode='pixel')
        self.assertEqual('pixel', pixel['mode'])

    def test_super_resolve_factor_three(self):
        values = self.tiny.to_dict()
        values['degradation']['factor'] = 3
        config = RunConfig.from_dict(values)
        checkpoint = self._checkpoint(config)
        image = save_image(dead_leaves(32, seed=2), self.path('low.npy'))
        summary = _quiet(cmd_super_resolve, image, checkpoint, config, self.path('high.npy'),
                         trace=self.path('trace.csv'), residual_output=self.path('residual.png'))
        self.assertEqual([1, 96, 96], summary['output'])
        self.assertEqual((1, 96, 96), tuple(load_image(self.path('high.npy')).shape))
        self.assertTrue(os.path.isfile(self.path('trace.csv')))
        self.assertTrue(os.path.isfile(self.path('residual.png')))

    def test_super_resolve_reruns_byte_identical(self):
        values = self.tiny.to_dict()
        values['inference']['init'] = 'perturbed'
        config = RunConfig.from_dict(values)
        checkpoint = self._checkpoint(config)
        image = save_image(dead_leaves(8, seed=5), self.path('low.npy'))
        _quiet(cmd_super_resolve, image, checkpoint, config, self.path('first.npy'), trace=self.path('first.csv'))
        _quiet(cmd_super_resolve, image, checkpoint, config, self.path('second.npy'), trace=self.path('second.csv'))
        self.assertEqual(file_sha256(self.path('first.npy')), file_sha256(self.path('second.npy')))
        self.assertEqual(file_sha256(self.path('first.csv')), file_sha256(self.path('second.csv')))

    def test_point_estimate_must_be_feature_checkpoint(self):
        baseline = save_predictor(self.tiny.predictor.build_baseline(), self.path('baseline.pt'), mode='pixel')
        image = save_image(dead_leaves(8, seed=3), self.path('low.npy'))
        with self.assertRaises(ValueError):
            _quiet(cmd_super_resolve, image, baseline, self.tiny, self.path('high.npy'))

    def test_synthesize(self):
        image = save_image(dead_leaves(16, seed=4), self.path('texture.npy'))
        summary = _quiet(cmd_synthesize, image, self.tiny, self.path('synth.npy'), trace=self.path('synth.csv'))
        self.assertEqual([16, 16], summary['size'])
        self.assertEqual((1, 16, 16), tuple(load_image(self.path('synth.npy')).shape))
        _quiet(cmd_scatter, image, self.tiny, self.path('texture.pt'))
        summary = _quiet(cmd_synthesize, self.path('texture.pt'), self.tiny, self.path('synth2.npy'))
        self.assertEqual([16, 16], summary['size'])

    def test_finetune_then_super_resolve(self):
        manifest = self._manifest()
        checkpoint = self._checkpoint(self.tiny)
        summary = _quiet(cmd_finetune, checkpoint, manifest, self.tiny, self.path('tuned.pt'),
                         diagnostics=self.path('diagnostics.csv'))
        self.assertEqual(2, summary['records'])
        self.assertTrue(os.path.isfile(self.path('diagnostics.csv')))
        tuned = load(self.path('tuned.pt'))
        self.assertEqual([16, 16], tuned['psi_size'])
        image = save_image(dead_leaves(16, seed=5), self.path('low.npy'))
        result = _quiet(cmd_super_resolve, image, self.path('tuned.pt'), self.tiny, self.path('high.npy'))
        self.assertEqual([1, 32, 32], result['output'])

    def test_eval_stability(self):
        config = RunConfig.from_json(DEFAULT_CONFIG)
        folder = self.path('images')
        for seed in range(10):
            save_image(dead_leaves(64, seed=seed), os.path.join(folder, 'img{:02d}.npy'.format(seed)))
        _quiet(cmd_eval_stability, folder, config, self.path('stability.csv'))
        rows = read_stability_csv(self.path('stability.csv'))
        self.assertEqual(8, len(rows))
        shifts = [row for row in rows if row['kind'] == 'shift']
        self.assertEqual(4, len(shifts))
        for row in shifts:
            self.assertEqual(10, row['n_images'])
            self.assertLess(row['feature_rel_err'], row['pixel_rel_err'])

    def test_eval_stability_in_memory(self):
        images = [dead_leaves(24, seed=s) for s in range(3)]
        curves = _quiet(cmd_eval_stability, 'unused', self.tiny, self.path('tiny.csv'), images=images)
        self.assertEqual(['shift', 'blur'], [c.kind for c in curves])
        self.assertEqual(2, curves[0].n_images)


if __name__ == '__main__':
    unittest.main()
