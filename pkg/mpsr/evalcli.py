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
"""Command line verbs: scatter, train, super-resolve, synthesize, finetune, eval-stability.

Exit codes: 0 success, 2 usage, 3 configuration, 4 numeric divergence,
5 I/O. Failures print one tab-separated ``mpsr-error`` line on stderr.
"""

import argparse
import json
import logging
import os
import sys

import torch

from .config import RunConfig
from .dataset.image_io import load_image, save_image, list_images, RAW_EXTENSION
from .dataset.patch_dataset import DatasetManifest, PatchDataset, extract_patches
from .degradation import downsample, luminance, residual
from .finetune import finetune
from .inference import GibbsModel, super_resolve, synthesize, write_trace_csv, feature_error
from .metrics import stability_curve, write_stability_csv, format_table
from .models.predictor import load_predictor, save_predictor
from .numerics import DTYPE
from .scattering import Scattering, ScatteringCoefficients, calibration_report, check_calibration, has_reference_geometry
from .training import train
from .utils import ConfigError, DivergenceError, NonFiniteError, Timer, get_logger

logger = logging.getLogger('mpsr')

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_DIVERGENCE = 4
EXIT_IO = 5
EXIT_NON_FINITE = 6


def _print_config(command, config):
    print(json.dumps({'command': command, 'config': config.to_dict()}, indent=2, sort_keys=True))


def _residual_view(r):
    """Residuals shown around mid-grey for raster output."""
    return r + 0.5


def _save_residual(r, path):
    if os.path.splitext(path)[1].lower() == RAW_EXTENSION:
        return save_image(r, path)
    return save_image(_residual_view(r), path)


def _load_psi(cfg, size, checkpoint=None):
    """Fixed Morlet scattering, or the fine-tuned filters stored in a checkpoint."""
    if checkpoint is not None and checkpoint.get('psi_state') is not None:
        trained_size = tuple(checkpoint['psi_size'])
        psi = Scattering(cfg, trained_size, trainable=True)
        psi.load_state_dict(checkpoint['psi_state'])
        return psi.for_size(size)
    return Scattering(cfg, size)


def cmd_scatter(image, config, output=None):
    """Psi of an image's luminance; returns the summary (channels, per-order energy)."""
    if has_reference_geometry(config.scattering):
        check_calibration(config.scattering)
    img = luminance(load_image(image))
    psi = Scattering(config.scattering, tuple(img.shape[-2:]))
    with torch.no_grad():
        coefficients = ScatteringCoefficients(psi.paths, psi.features(img), config.scattering)
    if output is not None:
        coefficients.save(output)
    summary = coefficients.summary()
    summary['calibration'] = calibration_report(config.scattering)
    print(json.dumps(summary, sort_keys=True))
    return summary


def cmd_train(manifest, config, output, mode='feature'):
    """Train Phi (feature regression) or the pixel baseline; writes a checkpoint."""
    train_cfg = config.train._replace(mode=mode)
    manifest = DatasetManifest.load(manifest)
    if manifest.patch_size != train_cfg.patch_size:
        manifest.patch_size = train_cfg.patch_size
    triples = extract_patches(manifest, config.degradation, config.scattering)
    dataset = PatchDataset(triples, config.degradation, mode=mode)
    size = (train_cfg.patch_size, train_cfg.patch_size)
    if mode == 'feature':
        psi = Scattering(config.scattering, size)
        net = config.predictor.build_phi(config.scattering, size=size)
    else:
        psi = None
        net = config.predictor.build_baseline()
    logger.info('{} network, {} parameters, {} samples'.format(mode, net.parameter_count(), len(dataset)))
    net, trace, optimizer = train(net, dataset, psi, train_cfg)
    save_predictor(net, output, scattering_cfg=config.scattering if mode == 'feature' else None,
                   optimizer=optimizer, mode=mode, trace=trace, train_config=train_cfg._asdict())
    summary = {'mode': mode, 'samples': len(dataset), 'steps': len(trace),
               'initial_loss': trace[0] if trace else None, 'final_loss': trace[-1] if trace else None}
    print(json.dumps(summary, sort_keys=True))
    return summary


def _build_model(checkpoint_path, config, size, point_estimate=None):
    phi, checkpoint = load_predictor(checkpoint_path, expected_scattering=config.scattering)
    if checkpoint.get('mode') != 'feature':
        raise ConfigError('super-resolution needs a feature-regression checkpoint, got {}'.format(
            checkpoint.get('mode')))
    phi.eval()
    baseline = None
    if point_estimate is not None:
        baseline, _ = load_predictor(point_estimate)
        baseline.eval()
    psi = _load_psi(config.scattering, size, checkpoint)
    return GibbsModel(phi, psi, config.degradation, lambda_tv=config.inference.lambda_tv,
                      point_estimate=baseline), checkpoint


def cmd_super_resolve(image, checkpoint, config, output, trace=None, residual_output=None, point_estimate=None):
    """Upscale a low-resolution image; optional energy trace CSV and residual image."""
    x = load_image(image)
    alpha = config.degradation.factor
    size = (x.shape[-2] * alpha, x.shape[-1] * alpha)
    model, _ = _build_model(checkpoint, config, size, point_estimate)
    result = super_resolve(model, x, config.inference, progress=True)
    save_image(result.image if os.path.splitext(output)[1].lower() == RAW_EXTENSION else result.display, output)
    if trace is not None:
        write_trace_csv(result.samples[0].trace, trace)
    if residual_output is not None:
        _save_residual(result.residual, residual_output)
    summary = {'input': list(x.shape), 'output': list(result.image.shape),
               'energies': [s.energy for s in result.samples]}
    print(json.dumps(summary, sort_keys=True))
    return summary


def cmd_synthesize(target, config, output, trace=None):
    """Residual texture matching Psi statistics of a coefficient file or an image's residual."""
    if target.endswith('.pt'):
        coefficients = ScatteringCoefficients.load(target)
        if coefficients.cfg != config.scattering:
            raise ConfigError('coefficients were computed with a different scattering config')
        stride = config.scattering.stride
        size = (coefficients.maps.shape[-2] * stride, coefficients.maps.shape[-1] * stride)
        goal = coefficients.maps
    else:
        img = luminance(load_image(target))
        r0 = residual(img, downsample(img, config.degradation), config.degradation)
        size = tuple(r0.shape[-2:])
        psi = Scattering(config.scattering, size)
        with torch.no_grad():
            goal = psi.features(r0)
    psi = Scattering(config.scattering, size)
    result = synthesize(psi, goal, config.inference, (1,) + tuple(size), progress=True)
    _save_residual(result.r, output)
    if trace is not None:
        write_trace_csv(result.trace, trace)
    initial = result.trace[0][0] ** 0.5
    summary = {'size': list(size), 'initial_feature_error': initial,
               'final_feature_error': feature_error(psi, goal, result.r)}
    print(json.dumps(summary, sort_keys=True))
    return summary


def cmd_finetune(checkpoint, manifest, config, output, diagnostics=None):
    """Alternating fine-tuning of Phi and trainable Psi filters on manifest patches."""
    patch = config.train.patch_size
    size = (patch, patch)
    phi, stored = load_predictor(checkpoint, expected_scattering=config.scattering)
    if stored.get('psi_state') is not None:
        psi = _load_psi(config.scattering, tuple(stored['psi_size']), stored)
        if tuple(stored['psi_size']) != size:
            raise ConfigError('checkpoint Psi was tuned on {} patches, config asks for {}'.format(
                stored['psi_size'], size))
    else:
        psi = Scattering(config.scattering, size, trainable=True)
    model = GibbsModel(phi, psi, config.degradation, lambda_tv=config.inference.lambda_tv)

    corpus = DatasetManifest.load(manifest)
    corpus.patch_size = patch
    triples = extract_patches(corpus, config.degradation._replace(color='luminance'), config.scattering)
    data = [(t.x, t.r) for t in triples]
    result = finetune(model, data, config.finetune, inference_cfg=config.inference,
                      diagnostics_path=diagnostics, progress=True)
    save_predictor(phi, output, scattering_cfg=config.scattering, mode='feature',
                   psi_state=psi.state_dict(), psi_size=list(size),
                   finetune_config=config.finetune._asdict(), parent=os.path.abspath(checkpoint))
    last = result.diagnostics[-1] if result.diagnostics else {}
    summary = {'steps': config.finetune.steps, 'records': len(result.diagnostics),
               'final_energy_gap': last.get('energy_gap')}
    print(json.dumps(summary, sort_keys=True))
    return summary


def _centre_crop(img, crop):
    if crop <= 0:
        return img
    height, width = img.shape[-2:]
    if height < crop or width < crop:
        raise ValueError('image {}x{} smaller than crop {}'.format(height, width, crop))
    top, left = (height - crop) // 2, (width - crop) // 2
    return img[..., top:top + crop, left:left + crop]


def cmd_eval_stability(folder, config, output, images=None):
    """Shift and blur stability curves over an image folder (or in-memory images)."""
    cfg = config.stability
    if images is None:
        paths = list_images(folder)[:cfg.max_images]
        images = [load_image(p) for p in paths]
    images = [_centre_crop(luminance(img), cfg.crop) for img in images[:cfg.max_images]]
    if not images:
        raise ValueError('no images found in {}'.format(folder))
    size = tuple(images[0].shape[-2:])
    if any(tuple(img.shape[-2:]) != size for img in images):
        raise ValueError('stability images must share one size, set stability.crop')
    psi = Scattering(config.scattering, size)
    curves = [
        stability_curve(images, psi, 'shift', cfg.shifts, cfg.renormalized, cfg.center, cfg.axis, cfg.threads),
        stability_curve(images, psi, 'blur', cfg.blurs, cfg.renormalized, cfg.center, cfg.axis, cfg.threads),
    ]
    write_stability_csv(curves, output)
    print(format_table(curves))
    return curves


def build_parser():
    parser = argparse.ArgumentParser(prog='mpsr', description='Conditional Gibbs super-resolution.')
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='Run configuration JSON file.', nargs='?', type=str,
                        default='config/gibbs_sr.json')
    common.add_argument('--seed', help='Override every seed in the configuration.', nargs='?', type=int, default=None)
    common.add_argument('--output', help='Output file path.', nargs='?', type=str, default=None)
    common.add_argument('--trace', help='CSV path for energy traces or diagnostics.', nargs='?', type=str,
                        default=None)
    common.add_argument('--threads', help='Worker threads for independent runs.', nargs='?', type=int, default=1)
    common.add_argument('--log', help='Log file path.', nargs='?', type=str, default=None)

    commands = parser.add_subparsers(dest='command')
    commands.required = True
    scatter = commands.add_parser('scatter', parents=[common], help='Scattering coefficients of an image.')
    scatter.add_argument('image', type=str)

    training = commands.add_parser('train', parents=[common], help='Train Phi or the pixel baseline.')
    training.add_argument('manifest', type=str)
    training.add_argument('--mode', nargs='?', type=str, default='feature', choices=['feature', 'pixel'])

    resolve = commands.add_parser('super-resolve', parents=[common], help='Upscale a low-resolution image.')
    resolve.add_argument('image', type=str)
    resolve.add_argument('checkpoint', type=str)
    resolve.add_argument('--residual', help='Residual image output path.', nargs='?', type=str, default=None)
    resolve.add_argument('--point_estimate', help='Pixel baseline checkpoint for the init.', nargs='?',
                         type=str, default=None)

    synth = commands.add_parser('synthesize', parents=[common], help='Texture synthesis from Gaussian noise.')
    synth.add_argument('target', type=str)

    tune = commands.add_parser('finetune', parents=[common], help='Fine-tune Phi and Psi.')
    tune.add_argument('checkpoint', type=str)
    tune.add_argument('manifest', type=str)

    stability = commands.add_parser('eval-stability', parents=[common], help='Shift and blur stability curves.')
    stability.add_argument('folder', type=str)
    return parser


def _require_output(args):
    if args.output is None:
        raise ConfigError('--output is required for {}'.format(args.command))
    return args.output


def run(args):
    config = RunConfig.from_json(args.config)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    if args.threads is not None and args.threads > 1:
        torch.set_num_threads(args.threads)
        config = config.with_threads(args.threads)
    _print_config(args.command, config)
    with Timer() as timer:
        result = _dispatch(args, config)
    logger.info('{} finished in {:.1f} s'.format(args.command, timer.secs))
    return result


def _dispatch(args, config):
    if args.command == 'scatter':
        return cmd_scatter(args.image, config, args.output)
    if args.command == 'train':
        return cmd_train(args.manifest, config, _require_output(args), args.mode)
    if args.command == 'super-resolve':
        return cmd_super_resolve(args.image, args.checkpoint, config, _require_output(args),
                                 trace=args.trace, residual_output=args.residual,
                                 point_estimate=args.point_estimate)
    if args.command == 'synthesize':
        return cmd_synthesize(args.target, config, _require_output(args), trace=args.trace)
    if args.command == 'finetune':
        return cmd_finetune(args.checkpoint, args.manifest, config, _require_output(args), diagnostics=args.trace)
    return cmd_eval_stability(args.folder, config, _require_output(args))


def _error_line(kind, command, error):
    message = ' '.join(str(error).split())
    sys.stderr.write('mpsr-error\tkind={}\tcommand={}\tmessage={}\n'.format(kind, command, message))


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as error:
        return EXIT_OK if error.code == 0 else EXIT_USAGE

    get_logger('mpsr', log_path=args.log, is_console=True, level=logging.INFO)
    torch.set_default_dtype(DTYPE)
    try:
        run(args)
    except DivergenceError as error:
        _error_line('divergence', args.command, error)
        return EXIT_DIVERGENCE
    except NonFiniteError as error:
        _error_line('non-finite', args.command, error)
        return EXIT_NON_FINITE
    except ValueError as error:
        _error_line('config', args.command, error)
        return EXIT_CONFIG
    except OSError as error:
        _error_line('io', args.command, error)
        return EXIT_IO
    return EXIT_OK
