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
"""Utility Functions"""

import os
import json
import time
import random
import hashlib
import logging
import numpy as np
import torch


CHECKPOINT_FORMAT = 'mpsr-checkpoint'
CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    """Invalid run configuration or mismatched checkpoint."""


class NonFiniteError(ValueError):
    """Input data or a sampled function value is NaN or infinite."""


class DivergenceError(RuntimeError):
    """Loss or energy became non-finite or exploded."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics if diagnostics is not None else {}


class ManifestError(OSError):
    """Corpus file changed since the manifest was written."""


class Timer(object):
    def __init__(self, verbose=False):
        self.verbose = verbose

    def __enter__(self):
        self.start = time.time()
        return self

    def __exit__(self, *args):
        self.end = time.time()
        self.secs = self.end - self.start
        self.msecs = self.secs * 1000  # millisecs
        if self.verbose:
            print('elapsed time: %f ms' % self.msecs)


def set_seeds(seed):
    """Set components randam seed"""
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    torch.cuda.manual_seed_all(seed)


def make_generator(seed):
    """Dedicated torch generator so one run never consumes another's stream."""
    generator = torch.Generator()
    generator.manual_seed(int(seed))
    return generator


def get_logger(name, log_path=None, is_console=False, level=None):
    """Python Logger"""
    logger = logging.getLogger(name)
    logger.propagate = False
    log_format = logging.Formatter(
        '%(asctime)s:%(levelname)s:[%(filename)s:%(lineno)s]:%(message)s')
    if level is None:
        level = logging.DEBUG
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
    if is_console:
        handler = logging.StreamHandler()
        handler.setFormatter(log_format)
        logger.addHandler(handler)
        logger.setLevel(level)
        if log_path is None:
            return logger

    assert log_path is not None, 'require log_path'

    if not os.path.isfile(log_path):
        import warnings
        if not os.path.isdir(log_path):
            dir_path = os.path.dirname(log_path)
            if dir_path != '' and not os.path.exists(dir_path):
                os.makedirs(dir_path, exist_ok=True)
                warnings.warn("logfile dir makedir -p : " + dir_path)
        if os.path.isdir(log_path):
            log_path = os.path.join(log_path, name + ".log")
        open(log_path, 'a').close()

    file_handler = logging.FileHandler(log_path)
    file_handler.setFormatter(log_format)
    logger.addHandler(file_handler)
    logger.setLevel(level)
    return logger


def fingerprint(fields):
    """sha256 of the canonical JSON of a config record."""
    if hasattr(fields, '_asdict'):
        fields = fields._asdict()
    canonical = json.dumps(fields, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def file_sha256(path, chunk_size=1 << 20):
    digest = hashlib.sha256()
    with open(path, 'rb') as reader:
        for chunk in iter(lambda: reader.read(chunk_size), b''):
            digest.update(chunk)
    return digest.hexdigest()


def load(filename, model=None, device='cpu', optimizer=None, strict=True):
    """Loading checkpoint dict, restoring model and optimizer(Option)."""

    if not os.path.isfile(filename):
        raise FileNotFoundError('checkpoint not found : ' + str(filename))
    loading_dict = torch.load(filename, map_location=device)
    if not isinstance(loading_dict, dict) or loading_dict.get('format') != CHECKPOINT_FORMAT:
        raise ConfigError('not a mpsr checkpoint : ' + str(filename))
    if loading_dict.get('version') != CHECKPOINT_VERSION:
        raise ConfigError('unsupported checkpoint version {} : {}'.format(loading_dict.get('version'), filename))
    if model is not None:
        model.load_state_dict(loading_dict['model'], strict=strict)
    try:
        if optimizer is not None and loading_dict.get('optimizer') is not None:
            optimizer.load_state_dict(loading_dict['optimizer'])
    except (KeyError, ValueError):
        import warnings
        from traceback import print_exc
        warnings.warn('Ignore optimizer restore. Optimizer maybe miss-match.')
        print_exc()
    return loading_dict


def save(model, filename, optimizer=None, **extra):
    """Saving pytorch model, optimizer(Option) and run metadata."""

    saving_dict = {
        'format': CHECKPOINT_FORMAT,
        'version': CHECKPOINT_VERSION,
        'model': model.state_dict(),
        'optimizer': optimizer.state_dict() if optimizer is not None else None,
    }
    saving_dict.update(extra)
    dir_path = os.path.dirname(filename)
    if dir_path != '':
        os.makedirs(dir_path, exist_ok=True)
    torch.save(saving_dict, filename)
    return saving_dict
