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
"""Corpus manifest, patch extraction and training datasets."""

import json
import logging
import os
from typing import NamedTuple

import numpy as np
import torch
from torch.utils.data import Dataset
from tqdm import tqdm

from ..degradation import downsample, linear_predict, residual, luminance
from ..utils import ConfigError, ManifestError, file_sha256
from .image_io import load_image, list_images

MANIFEST_SCHEMA_VERSION = 1

logger = logging.getLogger(__name__)


class ManifestEntry(NamedTuple):
    path: str
    sha256: str


class DatasetManifest(object):
    """Image list with content hashes plus patch sampling parameters."""

    def __init__(self, entries, patch_size=64, patches_per_image=2, seed=0, root=''):
        if patches_per_image < 1:
            raise ConfigError('patches_per_image must be >= 1, got {}'.format(patches_per_image))
        if patch_size < 1:
            raise ConfigError('patch_size must be >= 1, got {}'.format(patch_size))
        self.entries = [e if isinstance(e, ManifestEntry) else ManifestEntry(*e) for e in entries]
        self.patch_size = patch_size
        self.patches_per_image = patches_per_image
        self.seed = seed
        self.root = root

    @classmethod
    def build(cls, paths, patch_size=64, patches_per_image=2, seed=0):
        """From a folder or an explicit list of image files."""
        if isinstance(paths, str):
            paths = list_images(paths)
        entries = [ManifestEntry(os.path.abspath(p), file_sha256(p)) for p in paths]
        return cls(entries, patch_size, patches_per_image, seed)

    def resolve(self, entry):
        if os.path.isabs(entry.path) or self.root == '':
            return entry.path
        return os.path.join(self.root, entry.path)

    def verify(self):
        for entry in self.entries:
            path = self.resolve(entry)
            if not os.path.isfile(path):
                raise FileNotFoundError('manifest entry missing : ' + path)
            if file_sha256(path) != entry.sha256:
                raise ManifestError('content hash changed since manifest was written : ' + path)

    def to_dict(self):
        return {
            'schema_version': MANIFEST_SCHEMA_VERSION,
            'patch_size': self.patch_size,
            'patches_per_image': self.patches_per_image,
            'seed': self.seed,
            'entries': [{'path': e.path, 'sha256': e.sha256} for e in self.entries],
        }

    def save(self, path):
        dir_path = os.path.dirname(path)
        if dir_path != '':
            os.makedirs(dir_path, exist_ok=True)
        with open(path, 'w', encoding='UTF-8') as writer:
            json.dump(self.to_dict(), writer, indent=2, sort_keys=True)
        return path

    @classmethod
    def load(cls, path, verify=True):
        if not os.path.isfile(path):
            raise FileNotFoundError('manifest not found : ' + str(path))
        with open(path, 'r', encoding='UTF-8') as reader:
            values = json.load(reader)
        if values.get('schema_version') != MANIFEST_SCHEMA_VERSION:
            raise ConfigError('unsupported manifest schema_version {} : {}'.format(
                values.get('schema_version'), path))
        unknown = set(values) - {'schema_version', 'patch_size', 'patches_per_image', 'seed', 'entries'}
        if unknown:
            raise ConfigError('unknown manifest keys {} : {}'.format(sorted(unknown), path))
        manifest = cls(
            [ManifestEntry(e['path'], e['sha256']) for e in values['entries']],
            patch_size=values.get('patch_size', 64),
            patches_per_image=values.get('patches_per_image', 2),
            seed=values.get('seed', 0),
            root=os.path.dirname(os.path.abspath(path)))
        if verify:
            manifest.verify()
        return manifest


class PatchTriple(NamedTuple):
    x: torch.Tensor     # low resolution
    y: torch.Tensor     # high resolution patch
    r: torch.Tensor     # residual y - linear_predict(x)


def _patches_from_image(image, size, count, rng):
    height, width = image.shape[-2:]
    if height < size or width < size:
        raise ValueError('image {}x{} smaller than patch size {}'.format(height, width, size))
    patches = []
    for _ in range(count):
        top = rng.randint(0, height - size + 1)
        left = rng.randint(0, width - size + 1)
        patches.append(image[:, top:top + size, left:left + size].clone())
    return patches


def extract_patches(manifest, model, scattering_cfg=None, images=None):
    """Deterministic (x, y, r) triples, at most ``patches_per_image`` per image.

    ``images`` overrides the manifest files with in-memory (C, H, W) tensors.
    """
    size = manifest.patch_size
    if size % model.factor:
        raise ValueError('patch size {} not divisible by factor {}'.format(size, model.factor))
    if scattering_cfg is not None and size % 2 ** scattering_cfg.J:
        raise ValueError('patch size {} not divisible by 2^J={}'.format(size, 2 ** scattering_cfg.J))
    if images is None:
        images = (load_image(manifest.resolve(e)) for e in manifest.entries)

    rng = np.random.RandomState(manifest.seed)
    triples = []
    for image in tqdm(images, desc="Extracting patches"):
        if model.color == 'luminance':
            image = luminance(image)
        for y in _patches_from_image(image, size, manifest.patches_per_image, rng):
            x = downsample(y, model)
            triples.append(PatchTriple(x, y, residual(y, x, model)))
    logger.info('extracted {} patches'.format(len(triples)))
    return triples


class PatchDataset(Dataset):
    """(U-bar(x), r) pairs for feature regression or (U-bar(x), y) for pixels.

    Multi-channel patches are split into single-channel samples.
    """

    def __init__(self, triples, model, mode='feature'):
        super().__init__()
        if mode not in ('feature', 'pixel'):
            raise ValueError('Invalid mode: {} - should be feature or pixel'.format(mode))
        self.mode = mode
        self.records = []
        for triple in triples:
            upsampled = linear_predict(triple.x, model)
            target = triple.r if mode == 'feature' else triple.y
            for c in range(upsampled.shape[0]):
                self.records.append((upsampled[c:c + 1], target[c:c + 1]))

    def __len__(self):
        return len(self.records)

    def __getitem__(self, index):
        return self.records[index]
