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
"""Image files.

8/16-bit rasters (PNG, PGM/PPM, BMP, TIFF) are read through Pillow and scaled
to [0, 1]. ``.npy`` holds raw float64 (C, H, W) arrays, for residuals and
anything that must survive a save/load cycle bit-exactly.
"""

import os

import numpy as np
import torch
from PIL import Image

from ..numerics import as_image

RASTER_EXTENSIONS = ('.png', '.pgm', '.ppm', '.bmp', '.tif', '.tiff')
RAW_EXTENSION = '.npy'


def is_image_file(path):
    return os.path.splitext(path)[1].lower() in RASTER_EXTENSIONS + (RAW_EXTENSION,)


def load_image(path):
    if not os.path.isfile(path):
        raise FileNotFoundError('image not found : ' + str(path))
    ext = os.path.splitext(path)[1].lower()
    if ext == RAW_EXTENSION:
        return as_image(np.load(path, allow_pickle=False), path)
    if ext not in RASTER_EXTENSIONS:
        raise OSError('unsupported image format {} : {}'.format(ext, path))

    with Image.open(path) as image:
        if image.mode in ('I;16', 'I;16B', 'I;16L', 'I'):
            array = np.asarray(image, dtype=np.float64) / 65535.
        else:
            if image.mode not in ('L', 'RGB'):
                image = image.convert('RGB')
            array = np.asarray(image, dtype=np.float64) / 255.
    if array.ndim == 3:
        array = array.transpose(2, 0, 1)
    return as_image(array, path)


def save_image(img, path):
    """Write (C, H, W) data; rasters are clipped to [0, 1] and quantised to 8 bit."""
    if img.dim() == 2:
        img = img.unsqueeze(0)
    dir_path = os.path.dirname(path)
    if dir_path != '':
        os.makedirs(dir_path, exist_ok=True)
    ext = os.path.splitext(path)[1].lower()
    array = img.detach().cpu().to(torch.float64).numpy()
    if ext == RAW_EXTENSION:
        with open(path, 'wb') as writer:
            np.save(writer, array, allow_pickle=False)
        return path
    if ext not in RASTER_EXTENSIONS:
        raise OSError('unsupported image format {} : {}'.format(ext, path))
    if array.shape[0] not in (1, 3):
        raise ValueError('raster output needs 1 or 3 channels, got {}'.format(array.shape[0]))
    quantised = np.round(np.clip(array, 0., 1.) * 255.).astype(np.uint8)
    if quantised.shape[0] == 1:
        Image.fromarray(quantised[0]).save(path)
    else:
        Image.fromarray(np.ascontiguousarray(quantised.transpose(1, 2, 0))).save(path)
    return path


def list_images(folder):
    if not os.path.isdir(folder):
        raise FileNotFoundError('image folder not found : ' + str(folder))
    return sorted(os.path.join(folder, name) for name in os.listdir(folder) if is_image_file(name))
