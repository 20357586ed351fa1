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
"""Dense image arithmetic: FFT, circular convolution and gradient oracle.

Images are float64 tensors shaped (channels, height, width); leading batch
axes are allowed wherever the last two axes are (height, width).
Frequency planes are complex128 tensors shaped (height, width).

FFT convention: forward transform unnormalised, inverse divides by
height * width, so Parseval reads ||x||^2 == ||fft2(x)||^2 / (height * width).
Any size is supported. Boundaries are circular everywhere.
"""

import math
import numpy as np
import torch

from .utils import NonFiniteError

DTYPE = torch.float64
CDTYPE = torch.complex128


def check_finite(tensor, name='tensor'):
    if not bool(torch.isfinite(tensor).all()):
        raise NonFiniteError('{} contains non-finite values'.format(name))
    return tensor


def as_image(data, name='image'):
    """Coerce numpy/torch data to a finite float64 (C, H, W) tensor."""
    if isinstance(data, np.ndarray):
        data = torch.from_numpy(np.ascontiguousarray(data))
    if not torch.is_tensor(data):
        data = torch.as_tensor(data)
    data = data.to(DTYPE)
    if data.dim() == 2:
        data = data.unsqueeze(0)
    if data.dim() != 3:
        raise ValueError('{} must be (channels, height, width), got shape {}'.format(name, tuple(data.shape)))
    return check_finite(data, name)


def frequency_grid(height, width):
    """Angular frequencies (wy, wx) in [-pi, pi) laid out in FFT order."""
    wy = 2 * math.pi * torch.fft.fftfreq(height, dtype=DTYPE)
    wx = 2 * math.pi * torch.fft.fftfreq(width, dtype=DTYPE)
    return torch.meshgrid(wy, wx, indexing='ij')


def fft2(img):
    if torch.is_complex(img):
        check_finite(torch.view_as_real(img), 'fft2 input')
    else:
        check_finite(img, 'fft2 input')
        img = img.to(DTYPE)
    return torch.fft.fft2(img)


def ifft2(plane):
    return torch.fft.ifft2(plane)


def circular_convolve(img, filt, as_channels=False):
    """Convolve with a frequency-domain filter plane.

    Returns the complex result, or a real tensor with the real and imaginary
    parts stacked on a new channel axis when ``as_channels`` is set.
    """
    if tuple(img.shape[-2:]) != tuple(filt.shape[-2:]):
        raise ValueError('filter plane {} does not match image {}'.format(
            tuple(filt.shape[-2:]), tuple(img.shape[-2:])))
    out = ifft2(fft2(img) * filt)
    if as_channels:
        return torch.cat([out.real, out.imag], dim=-3)
    return out


def direct_circular_convolve(img, kernel):
    """Spatial-domain circular convolution, O(N^2) per pixel.

    ``kernel`` is a spatial (H, W) array, real or complex. Reference oracle
    for the FFT path.
    """
    height, width = img.shape[-2:]
    if tuple(kernel.shape) != (height, width):
        raise ValueError('kernel {} does not match image {}'.format(tuple(kernel.shape), (height, width)))
    dtype = CDTYPE if torch.is_complex(kernel) else DTYPE
    img = img.to(dtype)
    out = torch.zeros_like(img)
    for qy in range(height):
        for qx in range(width):
            weight = kernel[qy, qx]
            if weight == 0:
                continue
            out = out + weight * torch.roll(img, shifts=(qy, qx), dims=(-2, -1))
    return out


def finite_difference_grad(f, x, h=1e-5):
    """Central differences (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate."""
    if not 1e-6 <= h <= 1e-2:
        raise ValueError("Invalid step: {} - should be in [1e-6, 1e-2]".format(h))
    base = x.detach().to(DTYPE).clone()
    flat = base.view(-1)
    grad = torch.zeros_like(flat)
    for i in range(flat.numel()):
        origin = flat[i].item()
        flat[i] = origin + h
        upper = float(f(base))
        flat[i] = origin - h
        lower = float(f(base))
        flat[i] = origin
        if not (math.isfinite(upper) and math.isfinite(lower)):
            raise NonFiniteError('non-finite function value at coordinate {}'.format(i))
        grad[i] = (upper - lower) / (2 * h)
    return grad.view_as(base)
