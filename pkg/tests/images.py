"""Deterministic natural-image stand-ins for the test suites."""

import numpy as np
import torch


def dead_leaves(size=64, seed=0, rmin=2., rmax=20., count=300):
    """Occluding disks with radii following an r^-3 law, values in [0, 1]."""
    rng = np.random.RandomState(seed)
    img = np.full((size, size), 0.5)
    rows, cols = np.mgrid[0:size, 0:size]
    for _ in range(count):
        cy, cx = rng.uniform(0, size, 2)
        u = rng.uniform()
        radius = 1. / np.sqrt(1. / rmin ** 2 - u * (1. / rmin ** 2 - 1. / rmax ** 2))
        img[(rows - cy) ** 2 + (cols - cx) ** 2 <= radius ** 2] = rng.uniform()
    return torch.from_numpy(img).unsqueeze(0)


def smooth_field(size=64, seed=0, sigma=4.):
    """Low-pass filtered white noise rescaled to [0, 1]."""
    generator = torch.Generator().manual_seed(seed)
    noise = torch.randn((size, size), generator=generator, dtype=torch.float64)
    freq = 2 * np.pi * torch.fft.fftfreq(size, dtype=torch.float64)
    wy, wx = torch.meshgrid(freq, freq, indexing='ij')
    field = torch.fft.ifft2(torch.fft.fft2(noise) * torch.exp(-(sigma ** 2) * (wy ** 2 + wx ** 2) / 2)).real
    field = (field - field.min()) / (field.max() - field.min())
    return field.unsqueeze(0)


def random_image(shape, seed=0):
    generator = torch.Generator().manual_seed(seed)
    return torch.rand(shape, generator=generator, dtype=torch.float64)
