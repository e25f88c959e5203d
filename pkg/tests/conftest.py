import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cwflab.qgrid import Grid1D, WaveFunction1D, WaveFunction2D, normalize


@pytest.fixture
def grid256():
    return Grid1D(-16.0, 16.0, 256)


@pytest.fixture
def grid128():
    return Grid1D(-8.0, 8.0, 128)


def random_state_1d(grid, seed, band=0.25):
    """Smooth random normalized state: band-limited complex noise."""
    rng = np.random.default_rng(seed)
    n = grid.n_points
    spec = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    k = np.fft.fftfreq(n)
    spec *= np.exp(-((k / band) ** 2))
    return normalize(WaveFunction1D(grid, np.fft.ifft(spec)))


def random_state_2d(grid_x, grid_y, seed, band=0.25):
    rng = np.random.default_rng(seed)
    shape = (grid_x.n_points, grid_y.n_points)
    spec = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    kx = np.fft.fftfreq(shape[0])[:, None]
    ky = np.fft.fftfreq(shape[1])[None, :]
    spec *= np.exp(-((kx / band) ** 2) - (ky / band) ** 2)
    return normalize(WaveFunction2D(grid_x, grid_y, np.fft.ifft2(spec)))
