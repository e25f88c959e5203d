"""Canonical state builders shared by scenarios and tests.

Gaussians use the amplitude convention

    g(x; c, sigma) = (2 pi sigma^2)**-1/4 exp(-(x-c)^2/(4 sigma^2) + i k0 x)

so |g|^2 has standard deviation sigma. Sampled states are renormalized on
the grid before tagging.
"""

import numpy as np

from .errors import ValidationError
from .evolve import box_eigenbasis
from .qgrid import Grid1D, WaveFunction1D, WaveFunction2D, normalize

COEFF_TOL = 1e-10


def gaussian_1d(grid: Grid1D, center: float = 0.0, sigma: float = 1.0,
                k0: float = 0.0) -> WaveFunction1D:
    if sigma <= 0:
        raise ValidationError("sigma must be positive")
    x = grid.points
    amp = np.exp(-((x - center) ** 2) / (4.0 * sigma**2) + 1j * k0 * x)
    return normalize(WaveFunction1D(grid, amp))


def product_2d(psi_x: WaveFunction1D, phi_y: WaveFunction1D) -> WaveFunction2D:
    tag = ("normalized" if psi_x.norm_tag == phi_y.norm_tag == "normalized"
           else "unnormalized")
    return WaveFunction2D(psi_x.grid, phi_y.grid,
                          np.outer(psi_x.amplitudes, phi_y.amplitudes), tag)


def box_superposition(grid: Grid1D, box_min: float, length: float,
                      coeffs, mass: float = 1.0, hbar: float = 1.0) -> WaveFunction1D:
    """sum_n c_n u_n(x) over analytic box modes; coefficients must be unit-norm."""
    c = np.asarray(coeffs, dtype=np.complex128)
    if abs(np.sum(np.abs(c) ** 2) - 1.0) > COEFF_TOL:
        raise ValidationError("mode coefficients must have unit norm within 1e-10")
    basis = box_eigenbasis(grid, box_min, length, c.size, mass, hbar)
    return WaveFunction1D(grid, c @ basis.eigenfunctions, "normalized")


def two_branch_state(grid_x: Grid1D, grid_y: Grid1D, x_sep: float,
                     sigma_x: float, sigma_y: float, y_shift: float = 0.0
                     ) -> WaveFunction2D:
    """(psi_1(x) phi_1(y) + psi_2(x) phi_2(y)) / sqrt(2).

    psi_1/psi_2 are Gaussians at +-x_sep/2 (supports on x>0 / x<0 for
    x_sep >> sigma_x); phi_1/phi_2 sit at +-y_shift. y_shift = 0 gives the
    overlapping-pointer configuration, y_shift > 0 the separated one.
    """
    psi1 = gaussian_1d(grid_x, +0.5 * x_sep, sigma_x)
    psi2 = gaussian_1d(grid_x, -0.5 * x_sep, sigma_x)
    phi1 = gaussian_1d(grid_y, +y_shift, sigma_y)
    phi2 = gaussian_1d(grid_y, -y_shift, sigma_y)
    amp = (np.outer(psi1.amplitudes, phi1.amplitudes)
           + np.outer(psi2.amplitudes, phi2.amplitudes)) / np.sqrt(2.0)
    return normalize(WaveFunction2D(grid_x, grid_y, amp))


def branch_waves(grid_x: Grid1D, x_sep: float, sigma_x: float):
    """The two branch wave functions psi_1, psi_2 of two_branch_state."""
    return (gaussian_1d(grid_x, +0.5 * x_sep, sigma_x),
            gaussian_1d(grid_x, -0.5 * x_sep, sigma_x))


def beam_splitter(psi: WaveFunction2D, shift: float) -> WaveFunction2D:
    """Branch-conditioned rigid y-translation.

    U = P(x>=0) (x) T(+shift) + P(x<0) (x) T(-shift), with T exact
    momentum-space translations; unitary because the projectors are
    diagonal in x and T is unitary.
    """
    pos = psi.grid_x.points >= 0.0
    ky = 2.0 * np.pi * np.fft.fftfreq(psi.grid_y.n_points, d=psi.grid_y.dx)
    spec = np.fft.fft(psi.amplitudes, axis=1)
    plus = np.fft.ifft(spec * np.exp(-1j * shift * ky), axis=1)
    minus = np.fft.ifft(spec * np.exp(+1j * shift * ky), axis=1)
    amp = np.where(pos[:, None], plus, minus)
    return WaveFunction2D(psi.grid_x, psi.grid_y, amp, psi.norm_tag)
