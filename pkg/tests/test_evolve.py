import numpy as np
import pytest

from cwflab.errors import IncompleteBasisError, ValidationError
from cwflab.evolve import (
    Hamiltonian,
    ImpulsiveCoupling,
    ObservableSpec,
    apply_impulse,
    box_eigenbasis,
    box_potential,
    default_timestep,
    free_potential,
    hamiltonian_matrix,
    harmonic_potential,
    propagate,
)
from cwflab.qgrid import Grid1D, WaveFunction1D, inner_product, normalize
from cwflab.states import box_superposition, gaussian_1d, product_2d

from conftest import random_state_1d, random_state_2d
from oracles import free_gaussian, spreading_width


class TestPropagate1D:
    def test_free_gaussian_matches_closed_form(self, grid256):
        wf = gaussian_1d(grid256, sigma=1.0, k0=1.0)
        ham = Hamiltonian((1.0,), free_potential(grid256))
        t, steps = 1.0, 64
        out = propagate(wf, ham, t / steps, steps)
        ref = free_gaussian(grid256.points, t, sigma0=1.0, k0=1.0)
        ref /= np.sqrt(np.sum(np.abs(ref) ** 2) * grid256.dx)
        err = np.sqrt(np.sum(np.abs(out.amplitudes - ref) ** 2) * grid256.dx)
        assert err < 1e-6

    def test_free_width_growth(self, grid256):
        wf = gaussian_1d(grid256, sigma=1.0)
        ham = Hamiltonian((1.0,), free_potential(grid256))
        out = propagate(wf, ham, 0.01, 100)
        x = grid256.points
        var = np.sum(x**2 * out.density()) * grid256.dx
        assert abs(np.sqrt(var) - spreading_width(1.0, 1.0)) < 1e-6

    def test_harmonic_ground_state_stationary(self, grid256):
        omega = 1.0
        sigma = np.sqrt(0.5 / omega)  # hbar = m = 1
        wf = gaussian_1d(grid256, sigma=sigma)
        ham = Hamiltonian((1.0,), harmonic_potential(grid256, omega))
        out = propagate(wf, ham, 1e-4, 10_000)  # t = 1
        phase = np.vdot(wf.amplitudes, out.amplitudes)
        phase /= abs(phase)
        err = np.sqrt(np.sum(np.abs(out.amplitudes - phase * wf.amplitudes) ** 2) * grid256.dx)
        assert err < 1e-8
        # the removed global phase is exp(-i omega t / 2)
        assert abs(phase - np.exp(-0.5j * omega)) < 1e-6

    def test_norm_drift_under_1e9_per_1000_steps(self, grid256):
        wf = random_state_1d(grid256, seed=9)
        ham = Hamiltonian((1.0,), harmonic_potential(grid256, 2.0))
        out = propagate(wf, ham, default_timestep(grid256), 1000)
        assert abs(out.norm() - 1.0) < 1e-9

    def test_second_order_convergence(self, grid256):
        wf = gaussian_1d(grid256, center=1.0, sigma=0.8)
        ham = Hamiltonian((1.0,), harmonic_potential(grid256, 1.0))
        t = 0.5

        def err(n_steps, ref):
            out = propagate(wf, ham, t / n_steps, n_steps)
            return np.linalg.norm(out.amplitudes - ref)

        ref = propagate(wf, ham, t / 256, 256).amplitudes
        ratio = err(32, ref) / err(64, ref)
        assert 3.5 < ratio < 4.5

    def test_rejects_mismatched_potential(self, grid256, grid128):
        wf = gaussian_1d(grid256)
        ham = Hamiltonian((1.0,), free_potential(grid128))
        with pytest.raises(ValidationError):
            propagate(wf, ham, 0.01, 1)


class TestPropagate2D:
    def test_product_state_evolves_as_product(self, grid128):
        gy = Grid1D(-8.0, 8.0, 128)
        psi = product_2d(gaussian_1d(grid128, sigma=0.9), gaussian_1d(gy, sigma=1.1))
        ham = Hamiltonian((1.0, 1.0), free_potential(grid128, gy))
        out = propagate(psi, ham, 0.02, 25)
        fx = free_gaussian(grid128.points, 0.5, sigma0=0.9)
        fy = free_gaussian(gy.points, 0.5, sigma0=1.1)
        ref = np.outer(fx, fy)
        ref /= np.linalg.norm(ref)
        target = out.amplitudes / np.linalg.norm(out.amplitudes)
        phase = np.vdot(ref, target)
        assert abs(abs(phase) - 1.0) < 1e-8

    def test_norm_preserved(self, grid128):
        gy = Grid1D(-4.0, 4.0, 64)
        psi = random_state_2d(grid128, gy, seed=31)
        v = np.add.outer(harmonic_potential(grid128, 1.0), harmonic_potential(gy, 0.5))
        ham = Hamiltonian((1.0, 2.0), v)
        out = propagate(psi, ham, default_timestep((grid128, gy)), 1000)
        assert abs(out.norm() - 1.0) < 1e-9


class TestBoxRevival:
    def test_two_level_revival(self):
        # moderate wall height: the splitting needs v0 * dt << 1 to resolve
        # the wall phases, so 1e6 walls would stall at ~1e-4 infidelity
        grid = Grid1D(-0.5, 1.5, 256)
        ham = Hamiltonian((1.0,), box_potential(grid, 0.0, 1.0, 1e4))
        h = hamiltonian_matrix(ham, grid)
        evals, evecs = np.linalg.eigh(h)
        u1 = evecs[:, 0] / np.sqrt(grid.dx)
        u2 = evecs[:, 1] / np.sqrt(grid.dx)
        psi0 = normalize(WaveFunction1D(grid, (u1 + u2) / np.sqrt(2.0)))
        period = 2.0 * np.pi / (evals[1] - evals[0])
        steps = 2**15
        out = propagate(psi0, ham, period / steps, steps)
        fid = abs(inner_product(psi0, out))
        assert fid > 1.0 - 1e-6

    def test_box_energies_match_dense_diagonalization(self):
        grid = Grid1D(-0.5, 1.5, 256)
        ham = Hamiltonian((1.0,), box_potential(grid, 0.0, 1.0, 1e6))
        evals = np.linalg.eigvalsh(hamiltonian_matrix(ham, grid))
        analytic = box_eigenbasis(grid, 0.0, 1.0, 3).eigenvalues
        assert np.allclose(evals[:3], analytic, rtol=5e-2)


class TestBoxEigenbasis:
    def test_exact_grid_orthonormality(self):
        grid = Grid1D(-0.5, 1.5, 256)
        basis = box_eigenbasis(grid, 0.0, 1.0, 8)
        gram = basis.eigenfunctions.conj() @ basis.eigenfunctions.T * grid.dx
        assert np.max(np.abs(gram - np.eye(8))) < 1e-12

    def test_misaligned_box_rejected(self):
        grid = Grid1D(-0.5, 1.5, 256)
        with pytest.raises(ValidationError):
            box_eigenbasis(grid, 0.0003, 1.0, 4)

    def test_non_orthonormal_basis_rejected(self):
        grid = Grid1D(-0.5, 1.5, 256)
        basis = box_eigenbasis(grid, 0.0, 1.0, 2)
        bad = basis.eigenfunctions.copy()
        bad[1] += 0.01 * bad[0]
        with pytest.raises(ValidationError):
            ObservableSpec(grid, bad, basis.eigenvalues)


@pytest.fixture
def impulse_setup():
    grid_x = Grid1D(-0.5, 1.5, 256)
    grid_y = Grid1D(-2.0, 4.0, 256)
    coeffs = np.array([0.6, 0.8j])
    psi_x = box_superposition(grid_x, 0.0, 1.0, coeffs)
    phi_y = gaussian_1d(grid_y, sigma=0.1 / np.sqrt(2.0))  # pointer width w = 0.1
    psi = product_2d(psi_x, phi_y)
    basis = box_eigenbasis(grid_x, 0.0, 1.0, 2)
    return psi, basis, coeffs, phi_y


class TestImpulse:
    def test_matches_direct_construction(self, impulse_setup):
        psi, basis, coeffs, phi_y = impulse_setup
        lam = 0.054
        out = apply_impulse(psi, ImpulsiveCoupling(basis, lam))
        y = psi.grid_y.points
        w = 0.1
        direct = np.zeros_like(psi.amplitudes)
        for n in range(2):
            g = np.exp(-((y - lam * basis.eigenvalues[n]) ** 2) / (2.0 * w**2))
            g = g / np.sqrt(np.sum(np.abs(g) ** 2) * psi.grid_y.dx)
            direct += np.outer(coeffs[n] * basis.eigenfunctions[n], g)
        err = np.linalg.norm(out.amplitudes - direct) / np.linalg.norm(direct)
        assert err < 1e-8

    def test_zero_coupling_is_identity(self, impulse_setup):
        psi, basis, _, _ = impulse_setup
        out = apply_impulse(psi, ImpulsiveCoupling(basis, 0.0))
        assert np.max(np.abs(out.amplitudes - psi.amplitudes)) < 1e-12

    def test_single_eigenstate_centroid_shift(self):
        grid_x = Grid1D(-0.5, 1.5, 256)
        grid_y = Grid1D(-2.0, 4.0, 256)
        psi_x = box_superposition(grid_x, 0.0, 1.0, [0.0, 1.0])
        phi_y = gaussian_1d(grid_y, sigma=0.1)
        psi = product_2d(psi_x, phi_y)
        basis = box_eigenbasis(grid_x, 0.0, 1.0, 2)
        lam = 0.05
        out = apply_impulse(psi, ImpulsiveCoupling(basis, lam))
        y = grid_y.points
        dens_y = np.sum(out.density(), axis=0) * grid_x.dx * grid_y.dx
        centroid = np.sum(y * dens_y) / np.sum(dens_y)
        assert abs(centroid - lam * basis.eigenvalues[1]) < 1e-8

    def test_unitary_on_spanned_states(self, impulse_setup):
        psi, basis, _, _ = impulse_setup
        coupling = ImpulsiveCoupling(basis, 0.03)
        out = apply_impulse(psi, coupling)
        assert abs(out.norm() - psi.norm()) < 1e-10

    def test_incomplete_basis_rejected(self):
        grid_x = Grid1D(-0.5, 1.5, 256)
        grid_y = Grid1D(-2.0, 4.0, 256)
        psi_x = box_superposition(grid_x, 0.0, 1.0, [0.6, 0.0, 0.8])
        psi = product_2d(psi_x, gaussian_1d(grid_y, sigma=0.1))
        basis = box_eigenbasis(grid_x, 0.0, 1.0, 2)
        with pytest.raises(IncompleteBasisError) as exc:
            apply_impulse(psi, ImpulsiveCoupling(basis, 0.05))
        assert abs(exc.value.residual - 0.8) < 1e-6

    def test_non_y_target_rejected(self, impulse_setup):
        _, basis, _, _ = impulse_setup
        with pytest.raises(ValidationError):
            ImpulsiveCoupling(basis, 0.05, target="x")


def test_default_timestep(grid256):
    assert np.isclose(default_timestep(grid256), 0.25 * grid256.dx**2)
    gy = Grid1D(0.0, 1.0, 64)
    assert np.isclose(default_timestep((grid256, gy)), 0.25 * gy.dx**2)
