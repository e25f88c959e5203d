"""Bohmian guidance: velocity fields, trajectories, equilibrium sampling.

The guidance velocity is v = (hbar/m) Im[grad Psi / Psi] evaluated at the
configuration. Gradients are spectral (FFT); off-grid evaluation uses the
exact Fourier series in 1-D and bicubic interpolation of the smooth fields
(j, rho) in 2-D. Trajectories advance with classical RK4 using the wave
function at t, t + dt/2 and t + dt (half-step propagation).

Configurations sitting on nodes of |Psi|^2 (relative density below
NODE_FLOOR) raise NodeError; ensemble runners count such failures per
trajectory instead of aborting the batch.
"""

import csv
import json
from dataclasses import dataclass

import numpy as np
from scipy import stats as _stats
from scipy.interpolate import RectBivariateSpline

from .errors import GridExitError, NodeError, ValidationError
from .evolve import Hamiltonian, propagate
from .qgrid import WaveFunction1D, WaveFunction2D, conditional_slice
from .stats import chi2_gof

NODE_FLOOR = 1e-12  # fraction of max |Psi|^2 below which a point is a node


@dataclass(frozen=True)
class BohmConfig:
    """A configuration-space point (X, Y). Must avoid nodes of |Psi|^2;
    that is enforced wherever the point is used to evaluate guidance."""

    X: float
    Y: float


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    points: np.ndarray  # shape (len(times), ndim)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        p = np.asarray(self.points, dtype=float)
        if np.any(np.diff(t) <= 0):
            raise ValidationError("times must be strictly increasing")
        if p.shape[0] != t.size:
            raise ValidationError("times/points length mismatch")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "points", p)


class VelocityField1D:
    """Exact band-limited evaluation of psi, dpsi/dx and the guidance velocity."""

    def __init__(self, wf: WaveFunction1D, mass: float = 1.0, hbar: float = 1.0):
        g = wf.grid
        self.grid = g
        self.mass = mass
        self.hbar = hbar
        self.coef = np.fft.fft(wf.amplitudes) / g.n_points
        self.k = 2.0 * np.pi * np.fft.fftfreq(g.n_points, d=g.dx)
        self.floor = NODE_FLOOR * float(np.max(wf.density()))

    def _series(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if np.any(x < self.grid.x_min) or np.any(x >= self.grid.x_max):
            raise GridExitError(f"position outside [{self.grid.x_min}, {self.grid.x_max})")
        phases = np.exp(1j * np.outer(self.k, x - self.grid.x_min))
        psi = self.coef @ phases
        dpsi = (1j * self.k * self.coef) @ phases
        return psi, dpsi

    def velocity(self, x, on_node="raise"):
        """Guidance velocity at x (scalar or array).

        on_node: 'raise' -> NodeError, 'mask' -> (v, ok_mask) with NaN at nodes.
        """
        psi, dpsi = self._series(x)
        dens = np.abs(psi) ** 2
        ok = dens >= self.floor
        v = np.full(psi.shape, np.nan)
        v[ok] = (self.hbar / self.mass) * (dpsi[ok] / psi[ok]).imag
        if on_node == "mask":
            return v, ok
        if not ok.all():
            bad = int(np.argmin(ok))
            raise NodeError(dens[bad], self.floor, where=float(np.atleast_1d(x)[bad]))
        return v


class VelocityField2D:
    """Guidance velocity from bicubic interpolation of (j_x, j_y, rho)."""

    def __init__(self, psi: WaveFunction2D, masses=(1.0, 1.0), hbar: float = 1.0):
        self.gx, self.gy = psi.grid_x, psi.grid_y
        amp = psi.amplitudes
        kx = 2.0 * np.pi * np.fft.fftfreq(self.gx.n_points, d=self.gx.dx)
        ky = 2.0 * np.pi * np.fft.fftfreq(self.gy.n_points, d=self.gy.dx)
        dpsi_x = np.fft.ifft(1j * kx[:, None] * np.fft.fft(amp, axis=0), axis=0)
        dpsi_y = np.fft.ifft(1j * ky[None, :] * np.fft.fft(amp, axis=1), axis=1)
        rho = psi.density()
        jx = (hbar / masses[0]) * (np.conj(amp) * dpsi_x).imag
        jy = (hbar / masses[1]) * (np.conj(amp) * dpsi_y).imag
        x, y = self.gx.points, self.gy.points
        self._jx = RectBivariateSpline(x, y, jx)
        self._jy = RectBivariateSpline(x, y, jy)
        self._rho = RectBivariateSpline(x, y, rho)
        self.floor = NODE_FLOOR * float(rho.max())

    def _check_bounds(self, X, Y):
        if (np.any(X < self.gx.x_min) or np.any(X >= self.gx.x_max)
                or np.any(Y < self.gy.x_min) or np.any(Y >= self.gy.x_max)):
            raise GridExitError("position outside the grid domain")

    def velocity(self, X, Y, on_node="raise"):
        X = np.atleast_1d(np.asarray(X, dtype=float))
        Y = np.atleast_1d(np.asarray(Y, dtype=float))
        self._check_bounds(X, Y)
        rho = self._rho.ev(X, Y)
        ok = rho >= self.floor
        vx = np.full(X.shape, np.nan)
        vy = np.full(Y.shape, np.nan)
        vx[ok] = self._jx.ev(X[ok], Y[ok]) / rho[ok]
        vy[ok] = self._jy.ev(X[ok], Y[ok]) / rho[ok]
        if on_node == "mask":
            return vx, vy, ok
        if not ok.all():
            bad = int(np.argmin(ok))
            raise NodeError(rho[bad], self.floor, where=(float(X[bad]), float(Y[bad])))
        return vx, vy


def velocity(psi, q, masses=(1.0, 1.0), hbar: float = 1.0):
    """Guidance velocity at a single configuration.

    1-D states take a float position, 2-D states a BohmConfig.
    """
    if isinstance(psi, WaveFunction1D):
        return float(VelocityField1D(psi, masses[0] if np.iterable(masses) else masses,
                                     hbar).velocity(q)[0])
    if isinstance(psi, WaveFunction2D):
        vx, vy = VelocityField2D(psi, masses, hbar).velocity(q.X, q.Y)
        return np.array([vx[0], vy[0]])
    raise ValidationError(f"cannot compute velocity for {type(psi).__name__}")


def conditional_wavefunction(psi: WaveFunction2D, q: BohmConfig) -> WaveFunction1D:
    """chi_1(x) = Psi(x, Y): the single-particle wave guiding X at fixed Y."""
    return conditional_slice(psi, q.Y)


def _rk4(f0, f1, f2, X, Y, dt, alive):
    """Masked RK4 step for an ensemble; returns updated arrays and mask."""
    Xn, Yn = X.copy(), Y.copy()
    ok = alive.copy()

    def ev(field, xs, ys, mask):
        vx = np.zeros_like(xs)
        vy = np.zeros_like(ys)
        good = mask.copy()
        idx = np.flatnonzero(mask)
        if idx.size:
            try:
                a, b, m = field.velocity(xs[idx], ys[idx], on_node="mask")
            except GridExitError:
                # per-trajectory bounds handling
                inb = ((xs[idx] >= field.gx.x_min) & (xs[idx] < field.gx.x_max)
                       & (ys[idx] >= field.gy.x_min) & (ys[idx] < field.gy.x_max))
                good[idx[~inb]] = False
                sub = idx[inb]
                if sub.size:
                    a, b, m = field.velocity(xs[sub], ys[sub], on_node="mask")
                    vx[sub], vy[sub] = a, b
                    good[sub[~m]] = False
                return vx, vy, good
            vx[idx], vy[idx] = a, b
            good[idx[~m]] = False
        return vx, vy, good

    k1x, k1y, ok = ev(f0, X, Y, ok)
    k2x, k2y, ok = ev(f1, X + 0.5 * dt * k1x, Y + 0.5 * dt * k1y, ok)
    k3x, k3y, ok = ev(f1, X + 0.5 * dt * k2x, Y + 0.5 * dt * k2y, ok)
    k4x, k4y, ok = ev(f2, X + dt * k3x, Y + dt * k3y, ok)
    Xn[ok] = (X + dt / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x))[ok]
    Yn[ok] = (Y + dt / 6.0 * (k1y + 2 * k2y + 2 * k3y + k4y))[ok]
    out = ((Xn < f2.gx.x_min) | (Xn >= f2.gx.x_max)
           | (Yn < f2.gy.x_min) | (Yn >= f2.gy.x_max))
    ok &= ~out
    Xn[~ok] = X[~ok]
    Yn[~ok] = Y[~ok]
    return Xn, Yn, ok


def step_trajectory(psi_t: WaveFunction2D, ham: Hamiltonian, q: BohmConfig,
                    dt: float) -> BohmConfig:
    """One RK4 step of a single configuration from t to t + dt.

    The wave at the RK substeps comes from half-step propagation of psi_t.
    Raises NodeError / GridExitError when guidance is undefined.
    """
    half = propagate(psi_t, ham, 0.5 * dt, 1)
    full = propagate(half, ham, 0.5 * dt, 1)
    f0 = VelocityField2D(psi_t, ham.masses, ham.hbar)
    f1 = VelocityField2D(half, ham.masses, ham.hbar)
    f2 = VelocityField2D(full, ham.masses, ham.hbar)
    X = np.array([q.X])
    Y = np.array([q.Y])
    k1x, k1y = f0.velocity(X, Y)
    k2x, k2y = f1.velocity(X + 0.5 * dt * k1x, Y + 0.5 * dt * k1y)
    k3x, k3y = f1.velocity(X + 0.5 * dt * k2x, Y + 0.5 * dt * k2y)
    k4x, k4y = f2.velocity(X + dt * k3x, Y + dt * k3y)
    Xn = X + dt / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
    Yn = Y + dt / 6.0 * (k1y + 2 * k2y + 2 * k3y + k4y)
    f2._check_bounds(Xn, Yn)
    return BohmConfig(float(Xn[0]), float(Yn[0]))


@dataclass(frozen=True)
class EnsembleResult:
    times: np.ndarray
    xs: np.ndarray        # (n_traj, n_times)
    ys: np.ndarray
    failed: np.ndarray    # bool, per trajectory
    final_state: WaveFunction2D

    @property
    def n_failed(self) -> int:
        return int(np.count_nonzero(self.failed))

    def trajectory(self, i: int) -> Trajectory:
        return Trajectory(self.times, np.column_stack([self.xs[i], self.ys[i]]))


def evolve_trajectories(psi0: WaveFunction2D, ham: Hamiltonian, dt: float,
                        steps: int, starts, hbar: float = None) -> EnsembleResult:
    """RK4-advance an ensemble of configurations through `steps` wave steps.

    starts: array (n, 2) of initial (X, Y). Trajectories that hit a node or
    leave the grid are marked failed and frozen; the rest continue.
    """
    starts = np.asarray(starts, dtype=float)
    if starts.ndim != 2 or starts.shape[1] != 2:
        raise ValidationError("starts must have shape (n, 2)")
    X = starts[:, 0].copy()
    Y = starts[:, 1].copy()
    alive = np.ones(X.size, dtype=bool)
    xs = np.empty((X.size, steps + 1))
    ys = np.empty((X.size, steps + 1))
    xs[:, 0], ys[:, 0] = X, Y
    state = psi0
    f0 = VelocityField2D(state, ham.masses, ham.hbar)
    for s in range(steps):
        half = propagate(state, ham, 0.5 * dt, 1)
        state = propagate(half, ham, 0.5 * dt, 1)
        f1 = VelocityField2D(half, ham.masses, ham.hbar)
        f2 = VelocityField2D(state, ham.masses, ham.hbar)
        X, Y, alive = _rk4(f0, f1, f2, X, Y, dt, alive)
        xs[:, s + 1], ys[:, s + 1] = X, Y
        f0 = f2
    times = dt * np.arange(steps + 1)
    return EnsembleResult(times, xs, ys, ~alive, state)


@dataclass(frozen=True)
class Ensemble1DResult:
    times: np.ndarray
    xs: np.ndarray        # (n_traj, n_times)
    failed: np.ndarray
    final_state: WaveFunction1D

    @property
    def n_failed(self) -> int:
        return int(np.count_nonzero(self.failed))


def evolve_trajectories_1d(psi0: WaveFunction1D, ham: Hamiltonian, dt: float,
                           steps: int, starts) -> Ensemble1DResult:
    """1-D counterpart of evolve_trajectories (same RK4 and failure rules)."""
    X = np.asarray(starts, dtype=float).copy()
    if X.ndim != 1:
        raise ValidationError("starts must be a 1-D array of positions")
    alive = np.ones(X.size, dtype=bool)
    xs = np.empty((X.size, steps + 1))
    xs[:, 0] = X
    state = psi0
    mass = ham.masses[0]
    f0 = VelocityField1D(state, mass, ham.hbar)

    def ev(field, x, mask):
        v = np.zeros_like(x)
        good = mask.copy()
        idx = np.flatnonzero(mask)
        if idx.size:
            inb = (x[idx] >= field.grid.x_min) & (x[idx] < field.grid.x_max)
            good[idx[~inb]] = False
            sub = idx[inb]
            if sub.size:
                vv, m = field.velocity(x[sub], on_node="mask")
                v[sub] = vv
                good[sub[~m]] = False
        return v, good

    for s in range(steps):
        half = propagate(state, ham, 0.5 * dt, 1)
        state = propagate(half, ham, 0.5 * dt, 1)
        f1 = VelocityField1D(half, mass, ham.hbar)
        f2 = VelocityField1D(state, mass, ham.hbar)
        k1, alive = ev(f0, X, alive)
        k2, alive = ev(f1, X + 0.5 * dt * k1, alive)
        k3, alive = ev(f1, X + 0.5 * dt * k2, alive)
        k4, alive = ev(f2, X + dt * k3, alive)
        Xn = X + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        out = (Xn < f2.grid.x_min) | (Xn >= f2.grid.x_max)
        alive &= ~out
        X[alive] = Xn[alive]
        xs[:, s + 1] = X
        f0 = f2
    times = dt * np.arange(steps + 1)
    return Ensemble1DResult(times, xs, ~alive, state)


def sample_qeh(psi, n: int, seed: int) -> np.ndarray:
    """n draws from |Psi|^2 by inverse CDF over the flattened grid cells.

    Deterministic given seed (counter-based Philox stream); draw i is the
    i-th variate of the stream. Returns shape (n, 2) for 2-D states and
    (n,) for 1-D.
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    dens = psi.density().ravel()
    cdf = np.cumsum(dens)
    cdf /= cdf[-1]
    idx = np.searchsorted(cdf, rng.random(n), side="right")
    if isinstance(psi, WaveFunction1D):
        return psi.grid.points[idx]
    i, j = np.unravel_index(idx, psi.density().shape)
    return np.column_stack([psi.grid_x.points[i], psi.grid_y.points[j]])


def marginal_bin_probs(psi: WaveFunction2D, bins: int):
    """Per-axis bin probabilities of |Psi|^2 (bins aligned with grid cells)."""
    rho = psi.density()
    px = rho.sum(axis=1)
    py = rho.sum(axis=0)
    px /= px.sum()
    py /= py.sum()
    return (px.reshape(bins, -1).sum(axis=1), py.reshape(bins, -1).sum(axis=1))


def equivariance_check(psi0: WaveFunction2D, ham: Hamiltonian, dt: float,
                       steps: int, n: int, seed: int, bins: int = 16) -> dict:
    """Transport a QEH sample and test the final positions against |Psi_t|^2.

    Chi-square over the two marginal histograms (bins per axis, cells with
    expected count < 5 pooled). Returns {chi2, dof, p_value, n_failed}.
    """
    gx, gy = psi0.grid_x, psi0.grid_y
    starts = sample_qeh(psi0, n, seed)
    # spread each grid-cell draw uniformly over its cell; the bare lattice
    # of cell centers aliases through the flow map into the final histogram
    jit = np.random.Generator(np.random.Philox(
        np.random.SeedSequence([seed, 1])))
    starts = starts + jit.uniform(-0.5, 0.5, starts.shape) * [gx.dx, gy.dx]
    starts = np.maximum(starts, [gx.x_min, gy.x_min])
    res = evolve_trajectories(psi0, ham, dt, steps, starts)
    keep = ~res.failed
    px, py = marginal_bin_probs(res.final_state, bins)

    def wrap(v, g):
        # bins aligned with cell boundaries (centers at grid points), so a
        # bin's probability is an exact sum of cell masses; periodic wrap
        lo = g.x_min - 0.5 * g.dx
        return np.mod(v - lo, g.x_max - g.x_min) + lo

    fx = wrap(res.xs[keep, -1], gx)
    fy = wrap(res.ys[keep, -1], gy)
    cx = np.histogram(fx, bins=bins,
                      range=(gx.x_min - 0.5 * gx.dx, gx.x_max - 0.5 * gx.dx))[0]
    cy = np.histogram(fy, bins=bins,
                      range=(gy.x_min - 0.5 * gy.dx, gy.x_max - 0.5 * gy.dx))[0]
    rx = chi2_gof(cx, px)
    ry = chi2_gof(cy, py)
    chi2 = rx["chi2"] + ry["chi2"]
    dof = rx["dof"] + ry["dof"]
    return {"chi2": float(chi2), "dof": int(dof),
            "p_value": float(_stats.chi2.sf(chi2, dof)),
            "n_failed": res.n_failed}


def write_trajectories_csv(path, result: EnsembleResult):
    """Rows (trial, t, X, Y); failed trajectories keep their frozen tail."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trial", "t", "X", "Y"])
        for i in range(result.xs.shape[0]):
            for t, x, y in zip(result.times, result.xs[i], result.ys[i]):
                writer.writerow([i, repr(float(t)), repr(float(x)), repr(float(y))])


def write_equivariance_json(path, report: dict):
    with open(path, "w") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")
