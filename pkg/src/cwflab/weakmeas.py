"""Weak values and the pointer-coupling measurement protocol.

Closed forms
------------
weak_value computes <b|A|psi> / <b|psi>. The momentum-post-selected scans
use delta-normalized plane-wave bras <p|x> = exp(-i p x / hbar), so the
denominator is dx * sum_x psi(x) exp(-i p x / hbar); at grid momenta that
equals sqrt(2 pi hbar) times the unitary transform and the completeness
sum over x of value(x) * dx equals 1 exactly.

The site observable is the projector density: the indicator of one grid
cell divided by dx (operator norm 1/dx), the grid regularization of a
position projector.

Pointer models and calibration
------------------------------
qubit pointer: a two-level ancilla starts in |H>; when the particle sits
in the coupled cell its polarization rotates by alpha = g / (dx * scale)
toward |V| (scale = pointer_width, default 1). After post-selecting the
particle on a momentum cell p (and a Y cell in the entangled case), the
ancilla state is proportional to

    (1 - W(1 - cos a))|H> + W sin a |V>,   W = dx * w,

with w the weak value of the projector density. Reading out in the
diagonal basis D/A = (|H> +- |V>)/sqrt(2) and the circular basis
L/R = (|H> +- i|V>)/sqrt(2) gives, exactly,

    P_D - P_A = +2 sin a * (Re W - |W|^2 (1 - cos a)) / n,
    P_L - P_R = +2 sin a * Im W / n,
    n = |1 - W(1 - cos a)|^2 + |W sin a|^2,

so (P_D - P_A) / (2 dx sin a) -> Re w and (P_L - P_R) / (2 dx sin a)
-> Im w as a -> 0, with corrections even in a. QUBIT_IMBALANCE_GAIN
names the factor 2 above.

gaussian pointer: a mode with position spread sigma_q = pointer_width
(momentum spread sigma_p = hbar / (2 sigma_q)) is shifted by
s = g / dx when the particle sits in the coupled cell. First order in
the coupling,

    <q> = GAUSSIAN_POSITION_GAIN * g * Re w,
    <p> = GAUSSIAN_MOMENTUM_GAIN * sigma_p^2 * g * Im w / hbar,

again with even-order corrections. Both models therefore share the same
weak limit, which the tests check directly.

Monte Carlo
-----------
The protocol samples the exact joint distribution of (momentum cell,
Y cell, readout) implied by the unitary coupling, so the simulation is
faithful at every coupling strength, not only to first order.
Randomness is counter-based (Philox) keyed by (seed, site, chunk) with a
fixed chunk size, which makes results independent of how chunks are
distributed over workers; partial sums merge in fixed chunk order.
"""

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import PostSelectionError, ValidationError
from .qgrid import Grid1D, WaveFunction1D, WaveFunction2D, to_momentum

OVERLAP_FLOOR = 1e-12
CHUNK_TRIALS = 1 << 16

QUBIT_IMBALANCE_GAIN = 2.0     # P_D - P_A = GAIN * sin(a) * Re W + O(a^2)
GAUSSIAN_POSITION_GAIN = 1.0   # <q> = GAIN * g * Re w + O(g^2)
GAUSSIAN_MOMENTUM_GAIN = 2.0   # <p> = GAIN * sigma_p^2 * g * Im w / hbar + O(g^2)


@dataclass(frozen=True)
class WeakValue:
    value: complex
    observable: str
    postselection: str

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValidationError("weak value must be finite")


def weak_value(A: np.ndarray, psi: WaveFunction1D, b: WaveFunction1D,
               observable: str = "A", postselection: str = "b") -> WeakValue:
    """<b|A|psi> / <b|psi> with A a dense matrix or a diagonal (1-D array)."""
    if b.grid != psi.grid:
        raise ValidationError("psi and b live on different grids")
    A = np.asarray(A)
    if A.ndim == 1:
        Apsi = A * psi.amplitudes
    elif A.ndim == 2:
        Apsi = A @ psi.amplitudes
    else:
        raise ValidationError("A must be a vector (diagonal) or a matrix")
    dx = psi.grid.dx
    den = np.vdot(b.amplitudes, psi.amplitudes) * dx
    scale = psi.norm() * b.norm()
    if abs(den) < OVERLAP_FLOOR * scale:
        raise PostSelectionError(f"post-selection overlap {abs(den):.3e} below floor")
    num = np.vdot(b.amplitudes, Apsi) * dx
    return WeakValue(complex(num / den), observable, postselection)


def momentum_amplitude(psi: WaveFunction1D, p: float, hbar: float = 1.0) -> complex:
    """dx * sum_x psi(x) exp(-i p x / hbar): plane-wave-bra overlap <p|psi>."""
    x = psi.grid.points
    return complex(np.sum(psi.amplitudes * np.exp(-1j * p * x / hbar)) * psi.grid.dx)


def _denominator_scale(psi: WaveFunction1D, hbar: float) -> float:
    tilde = to_momentum(psi, hbar)
    return float(np.sqrt(2.0 * np.pi * hbar) * np.max(np.abs(tilde.amplitudes)))


def weak_value_scan(psi: WaveFunction1D, p_x: float = 0.0,
                    hbar: float = 1.0) -> np.ndarray:
    """exp(-i p_x x / hbar) psi(x) / <p_x|psi> over the whole grid.

    At p_x = 0 the scan is proportional to psi itself.
    """
    den = momentum_amplitude(psi, p_x, hbar)
    scale = _denominator_scale(psi, hbar)
    if scale == 0.0 or abs(den) < OVERLAP_FLOOR * scale:
        raise PostSelectionError(f"momentum amplitude at p={p_x} below floor")
    x = psi.grid.points
    return np.exp(-1j * p_x * x / hbar) * psi.amplitudes / den


def weak_value_pi_x(psi: WaveFunction1D, x: float, p_x: float,
                    hbar: float = 1.0) -> WeakValue:
    """Weak value of the projector density at x, post-selected on momentum p_x."""
    k = psi.grid.index_of(x)
    value = weak_value_scan(psi, p_x, hbar)[k]
    return WeakValue(complex(value), f"pi_x(x={psi.grid.points[k]:g})",
                     f"p_x={p_x:g}")


def weak_value_entangled_scan(Psi: WaveFunction2D, p_x: float, Y: float,
                              hbar: float = 1.0) -> np.ndarray:
    """Scan of exp(-i p_x x/hbar) Psi(x, Y) / <p_x|Psi(., Y)> over x.

    At p_x = 0 this is proportional to the conditional slice at Y.
    """
    j = Psi.grid_y.index_of(Y)
    column = WaveFunction1D(Psi.grid_x, Psi.amplitudes[:, j],
                            norm_tag="unnormalized")
    return weak_value_scan(column, p_x, hbar)


def weak_value_entangled(Psi: WaveFunction2D, x: float, p_x: float, Y: float,
                         hbar: float = 1.0) -> WeakValue:
    k = Psi.grid_x.index_of(x)
    value = weak_value_entangled_scan(Psi, p_x, Y, hbar)[k]
    return WeakValue(complex(value), f"pi_x(x={Psi.grid_x.points[k]:g})",
                     f"p_x={p_x:g};Y={Y:g}")


@dataclass(frozen=True)
class PointerProtocol:
    """Knobs of the pointer-coupling run.

    coupling: g in the impulsive system-pointer coupling.
    pointer_width: qubit model -> readout scale (alpha = g/(dx*scale));
        gaussian model -> position spread sigma_q of the pointer mode.
    p_x_bin: half-width of the accepted momentum window (None: 1.5 * dp).
    y_bins: bin count (uniform over the Y domain) or explicit edges.
    """

    coupling: float
    n_trials: int
    seed: int = 0
    pointer_width: float = 1.0
    p_x_bin: float = None
    y_bins: object = 16
    pointer_model: str = "qubit"
    hbar: float = 1.0

    def __post_init__(self):
        if not (self.coupling > 0 and self.pointer_width > 0):
            raise ValidationError("coupling and pointer_width must be positive")
        if self.n_trials <= 0:
            raise ValidationError("n_trials must be positive")
        if self.pointer_model not in ("qubit", "gaussian"):
            raise ValidationError(f"unknown pointer model {self.pointer_model!r}")

    def weakness_ratio(self, grid: Grid1D) -> float:
        """g * ||A|| / sigma_p with ||A|| = 1/dx for the cell projector density."""
        if self.pointer_model == "qubit":
            return self.coupling / (grid.dx * self.pointer_width)
        sigma_p = self.hbar / (2.0 * self.pointer_width)
        return self.coupling / (grid.dx * sigma_p)


@dataclass(frozen=True)
class BinEstimate:
    y_lo: float
    y_hi: float
    re: float
    im: float
    se_re: float
    se_im: float
    n_accepted: int
    n_re: int
    n_im: int
    empty: bool

    @property
    def value(self) -> complex:
        return complex(self.re, self.im)


@dataclass(frozen=True)
class ProtocolResult:
    site_index: int
    x_site: float
    pointer_model: str
    coupling: float
    weakness_ratio: float
    window: float
    n_trials: int
    acceptance_rate: float
    acceptance_expected: float
    y_edges: np.ndarray
    bins: tuple

    def weak_values(self):
        return [WeakValue(b.value, f"pi_x(x={self.x_site:g})",
                          f"|p_x|<{self.window:g};Y in [{b.y_lo:g},{b.y_hi:g})")
                for b in self.bins if not b.empty]


class _CouplingTables:
    """Exact per-(p cell, Y cell) statistics of the coupled, post-selected run."""

    def __init__(self, system, site_index: int, proto: PointerProtocol):
        if isinstance(system, WaveFunction1D):
            gx = system.grid
            amp = system.amplitudes[:, None]
            gy = None
        elif isinstance(system, WaveFunction2D):
            gx, gy = system.grid_x, system.grid_y
            amp = system.amplitudes
        else:
            raise ValidationError("system must be a 1-D or 2-D wave function")
        hbar = proto.hbar
        self.gx, self.gy = gx, gy
        self.site = site_index
        self.x_site = gx.points[site_index]
        pgrid = gx.conjugate(hbar)
        self.p_values = pgrid.points
        self.dp = pgrid.dx

        k = 2.0 * np.pi * np.fft.fftfreq(gx.n_points, d=gx.dx)
        phase = np.exp(-1j * k * gx.x_min)
        den = np.fft.fftshift(np.fft.fft(amp, axis=0) * phase[:, None] * gx.dx,
                              axes=0)
        num = gx.dx * np.exp(-1j * self.p_values[:, None] * self.x_site / hbar) \
            * amp[site_index, None, :]
        self.den = den
        self.num = num

        self.window = proto.p_x_bin if proto.p_x_bin is not None else 1.5 * self.dp
        self.win_p = np.abs(self.p_values) < self.window

        measure = self.dp / (2.0 * np.pi * hbar)
        if gy is not None:
            measure *= gy.dx
        if proto.pointer_model == "qubit":
            a = proto.coupling / (gx.dx * proto.pointer_width)
            uH = den + (np.cos(a) - 1.0) * num
            uV = np.sin(a) * num
            nu = np.abs(uH) ** 2 + np.abs(uV) ** 2
            cross = uH * np.conj(uV)
            with np.errstate(invalid="ignore", divide="ignore"):
                self.d_re = np.where(nu > 0, 2.0 * cross.real / np.maximum(nu, 1e-300), 0.0)
                self.d_im = np.where(nu > 0, -2.0 * cross.imag / np.maximum(nu, 1e-300), 0.0)
            self.readout_denom = 2.0 * gx.dx * np.sin(a)
            raw = nu * measure
        else:
            sigma_q = proto.pointer_width
            sigma_p = hbar / (2.0 * sigma_q)
            s = proto.coupling / gx.dx
            damp = np.exp(-(s * sigma_p) ** 2 / (2.0 * hbar**2))
            rest = den - num
            A = np.abs(rest) ** 2
            B = np.abs(num) ** 2
            K = np.conj(rest) * num
            C = 2.0 * K.real * damp
            nu = A + B + C
            with np.errstate(invalid="ignore", divide="ignore"):
                safe = np.maximum(nu, 1e-300)
                self.mean_q = (B * s + 0.5 * C * s) / safe
                self.mean_p = (2.0 * K.imag * (s / hbar) * sigma_p**2 * damp) / safe
            self.A, self.B, self.C, self.K = A, B, C, K
            self.rest = rest
            self.s, self.sigma_q, self.sigma_p, self.damp = s, sigma_q, sigma_p, damp
            raw = nu * measure

        total = raw.sum()
        self.cell_probs = raw / total
        base = (np.abs(den) ** 2 * measure)
        base /= base.sum()
        self.acceptance_expected = float(base[self.win_p].sum())

        if gy is None:
            self.y_edges = np.array([0.0, 1.0])
            self.bin_of_y = np.zeros(1, dtype=int)
            self.n_bins = 1
        else:
            yb = proto.y_bins
            if np.isscalar(yb):
                edges = np.linspace(gy.x_min, gy.x_max, int(yb) + 1)
            else:
                edges = np.asarray(yb, dtype=float)
                if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
                    raise ValidationError("y_bins edges must be increasing")
            self.y_edges = edges
            idx = np.searchsorted(edges, gy.points, side="right") - 1
            idx[(gy.points < edges[0]) | (gy.points >= edges[-1])] = -1
            idx[idx == edges.size - 1] = -1
            self.bin_of_y = idx
            self.n_bins = edges.size - 1


def _norm_pdf(q, mean, sigma):
    return np.exp(-((q - mean) ** 2) / (2.0 * sigma**2)) / (sigma * np.sqrt(2.0 * np.pi))


def _sample_position_readout(rng, A, B, C, s, sigma):
    """Exact draws from |(1-W) phi(q) + W phi(q - s)|^2 per trial.

    The density is A*N(0) + B*N(s) + C*N(s/2) (C may be negative); sampling
    is mixture-proposal rejection with envelope A*N(0) + B*N(s) + |C|*N(s/2).
    """
    n = A.size
    out = np.empty(n)
    todo = np.arange(n)
    while todo.size:
        a, b, c = A[todo], B[todo], C[todo]
        absc = np.abs(c)
        u = rng.random(todo.size) * (a + b + absc)
        mean = np.where(u < a, 0.0, np.where(u < a + b, s, 0.5 * s))
        q = rng.normal(mean, sigma)
        accept = np.ones(todo.size, dtype=bool)
        neg = c < 0
        if np.any(neg):
            n0 = _norm_pdf(q[neg], 0.0, sigma)
            ns = _norm_pdf(q[neg], s, sigma)
            nh = _norm_pdf(q[neg], 0.5 * s, sigma)
            target = a[neg] * n0 + b[neg] * ns + c[neg] * nh
            envelope = a[neg] * n0 + b[neg] * ns + absc[neg] * nh
            accept[neg] = rng.random(neg.sum()) * envelope <= target
        out[todo[accept]] = q[accept]
        todo = todo[~accept]
    return out


def _sample_momentum_readout(rng, rest, num, s, sigma_p, hbar):
    """Exact draws from N(0, sigma_p^2)(p) |rest + num e^{-i p s/hbar}|^2 (normalized)."""
    n = rest.size
    out = np.empty(n)
    todo = np.arange(n)
    bound = (np.abs(rest) + np.abs(num)) ** 2
    while todo.size:
        p = rng.normal(0.0, sigma_p, todo.size)
        f = np.abs(rest[todo] + num[todo] * np.exp(-1j * p * s / hbar)) ** 2
        accept = rng.random(todo.size) * bound[todo] <= f
        out[todo[accept]] = p[accept]
        todo = todo[~accept]
    return out


def _chunk_rng(seed: int, site_index: int, chunk_id: int):
    return np.random.Generator(np.random.Philox(
        np.random.SeedSequence([seed, site_index, chunk_id])))


def run_pointer_protocol(system, A_site, proto: PointerProtocol) -> ProtocolResult:
    """Monte-Carlo pointer protocol at one coupled site.

    Per trial: sample the exact joint (momentum cell, Y cell) distribution of
    the coupled state, accept iff |p_x| < window, assign the trial to one of
    the two readout bases, sample the readout, and pool per Y bin. Empty bins
    are flagged, not errors.
    """
    site = A_site if isinstance(A_site, (int, np.integer)) else None
    if site is None:
        grid = system.grid if isinstance(system, WaveFunction1D) else system.grid_x
        site = grid.index_of(float(A_site))
    tab = _CouplingTables(system, site, proto)
    qubit = proto.pointer_model == "qubit"

    flat_probs = tab.cell_probs.ravel()
    cdf = np.cumsum(flat_probs)
    cdf /= cdf[-1]
    bin_flat = np.broadcast_to(tab.bin_of_y, tab.cell_probs.shape).ravel()
    win_flat = np.broadcast_to(tab.win_p[:, None], tab.cell_probs.shape).ravel()

    nb = tab.n_bins
    if qubit:
        d_re_flat = tab.d_re.ravel()
        d_im_flat = tab.d_im.ravel()
        counts = np.zeros((nb, 2, 2), dtype=np.int64)  # [bin, basis, outcome]
    else:
        rest_flat = tab.rest.ravel()
        num_flat = tab.num.ravel()
        sums = np.zeros((nb, 2))
        sumsq = np.zeros((nb, 2))
        nobs = np.zeros((nb, 2), dtype=np.int64)
    n_in_bin = np.zeros(nb, dtype=np.int64)
    n_accepted = 0

    done = 0
    chunk_id = 0
    while done < proto.n_trials:
        n = min(CHUNK_TRIALS, proto.n_trials - done)
        rng = _chunk_rng(proto.seed, site, chunk_id)
        cells = np.searchsorted(cdf, rng.random(n), side="right")
        basis = rng.random(n) < 0.5
        u_read = rng.random(n)
        keep = win_flat[cells]
        n_accepted += int(np.count_nonzero(keep))
        cells = cells[keep]
        basis = basis[keep]
        u_read = u_read[keep]
        bins = bin_flat[cells]
        ok = bins >= 0
        cells, basis, u_read, bins = cells[ok], basis[ok], u_read[ok], bins[ok]
        np.add.at(n_in_bin, bins, 1)
        if qubit:
            p_plus = np.where(basis, 0.5 * (1.0 + d_im_flat[cells]),
                              0.5 * (1.0 + d_re_flat[cells]))
            outcome = (u_read < p_plus).astype(np.int64)
            idx = (bins * 4 + basis.astype(np.int64) * 2 + outcome)
            counts += np.bincount(idx, minlength=nb * 4).reshape(nb, 2, 2)
        else:
            for use_im in (False, True):
                sel = basis if use_im else ~basis
                sub = cells[sel]
                if sub.size == 0:
                    continue
                if use_im:
                    draws = _sample_momentum_readout(
                        rng, rest_flat[sub], num_flat[sub], tab.s,
                        tab.sigma_p, proto.hbar)
                    col = 1
                else:
                    draws = _sample_position_readout(
                        rng, tab.A.ravel()[sub], tab.B.ravel()[sub],
                        tab.C.ravel()[sub], tab.s, tab.sigma_q)
                    col = 0
                bsub = bins[sel]
                np.add.at(sums[:, col], bsub, draws)
                np.add.at(sumsq[:, col], bsub, draws**2)
                np.add.at(nobs[:, col], bsub, 1)
        done += n
        chunk_id += 1

    bins_out = []
    for b in range(nb):
        y_lo, y_hi = float(tab.y_edges[b]), float(tab.y_edges[b + 1])
        if qubit:
            n_re = int(counts[b, 0].sum())
            n_im = int(counts[b, 1].sum())
            empty = n_re == 0 or n_im == 0
            if empty:
                re = im = se_re = se_im = float("nan")
            else:
                d = (counts[b, 0, 1] - counts[b, 0, 0]) / n_re
                l = (counts[b, 1, 1] - counts[b, 1, 0]) / n_im
                re = d / tab.readout_denom
                im = l / tab.readout_denom
                se_re = np.sqrt(max(1.0 - d * d, 0.0) / n_re) / tab.readout_denom
                se_im = np.sqrt(max(1.0 - l * l, 0.0) / n_im) / tab.readout_denom
        else:
            n_re = int(nobs[b, 0])
            n_im = int(nobs[b, 1])
            empty = n_re == 0 or n_im == 0
            if empty:
                re = im = se_re = se_im = float("nan")
            else:
                mq = sums[b, 0] / n_re
                mp = sums[b, 1] / n_im
                vq = max(sumsq[b, 0] / n_re - mq * mq, 0.0)
                vp = max(sumsq[b, 1] / n_im - mp * mp, 0.0)
                re = mq / (GAUSSIAN_POSITION_GAIN * proto.coupling)
                im = mp * proto.hbar / (GAUSSIAN_MOMENTUM_GAIN
                                        * tab.sigma_p**2 * proto.coupling)
                se_re = np.sqrt(vq / n_re) / (GAUSSIAN_POSITION_GAIN * proto.coupling)
                se_im = np.sqrt(vp / n_im) * proto.hbar / (
                    GAUSSIAN_MOMENTUM_GAIN * tab.sigma_p**2 * proto.coupling)
        bins_out.append(BinEstimate(y_lo, y_hi, float(re), float(im),
                                    float(se_re), float(se_im),
                                    int(n_in_bin[b]), n_re, n_im, empty))

    return ProtocolResult(
        site_index=site, x_site=float(tab.x_site),
        pointer_model=proto.pointer_model, coupling=proto.coupling,
        weakness_ratio=proto.weakness_ratio(tab.gx), window=float(tab.window),
        n_trials=proto.n_trials,
        acceptance_rate=n_accepted / proto.n_trials,
        acceptance_expected=tab.acceptance_expected,
        y_edges=None if tab.gy is None else tab.y_edges,
        bins=tuple(bins_out))


def protocol_expectation(system, A_site, proto: PointerProtocol):
    """Infinite-trial limit of the protocol estimators, computed exactly.

    Returns (re, im) arrays over Y bins (shape (n_bins,)); bins with zero
    acceptance probability hold NaN.
    """
    site = A_site if isinstance(A_site, (int, np.integer)) else None
    if site is None:
        grid = system.grid if isinstance(system, WaveFunction1D) else system.grid_x
        site = grid.index_of(float(A_site))
    tab = _CouplingTables(system, site, proto)
    probs = tab.cell_probs * tab.win_p[:, None]
    re = np.full(tab.n_bins, np.nan)
    im = np.full(tab.n_bins, np.nan)
    for b in range(tab.n_bins):
        cols = tab.bin_of_y == b
        mass = probs[:, cols].sum()
        if mass <= 0:
            continue
        if proto.pointer_model == "qubit":
            re[b] = (probs[:, cols] * tab.d_re[:, cols]).sum() / mass / tab.readout_denom
            im[b] = (probs[:, cols] * tab.d_im[:, cols]).sum() / mass / tab.readout_denom
        else:
            mq = (probs[:, cols] * tab.mean_q[:, cols]).sum() / mass
            mp = (probs[:, cols] * tab.mean_p[:, cols]).sum() / mass
            re[b] = mq / (GAUSSIAN_POSITION_GAIN * proto.coupling)
            im[b] = mp * proto.hbar / (GAUSSIAN_MOMENTUM_GAIN
                                       * tab.sigma_p**2 * proto.coupling)
    return re, im


def scan_pointer_protocol(system, sites, proto: PointerProtocol):
    """run_pointer_protocol at each site; per-site RNG keyed (seed, site, chunk)."""
    return [run_pointer_protocol(system, int(s), proto) for s in sites]


def results_to_records(results):
    rows = []
    for r in results:
        for i, b in enumerate(r.bins):
            rows.append({
                "x": r.x_site, "y_bin": i, "y_lo": b.y_lo, "y_hi": b.y_hi,
                "re": b.re, "im": b.im, "se_re": b.se_re, "se_im": b.se_im,
                "n_accepted": b.n_accepted, "empty": b.empty})
    return rows


def write_protocol_json(path, results, meta=None):
    payload = {"meta": meta or {}, "records": results_to_records(results)}
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2, allow_nan=True)
        fh.write("\n")


def write_protocol_csv(path, results):
    rows = results_to_records(results)
    fields = ["x", "y_bin", "y_lo", "y_hi", "re", "im", "se_re", "se_im",
              "n_accepted", "empty"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
