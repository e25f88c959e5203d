"""Two-packet scan scenario with a removable beam splitter.

Particle 1 superposes two disjoint wave packets (supports x > 0 and x < 0);
particle 2 starts in a single pointer mode. With the beam splitter off the
joint state is a product, so the weak-value scan at near-zero transverse
momentum reconstructs the uncollapsed packet sum whatever the detected Y.
With it on, each packet drags the pointer to one side of y = 0 and the
per-bin scans reconstruct the individual packets.

Detection planes: A sits upstream of the beam splitter (the splitter never
acts on the detected mode), B and C sit downstream. B and C differ only in
whether detection happens before or after the scan coupling; the ordering
is metadata here and run_order_invariance checks it does not matter.
"""

import numpy as np

from .. import bohm, weakmeas
from ..bohm import BohmConfig
from ..errors import ValidationError
from ..qgrid import Grid1D, WaveFunction1D, normalize
from ..states import beam_splitter, branch_waves, two_branch_state
from ..stats import fidelity, fidelity_debiased, fidelity_debiased_sigma
from ..weakmeas import PointerProtocol, protocol_expectation, scan_pointer_protocol
from .config import RunRecord, ScenarioConfig

# max branch probability mass allowed on the wrong side of x = 0
SUPPORT_LEAK_TOL = 1e-6
RECON_FIDELITY_MIN = 0.99

ORDERINGS = {
    "A": "detect_upstream_of_bs",
    "B": "detect_downstream, coupling_after_detection",
    "C": "detect_downstream, coupling_before_detection",
}


def detection_state(cfg: ScenarioConfig):
    """Joint state seen by the Y detector, plus geometry and the tag.

    Returns (psi_pre, psi_det, psi1, psi2, collapsed, gx, gy).
    """
    g, st, pr = cfg.grid, cfg.state, cfg.protocol
    gx = Grid1D(g["x_min"], g["x_max"], g["n_x"])
    gy = Grid1D(g["y_min"], g["y_max"], g["n_y"])
    psi_pre = two_branch_state(gx, gy, st["x_sep"], st["sigma_x"],
                               st["sigma_y"])
    psi1, psi2 = branch_waves(gx, st["x_sep"], st["sigma_x"])

    neg = gx.points < 0.0
    leak1 = float(psi1.density()[neg].sum() * gx.dx)
    leak2 = float(psi2.density()[~neg].sum() * gx.dx)
    if max(leak1, leak2) > SUPPORT_LEAK_TOL:
        raise ValidationError(
            f"packet supports overlap x = 0 (leaked mass {max(leak1, leak2):.3g}"
            f" > {SUPPORT_LEAK_TOL:g}); increase x_sep or shrink sigma_x")

    collapsed = bool(pr["bs_inserted"] and pr["plane"] in ("B", "C"))
    psi_det = beam_splitter(psi_pre, st["bs_shift"]) if collapsed else psi_pre
    return psi_pre, psi_det, psi1, psi2, collapsed, gx, gy


def select_sites(psi_det, floor: float) -> np.ndarray:
    """Grid indices whose x-marginal density clears floor * max."""
    rho_x = psi_det.density().sum(axis=1)
    return np.flatnonzero(rho_x > floor * rho_x.max())


def replay_records(system, site_index: int, proto: PointerProtocol,
                   cap: int):
    """Per-trial rows for the first chunk of one site's protocol run.

    Repeats the engine's draw order (cells, basis, readout uniform, then the
    model-specific readout streams) on the same keyed generator, so the rows
    are exactly the trials run_pointer_protocol consumed.
    """
    tab = weakmeas._CouplingTables(system, site_index, proto)
    if tab.gy is None:
        raise ValidationError("trial records need a two-particle system")
    n = min(weakmeas.CHUNK_TRIALS, proto.n_trials)
    rng = weakmeas._chunk_rng(proto.seed, site_index, 0)

    flat = tab.cell_probs.ravel()
    cdf = np.cumsum(flat)
    cdf /= cdf[-1]
    cells = np.searchsorted(cdf, rng.random(n), side="right")
    basis = rng.random(n) < 0.5
    u_read = rng.random(n)

    p_idx, y_idx = np.divmod(cells, tab.gy.n_points)
    y_bin = tab.bin_of_y[y_idx]
    accepted = tab.win_p[p_idx] & (y_bin >= 0)

    outcome = np.full(n, np.nan)
    if proto.pointer_model == "qubit":
        d = np.where(basis, tab.d_im[p_idx, y_idx], tab.d_re[p_idx, y_idx])
        outcome[accepted] = np.where(
            u_read[accepted] < 0.5 * (1.0 + d[accepted]), 1.0, -1.0)
    else:
        acc = np.flatnonzero(accepted)
        for use_im in (False, True):
            sel = acc[basis[acc]] if use_im else acc[~basis[acc]]
            if sel.size == 0:
                continue
            pi, yi = p_idx[sel], y_idx[sel]
            if use_im:
                outcome[sel] = weakmeas._sample_momentum_readout(
                    rng, tab.rest[pi, yi], tab.num[pi, yi], tab.s,
                    tab.sigma_p, proto.hbar)
            else:
                outcome[sel] = weakmeas._sample_position_readout(
                    rng, tab.A[pi, yi], tab.B[pi, yi], tab.C[pi, yi],
                    tab.s, tab.sigma_q)

    rows = []
    for i in range(min(n, cap)):
        rows.append(RunRecord(
            trial=i, accepted=bool(accepted[i]),
            p_x=float(tab.p_values[p_idx[i]]),
            y=float(tab.gy.points[y_idx[i]]), y_bin=int(y_bin[i]),
            basis="im" if basis[i] else "re",
            outcome=float(outcome[i]) if accepted[i] else None).row())
    return rows


def run_photon_planes(cfg: ScenarioConfig) -> dict:
    """Scan reconstruction per Y bin, checked against the packet targets
    and against conditional slices at sampled configuration points."""
    st, pr = cfg.state, cfg.protocol
    psi_pre, psi_det, psi1, psi2, collapsed, gx, gy = detection_state(cfg)
    tag = "collapsed" if collapsed else "uncollapsed"

    if collapsed:
        y_edges = [gy.x_min, 0.0, gy.x_max]
        targets = [psi2, psi1]
        target_names = ["psi_2", "psi_1"]
    else:
        y_edges = [gy.x_min, gy.x_max]
        chi = normalize(WaveFunction1D(
            gx, (psi1.amplitudes + psi2.amplitudes) / np.sqrt(2.0),
            "unnormalized"))
        targets = [chi]
        target_names = ["(psi_1+psi_2)/sqrt(2)"]

    dp = gx.conjugate(1.0).dx
    proto = PointerProtocol(
        coupling=pr["coupling"], n_trials=cfg.n_trials, seed=cfg.seed,
        pointer_width=pr["pointer_width"],
        p_x_bin=pr["p_x_window_dp"] * dp, y_bins=y_edges,
        pointer_model=pr["pointer_model"])

    sites = select_sites(psi_det, pr["site_density_floor"])
    x_sites = gx.points[sites]
    results = scan_pointer_protocol(psi_det, sites, proto)
    exact_cols = [protocol_expectation(psi_det, int(s), proto) for s in sites]
    n_bins = len(y_edges) - 1
    exact = np.array([[complex(re[b], im[b]) for b in range(n_bins)]
                      for re, im in exact_cols])

    draws = bohm.sample_qeh(psi_det, pr["cwf_samples"], cfg.seed)

    wf_tables = {"psi_1": (gx.points, psi1.amplitudes),
                 "psi_2": (gx.points, psi2.amplitudes)}
    bins_report = []
    empty_bins = []
    all_pass = True
    for b in range(n_bins):
        est = np.array([r.bins[b].re + 1j * r.bins[b].im for r in results])
        var = np.array([r.bins[b].se_re ** 2 + r.bins[b].se_im ** 2
                        for r in results])
        filled = ~np.array([r.bins[b].empty for r in results])
        n_acc = int(sum(r.bins[b].n_accepted for r in results))
        tvals = targets[b].amplitudes[sites]
        w_exact = exact[:, b]

        bin_empty = not filled.any()
        if bin_empty:
            empty_bins.append(b)
            fid_exact = fid_raw = fid_deb = sigma = None
        else:
            fid_exact = fidelity(w_exact[filled], tvals[filled])
            fid_raw = fidelity(est[filled], tvals[filled])
            fid_deb = fidelity_debiased(est[filled], tvals[filled],
                                        var[filled])
            sigma = fidelity_debiased_sigma(est[filled], var[filled])
        # full-scale runs must clear RECON_FIDELITY_MIN outright; noisier
        # desk-scale runs only need consistency with fidelity 1 at 3 sigma
        threshold = (None if sigma is None
                     else min(RECON_FIDELITY_MIN, 1.0 - 3.0 * sigma))

        lo, hi = y_edges[b], y_edges[b + 1]
        in_bin = (draws[:, 1] >= lo) & (draws[:, 1] < hi)
        cwf_fids = []
        if not bin_empty:
            for x0, y0 in draws[in_bin]:
                slc = bohm.conditional_wavefunction(psi_det,
                                                    BohmConfig(x0, y0))
                cwf_fids.append(fidelity_debiased(
                    est[filled], slc.amplitudes[sites][filled], var[filled]))
        cwf_mean = float(np.mean(cwf_fids)) if cwf_fids else None
        cwf_min = float(np.min(cwf_fids)) if cwf_fids else None

        ok = (threshold is not None and fid_deb > threshold
              and cwf_mean is not None and cwf_mean > threshold)
        all_pass &= ok
        bins_report.append({
            "bin": b, "y_lo": float(lo), "y_hi": float(hi), "tag": tag,
            "target": target_names[b], "n_accepted": n_acc,
            "empty": bin_empty, "sites_empty": int((~filled).sum()),
            "fidelity_exact_vs_target": fid_exact,
            "fidelity_mc_vs_target": fid_raw,
            "fidelity_mc_vs_target_debiased": fid_deb,
            "fidelity_sigma": sigma,
            "fidelity_threshold": threshold,
            "cwf_check": {"n_samples": int(in_bin.sum()),
                          "mean_fidelity": cwf_mean,
                          "min_fidelity": cwf_min},
            "pass": ok,
        })

        est_out = np.where(filled, est, np.nan + 0j)
        wf_tables[f"target_bin{b}"] = (x_sites, tvals)
        wf_tables[f"recon_exact_bin{b}"] = (x_sites, w_exact)
        wf_tables[f"recon_mc_bin{b}"] = (x_sites, est_out)

    rho_sites = psi_det.density().sum(axis=1)[sites]
    record_site = int(sites[int(np.argmax(rho_sites))])
    cap = cfg.report.get("records_cap", 10_000)
    records = replay_records(psi_det, record_site, proto, cap)

    report = {
        "scenario": "photon_planes",
        "config": cfg.to_dict(),
        "plane": pr["plane"],
        "ordering": ORDERINGS[pr["plane"]],
        "bs_inserted": bool(pr["bs_inserted"]),
        "tag": tag,
        "pointer_model": proto.pointer_model,
        "momentum_window": float(proto.p_x_bin),
        "weakness_ratio": float(proto.weakness_ratio(gx)),
        "sites": {"count": int(sites.size),
                  "x_min": float(x_sites.min()),
                  "x_max": float(x_sites.max()),
                  "record_site_index": record_site},
        "acceptance": {
            "expected": float(results[0].acceptance_expected),
            "mean_rate": float(np.mean([r.acceptance_rate for r in results]))},
        "bins": bins_report,
        "empty_bins": empty_bins,
        "pass": bool(all_pass),
    }
    return {"report": report, "records": records,
            "record_fields": RunRecord.FIELDS, "wf_tables": wf_tables}
