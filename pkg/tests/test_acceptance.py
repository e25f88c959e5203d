"""End-to-end acceptance checks for the whole laboratory.

Each test covers one headline guarantee and prints a single PASS/FAIL line
with the measured figure of merit, so `pytest -s` reads as a scorecard.
Wall-clock budgets are asserted alongside the numerical tolerances.
"""

import time

import numpy as np

from conftest import random_state_1d, random_state_2d
from cwflab import bohm, polar, weakmeas
from cwflab.bohm import BohmConfig
from cwflab.labcli import selftest
from cwflab.labcli.config import default_config, parse_config
from cwflab.labcli.density import run_density_dm
from cwflab.labcli.fig1 import run_fig1
from cwflab.labcli.order import run_order_invariance
from cwflab.qgrid import Grid1D
from cwflab.states import beam_splitter, gaussian_1d, two_branch_state


def _line(name: str, ok: bool, detail: str, t0: float) -> None:
    print(f"{'PASS' if ok else 'FAIL'} {name}: {detail} "
          f"[{time.time() - t0:.2f}s]")


def _scan_deviation(scan, target):
    # one global constant fixed at the target's largest amplitude
    j = int(np.argmax(np.abs(target)))
    const = scan[j] / target[j]
    return float(np.abs(scan - const * target).max() / np.abs(scan).max())


def test_pure_scan_identity():
    t0 = time.time()
    grid = Grid1D(-16.0, 16.0, 256)
    dev = 0.0
    for psi in (gaussian_1d(grid, 0.0, 1.0, k0=0.4),
                random_state_1d(grid, seed=3)):
        scan = weakmeas.weak_value_scan(psi)
        dev = max(dev, _scan_deviation(scan, psi.amplitudes))
    elapsed = time.time() - t0
    ok = dev < 1e-9 and elapsed < 1.0
    _line("pure-state scan identity", ok,
          f"max rel dev {dev:.2e} (tol 1e-9)", t0)
    assert dev < 1e-9
    assert elapsed < 1.0


def test_conditional_scan_identity():
    t0 = time.time()
    gx = Grid1D(-8.0, 8.0, 256)
    gy = Grid1D(-8.0, 8.0, 256)
    psi = beam_splitter(two_branch_state(gx, gy, 6.0, 0.5, 0.7), 2.5)
    rho_y = psi.density().sum(axis=0)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(23)))
    ys = rng.choice(gy.points, size=100, p=rho_y / rho_y.sum())
    dev = 0.0
    for y in ys:
        scan = weakmeas.weak_value_entangled_scan(psi, 0.0, float(y))
        slc = bohm.conditional_wavefunction(psi, BohmConfig(0.0, float(y)))
        dev = max(dev, _scan_deviation(scan, slc.amplitudes))
    elapsed = time.time() - t0
    ok = dev < 1e-9 and elapsed < 10.0
    _line("conditional-slice scan identity", ok,
          f"max rel dev over 100 draws {dev:.2e} (tol 1e-9)", t0)
    assert dev < 1e-9
    assert elapsed < 10.0


def test_monte_carlo_convergence():
    t0 = time.time()
    grid = Grid1D(-16.0, 16.0, 256)
    pure = gaussian_1d(grid, 0.0, 1.0, k0=0.4)
    wv = weakmeas.weak_value_scan(pure)
    sites = (0.0, 0.5, -1.0)

    # pure state: sampled readout against the analytic weak value
    proto = weakmeas.PointerProtocol(coupling=0.02, n_trials=1_000_000,
                                     seed=5, pointer_width=1.0)
    z_pure = 0.0
    for x in sites:
        b = weakmeas.run_pointer_protocol(pure, grid.index_of(x),
                                          proto).bins[0]
        w = complex(wv[grid.index_of(x)])
        z_pure = max(z_pure, abs(b.re - w.real) / b.se_re,
                     abs(b.im - w.imag) / b.se_im)

    # entangled planes state: per-bin readout against the vanishing-coupling
    # expectation, which is the bin-pooled weak value computed exactly
    gx = Grid1D(-8.0, 8.0, 256)
    gy = Grid1D(-8.0, 8.0, 256)
    planes = beam_splitter(two_branch_state(gx, gy, 6.0, 0.5, 0.7), 2.5)
    dp = gx.conjugate(1.0).dx
    edges = [gy.x_min, 0.0, gy.x_max]
    pairs = [(3.0, 1), (2.5, 1), (-3.0, 0), (-2.5, 0)]  # site, own branch bin
    kw = dict(pointer_width=0.5, p_x_bin=0.5 * dp, y_bins=edges)
    z_planes = 0.0
    for x, bin_i in pairs:
        site = gx.index_of(x)
        re0, im0 = weakmeas.protocol_expectation(
            planes, site, weakmeas.PointerProtocol(coupling=1e-6,
                                                   n_trials=1, **kw))
        b = weakmeas.run_pointer_protocol(
            planes, site, weakmeas.PointerProtocol(
                coupling=0.02, n_trials=1_000_000, seed=2, **kw)).bins[bin_i]
        z_planes = max(z_planes, abs(b.re - re0[bin_i]) / b.se_re,
                       abs(b.im - im0[bin_i]) / b.se_im)

    # bias growth across one coupling doubling, on the exact expectation
    # path (Monte-Carlo noise at feasible N would bury a 1e-2 shift); the
    # smooth-pointer model keeps the readout linearization error visible
    def bias(g):
        p = weakmeas.PointerProtocol(coupling=g, n_trials=1,
                                     pointer_model="gaussian",
                                     pointer_width=1.0)
        return max(abs(complex(*[a[0] for a in
                                 weakmeas.protocol_expectation(
                                     pure, grid.index_of(x), p)])
                       - complex(wv[grid.index_of(x)])) for x in sites)

    ratio = bias(0.08) / bias(0.04)

    elapsed = time.time() - t0
    ok = z_pure < 3.0 and z_planes < 3.0 and 1.5 < ratio < 2.5 \
        and elapsed < 600.0
    _line("Monte-Carlo readout convergence", ok,
          f"worst z pure {z_pure:.2f}, planes {z_planes:.2f} (< 3 SE); "
          f"bias doubling ratio {ratio:.2f} (in [1.5, 2.5])", t0)
    assert z_pure < 3.0
    assert z_planes < 3.0
    assert 1.5 < ratio < 2.5
    assert elapsed < 600.0


def test_collapse_statistics():
    t0 = time.time()
    report = run_fig1(default_config("fig1_collapse"))["report"]
    z = max(abs(r["frequency"] - r["expected"]) / r["se"]
            for r in report["frequencies"])
    frac = report["overlap"]["fraction_above_0.999"]
    p_before = report["equivariance"]["before"]["p_value"]
    p_after = report["equivariance"]["after"]["p_value"]
    elapsed = time.time() - t0
    ok = bool(report["pass"]) and elapsed < 300.0
    _line("pointer-impulse collapse statistics", ok,
          f"freq worst z {z:.2f} (< 4 SE), overlap frac {frac:.4f} "
          f"(>= 0.999), equivariance p {p_before:.3f}/{p_after:.3f} "
          f"(> 1e-3)", t0)
    assert z <= 4.0
    assert frac >= 0.999
    assert p_before > 1e-3 and p_after > 1e-3
    assert report["pass"]
    assert elapsed < 300.0


def test_density_matrix_suite():
    t0 = time.time()
    by_name = {}
    for bs in (True, False):
        cfg = parse_config({"scenario": "density_dm",
                            "protocol": {"bs_inserted": bs}})
        rep = run_density_dm(cfg)["report"]
        tag = "bs_on" if bs else "bs_off"
        for c in rep["checks"]:
            by_name[f"{tag}.{c['name']}"] = c

    exact = ["bs_on.direct_equals_rdm",
             "bs_on.direct_equals_cdm_Y_plus",
             "bs_on.direct_equals_cdm_Y_minus",
             "bs_on.rdm_is_half_identity",
             "bs_on.cdm_Y_plus_matches_branch_target",
             "bs_on.cdm_Y_minus_matches_branch_target",
             "bs_off.cdm_Y_zero_matches_branch_target"]
    worst = max(by_name[n]["distance"] for n in exact)
    avg = max(by_name["bs_on.averaging_law"]["distance"],
              by_name["bs_off.averaging_law"]["distance"])
    elapsed = time.time() - t0
    ok = worst < 1e-10 and avg < 1e-12 and elapsed < 1.0
    _line("density-matrix suite", ok,
          f"worst entrywise distance {worst:.2e} (tol 1e-10), "
          f"averaging residual {avg:.2e} (tol 1e-12)", t0)
    assert worst < 1e-10
    assert avg < 1e-12
    assert elapsed < 1.0


def test_order_invariance():
    t0 = time.time()
    cfg = parse_config({"scenario": "order_invariance",
                        "n_trials": 1_000_000})
    report = run_order_invariance(cfg)["report"]
    table_dev = report["table_identity"]["max_deviation"]
    wv_dev = report["exact_weak_values"]["max_deviation"]
    p_rows = [r["p_value"] for r in report["mc_comparison"]["rows"]]
    p_rows += [r["p_value"] for r in report["planes_b_vs_c"]["rows"]]
    p_min = min(p_rows)
    elapsed = time.time() - t0
    ok = bool(report["pass"]) and elapsed < 600.0
    _line("operation-order invariance", ok,
          f"exact identity dev {max(table_dev, wv_dev):.2e} (tol 1e-12), "
          f"min chi2 p {p_min:.3f} (> 1e-3) at 1e6 per arm", t0)
    assert table_dev < 1e-12
    assert wv_dev < 1e-12
    assert p_min > 1e-3
    assert report["pass"]
    assert elapsed < 600.0


def test_numerical_infrastructure():
    t0 = time.time()
    round_trip = selftest.check_transform_round_trip()
    drift = selftest.check_norm_drift()
    conv = selftest.check_split_step_convergence()

    # guidance velocity of the conditional slice must equal the x component
    # of the full two-particle velocity along that row
    g = Grid1D(-8.0, 8.0, 128)
    v_dev = 0.0
    for seed in (4, 9):
        psi2 = random_state_2d(g, g, seed)
        field2 = bohm.VelocityField2D(psi2)
        rho_y = psi2.density().sum(axis=0)
        for j in np.argsort(rho_y)[-6:]:
            y = float(g.points[j])
            slc = bohm.conditional_wavefunction(psi2, BohmConfig(0.0, y))
            v1, ok1 = bohm.VelocityField1D(slc).velocity(g.points,
                                                         on_node="mask")
            vx, _, ok2 = field2.velocity(g.points, np.full(g.n_points, y),
                                         on_node="mask")
            both = ok1 & ok2
            v_dev = max(v_dev, float(np.abs(v1[both] - vx[both]).max()))

    elapsed = time.time() - t0
    ok = (round_trip["pass"] and drift["pass"] and conv["pass"]
          and v_dev < 1e-8)
    _line("numerical infrastructure", ok,
          f"round trip {round_trip['observed']:.2e} (tol 1e-10), "
          f"norm drift {drift['observed']:.2e} (tol 1e-9 per 1e3 steps), "
          f"convergence ratio {conv['observed']:.2f} (in [3.5, 4.5]), "
          f"velocity agreement {v_dev:.2e} (tol 1e-8)", t0)
    assert round_trip["observed"] < 1e-10
    assert drift["observed"] < 1e-9
    assert 3.5 < conv["observed"] < 4.5
    assert v_dev < 1e-8
