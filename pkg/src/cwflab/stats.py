"""Small statistics helpers: chi-square tests and overlap fidelities."""

import numpy as np
from scipy import stats as sps

from .errors import ValidationError

# Cells with expected count below this are pooled into one collective cell
# before the chi-square statistic is formed (Cochran's rule of thumb).
MIN_EXPECTED = 5.0


def _pool(counts: np.ndarray, expected: np.ndarray):
    counts = np.asarray(counts, dtype=float)
    expected = np.asarray(expected, dtype=float)
    keep = expected >= MIN_EXPECTED
    if keep.all():
        return counts, expected
    pooled_c = np.append(counts[keep], counts[~keep].sum())
    pooled_e = np.append(expected[keep], expected[~keep].sum())
    if pooled_e[-1] == 0.0:
        pooled_c, pooled_e = pooled_c[:-1], pooled_e[:-1]
    return pooled_c, pooled_e


def chi2_gof(counts, probs) -> dict:
    """Goodness of fit of observed counts against cell probabilities.

    Returns {"chi2", "dof", "p_value"}; cells with expected count < 5 are
    pooled into one cell, dof = (#cells after pooling) - 1.
    """
    counts = np.asarray(counts, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if counts.shape != probs.shape:
        raise ValidationError("counts and probs must have the same shape")
    n = counts.sum()
    if n <= 0:
        raise ValidationError("no observations")
    c, e = _pool(counts, probs / probs.sum() * n)
    chi2 = float(np.sum((c - e) ** 2 / e))
    dof = max(c.size - 1, 1)
    return {"chi2": chi2, "dof": dof, "p_value": float(sps.chi2.sf(chi2, dof))}


def chi2_two_sample(counts_a, counts_b) -> dict:
    """Homogeneity test for two binned samples (shared binning)."""
    a = np.asarray(counts_a, dtype=float)
    b = np.asarray(counts_b, dtype=float)
    if a.shape != b.shape:
        raise ValidationError("histograms must share binning")
    tot = a + b
    keep = tot > 0
    a, b, tot = a[keep], b[keep], tot[keep]
    na, nb = a.sum(), b.sum()
    ea = tot * na / (na + nb)
    eb = tot * nb / (na + nb)
    (ca, eca) = _pool(a, ea)
    (cb, ecb) = _pool(b, eb)
    if ca.size != cb.size:
        # pooling disagreed between the samples; redo with joint mask
        keep = np.minimum(ea, eb) >= MIN_EXPECTED
        ca = np.append(a[keep], a[~keep].sum())
        cb = np.append(b[keep], b[~keep].sum())
        eca = np.append(ea[keep], ea[~keep].sum())
        ecb = np.append(eb[keep], eb[~keep].sum())
    chi2 = float(np.sum((ca - eca) ** 2 / eca) + np.sum((cb - ecb) ** 2 / ecb))
    dof = max(ca.size - 1, 1)
    return {"chi2": chi2, "dof": dof, "p_value": float(sps.chi2.sf(chi2, dof))}


def fidelity(a, b) -> float:
    """|<a|b>| / (|a| |b|) for complex vectors on a shared grid."""
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValidationError("fidelity of a zero vector")
    return float(abs(np.vdot(a, b)) / (na * nb))


def fidelity_debiased(estimate, target, variances) -> float:
    """Fidelity of a noisy estimate against a noise-free target.

    The estimator norm is inflated by the sampling variance of each entry;
    subtracting the known total variance before normalizing removes that
    bias: F = |<t|e>| / (|t| * sqrt(max(|e|^2 - sum(var), 0))).
    Falls back to the raw fidelity when the corrected norm underflows.
    """
    e = np.asarray(estimate).ravel()
    t = np.asarray(target).ravel()
    v = float(np.sum(variances))
    ne2 = float(np.vdot(e, e).real) - v
    if ne2 <= 0.0:
        return fidelity(e, t)
    return float(abs(np.vdot(t, e)) / (np.linalg.norm(t) * np.sqrt(ne2)))


def fidelity_debiased_sigma(estimate, variances):
    """Standard error of fidelity_debiased when the target is (near) the
    true direction of the estimate.

    There the first-order noise cancels between numerator and norm and the
    fidelity fluctuates only through the quadratic noise terms:
    sigma = sqrt(sum var_i^2) / (2 (|e|^2 - sum var)). Returns None when
    the debiased norm underflows (noise exceeds signal; nothing to test).
    """
    e = np.asarray(estimate).ravel()
    v = np.asarray(variances, dtype=float).ravel()
    ne2 = float(np.vdot(e, e).real) - float(v.sum())
    if ne2 <= 0.0:
        return None
    return float(np.sqrt(np.sum(v**2)) / (2.0 * ne2))
