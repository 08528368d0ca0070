"""Compiled inner loops for the spike-and-slab Gibbs sampler."""

import numpy as np
from numba import njit


@njit(cache=True)
def spike_slab_sweep(X, xtx, r, beta, gamma, slab_var, spike_var, forced,
                     prior_log_odds, sigma2, normals, uniforms):
    """One systematic-scan pass over all coefficients, updated in place.

    For each coefficient j the indicator is drawn with beta_j integrated out
    of its Gaussian full conditional, then beta_j is drawn given the
    indicator.  ``r`` is the running residual ``y - X @ beta``.
    """
    n, k = X.shape
    n_in = 0
    for j in range(k):
        bj = beta[j]
        dot = 0.0
        for i in range(n):
            r[i] += X[i, j] * bj
            dot += X[i, j] * r[i]
        s = xtx[j] / sigma2
        d = dot / sigma2
        if forced[j]:
            g = 1
        else:
            prec1 = s + 1.0 / slab_var[j]
            prec0 = s + 1.0 / spike_var[j]
            lml1 = -0.5 * np.log(slab_var[j] * prec1) + 0.5 * d * d / prec1
            lml0 = -0.5 * np.log(spike_var[j] * prec0) + 0.5 * d * d / prec0
            lo = prior_log_odds + lml1 - lml0
            if lo > 0:
                p1 = 1.0 / (1.0 + np.exp(-lo))
            else:
                e = np.exp(lo)
                p1 = e / (1.0 + e)
            g = 1 if uniforms[j] < p1 else 0
        gamma[j] = g
        var = slab_var[j] if g == 1 else spike_var[j]
        prec = s + 1.0 / var
        bj = d / prec + normals[j] / np.sqrt(prec)
        beta[j] = bj
        for i in range(n):
            r[i] -= X[i, j] * bj
        if g == 1 and not forced[j]:
            n_in += 1
    return n_in
