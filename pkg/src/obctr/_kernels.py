"""Compiled inner loop for the coupled collapsed Gibbs sampler."""
import numba
import numpy as np


@numba.njit(cache=True)
def gibbs_chain(lam, z, counts, m_v, alpha, coef, uniforms, burn_in, zbar_out):
    """Run ``uniforms.shape[0]`` sequential sweeps over one document, in place.

    lam      K x N array, lam[k, n] = log_phi[k, w_n]
    coef     1 / (2 sigma_eps2 N); zero disables the rating tether
    uniforms S x N draws in [0, 1); position n of sweep s uses uniforms[s, n]
    zbar_out receives the mean topic frequency over sweeps after burn-in

    Returns nothing; ``z`` and ``counts`` hold the final sweep's state.
    """
    K, N = lam.shape
    S = uniforms.shape[0]
    inv_n = 1.0 / N
    logits = np.empty(K)
    for k in range(K):
        zbar_out[k] = 0.0
    for s in range(S):
        for n in range(N):
            old = z[n]
            counts[old] -= 1
            best = -np.inf
            for k in range(K):
                c = counts[k]
                lg = np.log(alpha + c) + lam[k, n] + coef * (2.0 * m_v[k] - (1.0 + 2.0 * c) * inv_n)
                logits[k] = lg
                if lg > best:
                    best = lg
            total = 0.0
            for k in range(K):
                logits[k] = np.exp(logits[k] - best)
                total += logits[k]
            target = uniforms[s, n] * total
            acc = 0.0
            new = K - 1
            for k in range(K):
                acc += logits[k]
                if target < acc:
                    new = k
                    break
            z[n] = new
            counts[new] += 1
        if s >= burn_in:
            for k in range(K):
                zbar_out[k] += counts[k] * inv_n
    kept = S - burn_in
    for k in range(K):
        zbar_out[k] /= kept


@numba.njit(cache=True)
def gibbs_trace(lam, z, counts, m_v, alpha, coef, uniforms, trace):
    """Like :func:`gibbs_chain` but records every sweep's assignment in ``trace``."""
    K, N = lam.shape
    scratch = np.empty(K)
    for s in range(uniforms.shape[0]):
        gibbs_chain(lam, z, counts, m_v, alpha, coef, uniforms[s:s + 1], 0, scratch)
        for n in range(N):
            trace[s, n] = z[n]
