"""Synthetic data from the collaborative topic regression generative model,
and brute-force oracles that the engine is checked against.

The oracles deliberately avoid the engine's numerical kernels: the Gaussian
oracle works on dense covariance matrices, the Gibbs oracles use ``math`` or
``mpmath`` scalars over raw counts.
"""
from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import mpmath
import numpy as np
from scipy import linalg

from .core import HyperParams, RatingEvent
from .ingestion import Corpus, CorpusOptions


@dataclass
class GroundTruth:
    phi: np.ndarray
    theta: np.ndarray
    z: dict[int, np.ndarray]
    U: np.ndarray
    V: np.ndarray
    eps: np.ndarray
    hp: HyperParams
    heldout_docs: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({
            "hp": self.hp.to_dict(),
            "phi": self.phi.tolist(), "theta": self.theta.tolist(),
            "z": {str(j): z.tolist() for j, z in self.z.items()},
            "U": self.U.tolist(), "V": self.V.tolist(), "eps": self.eps.tolist(),
            "heldout_docs": [d.tolist() for d in self.heldout_docs],
        })

    @classmethod
    def from_json(cls, text: str) -> "GroundTruth":
        d = json.loads(text)
        return cls(np.array(d["phi"]), np.array(d["theta"]),
                   {int(j): np.array(z, dtype=np.int64) for j, z in d["z"].items()},
                   np.array(d["U"]), np.array(d["V"]), np.array(d["eps"]), HyperParams(**d["hp"]),
                   [np.array(t, dtype=np.int64) for t in d["heldout_docs"]])


def _sample_document(rng, theta, phi, length):
    z = rng.choice(theta.shape[0], size=length, p=theta)
    words = np.empty(length, dtype=np.int64)
    for k in np.unique(z):
        at = z == k
        words[at] = rng.choice(phi.shape[1], size=at.sum(), p=phi[k])
    return z.astype(np.int64), words


def generate_synthetic(hp: HyperParams, I: int, J: int, docs_len: int, ratings_count: int, seed: int,
                       vocab_size: int = 500, n_heldout_docs: int = 0):
    """Draw a corpus, a rating stream and every latent variable.

    topics ~ Dir(beta), theta_j ~ Dir(alpha), words from the topic mixture,
    u_i ~ N(0, sigma_u2 I), v_j = theta_j + eps_j with eps_j ~ N(0, sigma_eps2 I),
    r ~ N(u_i . v_j, sigma_r2). Document lengths are Poisson(docs_len), at
    least 2. Rated pairs are distinct while ``ratings_count <= I * J``.

    Returns ``(corpus, events, truth)``.
    """
    if min(I, J, docs_len, ratings_count, vocab_size) < 1:
        raise ValueError("sizes must be positive")
    rng = np.random.default_rng(seed)
    K, D = hp.K, vocab_size
    phi = rng.dirichlet(np.full(D, hp.beta), size=K)
    theta = rng.dirichlet(np.full(K, hp.alpha), size=J)
    docs, zs = {}, {}
    for j in range(J):
        zs[j], docs[j] = _sample_document(rng, theta[j], phi, max(2, rng.poisson(docs_len)))
    U = rng.normal(0.0, math.sqrt(hp.sigma_u2), size=(I, K))
    eps = rng.normal(0.0, math.sqrt(hp.sigma_eps2), size=(J, K))
    V = theta + eps
    if ratings_count <= I * J:
        flat = rng.choice(I * J, size=ratings_count, replace=False)
    else:
        flat = rng.integers(I * J, size=ratings_count)
    users, items = flat // J, flat % J
    ratings = np.einsum("ij,ij->i", U[users], V[items]) + rng.normal(0.0, math.sqrt(hp.sigma_r2), ratings_count)
    events = [RatingEvent(int(i), int(j), float(r), k)
              for k, (i, j, r) in enumerate(zip(users, items, ratings))]
    heldout = []
    for _ in range(n_heldout_docs):
        t = rng.dirichlet(np.full(K, hp.alpha))
        heldout.append(_sample_document(rng, t, phi, max(2, rng.poisson(docs_len)))[1])
    width = len(str(D - 1))
    corpus = Corpus([f"w{w:0{width}d}" for w in range(D)], docs, CorpusOptions(max_vocab=D))
    truth = GroundTruth(phi, theta, zs, U, V, eps, hp, heldout)
    return corpus, events, truth


def _condition_guard(matrix: np.ndarray) -> None:
    cond = np.linalg.cond(matrix)
    if cond > 1e10:
        warnings.warn(f"ill-conditioned precision matrix (cond={cond:.3g})", RuntimeWarning, stacklevel=3)


def gaussian_posterior_oracle(prior_mean, prior_cov, obs_vectors, obs_values, obs_vars):
    """Complete-the-square posterior for scalar linear-Gaussian observations.

    Observation m says ``obs_values[m] ~ N(obs_vectors[m] . x, obs_vars[m])``.
    Returns the posterior mean and full covariance by explicit inversion.
    """
    m0 = np.asarray(prior_mean, dtype=float)
    S0 = np.asarray(prior_cov, dtype=float)
    if S0.shape[0] > 8:
        raise ValueError("dense oracle limited to K <= 8")
    A = np.asarray(obs_vectors, dtype=float).reshape(-1, m0.shape[0])
    y = np.asarray(obs_values, dtype=float).reshape(-1)
    s = np.asarray(obs_vars, dtype=float).reshape(-1)
    P0 = np.linalg.inv(S0)
    P = P0 + (A.T / s) @ A
    _condition_guard(P)
    try:
        cov = np.linalg.inv(P)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("posterior precision is singular") from exc
    mean = cov @ (P0 @ m0 + A.T @ (y / s))
    return mean, cov


def gaussian_posterior_solve(prior_mean, prior_cov, obs_vectors, obs_values, obs_vars):
    """Second route to the same posterior via Cholesky solves, no inverses of P."""
    m0 = np.asarray(prior_mean, dtype=float)
    S0 = np.asarray(prior_cov, dtype=float)
    A = np.asarray(obs_vectors, dtype=float).reshape(-1, m0.shape[0])
    y = np.asarray(obs_values, dtype=float).reshape(-1)
    s = np.asarray(obs_vars, dtype=float).reshape(-1)
    c0 = linalg.cho_factor(S0)
    P = linalg.cho_solve(c0, np.eye(m0.shape[0])) + sum(np.outer(a, a) / sm for a, sm in zip(A, s))
    rhs = linalg.cho_solve(c0, m0) + sum(a * (ym / sm) for a, ym, sm in zip(A, y, s))
    cp = linalg.cho_factor(P)
    return linalg.cho_solve(cp, rhs), linalg.cho_solve(cp, np.eye(m0.shape[0]))


def _log_phi_table(word_topic_counts, beta: float):
    rows = [[int(c) for c in row] for row in np.asarray(word_topic_counts)]
    D = len(rows[0])
    out = []
    for row in rows:
        den = math.log(sum(row) + D * beta)
        out.append([math.log(c + beta) - den for c in row])
    return out


def gibbs_conditional_mp(tokens: Sequence[int], z: Sequence[int], n: int, v_mean: Sequence[float],
                         word_topic_counts, alpha: float, beta: float, sigma_eps2: float,
                         dps: int = 50) -> list:
    """Single-site conditional re-evaluated at ``dps`` decimal digits."""
    with mpmath.workdps(dps):
        counts = np.asarray(word_topic_counts)
        K, D = counts.shape
        N = len(tokens)
        w = int(tokens[n])
        others = [sum(1 for m, zm in enumerate(z) if m != n and zm == k) for k in range(K)]
        weights = []
        for k in range(K):
            log_phi = mpmath.log(mpmath.mpf(int(counts[k, w])) + beta) - mpmath.log(
                mpmath.mpf(int(counts[k].sum())) + D * mpmath.mpf(beta))
            tether = (2 * mpmath.mpf(v_mean[k]) - mpmath.mpf(1 + 2 * others[k]) / N) / (2 * mpmath.mpf(sigma_eps2) * N)
            weights.append((alpha + others[k]) * mpmath.exp(log_phi + tether))
        total = mpmath.fsum(weights)
        return [float(x / total) for x in weights]


def gibbs_enumeration_oracle(tokens: Sequence[int], v_mean: Sequence[float], word_topic_counts,
                             alpha: float, beta: float, sigma_eps2: float) -> np.ndarray:
    """Exact stationary distribution of the single-document coupled sampler.

    Target: ``prod_k Gamma(alpha + C_k) * exp(sum_n log_phi[z_n, w_n] - |m_v - C/N|^2 / (2 sigma_eps2))``
    over all K^N assignments. Entry ``i`` of the result corresponds to the
    i-th tuple of ``itertools.product(range(K), repeat=N)``.
    """
    log_phi = _log_phi_table(word_topic_counts, beta)
    K, N = len(log_phi), len(tokens)
    if K ** N > 10 ** 6:
        raise ValueError(f"state space K^N = {K ** N} too large to enumerate")
    m = [float(x) for x in v_mean]
    scores = []
    for assign in itertools.product(range(K), repeat=N):
        counts = [0] * K
        for k in assign:
            counts[k] += 1
        s = sum(math.lgamma(alpha + c) for c in counts)
        s += sum(log_phi[k][int(w)] for k, w in zip(assign, tokens))
        s -= sum((m[k] - counts[k] / N) ** 2 for k in range(K)) / (2.0 * sigma_eps2)
        scores.append(s)
    top = max(scores)
    weights = [math.exp(s - top) for s in scores]
    total = math.fsum(weights)
    return np.array([w / total for w in weights])
