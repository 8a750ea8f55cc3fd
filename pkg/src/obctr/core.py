"""Shared domain types, prior initialisation and rating prediction.

All four sigma_* hyperparameters are *variances* everywhere in this
package: prior ``N(0, sigma_u2 I)``, rating noise ``N(u.v, sigma_r2)`` and
the item/topic tether ``N(zbar, sigma_eps2 I)``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

VAR_FLOOR = 1e-12


@dataclass
class HyperParams:
    """Model size, Dirichlet priors, Gaussian variances and Gibbs schedule.

    ``alpha`` and ``beta`` default to ``1/K``.
    """

    K: int = 5
    alpha: Optional[float] = None
    beta: Optional[float] = None
    sigma_u2: float = 1.0
    sigma_v2: float = 1.0
    sigma_eps2: float = 1.0
    sigma_r2: float = 1.0
    sweeps: int = 4
    burn_in: int = 2

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 1:
            raise ValueError(f"K must be a positive integer, got {self.K!r}")
        self.K = int(self.K)
        if self.alpha is None:
            self.alpha = 1.0 / self.K
        if self.beta is None:
            self.beta = 1.0 / self.K
        for name in ("alpha", "beta", "sigma_u2", "sigma_v2", "sigma_eps2", "sigma_r2"):
            value = float(getattr(self, name))
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be positive and finite, got {value!r}")
            setattr(self, name, value)
        if self.sweeps < 1:
            raise ValueError("sweeps must be >= 1")
        if not 0 <= self.burn_in < self.sweeps:
            raise ValueError(f"need 0 <= burn_in < sweeps, got burn_in={self.burn_in}, sweeps={self.sweeps}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GaussianFactor:
    """Diagonal Gaussian posterior over a K-dimensional latent vector."""

    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.var = np.asarray(self.var, dtype=float)
        if self.mean.ndim != 1 or self.mean.shape != self.var.shape:
            raise ValueError("mean and var must be 1-D arrays of equal length")
        if not np.all(np.isfinite(self.mean)):
            raise ValueError("factor mean must be finite")
        if not np.all((self.var > 0) & np.isfinite(self.var)):
            raise ValueError("factor variances must be positive and finite")

    @property
    def K(self) -> int:
        return self.mean.shape[0]

    def copy(self) -> "GaussianFactor":
        return GaussianFactor(self.mean.copy(), self.var.copy())


@dataclass(frozen=True)
class RatingEvent:
    user_id: int
    item_id: int
    rating: float
    order_key: int = 0


@dataclass
class Document:
    """Tokenised item text together with its current topic assignments."""

    item_id: int
    tokens: np.ndarray
    z: np.ndarray
    topic_counts: np.ndarray = field(default=None)
    zbar: np.ndarray = field(default=None)

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        self.z = np.asarray(self.z, dtype=np.int64)
        if self.tokens.shape != self.z.shape:
            raise ValueError("tokens and z must have the same length")
        if self.topic_counts is None:
            raise ValueError("topic_counts is required; use Document.from_assignments")
        self.topic_counts = np.asarray(self.topic_counts, dtype=np.int64)
        if self.zbar is None:
            self.zbar = self.frequencies()
        self.zbar = np.asarray(self.zbar, dtype=float)

    @classmethod
    def from_assignments(cls, item_id: int, tokens, z, K: int) -> "Document":
        z = np.asarray(z, dtype=np.int64)
        if z.size and (z.min() < 0 or z.max() >= K):
            raise ValueError("topic assignment out of range")
        counts = np.bincount(z, minlength=K).astype(np.int64)
        return cls(item_id, tokens, z, counts)

    @property
    def N(self) -> int:
        return self.tokens.shape[0]

    def frequencies(self) -> np.ndarray:
        """Empirical topic frequencies of the current assignments."""
        if self.N == 0:
            return np.zeros(self.topic_counts.shape[0])
        return self.topic_counts / self.N

    def copy(self) -> "Document":
        return Document(self.item_id, self.tokens.copy(), self.z.copy(),
                        self.topic_counts.copy(), self.zbar.copy())


class TopicState:
    """Global topic-word counts with smoothed point estimates of the topics.

    ``log_phi[k, w] = log(C[k, w] + beta) - log(T[k] + D * beta)``; the two
    log terms are cached separately so a reassignment only touches the
    entries whose counts moved.
    """

    def __init__(self, K: int, D: int, beta: float, word_topic_counts: Optional[np.ndarray] = None):
        if D < 1:
            raise ValueError("vocabulary size must be positive")
        self.K, self.D, self.beta = K, D, float(beta)
        if word_topic_counts is None:
            word_topic_counts = np.zeros((K, D), dtype=np.int64)
        self.word_topic_counts = np.array(word_topic_counts, dtype=np.int64)
        if self.word_topic_counts.shape != (K, D):
            raise ValueError(f"expected counts of shape {(K, D)}, got {self.word_topic_counts.shape}")
        if np.any(self.word_topic_counts < 0):
            raise ValueError("topic-word counts must be non-negative")
        self.topic_totals = self.word_topic_counts.sum(axis=1)
        self._log_num = np.log(self.word_topic_counts + self.beta)
        self._log_den = np.log(self.topic_totals + self.D * self.beta)

    @property
    def log_phi(self) -> np.ndarray:
        return self._log_num - self._log_den[:, None]

    @property
    def phi(self) -> np.ndarray:
        return np.exp(self.log_phi)

    def log_phi_columns(self, tokens: np.ndarray) -> np.ndarray:
        """``log_phi[:, tokens]`` without materialising the full matrix."""
        return self._log_num[:, tokens] - self._log_den[:, None]

    def add(self, tokens: np.ndarray, z: np.ndarray, sign: int = 1) -> None:
        np.add.at(self.word_topic_counts, (z, tokens), sign)
        self.topic_totals += sign * np.bincount(z, minlength=self.K)
        self._refresh(z, tokens)

    def reassign(self, tokens: np.ndarray, old_z: np.ndarray, new_z: np.ndarray) -> None:
        moved = old_z != new_z
        if not moved.any():
            return
        w, zo, zn = tokens[moved], old_z[moved], new_z[moved]
        np.add.at(self.word_topic_counts, (zo, w), -1)
        np.add.at(self.word_topic_counts, (zn, w), 1)
        self.topic_totals += np.bincount(zn, minlength=self.K) - np.bincount(zo, minlength=self.K)
        self._refresh(np.concatenate([zo, zn]), np.concatenate([w, w]))

    def _refresh(self, rows: np.ndarray, cols: np.ndarray) -> None:
        self._log_num[rows, cols] = np.log(self.word_topic_counts[rows, cols] + self.beta)
        self._log_den = np.log(self.topic_totals + self.D * self.beta)

    def copy(self) -> "TopicState":
        return TopicState(self.K, self.D, self.beta, self.word_topic_counts)


def init_user_factor(hp: HyperParams) -> GaussianFactor:
    return GaussianFactor(np.zeros(hp.K), np.full(hp.K, hp.sigma_u2))


def init_item_factor(hp: HyperParams) -> GaussianFactor:
    return GaussianFactor(np.zeros(hp.K), np.full(hp.K, hp.sigma_v2))


def predict(u: GaussianFactor, v: GaussianFactor) -> float:
    """Posterior expected rating ``E[u.v]``.

    q(u) and q(v) are independent, so the expectation is the dot product of
    the means.
    """
    if u.mean.shape != v.mean.shape:
        raise ValueError(f"factor length mismatch: {u.mean.shape[0]} vs {v.mean.shape[0]}")
    return float(u.mean @ v.mean)
