"""Comparison systems: PA-I, SGD-PMF, online variational LDA and OCTR.

OCTR runs online LDA on the item text and feeds the resulting topic
proportions one way into an SGD matrix factorisation where the item vector
is ``theta_hat + offset``. Ratings never reach the topic model.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.special import psi

from .core import RatingEvent

# A point estimate of a latent vector.
PointFactor = np.ndarray


def pa_i_update(u: PointFactor, v: PointFactor, r: float, c: float, eps: float = 0.0):
    """One PA-I step on the epsilon-insensitive loss, alternating u then v.

    Each half-step moves one factor along its partner by
    ``tau = min(c, loss / ||partner||^2)``; a zero partner skips the half-step.
    """
    if c <= 0:
        raise ValueError("aggressiveness c must be positive")
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    resid = r - u @ v
    if abs(resid) - eps <= 0:
        return u, v
    norm = v @ v
    if norm > 0:
        u = u + np.sign(resid) * min(c, (abs(resid) - eps) / norm) * v
    resid = r - u @ v
    norm = u @ u
    if abs(resid) - eps > 0 and norm > 0:
        v = v + np.sign(resid) * min(c, (abs(resid) - eps) / norm) * u
    return u, v


def sgd_pmf_update(u: PointFactor, v: PointFactor, r: float, eta: float, lam: float,
                   lam_v: Optional[float] = None):
    """Simultaneous regularised SGD step on the squared rating error."""
    lam_v = lam if lam_v is None else lam_v
    e = r - u @ v
    return u + eta * (e * v - lam * u), v + eta * (e * u - lam_v * v)


def dirichlet_expectation(alpha: np.ndarray) -> np.ndarray:
    """E[log x] for x ~ Dirichlet(alpha), row-wise for 2-D input."""
    if alpha.ndim == 1:
        return psi(alpha) - psi(alpha.sum())
    return psi(alpha) - psi(alpha.sum(axis=1))[:, None]


@dataclass
class OnlineLdaState:
    lam: np.ndarray
    t: int = 0
    kappa: float = 0.7
    tau0: float = 64.0
    corpus_size: int = 1

    @property
    def rho_t(self) -> float:
        """Step size of the most recent update (the next one if none ran yet)."""
        return (self.tau0 + max(self.t, 1)) ** (-self.kappa)


def online_lda_e_step(lam: np.ndarray, tokens: Sequence[int], alpha: float,
                      max_iter: int = 50, tol: float = 1e-4):
    """Local variational step for one document.

    Returns ``(gamma, sstats)`` where sstats is the K x D expected topic-word
    count matrix of this document (unscaled).
    """
    ids, cts = np.unique(np.asarray(tokens, dtype=np.int64), return_counts=True)
    if ids.size == 0:
        raise ValueError("document has no tokens")
    K = lam.shape[0]
    exp_elog_beta = np.exp(dirichlet_expectation(lam))[:, ids]
    gamma = np.full(K, alpha + cts.sum() / K)
    exp_elog_theta = np.exp(dirichlet_expectation(gamma))
    phinorm = exp_elog_theta @ exp_elog_beta + 1e-100
    for _ in range(max_iter):
        last = gamma
        gamma = alpha + exp_elog_theta * ((cts / phinorm) @ exp_elog_beta.T)
        exp_elog_theta = np.exp(dirichlet_expectation(gamma))
        phinorm = exp_elog_theta @ exp_elog_beta + 1e-100
        if np.mean(np.abs(gamma - last)) < tol:
            break
    sstats = np.zeros_like(lam)
    sstats[:, ids] = np.outer(exp_elog_theta, cts / phinorm) * exp_elog_beta
    return gamma, sstats


def online_lda_step(state: OnlineLdaState, doc: Sequence[int], alpha: float, beta: float,
                    max_iter: int = 50, tol: float = 1e-4):
    """Stochastic variational update of the topics from a single document.

    ``lam <- (1 - rho) lam + rho (beta + corpus_size * sstats)`` with
    ``rho = (tau0 + t)^-kappa``. Mutates and returns ``state`` along with
    the document's variational Dirichlet parameters.
    """
    tokens = getattr(doc, "tokens", doc)
    gamma, sstats = online_lda_e_step(state.lam, tokens, alpha, max_iter, tol)
    state.t += 1
    rho = state.rho_t
    state.lam = (1.0 - rho) * state.lam + rho * (beta + state.corpus_size * sstats)
    return state, gamma


class _FactorModel:
    """Point-estimate factor tables created lazily from a seeded generator."""

    name = ""

    def __init__(self, K: int, seed: int = 0, init_scale: float = 0.1):
        self.K = K
        self.seed = seed
        self.init_scale = init_scale
        self.rng = np.random.default_rng(seed)
        self.users: dict[int, np.ndarray] = {}
        self.items: dict[int, np.ndarray] = {}
        self.n_events = 0
        self.n_rejected = 0

    def _new_vector(self) -> np.ndarray:
        return self.init_scale * self.rng.standard_normal(self.K)

    def _user(self, i: int) -> np.ndarray:
        if i not in self.users:
            self.users[i] = self._new_vector()
        return self.users[i]

    def _item(self, j: int) -> np.ndarray:
        if j not in self.items:
            self.items[j] = self._new_vector()
        return self.items[j]

    def item_vector(self, j: int) -> Optional[np.ndarray]:
        return self.items.get(j)

    def predict(self, user_id: int, item_id: int) -> float:
        u, v = self.users.get(user_id), self.item_vector(item_id)
        if u is None or v is None:
            return 0.0
        return float(u @ v)

    def predict_many(self, events: Sequence[RatingEvent]) -> np.ndarray:
        return np.array([self.predict(e.user_id, e.item_id) for e in events])

    def snapshot(self):
        return copy.deepcopy(self)

    def _base_state(self) -> dict:
        return {
            "K": self.K, "seed": self.seed, "init_scale": self.init_scale,
            "rng": self.rng.bit_generator.state,
            "users": {str(k): v.tolist() for k, v in self.users.items()},
            "items": {str(k): v.tolist() for k, v in self.items.items()},
            "counters": {"n_events": self.n_events, "n_rejected": self.n_rejected},
        }

    def _load_base(self, state: dict) -> None:
        self.rng.bit_generator.state = state["rng"]
        self.users = {int(k): np.array(v) for k, v in state["users"].items()}
        self.items = {int(k): np.array(v) for k, v in state["items"].items()}
        self.n_events = state["counters"]["n_events"]
        self.n_rejected = state["counters"]["n_rejected"]


class PAI(_FactorModel):
    """Online collaborative filtering with passive-aggressive (PA-I) steps."""

    name = "pa-i"

    def __init__(self, K: int, c: float = 0.1, eps: float = 0.0, seed: int = 0, init_scale: float = 0.1):
        super().__init__(K, seed, init_scale)
        self.c, self.eps = c, eps

    def process_event(self, ev: RatingEvent, tokens=None) -> float:
        u, v = self._user(ev.user_id), self._item(ev.item_id)
        r_hat = float(u @ v)
        self.users[ev.user_id], self.items[ev.item_id] = pa_i_update(u, v, ev.rating, self.c, self.eps)
        self.n_events += 1
        return r_hat

    def to_state(self) -> dict:
        return {**self._base_state(), "c": self.c, "eps": self.eps}

    @classmethod
    def from_state(cls, state: dict) -> "PAI":
        model = cls(state["K"], state["c"], state["eps"], state["seed"], state["init_scale"])
        model._load_base(state)
        return model


class SGDPMF(_FactorModel):
    """Probabilistic matrix factorisation fitted by one SGD step per rating."""

    name = "sgd-pmf"

    def __init__(self, K: int, eta: float = 0.05, lam_u: float = 0.02, lam_v: float = 0.02,
                 seed: int = 0, init_scale: float = 0.1):
        super().__init__(K, seed, init_scale)
        self.eta, self.lam_u, self.lam_v = eta, lam_u, lam_v

    def process_event(self, ev: RatingEvent, tokens=None) -> float:
        u, v = self._user(ev.user_id), self._item(ev.item_id)
        r_hat = float(u @ v)
        self.users[ev.user_id], self.items[ev.item_id] = sgd_pmf_update(
            u, v, ev.rating, self.eta, self.lam_u, self.lam_v)
        self.n_events += 1
        return r_hat

    def to_state(self) -> dict:
        return {**self._base_state(), "eta": self.eta, "lam_u": self.lam_u, "lam_v": self.lam_v}

    @classmethod
    def from_state(cls, state: dict) -> "SGDPMF":
        model = cls(state["K"], state["eta"], state["lam_u"], state["lam_v"],
                    state["seed"], state["init_scale"])
        model._load_base(state)
        return model


class OnlineLDA:
    """Stochastic variational LDA driven by a stream of documents.

    Used on a rating stream, each event feeds the rated item's document to
    the topic model; the rating itself is ignored.
    """

    name = "online-lda"

    def __init__(self, K: int, vocab_size: int, docs: Optional[Mapping[int, Sequence[int]]] = None,
                 alpha: Optional[float] = None, beta: Optional[float] = None, tau0: float = 64.0,
                 kappa: float = 0.7, corpus_size: Optional[int] = None, seed: int = 0,
                 max_iter: int = 50, tol: float = 1e-4):
        self.K, self.D = K, vocab_size
        self.alpha = 1.0 / K if alpha is None else alpha
        self.beta = 1.0 / K if beta is None else beta
        self.texts = {int(j): np.asarray(t, dtype=np.int64) for j, t in (docs or {}).items()}
        if corpus_size is None:
            corpus_size = max(len(self.texts), 1)
        self.seed = seed
        self.max_iter, self.tol = max_iter, tol
        rng = np.random.default_rng(seed)
        self.state = OnlineLdaState(rng.gamma(100.0, 1.0 / 100.0, (K, vocab_size)),
                                    kappa=kappa, tau0=tau0, corpus_size=corpus_size)
        self.gammas: dict[int, np.ndarray] = {}
        self.n_events = 0
        self.n_rejected = 0

    def process_document(self, item_id: int, tokens: Optional[Sequence[int]] = None) -> Optional[np.ndarray]:
        """Update the topics from one document; returns its topic proportions."""
        if tokens is None:
            tokens = self.texts.get(item_id)
        if tokens is None:
            return None
        _, gamma = online_lda_step(self.state, tokens, self.alpha, self.beta, self.max_iter, self.tol)
        self.gammas[item_id] = gamma
        return gamma / gamma.sum()

    def process_event(self, ev: RatingEvent, tokens=None) -> None:
        if self.process_document(ev.item_id, tokens) is None:
            self.n_rejected += 1
        else:
            self.n_events += 1
        return None

    def topic_word(self) -> np.ndarray:
        lam = self.state.lam
        return lam / lam.sum(axis=1, keepdims=True)

    def predict_many(self, events: Sequence[RatingEvent]) -> np.ndarray:
        raise TypeError("online-lda does not predict ratings")

    def snapshot(self):
        return copy.deepcopy(self)

    def to_state(self) -> dict:
        s = self.state
        return {
            "K": self.K, "vocab_size": self.D, "alpha": self.alpha, "beta": self.beta,
            "tau0": s.tau0, "kappa": s.kappa, "corpus_size": s.corpus_size, "t": s.t,
            "seed": self.seed, "max_iter": self.max_iter, "tol": self.tol,
            "lam": s.lam.tolist(),
            "texts": {str(j): t.tolist() for j, t in self.texts.items()},
            "gammas": {str(j): g.tolist() for j, g in self.gammas.items()},
            "counters": {"n_events": self.n_events, "n_rejected": self.n_rejected},
        }

    @classmethod
    def from_state(cls, state: dict) -> "OnlineLDA":
        model = cls(state["K"], state["vocab_size"], {int(j): t for j, t in state["texts"].items()},
                    alpha=state["alpha"], beta=state["beta"], tau0=state["tau0"],
                    kappa=state["kappa"], corpus_size=state["corpus_size"], seed=state["seed"],
                    max_iter=state["max_iter"], tol=state["tol"])
        model.state.lam = np.array(state["lam"])
        model.state.t = state["t"]
        model.gammas = {int(j): np.array(g) for j, g in state["gammas"].items()}
        model.n_events = state["counters"]["n_events"]
        model.n_rejected = state["counters"]["n_rejected"]
        return model


class OCTR(_FactorModel):
    """Online LDA feeding topic proportions one way into SGD-PMF.

    The item vector is ``theta_hat_j + offset_j``; SGD updates the user
    vector and the offset only.
    """

    name = "octr"

    def __init__(self, K: int, vocab_size: int, docs: Optional[Mapping[int, Sequence[int]]] = None,
                 alpha: Optional[float] = None, beta: Optional[float] = None, tau0: float = 64.0,
                 kappa: float = 0.7, corpus_size: Optional[int] = None, eta: float = 0.05,
                 lam_u: float = 0.02, lam_v: float = 0.02, seed: int = 0, init_scale: float = 0.1):
        super().__init__(K, seed, init_scale)
        self.lda = OnlineLDA(K, vocab_size, docs, alpha, beta, tau0, kappa, corpus_size, seed)
        self.eta, self.lam_u, self.lam_v = eta, lam_u, lam_v
        self.theta: dict[int, np.ndarray] = {}

    def item_vector(self, j: int) -> Optional[np.ndarray]:
        if j not in self.theta:
            return None
        return self.theta[j] + self.items[j]

    def process_event(self, ev: RatingEvent, tokens=None) -> Optional[float]:
        j = ev.item_id
        if tokens is None and j not in self.lda.texts:
            self.n_rejected += 1
            return None
        u = self._user(ev.user_id)
        offset = self.items.get(j)
        if offset is None:
            offset = self.items[j] = np.zeros(self.K)
        prev_theta = self.theta.get(j)
        r_hat = float(u @ (prev_theta + offset)) if prev_theta is not None else 0.0
        theta = self.lda.process_document(j, tokens)
        self.theta[j] = theta
        e = ev.rating - u @ (theta + offset)
        self.users[ev.user_id] = u + self.eta * (e * (theta + offset) - self.lam_u * u)
        self.items[j] = offset + self.eta * (e * u - self.lam_v * offset)
        self.n_events += 1
        return r_hat

    @property
    def alpha(self) -> float:
        return self.lda.alpha

    def topic_word(self) -> np.ndarray:
        return self.lda.topic_word()

    def to_state(self) -> dict:
        return {**self._base_state(), "eta": self.eta, "lam_u": self.lam_u, "lam_v": self.lam_v,
                "lda": self.lda.to_state(),
                "theta": {str(j): t.tolist() for j, t in self.theta.items()}}

    @classmethod
    def from_state(cls, state: dict) -> "OCTR":
        lda_state = state["lda"]
        model = cls(state["K"], lda_state["vocab_size"], eta=state["eta"], lam_u=state["lam_u"],
                    lam_v=state["lam_v"], seed=state["seed"], init_scale=state["init_scale"])
        model._load_base(state)
        model.lda = OnlineLDA.from_state(lda_state)
        model.theta = {int(j): np.array(t) for j, t in state["theta"].items()}
        return model
