"""Online Bayesian collaborative topic regression.

Each rating event ``(i, j, r)`` with item text ``w_j`` triggers

1. a progressive prediction ``m_u . m_v`` from the current posteriors,
2. ``S`` collapsed Gibbs sweeps over the item's topic assignments, whose
   conditional couples the topic counts to the item factor mean,
3. a rank-one Bayesian update of the user factor,
4. a rank-one update of the item factor that also tethers it to the
   document's mean topic frequency ``zbar``,
5. a count update of the global topic-word table.

Factor posteriors are diagonal Gaussians; the previous posterior serves as
the prior for the next event touching the same user or item.
"""
from __future__ import annotations

import copy
import logging
from typing import Mapping, Optional, Sequence

import numpy as np

from . import _kernels
from .core import (
    VAR_FLOOR,
    Document,
    GaussianFactor,
    HyperParams,
    RatingEvent,
    TopicState,
    init_item_factor,
    init_user_factor,
    predict,
)

log = logging.getLogger(__name__)


def _check_variances(*factors: GaussianFactor) -> None:
    for f in factors:
        if np.any(f.var <= 0):
            raise ValueError("prior variances must be positive")


def gibbs_conditional(doc: Document, n: int, v: GaussianFactor, topics: TopicState,
                      hp: HyperParams) -> np.ndarray:
    """Distribution of the topic of token ``n`` given every other assignment.

    p(k) is proportional to
    ``(alpha + C_k) * exp(log_phi[k, w] + (2 m_v[k] - (1 + 2 C_k) / N) / (2 sigma_eps2 N))``
    where ``C_k`` counts the document's other tokens currently in topic k.
    """
    N = doc.N
    if N == 0:
        raise ValueError("document has no tokens")
    if not 0 <= n < N:
        raise IndexError(f"token position {n} out of range for document of length {N}")
    w = int(doc.tokens[n])
    if not 0 <= w < topics.D:
        raise ValueError(f"token id {w} outside vocabulary of size {topics.D}")
    others = doc.topic_counts.astype(float)
    others[doc.z[n]] -= 1
    coef = 1.0 / (2.0 * hp.sigma_eps2 * N)
    logits = (np.log(hp.alpha + others) + topics.log_phi[:, w]
              + coef * (2.0 * v.mean - (1.0 + 2.0 * others) / N))
    p = np.exp(logits - logits.max())
    return p / p.sum()


def _lambda_columns(doc: Document, topics: TopicState) -> np.ndarray:
    if doc.N == 0:
        raise ValueError("document has no tokens")
    if doc.tokens.min() < 0 or doc.tokens.max() >= topics.D:
        raise ValueError(f"token id outside vocabulary of size {topics.D}")
    return np.ascontiguousarray(topics.log_phi_columns(doc.tokens))


def gibbs_sweep(doc: Document, v: GaussianFactor, topics: TopicState, hp: HyperParams,
                rng: np.random.Generator) -> Document:
    """Resample every position of ``doc`` once, left to right. Returns a new Document.

    Position n is drawn by inverse CDF from ``rng.random()``; the global
    topic table is held fixed during the sweep.
    """
    lam = _lambda_columns(doc, topics)
    out = doc.copy()
    uniforms = rng.random((1, doc.N))
    zbar = np.empty(hp.K)
    _kernels.gibbs_chain(lam, out.z, out.topic_counts, v.mean, hp.alpha,
                         1.0 / (2.0 * hp.sigma_eps2 * doc.N), uniforms, 0, zbar)
    out.zbar = zbar
    return out


def estimate_zbar(samples: Sequence, burn_in: int) -> np.ndarray:
    """Average topic frequency over the snapshots that follow the burn-in.

    ``samples`` holds Documents or raw per-snapshot frequency vectors.
    """
    if len(samples) <= burn_in:
        raise ValueError(f"need more than {burn_in} samples, got {len(samples)}")
    kept = [s.frequencies() if isinstance(s, Document) else np.asarray(s, dtype=float)
            for s in samples[burn_in:]]
    return np.mean(kept, axis=0)


def update_user(u_prior: GaussianFactor, v: GaussianFactor, r: float, hp: HyperParams) -> GaussianFactor:
    """Rank-one conjugate update of a user factor from one rating.

    Uses only the item mean. The posterior covariance
    ``(S^-1 + m_v m_v^T / sigma_r2)^-1`` is reduced to its diagonal.
    """
    _check_variances(u_prior)
    s, m, a = u_prior.var, u_prior.mean, v.mean
    sa = s * a
    denom = hp.sigma_r2 + a @ sa
    mean = m + ((r - a @ m) / denom) * sa
    var = np.maximum(s - sa * sa / denom, VAR_FLOOR)
    return GaussianFactor(mean, var)


def update_item(v_prior: GaussianFactor, u: GaussianFactor, zbar: np.ndarray, r: float,
                hp: HyperParams) -> GaussianFactor:
    """Item factor update combining the prior, the topic tether and one rating.

    ``mix`` is the diagonal covariance after absorbing the tether
    ``N(zbar, sigma_eps2 I)``; the rating is then folded in with a
    Sherman-Morrison step around ``mix``.
    """
    _check_variances(v_prior)
    prec = 1.0 / v_prior.var
    mix = 1.0 / (prec + 1.0 / hp.sigma_eps2)
    tethered = mix * (prec * v_prior.mean + np.asarray(zbar) / hp.sigma_eps2)
    a = u.mean
    ma = mix * a
    denom = hp.sigma_r2 + a @ ma
    mean = tethered - ma * ((a @ tethered - r) / denom)
    var = np.maximum(mix - ma * ma / denom, VAR_FLOOR)
    return GaussianFactor(mean, var)


def theta_from_counts(counts: np.ndarray, alpha: float) -> np.ndarray:
    counts = np.asarray(counts, dtype=float)
    return (counts + alpha) / (counts.sum(axis=-1, keepdims=True) + counts.shape[-1] * alpha)


def phi_from_counts(counts: np.ndarray, beta: float) -> np.ndarray:
    counts = np.asarray(counts, dtype=float)
    return (counts + beta) / (counts.sum(axis=-1, keepdims=True) + counts.shape[-1] * beta)


def update_topics(state: TopicState, doc: Document, hp: HyperParams,
                  previous_z: Optional[np.ndarray] = None):
    """Smoothed topic proportions of ``doc`` and the refreshed topic table.

    When ``previous_z`` is given, the table's counts are moved from those
    assignments to ``doc.z`` first.
    """
    if previous_z is not None:
        state.reassign(doc.tokens, np.asarray(previous_z), doc.z)
    return theta_from_counts(doc.topic_counts, hp.alpha), state


class OBCTR:
    """Streaming engine state plus the per-event update schedule.

    Parameters
    ----------
    hp : HyperParams
    vocab_size : int
        Vocabulary size D of the item texts.
    docs : mapping of item id to token ids, optional
        Item texts. Documents are materialised (with random initial topic
        assignments) the first time an event touches the item.
    seed : int
        Seed for every random draw the engine makes.
    inner_iters : int
        Alternations of (Gibbs, user, item) per event. One reproduces the
        single-pass schedule.
    pmf_only_fallback : bool
        Update items without text using the plain rank-one rule instead of
        rejecting their events.
    """

    name = "obctr"

    def __init__(self, hp: HyperParams, vocab_size: int, docs: Optional[Mapping[int, Sequence[int]]] = None,
                 seed: int = 0, inner_iters: int = 1, pmf_only_fallback: bool = False):
        if inner_iters < 1:
            raise ValueError("inner_iters must be >= 1")
        self.hp = hp
        self.seed = seed
        self.inner_iters = inner_iters
        self.pmf_only_fallback = pmf_only_fallback
        self.rng = np.random.default_rng(seed)
        self.users: dict[int, GaussianFactor] = {}
        self.items: dict[int, GaussianFactor] = {}
        self.docs: dict[int, Document] = {}
        self.texts: dict[int, np.ndarray] = {
            int(j): np.asarray(t, dtype=np.int64) for j, t in (docs or {}).items()}
        self.topics = TopicState(hp.K, vocab_size, hp.beta)
        self.n_events = 0
        self.n_rejected = 0

    # -- documents ---------------------------------------------------------

    def register_document(self, item_id: int, tokens: Sequence[int]) -> Document:
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.size == 0:
            raise ValueError(f"item {item_id} has an empty document")
        if tokens.min() < 0 or tokens.max() >= self.topics.D:
            raise ValueError(f"item {item_id} has token ids outside the vocabulary")
        z = self.rng.integers(self.hp.K, size=tokens.size)
        doc = Document.from_assignments(item_id, tokens, z, self.hp.K)
        self.topics.add(doc.tokens, doc.z)
        self.docs[item_id] = doc
        self.texts.setdefault(item_id, tokens)
        return doc

    def _document(self, item_id: int, tokens) -> Optional[Document]:
        doc = self.docs.get(item_id)
        if doc is not None:
            return doc
        if tokens is None:
            tokens = self.texts.get(item_id)
        if tokens is None:
            return None
        return self.register_document(item_id, tokens)

    # -- streaming ---------------------------------------------------------

    def process_event(self, ev: RatingEvent, tokens: Optional[Sequence[int]] = None) -> Optional[float]:
        """Predict ``ev.rating``, then absorb the event. Returns the prediction.

        Returns None (and counts a rejection) when the item has no text and
        the PMF-only fallback is off.
        """
        r = float(ev.rating)
        if not np.isfinite(r):
            raise ValueError(f"non-finite rating in event {ev}")
        hp = self.hp
        i, j = ev.user_id, ev.item_id
        doc = self._document(j, tokens)
        if doc is None and not self.pmf_only_fallback:
            self.n_rejected += 1
            return None
        u = self.users.get(i) or init_user_factor(hp)
        v = self.items.get(j) or init_item_factor(hp)
        r_hat = predict(u, v)

        if doc is None:
            self.users[i] = update_user(u, v, r, hp)
            self.items[j] = update_user(v, u, r, hp)
        else:
            lam = _lambda_columns(doc, self.topics)
            previous_z = doc.z.copy()
            coef = 1.0 / (2.0 * hp.sigma_eps2 * doc.N)
            zbar = np.empty(hp.K)
            v_new, u_new = v, u
            for _ in range(self.inner_iters):
                uniforms = self.rng.random((hp.sweeps, doc.N))
                _kernels.gibbs_chain(lam, doc.z, doc.topic_counts, v_new.mean, hp.alpha,
                                     coef, uniforms, hp.burn_in, zbar)
                u_new = update_user(u, v_new, r, hp)
                v_new = update_item(v, u_new, zbar, r, hp)
            doc.zbar = zbar
            update_topics(self.topics, doc, hp, previous_z)
            self.users[i], self.items[j] = u_new, v_new
        self.n_events += 1
        return r_hat

    # -- read-only views ---------------------------------------------------

    def predict(self, user_id: int, item_id: int) -> float:
        u, v = self.users.get(user_id), self.items.get(item_id)
        if u is None or v is None:
            return 0.0
        return predict(u, v)

    def predict_many(self, events: Sequence[RatingEvent]) -> np.ndarray:
        K = self.hp.K
        zero = np.zeros(K)
        um = np.array([self.users[e.user_id].mean if e.user_id in self.users else zero for e in events]).reshape(-1, K)
        vm = np.array([self.items[e.item_id].mean if e.item_id in self.items else zero for e in events]).reshape(-1, K)
        return np.einsum("ij,ij->i", um, vm)

    @property
    def alpha(self) -> float:
        return self.hp.alpha

    def theta(self, item_id: int) -> np.ndarray:
        return theta_from_counts(self.docs[item_id].topic_counts, self.hp.alpha)

    def topic_word(self) -> np.ndarray:
        return self.topics.phi

    def snapshot(self) -> "OBCTR":
        return copy.deepcopy(self)

    def check_invariants(self) -> None:
        """Raise AssertionError if the topic table disagrees with the documents."""
        expected = np.zeros_like(self.topics.word_topic_counts)
        for doc in self.docs.values():
            assert doc.topic_counts.sum() == doc.N
            assert np.array_equal(doc.topic_counts, np.bincount(doc.z, minlength=self.hp.K))
            np.add.at(expected, (doc.z, doc.tokens), 1)
        assert np.array_equal(expected, self.topics.word_topic_counts)
        assert np.array_equal(self.topics.topic_totals, expected.sum(axis=1))

    # -- persistence -------------------------------------------------------

    def to_state(self) -> dict:
        return {
            "hp": self.hp.to_dict(),
            "config": {"seed": self.seed, "inner_iters": self.inner_iters,
                       "pmf_only_fallback": self.pmf_only_fallback, "vocab_size": self.topics.D},
            "rng": self.rng.bit_generator.state,
            "users": _factors_to_state(self.users),
            "items": _factors_to_state(self.items),
            "texts": {str(j): t.tolist() for j, t in self.texts.items()},
            "docs": {str(j): d.z.tolist() for j, d in self.docs.items()},
            "zbar": {str(j): d.zbar.tolist() for j, d in self.docs.items()},
            "counters": {"n_events": self.n_events, "n_rejected": self.n_rejected},
        }

    @classmethod
    def from_state(cls, state: dict) -> "OBCTR":
        cfg = state["config"]
        hp = HyperParams(**state["hp"])
        model = cls(hp, cfg["vocab_size"], {int(j): t for j, t in state["texts"].items()},
                    seed=cfg["seed"], inner_iters=cfg["inner_iters"],
                    pmf_only_fallback=cfg["pmf_only_fallback"])
        model.rng.bit_generator.state = state["rng"]
        model.users = _factors_from_state(state["users"])
        model.items = _factors_from_state(state["items"])
        counts = np.zeros((hp.K, cfg["vocab_size"]), dtype=np.int64)
        for key, z in state["docs"].items():
            j = int(key)
            doc = Document.from_assignments(j, model.texts[j], z, hp.K)
            doc.zbar = np.asarray(state["zbar"][key], dtype=float)
            np.add.at(counts, (doc.z, doc.tokens), 1)
            model.docs[j] = doc
        model.topics = TopicState(hp.K, cfg["vocab_size"], hp.beta, counts)
        model.n_events = state["counters"]["n_events"]
        model.n_rejected = state["counters"]["n_rejected"]
        return model


def process_event(state: OBCTR, ev: RatingEvent, tokens: Optional[Sequence[int]] = None):
    """Functional form of :meth:`OBCTR.process_event`; returns ``(state, r_hat)``."""
    r_hat = state.process_event(ev, tokens)
    return state, r_hat


def _factors_to_state(factors: Mapping[int, GaussianFactor]) -> dict:
    return {str(k): [f.mean.tolist(), f.var.tolist()] for k, f in factors.items()}


def _factors_from_state(data: Mapping[str, list]) -> dict[int, GaussianFactor]:
    return {int(k): GaussianFactor(np.array(m), np.array(v)) for k, (m, v) in data.items()}
