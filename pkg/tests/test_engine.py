import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_factor
from obctr.core import Document, GaussianFactor, HyperParams, RatingEvent, TopicState
from obctr.engine import (
    OBCTR,
    estimate_zbar,
    gibbs_conditional,
    gibbs_sweep,
    phi_from_counts,
    process_event,
    theta_from_counts,
    update_item,
    update_topics,
    update_user,
)
from obctr.models import load_checkpoint, save_checkpoint
from obctr.synth import gaussian_posterior_oracle, gibbs_conditional_mp

# 60-digit re-evaluation of the conditional for the ``small_state`` fixture.
FROZEN_CONDITIONALS = [
    [0.47848964597040433, 0.038339175260682125, 0.4831711787689135],
    [0.014330342593907074, 0.31231634643838413, 0.6733533109677088],
    [0.476517572993465, 0.48357051929598854, 0.03991190771054646],
    [0.020331879376089233, 0.6703661285106834, 0.3093019921132274],
]


# -- Gibbs conditional -------------------------------------------------------

def test_conditional_symmetric_state_is_uniform():
    hp = HyperParams(K=2, alpha=0.5, beta=0.1, sigma_eps2=0.3)
    topics = TopicState(2, 2, hp.beta, [[2, 3], [2, 3]])
    v = GaussianFactor([0.4, 0.4], [1, 1])
    # the remaining assignments are balanced between the two topics
    for tokens, z, n in (([1], [0], 0), ([0, 1, 1], [1, 0, 1], 0), ([1, 0, 1, 1, 0], [0, 1, 1, 0, 1], 4)):
        doc = Document.from_assignments(0, tokens, z, 2)
        np.testing.assert_allclose(gibbs_conditional(doc, n, v, topics, hp), [0.5, 0.5], atol=1e-15)


def test_conditional_matches_high_precision_oracle(small_state):
    hp, topics, doc, v = small_state
    for n in range(doc.N):
        p = gibbs_conditional(doc, n, v, topics, hp)
        assert abs(p.sum() - 1) < 1e-12
        np.testing.assert_allclose(p, FROZEN_CONDITIONALS[n], rtol=0, atol=1e-14)
        mp = gibbs_conditional_mp(doc.tokens, doc.z, n, v.mean, topics.word_topic_counts,
                                  hp.alpha, hp.beta, hp.sigma_eps2)
        np.testing.assert_allclose(p, mp, rtol=0, atol=1e-14)


def test_conditional_loose_tether_is_plain_lda(small_state):
    hp, topics, doc, v = small_state
    loose = HyperParams(K=3, alpha=hp.alpha, beta=hp.beta, sigma_eps2=1e14)
    for n in range(doc.N):
        others = np.bincount(np.delete(doc.z, n), minlength=3)
        plain = (loose.alpha + others) * topics.phi[:, doc.tokens[n]]
        np.testing.assert_allclose(gibbs_conditional(doc, n, v, topics, loose), plain / plain.sum(),
                                   rtol=0, atol=1e-10)


def test_conditional_errors(small_state):
    hp, topics, doc, v = small_state
    empty = Document.from_assignments(0, [], [], 3)
    with pytest.raises(ValueError):
        gibbs_conditional(empty, 0, v, topics, hp)
    bad = Document.from_assignments(0, [0, 9], [0, 1], 3)
    with pytest.raises(ValueError):
        gibbs_conditional(bad, 1, v, topics, hp)
    with pytest.raises(IndexError):
        gibbs_conditional(doc, 4, v, topics, hp)


# -- Gibbs sweep -------------------------------------------------------------

def test_sweep_empty_document_is_an_error(small_state, rng):
    hp, topics, _, v = small_state
    with pytest.raises(ValueError):
        gibbs_sweep(Document.from_assignments(0, [], [], 3), v, topics, hp, rng)


def test_sweep_single_topic_is_fixed(rng):
    hp = HyperParams(K=1)
    topics = TopicState(1, 4, hp.beta, [[1, 2, 3, 4]])
    doc = Document.from_assignments(0, [0, 3, 2], [0, 0, 0], 1)
    out = gibbs_sweep(doc, GaussianFactor([0.7], [1.0]), topics, hp, rng)
    assert out.z.tolist() == [0, 0, 0]
    assert out.topic_counts.tolist() == [3]


def test_sweep_follows_manual_trace():
    """Replays one sweep by hand from gibbs_conditional with the same uniforms."""
    hp = HyperParams(K=2, alpha=0.3, beta=0.2, sigma_eps2=0.1)
    topics = TopicState(2, 3, hp.beta, [[4, 0, 2], [1, 5, 1]])
    doc = Document.from_assignments(0, [0, 1, 2], [1, 0, 1], 2)
    v = GaussianFactor([0.8, 0.1], [1, 1])
    for seed in range(25):
        out = gibbs_sweep(doc, v, topics, hp, np.random.default_rng(seed))
        uniforms = np.random.default_rng(seed).random((1, doc.N))[0]
        manual = doc.copy()
        for n in range(doc.N):
            p = gibbs_conditional(manual, n, v, topics, hp)
            k = int(np.searchsorted(np.cumsum(p), uniforms[n], side="right"))
            manual.topic_counts[manual.z[n]] -= 1
            manual.z[n] = min(k, 1)
            manual.topic_counts[manual.z[n]] += 1
        assert out.z.tolist() == manual.z.tolist()
        assert out.topic_counts.tolist() == manual.topic_counts.tolist()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 5), st.integers(1, 30))
def test_sweep_preserves_document_invariants(seed, K, N):
    rng = np.random.default_rng(seed)
    hp = HyperParams(K=K, sigma_eps2=float(rng.uniform(0.01, 5)))
    topics = TopicState(K, 8, hp.beta, rng.integers(0, 10, (K, 8)))
    doc = Document.from_assignments(0, rng.integers(0, 8, N), rng.integers(0, K, N), K)
    v = GaussianFactor(rng.normal(size=K), np.ones(K))
    for _ in range(3):
        doc = gibbs_sweep(doc, v, topics, hp, rng)
        assert doc.topic_counts.sum() == N
        assert doc.topic_counts.tolist() == np.bincount(doc.z, minlength=K).tolist()
        assert abs(doc.zbar.sum() - 1) < 1e-12


# -- zbar --------------------------------------------------------------------

def test_zbar_constant_sequence():
    doc = Document.from_assignments(0, [0, 1, 2, 3], [0, 0, 1, 1], 2)
    assert estimate_zbar([doc] * 4, 2).tolist() == [0.5, 0.5]


def test_zbar_discards_burn_in():
    assert estimate_zbar([[1, 0], [0, 1], [0, 1]], 1).tolist() == [0, 1]


def test_zbar_matches_resummation(rng):
    snaps = [rng.dirichlet(np.ones(4)) for _ in range(9)]
    expected = [sum(s[k] for s in snaps[3:]) / 6 for k in range(4)]
    np.testing.assert_allclose(estimate_zbar(snaps, 3), expected, atol=1e-15)
    assert abs(estimate_zbar(snaps, 3).sum() - 1) < 1e-12


def test_zbar_requires_samples_after_burn_in():
    with pytest.raises(ValueError):
        estimate_zbar([[1.0]], 1)


# -- user update -------------------------------------------------------------

def test_user_update_zero_innovation(rng):
    hp = HyperParams(K=3, sigma_r2=0.7)
    u, v = random_factor(rng, 3), random_factor(rng, 3)
    out = update_user(u, v, float(u.mean @ v.mean), hp)
    np.testing.assert_array_equal(out.mean, u.mean)
    assert np.all(out.var <= u.var) and np.any(out.var < u.var)


def test_user_update_uninformative_item(rng):
    hp = HyperParams(K=3)
    u = random_factor(rng, 3)
    out = update_user(u, GaussianFactor(np.zeros(3), np.ones(3)), 4.2, hp)
    np.testing.assert_array_equal(out.mean, u.mean)
    np.testing.assert_array_equal(out.var, u.var)


def test_user_update_matches_matrix_oracle(rng):
    hp = HyperParams(K=4, sigma_r2=0.3)
    u, v = random_factor(rng, 4), random_factor(rng, 4)
    r = 1.7
    mean, cov = gaussian_posterior_oracle(u.mean, np.diag(u.var), [v.mean], [r], [hp.sigma_r2])
    out = update_user(u, v, r, hp)
    np.testing.assert_allclose(out.mean, mean, rtol=0, atol=1e-10)
    np.testing.assert_allclose(out.var, np.diag(cov), rtol=0, atol=1e-10)


def test_user_update_exact_in_one_dimension():
    hp = HyperParams(K=1, sigma_r2=1.0)
    out = update_user(GaussianFactor([0.0], [1.0]), GaussianFactor([1.0], [1.0]), 2.0, hp)
    assert out.mean.tolist() == [1.0] and out.var.tolist() == [0.5]


def test_user_update_rejects_bad_prior():
    u = GaussianFactor([0.0], [1.0])
    u.var[:] = -1.0
    with pytest.raises(ValueError):
        update_user(u, GaussianFactor([1.0], [1.0]), 1.0, HyperParams(K=1))


# -- item update -------------------------------------------------------------

def test_item_update_no_information():
    hp = HyperParams(K=3, sigma_eps2=1e300)
    v = GaussianFactor([0.2, -1.0, 3.0], [0.5, 1.0, 2.0])
    out = update_item(v, GaussianFactor(np.zeros(3), np.ones(3)), np.array([0.2, 0.3, 0.5]), 2.0, hp)
    np.testing.assert_array_equal(out.var, v.var)
    np.testing.assert_allclose(out.mean, v.mean, rtol=1e-15)


def test_item_update_tether_only_is_gaussian_product(rng):
    hp = HyperParams(K=4, sigma_eps2=0.3)
    v = random_factor(rng, 4)
    zbar = rng.dirichlet(np.ones(4))
    out = update_item(v, GaussianFactor(np.zeros(4), np.ones(4)), zbar, 3.0, hp)
    var = 1 / (1 / v.var + 1 / hp.sigma_eps2)
    np.testing.assert_allclose(out.var, var, rtol=1e-15)
    np.testing.assert_allclose(out.mean, var * (v.mean / v.var + zbar / hp.sigma_eps2), rtol=1e-14)


def test_item_update_matches_canonical_posterior(rng):
    hp = HyperParams(K=3, sigma_eps2=0.4, sigma_r2=0.2)
    v, u = random_factor(rng, 3), random_factor(rng, 3)
    zbar, r = rng.dirichlet(np.ones(3)), -0.8
    P = np.diag(1 / v.var) + np.eye(3) / hp.sigma_eps2 + np.outer(u.mean, u.mean) / hp.sigma_r2
    mean = np.linalg.solve(P, v.mean / v.var + zbar / hp.sigma_eps2 + r * u.mean / hp.sigma_r2)
    out = update_item(v, u, zbar, r, hp)
    np.testing.assert_allclose(out.mean, mean, rtol=0, atol=1e-8)
    np.testing.assert_allclose(out.var, np.diag(np.linalg.inv(P)), rtol=0, atol=1e-8)


def test_item_update_loose_rating_reduces_to_product(rng):
    hp = HyperParams(K=3, sigma_eps2=0.25, sigma_r2=1e300)
    v, u = random_factor(rng, 3), random_factor(rng, 3)
    zbar = rng.dirichlet(np.ones(3))
    out = update_item(v, u, zbar, 5.0, hp)
    var = 1 / (1 / v.var + 1 / hp.sigma_eps2)
    np.testing.assert_allclose(out.var, var, rtol=1e-14)
    np.testing.assert_allclose(out.mean, var * (v.mean / v.var + zbar / hp.sigma_eps2), rtol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 6))
def test_posterior_variances_never_increase(seed, K):
    rng = np.random.default_rng(seed)
    hp = HyperParams(K=K, sigma_eps2=float(rng.uniform(0.01, 10)), sigma_r2=float(rng.uniform(0.01, 10)))
    u, v = random_factor(rng, K, 3), random_factor(rng, K, 3)
    r = float(rng.normal(0, 3))
    assert np.all(update_user(u, v, r, hp).var <= u.var)
    assert np.all(update_item(v, u, rng.dirichlet(np.ones(K)), r, hp).var <= v.var)


# -- topic update ------------------------------------------------------------

def test_theta_hand_arithmetic():
    np.testing.assert_allclose(theta_from_counts([3, 1], 0.5), [0.7, 0.3], rtol=1e-15)
    hp = HyperParams(K=2, alpha=0.5)
    doc = Document.from_assignments(0, [0, 0, 1, 1], [0, 0, 0, 1], 2)
    theta, _ = update_topics(TopicState(2, 2, hp.beta), doc, hp)
    np.testing.assert_allclose(theta, [0.7, 0.3], rtol=1e-15)


def test_zero_counts_give_uniform_estimates():
    np.testing.assert_allclose(theta_from_counts(np.zeros(4), 0.1), 0.25)
    np.testing.assert_allclose(TopicState(3, 10, 0.2).phi, 0.1)


def test_update_topics_applies_reassignment(rng):
    hp = HyperParams(K=3)
    topics = TopicState(3, 5, hp.beta)
    doc = Document.from_assignments(0, [0, 1, 4, 4], [0, 0, 1, 2], 3)
    topics.add(doc.tokens, doc.z)
    old = doc.z.copy()
    doc = Document.from_assignments(0, doc.tokens, [2, 2, 1, 0], 3)
    _, topics = update_topics(topics, doc, hp, old)
    np.testing.assert_allclose(topics.phi, phi_from_counts(topics.word_topic_counts, hp.beta), rtol=1e-13)
    assert topics.word_topic_counts[2].tolist() == [1, 1, 0, 0, 0]


# -- engine ------------------------------------------------------------------

def _tiny_engine(K=3, seed=0, **kw):
    docs = {10: [0, 1, 2, 1, 0], 11: [3, 4, 4, 5], 12: [5, 5, 0, 2, 3, 1]}
    hp = HyperParams(K=K, sigma_eps2=kw.pop("sigma_eps2", 0.5), sigma_r2=kw.pop("sigma_r2", 0.5))
    return OBCTR(hp, vocab_size=6, docs=docs, seed=seed, **kw)


def _state_equal(a: OBCTR, b: OBCTR):
    assert a.users.keys() == b.users.keys() and a.items.keys() == b.items.keys()
    for k in a.users:
        assert np.array_equal(a.users[k].mean, b.users[k].mean) and np.array_equal(a.users[k].var, b.users[k].var)
    for k in a.items:
        assert np.array_equal(a.items[k].mean, b.items[k].mean) and np.array_equal(a.items[k].var, b.items[k].var)
    for k in a.docs:
        assert np.array_equal(a.docs[k].z, b.docs[k].z)
        assert np.array_equal(a.docs[k].zbar, b.docs[k].zbar)
    assert np.array_equal(a.topics.word_topic_counts, b.topics.word_topic_counts)


def test_empty_stream_leaves_state_unchanged():
    eng = _tiny_engine()
    before = eng.snapshot()
    for ev in []:
        eng.process_event(ev)
    _state_equal(eng, before)
    assert eng.n_events == 0


def test_single_event_moves_prediction_towards_rating():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        eng = _tiny_engine(K=1, seed=seed, sigma_eps2=1e12, sigma_r2=float(rng.uniform(0.1, 2)))
        eng.users[1] = GaussianFactor(rng.normal(size=1), rng.uniform(0.1, 2, 1))
        eng.items[10] = GaussianFactor(rng.normal(size=1), rng.uniform(0.1, 2, 1))
        r = float(rng.normal(0, 2))
        before = eng.predict(1, 10)
        assert eng.process_event(RatingEvent(1, 10, r)) == before
        assert abs(r - eng.predict(1, 10)) <= abs(r - before)


def test_disjoint_events_commute_single_topic():
    e1, e2 = RatingEvent(1, 10, 2.0), RatingEvent(2, 11, -1.0)
    a, b = _tiny_engine(K=1), _tiny_engine(K=1)
    for ev in (e1, e2):
        a.process_event(ev)
    for ev in (e2, e1):
        b.process_event(ev)
    _state_equal(a, b)


def test_disjoint_events_commute_on_user_factors():
    e1, e2 = RatingEvent(1, 10, 2.0), RatingEvent(2, 11, -1.0)
    a, b = _tiny_engine(), _tiny_engine()
    a.process_event(e1), a.process_event(e2)
    b.process_event(e2), b.process_event(e1)
    for i in (1, 2):
        assert np.array_equal(a.users[i].mean, b.users[i].mean)
        assert np.array_equal(a.users[i].var, b.users[i].var)


def _random_stream(rng, n):
    return [RatingEvent(int(rng.integers(5)), int(rng.choice([10, 11, 12])), float(rng.normal(0, 1)), t)
            for t in range(n)]


def test_topic_counts_consistent_after_every_event(rng):
    eng = _tiny_engine(inner_iters=2)
    for ev in _random_stream(rng, 60):
        eng.process_event(ev)
        eng.check_invariants()
        for doc in eng.docs.values():
            assert abs(doc.zbar.sum() - 1) < 1e-12


def test_fixed_seed_is_bit_reproducible(rng):
    stream = _random_stream(rng, 80)
    a, b = _tiny_engine(seed=3), _tiny_engine(seed=3)
    ra = [a.process_event(ev) for ev in stream]
    rb = [b.process_event(ev) for ev in stream]
    assert ra == rb
    _state_equal(a, b)


def test_missing_text_rejected_by_default():
    eng = _tiny_engine()
    assert eng.process_event(RatingEvent(1, 99, 1.0)) is None
    assert eng.n_rejected == 1 and 99 not in eng.items


def test_pmf_only_fallback_updates_both_factors():
    eng = _tiny_engine(pmf_only_fallback=True)
    eng.items[99] = GaussianFactor([0.5, 0.5, 0.5], [1.0, 1.0, 1.0])
    assert eng.process_event(RatingEvent(1, 99, 1.0)) == 0.0
    assert eng.users[1].mean.any() and eng.n_rejected == 0
    assert 99 not in eng.docs


def test_text_supplied_with_event():
    eng = _tiny_engine()
    eng.process_event(RatingEvent(1, 42, 1.0), tokens=[0, 5, 5])
    assert eng.docs[42].N == 3
    eng.check_invariants()


def test_functional_process_event():
    eng = _tiny_engine()
    state, r_hat = process_event(eng, RatingEvent(1, 10, 1.0))
    assert state is eng and r_hat == 0.0


def test_checkpoint_round_trip_is_exact(tmp_path, rng):
    stream = _random_stream(rng, 100)
    eng = _tiny_engine(seed=5)
    for ev in stream[:50]:
        eng.process_event(ev)
    save_checkpoint(eng, tmp_path / "ckpt.json")
    loaded = load_checkpoint(tmp_path / "ckpt.json")
    _state_equal(eng, loaded)
    np.testing.assert_array_equal(eng.topics.log_phi, loaded.topics.log_phi)
    for ev in stream[50:]:
        assert eng.process_event(ev) == loaded.process_event(ev)
    _state_equal(eng, loaded)
