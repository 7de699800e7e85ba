"""Watermark decoders, text generation, and attacks."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wmseg.decode import (AttackSpec, TokenSeq, apply_attack, decode_ems,
                          decode_ems_batch, decode_its, decode_its_batch,
                          generate_plain, generate_watermarked, read_tokenseq,
                          write_tokenseq)
from wmseg.keys import generate_keys
from wmseg.lm import MarkovLM


def _dirichlet(rng, V):
    return rng.dirichlet(np.full(V, 0.4))


def test_decode_ems_matches_argmin_definition():
    rng = np.random.default_rng(0)
    for _ in range(50):
        V = int(rng.integers(2, 15))
        mu = _dirichlet(rng, V)
        xi = rng.random(V)
        cost = -np.log(xi) / mu
        assert decode_ems(xi, mu) == int(np.argmin(cost)) + 1


def test_decode_ems_ignores_zero_mass_tokens():
    mu = np.array([0.0, 0.6, 0.4])
    xi = np.array([0.999, 0.5, 0.5])
    assert decode_ems(xi, mu) in (2, 3)


def test_decode_ems_batch_matches_single():
    rng = np.random.default_rng(1)
    V = 9
    xi = rng.random((30, V))
    mu = _dirichlet(rng, V)
    batch = decode_ems_batch(xi, mu)
    for i in range(30):
        assert batch[i] == decode_ems(xi[i], mu)


def _its_interval(ranks, mu, k):
    """[sum of mass ranked before k, same plus mu_k): the oracle interval."""
    before = float(np.sum(mu[ranks < ranks[k - 1]]))
    return before, before + float(mu[k - 1])


def test_decode_its_matches_interval_oracle():
    rng = np.random.default_rng(2)
    for _ in range(200):
        V = int(rng.integers(2, 10))
        mu = _dirichlet(rng, V)
        ranks = rng.permutation(V) + 1
        u = float(rng.random())
        y = decode_its(ranks, u, mu)
        lo, hi = _its_interval(ranks, mu, y)
        assert lo <= u <= hi + 1e-12


def test_decode_its_batch_matches_single():
    rng = np.random.default_rng(3)
    V = 7
    mu = _dirichlet(rng, V)
    ranks = np.stack([rng.permutation(V) + 1 for _ in range(40)])
    u = rng.random(40)
    batch = decode_its_batch(ranks, u, mu)
    for i in range(40):
        assert batch[i] == decode_its(ranks[i], float(u[i]), mu)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 8), st.integers(0, 10_000))
def test_decode_its_unit_mass_partition(V, seed):
    # the decoding intervals tile [0, 1): every u lands in exactly one
    rng = np.random.default_rng(seed)
    mu = rng.dirichlet(np.ones(V))
    ranks = rng.permutation(V) + 1
    for u in rng.random(20):
        y = decode_its(ranks, float(u), mu)
        assert 1 <= y <= V
        lo, hi = _its_interval(ranks, mu, y)
        assert lo <= u <= hi + 1e-12


def test_generate_watermarked_is_deterministic_given_keys():
    model = MarkovLM(25, order=1, temperature=1.0, seed=4)
    keys = generate_keys("EMS", 60, 25, seed=5)
    a = generate_watermarked(model, keys, 60)
    b = generate_watermarked(model, keys, 60)
    np.testing.assert_array_equal(a.tokens, b.tokens)
    assert a.labels.all()


def test_generate_watermarked_its():
    model = MarkovLM(15, order=1, temperature=1.0, seed=4)
    keys = generate_keys("ITS", 40, 15, seed=5)
    text = generate_watermarked(model, keys, 40)
    assert len(text) == 40
    assert np.all((1 <= text.tokens) & (text.tokens <= 15))


def test_generate_plain_depends_on_seed():
    model = MarkovLM(20, order=1, temperature=1.0, seed=6)
    a = generate_plain(model, 50, seed=1)
    b = generate_plain(model, 50, seed=2)
    assert not np.array_equal(a.tokens, b.tokens)
    assert not a.labels.any()


def test_true_change_points_from_labels():
    labels = np.array([1, 1, 1, 0, 0, 1, 1], dtype=bool)
    seq = TokenSeq(np.arange(1, 8), labels=labels)
    np.testing.assert_array_equal(seq.true_change_points(), [4, 6])


def test_insertion_attack_layout():
    model = MarkovLM(20, order=1, temperature=1.0, seed=7)
    keys = generate_keys("EMS", 40, 20, seed=8)
    text = generate_watermarked(model, keys, 40)
    out = apply_attack(text, AttackSpec("insertion", 11, 5), model, keys, seed=9)
    assert len(out) == 45
    np.testing.assert_array_equal(out.tokens[:10], text.tokens[:10])
    np.testing.assert_array_equal(out.tokens[15:], text.tokens[10:])
    np.testing.assert_array_equal(out.true_change_points(), [11, 16])


def test_substitution_attack_layout():
    model = MarkovLM(20, order=1, temperature=1.0, seed=7)
    keys = generate_keys("EMS", 60, 20, seed=8)
    text = generate_watermarked(model, keys, 60)
    out = apply_attack(text, AttackSpec("substitution", 21, 10), model, keys, seed=9)
    assert len(out) == 60
    np.testing.assert_array_equal(out.tokens[:20], text.tokens[:20])
    np.testing.assert_array_equal(out.labels[20:30], np.zeros(10, dtype=bool))
    assert out.labels[30:].all()
    np.testing.assert_array_equal(out.true_change_points(), [21, 31])


def test_substitution_resumes_decoder_after_edit():
    # past the edited range the tokens come from the decoder again, so they
    # carry the watermark even though the context has changed
    model = MarkovLM(20, order=1, temperature=1.0, seed=7)
    keys = generate_keys("EMS", 60, 20, seed=8)
    text = generate_watermarked(model, keys, 60)
    out = apply_attack(text, AttackSpec("substitution", 21, 10), model, keys, seed=9)
    xi_tail = keys.select(out.tokens[30:], positions=np.arange(31, 61))
    null = np.exp(-1.0)  # median of Unif would be 0.5; watermarked xi sit higher
    assert np.mean(xi_tail > null) > 0.7


def test_attack_requires_keys_for_substitution():
    model = MarkovLM(10, order=1, temperature=1.0, seed=1)
    keys = generate_keys("EMS", 20, 10, seed=2)
    text = generate_watermarked(model, keys, 20)
    with pytest.raises(ValueError):
        apply_attack(text, AttackSpec("substitution", 5, 3), model, None, seed=0)


def test_tokenseq_roundtrip(tmp_path):
    model = MarkovLM(12, order=1, temperature=1.0, seed=3)
    keys = generate_keys("EMS", 30, 12, seed=4)
    text = generate_watermarked(model, keys, 30, prompt=generate_plain(model, 5, seed=1))
    path = tmp_path / "text.toks"
    write_tokenseq(text, path, V=12)
    back, V = read_tokenseq(path)
    assert V == 12
    np.testing.assert_array_equal(back.tokens, text.tokens)
    np.testing.assert_array_equal(back.labels, text.labels)
    assert back.n0 == text.n0
