"""Detection statistics: null laws, weighting rules, Huber oracle, windowed scan."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wmseg.keys import generate_keys
from wmseg.lm import MarkovLM
from wmseg.decode import generate_plain, generate_watermarked
from wmseg.stats import (DetectionContext, Statistic, aligned_hits, hit_matrix,
                         its_evidence, lr_weights, pair_base_scores, phi_ems,
                         phi_ems_onemlog, phi_its, phi_its_huber,
                         resolve_statistic, scan_max, scan_profile,
                         scan_profiles_weighted, shrink_ntp)


def test_lr_weights_decreasing_and_positive():
    p = np.array([0.01, 0.2, 0.5, 0.99, 1.0])
    w = lr_weights(p)
    assert np.all(np.diff(w) < 0) and np.all(w >= 0)
    with pytest.raises(ValueError):
        lr_weights(np.array([0.0, 0.5]))


def test_shrink_pulls_towards_baseline():
    q = np.array([0.0, 1.0, 0.3])
    np.testing.assert_allclose(shrink_ntp(q, 0.5), [0.25, 0.75, 0.4])
    np.testing.assert_allclose(shrink_ntp(q, 0.5, p0=0.2), [0.1, 0.6, 0.25])
    with pytest.raises(ValueError):
        shrink_ntp(q, 1.5)


def test_phi_ems_matches_direct_sum():
    keys = generate_keys("EMS", 25, 8, seed=1)
    toks = np.random.default_rng(0).integers(1, 9, size=25)
    w = np.random.default_rng(1).random(25) + 0.5
    xi = keys.select(toks)
    assert phi_ems(keys, toks, w) == pytest.approx(np.mean(w * (np.log(xi) + 1)), abs=1e-12)
    assert phi_ems_onemlog(keys, toks) == pytest.approx(np.mean(-np.log(1 - xi)), abs=1e-12)


def test_phi_ems_null_mean_zero():
    # under keys independent of the text, E[log xi + 1] = 0
    rng = np.random.default_rng(2)
    toks = rng.integers(1, 21, size=400)
    vals = [phi_ems(generate_keys("EMS", 400, 20, seed=s), toks) for s in range(60)]
    assert abs(np.mean(vals)) < 0.02


def test_phi_its_null_mean_zero():
    rng = np.random.default_rng(3)
    toks = rng.integers(1, 11, size=300)
    vals = [phi_its(generate_keys("ITS", 300, 10, seed=s), toks) for s in range(60)]
    assert abs(np.mean(vals)) < 0.005


def test_its_evidence_hit_rate_matches_mass_under_null():
    # independent keys hit the token's interval with probability mu_i(y_i)
    model = MarkovLM(10, order=1, temperature=1.0, seed=4)
    text = generate_plain(model, 400, seed=5)
    count = 0
    total = 0
    for s in range(25):
        keys = generate_keys("ITS", 400, 10, seed=100 + s)
        ev = its_evidence(keys, text.tokens, model)
        count += ev.hit.sum() - ev.mass.sum()
        total += len(ev.hit)
    assert abs(count / total) < 0.01


def test_aligned_hits_matches_its_evidence():
    model = MarkovLM(8, order=1, temperature=1.0, seed=6)
    text = generate_plain(model, 60, seed=7)
    keys = generate_keys("ITS", 60, 8, seed=8)
    ctx = DetectionContext.from_source(model, text.tokens, need_mu=True)
    ev = its_evidence(keys, text.tokens, model)
    np.testing.assert_array_equal(aligned_hits(keys, text.tokens, ctx.mu), ev.hit)


def test_hit_matrix_diagonal_matches_aligned():
    model = MarkovLM(8, order=1, temperature=1.0, seed=6)
    text = generate_plain(model, 40, seed=9)
    keys = generate_keys("ITS", 40, 8, seed=10)
    ctx = DetectionContext.from_source(model, text.tokens, need_mu=True)
    H = hit_matrix(keys, text.tokens, ctx.mu)
    np.testing.assert_array_equal(np.diagonal(H), aligned_hits(keys, text.tokens, ctx.mu))


def _huber_grid_oracle(hit, mass, grid=1_000_000):
    eps = np.linspace(0.0, 1.0, grid + 1)
    inv_p = 1.0 / np.asarray(mass, dtype=np.float64)
    terms = np.where(np.asarray(hit, bool)[None, :],
                     (1 - eps)[:, None] * inv_p[None, :] + eps[:, None],
                     eps[:, None])
    with np.errstate(divide="ignore"):
        obj = np.where(np.all(terms > 0, axis=1), np.log(np.maximum(terms, 1e-300)).sum(axis=1), -np.inf)
    return float(obj.max())


def test_huber_matches_dense_grid():
    rng = np.random.default_rng(11)
    for _ in range(25):
        n = int(rng.integers(2, 20))
        mass = rng.uniform(0.02, 0.9, size=n)
        hit = rng.random(n) < 0.5
        got = phi_its_huber(hit=hit, mass=mass)
        want = _huber_grid_oracle(hit, mass)
        assert got == pytest.approx(want, abs=1e-6)


def test_huber_all_hits_closed_form():
    mass = np.array([0.2, 0.5, 0.1])
    assert phi_its_huber(hit=np.ones(3, bool), mass=mass) == pytest.approx(
        np.log(1 / mass).sum(), abs=1e-9)


def test_huber_no_hits_is_zero():
    # eps = 1 gives log 1 per term; any eps < 1 is worse
    assert phi_its_huber(hit=np.zeros(4, bool), mass=np.full(4, 0.25)) == pytest.approx(0.0, abs=1e-9)


def test_statistic_weights_dispatch():
    ctx = DetectionContext(tokens=np.array([1, 2]), V=4, p=np.array([0.2, 0.5]))
    assert resolve_statistic("ems-base").weights(ctx) is None
    np.testing.assert_allclose(resolve_statistic("ems-lr").weights(ctx), [4.0, 1.0])
    np.testing.assert_allclose(resolve_statistic("ems-shrink").weights(ctx),
                               lr_weights(shrink_ntp(ctx.p, 0.5)))
    with pytest.raises(ValueError):
        resolve_statistic("nope")


def test_statistic_value_agrees_with_phi():
    model = MarkovLM(12, order=1, temperature=1.0, seed=12)
    keys = generate_keys("EMS", 50, 12, seed=13)
    text = generate_watermarked(model, keys, 50)
    ctx = DetectionContext.from_source(model, text.tokens)
    st_lr = resolve_statistic("ems-lr")
    assert st_lr.value(keys, ctx) == pytest.approx(
        phi_ems(keys, text.tokens, lr_weights(ctx.p)), abs=1e-12)


def test_watermarked_value_exceeds_null_values():
    model = MarkovLM(30, order=1, temperature=1.0, seed=14)
    keys = generate_keys("EMS", 80, 30, seed=15)
    text = generate_watermarked(model, keys, 80)
    ctx = DetectionContext.from_source(model, text.tokens)
    stat = resolve_statistic("ems-base")
    obs = stat.value(keys, ctx)
    nulls = [stat.value(generate_keys("EMS", 80, 30, seed=500 + t), ctx) for t in range(30)]
    assert obs > max(nulls)


def _brute_profile(C, B):
    """Direct evaluation of the center-aligned scan with full pairing only."""
    n, m = C.shape
    half = B // 2
    out = np.full(m, -np.inf)
    for i in range(1, m + 1):
        d = np.arange(-half, half + 1)
        d = d[(i + d >= 1) & (i + d <= m)]
        for k in range(1, n + 1):
            if k + d[0] < 1 or k + d[-1] > n:
                continue
            out[i - 1] = max(out[i - 1], np.mean(C[k + d - 1, i + d - 1]))
    return out


@settings(max_examples=15, deadline=None)
@given(st.integers(24, 40), st.integers(24, 40), st.integers(1, 4), st.integers(0, 1000))
def test_scan_profile_matches_brute_force(n, m, halfB, seed):
    B = 2 * halfB
    C = np.random.default_rng(seed).normal(size=(n, m))
    np.testing.assert_allclose(scan_profile(C, B), _brute_profile(C, B), atol=1e-10)


def test_scan_profile_rejects_odd_window():
    with pytest.raises(ValueError):
        scan_profile(np.zeros((30, 30)), 5)


def test_scan_profiles_weighted_matches_separate_scans():
    rng = np.random.default_rng(16)
    C = rng.normal(size=(35, 30))
    w1 = rng.random(30) + 0.1
    p1, p2, p3 = scan_profiles_weighted(C, [None, w1, 2 * w1], 8)
    np.testing.assert_allclose(p1, scan_profile(C, 8), atol=1e-12)
    np.testing.assert_allclose(p2, scan_profile(C * w1[None, :], 8), atol=1e-12)
    np.testing.assert_allclose(p3, scan_profile(C * 2 * w1[None, :], 8), atol=1e-12)


def test_pair_base_scores_consistent_with_pair_scores():
    model = MarkovLM(9, order=1, temperature=1.0, seed=17)
    keys = generate_keys("EMS", 30, 9, seed=18)
    text = generate_watermarked(model, keys, 30)
    ctx = DetectionContext.from_source(model, text.tokens)
    stat = resolve_statistic("ems-lr")
    np.testing.assert_allclose(
        stat.pair_scores(keys, ctx),
        pair_base_scores("ems", keys, text.tokens) * lr_weights(ctx.p)[None, :],
        atol=1e-12)


def test_scan_max_fast_path_matches_grid():
    model = MarkovLM(10, order=1, temperature=1.0, seed=19)
    keys = generate_keys("EMS", 40, 10, seed=20)
    text = generate_watermarked(model, keys, 40)
    ctx = DetectionContext.from_source(model, text.tokens, need_mu=True)
    v = scan_max(keys, ctx, 10, resolve_statistic("ems-base"))
    assert np.isfinite(v)
