import itertools
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import logsumexp

from aloe import nn
from aloe.energy import all_states, state_index
from aloe.oracles import posterior_gradient_identity, random_sampler, trajectory_normalization
from aloe.rng import make_rng
from aloe.sampler import (AllProposalsRejected, AutoregressiveInit, Editor, FactorizedInit, SamplerParams,
                          StopPolicy, Trajectory, _edit_path, edit_distance_proposal, init_logprob, init_sample,
                          inverse_proposal, inverse_proposal_logdensity, marginal_logprob_exact,
                          sample_endpoints, sample_trajectories, sample_trajectory, snis_grad_batch,
                          snis_grad_from_trajectories, snis_grad_log_marginal, trajectories_ending_at,
                          trajectory_logprob, trajectory_logprob_grad, trajectory_logprobs,
                          truncated_geometric_logpmf)


def always_stop(q, bias=60.0):
    """Copy of ``q`` whose stop probability is 1 to double precision."""
    p = q.stop.params.copy()
    p[-1] = bias
    return SamplerParams(q.q0, q.editor, q.stop.with_params(p), q.max_steps)


def every_trajectory(q):
    """All trajectories of length <= T from every start, by forward enumeration."""
    out = []
    for x in all_states(q.d, q.K):
        out.extend(trajectories_ending_at(q, x))
    return out


# initial distributions ----------------------------------------------------------

def test_factorized_uniform_logprob(rng):
    q0 = FactorizedInit(32)
    x, lp = q0.sample(10, rng)
    np.testing.assert_allclose(lp, -32 * np.log(2), atol=1e-12)
    _, l1 = init_sample(q0, rng)
    assert l1 == pytest.approx(-32 * np.log(2))


def test_factorized_saturated(rng):
    q0 = FactorizedInit(32, 2, np.tile([0.0, 30.0], 32))
    x, lp = q0.sample(100, rng)
    assert np.all(x == 1)
    assert np.exp(init_logprob(q0, np.ones(32, dtype=int))) == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("K", [2, 3])
def test_factorized_normalizes(rng, K):
    q0 = FactorizedInit(4, K, rng.standard_normal(4 * K))
    assert logsumexp(q0.log_prob(all_states(4, K))) == pytest.approx(0.0, abs=1e-12)


def test_autoregressive_chain_rule(rng):
    q0 = AutoregressiveInit(4, 3, 6, 5, 7, rng=rng)
    q0 = q0.with_params(q0.params + 0.3 * rng.standard_normal(q0.n_params))
    x = rng.integers(0, 3, (6, 4))
    for row in x:
        total = 0.0
        for i in range(4):
            if i == 0:
                emb = q0.params[:5]
            else:
                oh = np.zeros(i * 3)
                oh[np.arange(i) * 3 + row[:i]] = 1.0
                emb = nn.net_forward(q0.prefix_specs[i - 1], q0._prefix_params(i), oh)
            z = nn.net_forward(nn.DenseNetSpec((5, 7, 3)), q0._head_params(), emb)
            total += z[row[i]] - logsumexp(z)
        assert init_logprob(q0, row) == pytest.approx(total, abs=1e-12)


@pytest.mark.parametrize("K", [2, 3])
def test_autoregressive_normalizes_and_sampling_agrees(rng, K):
    q0 = AutoregressiveInit(3, K, 8, 4, 8, rng=rng)
    lp = q0.log_prob(all_states(3, K))
    assert logsumexp(lp) == pytest.approx(0.0, abs=1e-12)
    x, lps = q0.sample(20000, make_rng(0, "ar", K))
    np.testing.assert_allclose(lps, q0.log_prob(x), atol=1e-12)
    emp = np.bincount(state_index(x, K), minlength=K ** 3) / len(x)
    assert 0.5 * np.abs(emp - np.exp(lp)).sum() < 0.03


# editor -------------------------------------------------------------------------

def test_uniform_editor_logprob(rng):
    ed = Editor(32, 2, 8, 8)
    x = rng.integers(0, 2, (5, 32))
    y, lp, pos = ed.sample(x, rng)
    np.testing.assert_allclose(lp, -np.log(32), atol=1e-12)
    assert np.all((x != y).sum(axis=1) == 1)
    np.testing.assert_allclose(ed.log_prob(x, y), lp, atol=1e-14)


def test_flip_involution(rng):
    x = rng.integers(0, 2, (4, 10))
    pos = np.array([0, 3, 3, 9])
    y = x.copy()
    y[np.arange(4), pos] ^= 1
    y[np.arange(4), pos] ^= 1
    np.testing.assert_array_equal(y, x)


def test_masked_value_head(rng):
    K, d = 4, 5
    ed = Editor(d, K, 6, 6, rng=rng)
    x = rng.integers(0, K, (8, d))
    pos = rng.integers(0, d, 8)
    vlp = ed.value_logprobs(x, pos)
    z = nn.net_forward(ed.value_spec, ed.params[ed._split:], ed._value_input(x, pos))
    for r in range(8):
        cur = x[r, pos[r]]
        others = [v for v in range(K) if v != cur]
        ref = z[r, others] - logsumexp(z[r, others])
        np.testing.assert_allclose(vlp[r, others], ref, atol=1e-12)
        assert vlp[r, cur] == -np.inf
    y, lp, p = ed.sample(x, rng)
    assert np.all((x != y).sum(axis=1) == 1)
    np.testing.assert_allclose(ed.log_prob(x, y), lp, atol=1e-12)


def test_stop_policy_complementary(rng):
    st_ = StopPolicy(6, 2, 8, rng=rng)
    x = rng.integers(0, 2, (10, 6))
    np.testing.assert_allclose(np.exp(st_.log_stop(x)) + np.exp(st_.log_continue(x)), 1.0, atol=1e-14)


# trajectories ---------------------------------------------------------------------

def test_always_stop_gives_length_zero(rng):
    q = always_stop(random_sampler(6, 2, 4, rng))
    trajs, _ = sample_trajectories(q, 200, rng)
    assert all(tr.t == 0 and not tr.forced_stop for tr in trajs)


def test_lengths_bounded_and_logprob_consistent(rng):
    q = random_sampler(5, 2, 3, rng)
    p = q.stop.params.copy()
    p[-1] = -3.0  # rarely stop, so T is reached often
    q = SamplerParams(q.q0, q.editor, q.stop.with_params(p), 3)
    trajs, lp = sample_trajectories(q, 500, rng)
    assert max(tr.t for tr in trajs) == 3
    for tr in trajs:
        tr.validate(3)
    np.testing.assert_allclose(trajectory_logprobs(q, trajs), lp, atol=1e-12)


def test_trajectory_frequencies_match_probabilities():
    q = random_sampler(2, 2, 2, make_rng(5, "freq"), scale=0.8)
    trajs, _ = sample_trajectories(q, 100_000, make_rng(5, "draws"))
    key = lambda tr: (tr.states.tobytes(), tr.forced_stop)
    support = every_trajectory(q)
    probs = dict(zip(map(key, support), np.exp(trajectory_logprobs(q, support))))
    counts = {}
    for tr in trajs:
        counts[key(tr)] = counts.get(key(tr), 0) + 1
    assert set(counts) <= set(probs)
    tv = 0.5 * sum(abs(counts.get(k, 0) / len(trajs) - p) for k, p in probs.items())
    assert tv < 0.02


def test_length_zero_logprob(rng):
    q = random_sampler(4, 2, 2, rng)
    x = np.array([1, 0, 0, 1])
    expected = init_logprob(q.q0, x) + q.stop.log_stop(x[None])[0]
    assert trajectory_logprob(q, Trajectory(x[None], False)) == pytest.approx(expected, abs=1e-13)


def test_forced_stop_omits_final_factor(rng):
    q = random_sampler(3, 2, 1, rng)
    x0 = np.array([0, 1, 1])
    x1 = np.array([0, 0, 1])
    expected = (init_logprob(q.q0, x0) + q.stop.log_continue(x0[None])[0]
                + q.editor.log_prob(x0[None], x1[None])[0])
    assert trajectory_logprob(q, Trajectory(np.stack([x0, x1]), True)) == pytest.approx(expected, abs=1e-13)
    with pytest.raises(ValueError):
        trajectory_logprob(q, Trajectory(np.stack([x0, x1]), False))


def test_all_trajectories_sum_to_one():
    q = random_sampler(2, 2, 2, make_rng(0, "norm2"))
    assert np.exp(logsumexp(trajectory_logprobs(q, every_trajectory(q)))) == pytest.approx(1.0, abs=1e-10)


def test_marginal_with_always_stop_is_q0(rng):
    q = always_stop(random_sampler(3, 2, 2, rng))
    for x in all_states(3):
        assert marginal_logprob_exact(q, x) == pytest.approx(init_logprob(q.q0, x), abs=1e-12)


def test_marginal_hand_expansion_t1(rng):
    q = random_sampler(2, 2, 1, rng)
    stop = lambda s: np.exp(q.stop.log_stop(s[None])[0])
    q0 = lambda s: np.exp(init_logprob(q.q0, s))
    for x in all_states(2):
        total = q0(x) * stop(x)
        for i in range(2):
            x0 = x.copy()
            x0[i] ^= 1
            # the single edit reaches T, so no stop factor at x
            total += q0(x0) * (1 - stop(x0)) * np.exp(q.editor.log_prob(x0[None], x[None])[0])
        assert marginal_logprob_exact(q, x) == pytest.approx(np.log(total), abs=1e-12)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2 ** 31), d=st.integers(1, 3), T=st.integers(1, 2),
       q0=st.sampled_from(["factorized", "autoregressive"]))
def test_marginals_normalize_property(seed, d, T, q0):
    assert trajectory_normalization(d, 2, T, seed, q0).passed


def test_marginals_normalize_categorical():
    assert trajectory_normalization(2, 3, 2).passed


def test_enumeration_counts():
    q = random_sampler(3, 2, 2, make_rng(0))
    assert len(trajectories_ending_at(q, np.zeros(3, dtype=int))) == 1 + 3 + 9
    with pytest.raises(ValueError):
        trajectories_ending_at(q, np.zeros(3, dtype=int), cap=5)


def test_endpoints_follow_exact_marginal():
    q = random_sampler(3, 2, 2, make_rng(8, "ends"), scale=0.8)
    x = sample_endpoints(q, 40000, make_rng(8, "draws"))
    emp = np.bincount(state_index(x), minlength=8) / len(x)
    exact = np.exp([marginal_logprob_exact(q, s) for s in all_states(3)])
    assert 0.5 * np.abs(emp - exact).sum() < 0.02


# proposals --------------------------------------------------------------------------

def test_truncated_geometric():
    lg = truncated_geometric_logpmf(0.8, 16)
    assert logsumexp(lg) == pytest.approx(0.0, abs=1e-14)
    np.testing.assert_allclose(np.diff(lg), np.log(0.8), atol=1e-14)
    with pytest.raises(ValueError):
        truncated_geometric_logpmf(1.0, 3)


def test_inverse_proposal_length_zero():
    x = np.arange(32) % 2
    tr, ls = None, None
    r = make_rng(0, "inv0")
    while tr is None or tr.t != 0:
        tr, ls = inverse_proposal(x, 0.8, 16, r)
    np.testing.assert_array_equal(tr.states, x[None])
    assert ls == pytest.approx(truncated_geometric_logpmf(0.8, 16)[0])


def test_inverse_proposal_length_two_density():
    x = np.zeros(32, dtype=int)
    r = make_rng(0, "inv2")
    tr = None
    while tr is None or tr.t != 2:
        tr, ls = inverse_proposal(x, 0.8, 16, r)
    expected = truncated_geometric_logpmf(0.8, 16)[2] - np.log(32) - np.log(31)
    assert ls == pytest.approx(expected, abs=1e-12)
    assert inverse_proposal_logdensity(tr, 0.8, 16, 32) == pytest.approx(expected, abs=1e-12)


def test_inverse_proposal_ends_at_target(rng):
    for _ in range(200):
        x = rng.integers(0, 2, 12)
        tr, ls = inverse_proposal(x, 0.8, 16, rng)
        np.testing.assert_array_equal(tr.final, x)
        tr.validate(16)
        assert ls == pytest.approx(inverse_proposal_logdensity(tr, 0.8, 16, 12), abs=1e-12)


def test_inverse_proposal_empirical_density():
    x = np.array([1, 0, 1])
    r = make_rng(3, "invemp")
    counts = {}
    n = 60000
    for _ in range(n):
        tr, ls = inverse_proposal(x, 0.6, 2, r)
        k = tr.states.tobytes()
        counts[k] = (counts.get(k, (0, ls))[0] + 1, ls)
    assert sum(np.exp(ls) for _, ls in counts.values()) == pytest.approx(1.0, abs=1e-12)
    for c, ls in counts.values():
        assert abs(c / n - np.exp(ls)) < 4 * np.sqrt(np.exp(ls) / n)


def test_inverse_density_off_support():
    tr = Trajectory(np.array([[0, 0], [1, 0], [0, 0]]), True)
    assert inverse_proposal_logdensity(tr, 0.8, 2, 2) == -np.inf


def test_categorical_inverse_proposal(rng):
    x = np.array([2, 0, 1, 3])
    tr, ls = inverse_proposal(x, 0.8, 3, rng, K=4)
    np.testing.assert_array_equal(tr.final, x)
    assert ls == pytest.approx(inverse_proposal_logdensity(tr, 0.8, 3, 4, K=4))


def test_edit_distance_zero_length(rng):
    q0 = FactorizedInit(6, 2, rng.standard_normal(12))
    x = np.array([1, 0, 0, 1, 1, 0])
    tr, ls = _edit_path(x.copy(), init_logprob(q0, x), x, 4, rng)
    assert tr.t == 0 and ls == pytest.approx(init_logprob(q0, x))


def test_edit_distance_two_orderings(rng):
    q0 = FactorizedInit(10, 2, rng.standard_normal(20))
    x = np.zeros(10, dtype=int)
    x0 = x.copy()
    x0[[3, 7]] = 1
    seen = set()
    for _ in range(50):
        tr, ls = _edit_path(x0, init_logprob(q0, x0), x, 4, rng)
        assert ls == pytest.approx(init_logprob(q0, x0) - np.log(2))
        seen.add(tuple(tr.positions()))
    assert seen == {(3, 7), (7, 3)}


def test_edit_distance_length_is_hamming(rng):
    q0 = FactorizedInit(8, 2)
    for _ in range(100):
        x = rng.integers(0, 2, 8)
        res = edit_distance_proposal(q0, x, 8, rng)
        tr, _ = res
        assert tr.t == int(np.sum(tr.states[0] != x))
        np.testing.assert_array_equal(tr.final, x)


def test_edit_distance_rejects_long_paths(rng):
    q0 = FactorizedInit(8, 2, np.tile([30.0, 0.0], 8))  # always all zeros
    assert edit_distance_proposal(q0, np.ones(8, dtype=int), 3, rng) is None
    q = SamplerParams(q0, Editor(8, 2, 4, 4), StopPolicy(8, 2, 4), 3)
    with pytest.warns(RuntimeWarning):
        with pytest.raises(AllProposalsRejected):
            snis_grad_batch(q, np.ones((1, 8), dtype=int), "edit_distance", 4, rng, max_retries=2)


def test_edit_distance_counts_rejections(rng):
    q = random_sampler(8, 2, 3, rng)
    x = rng.integers(0, 2, (6, 8))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = snis_grad_batch(q, x, "edit_distance", 8, rng)
    assert res.n_rejected > 0


# SNIS --------------------------------------------------------------------------------

def test_snis_single_trajectory_support(rng):
    q = always_stop(random_sampler(5, 2, 3, rng))
    x = np.array([1, 1, 0, 0, 1])
    g = snis_grad_log_marginal(q, x, "inverse", 10, make_rng(0, "t0"), geo_p=1e-12)
    ref = trajectory_logprob_grad(q, [Trajectory(x[None], False)], [1.0])
    np.testing.assert_allclose(g, ref, atol=1e-14)


def test_snis_duplication_invariance(rng):
    q = random_sampler(5, 2, 3, rng)
    x = rng.integers(0, 2, 5)
    trajs, logs = zip(*[inverse_proposal(x, 0.8, 3, rng) for _ in range(7)])
    a = snis_grad_from_trajectories(q, list(trajs), np.array(logs))
    b = snis_grad_from_trajectories(q, list(trajs) * 2, np.array(logs * 2))
    np.testing.assert_allclose(a, b, atol=1e-13)


def test_snis_scale_invariance(rng):
    q = random_sampler(5, 2, 3, rng)
    x = rng.integers(0, 2, 5)
    trajs, logs = zip(*[inverse_proposal(x, 0.8, 3, rng) for _ in range(7)])
    a = snis_grad_from_trajectories(q, list(trajs), np.array(logs))
    b = snis_grad_from_trajectories(q, list(trajs), np.array(logs) + 123.0)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)


@pytest.mark.parametrize("q0", ["factorized", "autoregressive"])
def test_posterior_gradient_identity(q0):
    r = posterior_gradient_identity(3, 2, seed=0, q0=q0)
    assert r.passed, r.line()


def test_full_support_any_proposal_density(rng):
    """Weighting the full support by q/s with exact s reproduces the gradient for any s."""
    q = random_sampler(3, 2, 2, rng)
    x = np.array([0, 1, 1])
    trajs = trajectories_ending_at(q, x)
    log_s = rng.standard_normal(len(trajs))
    log_s -= logsumexp(log_s)
    # exact expectation under s of w * grad: each trajectory counted with mass s
    w = np.exp(trajectory_logprobs(q, trajs) - log_s)
    w_exact = np.exp(log_s) * w / np.sum(np.exp(log_s) * w)
    g = trajectory_logprob_grad(q, trajs, w_exact)
    ref = snis_grad_from_trajectories(q, trajs, np.zeros(len(trajs)))
    np.testing.assert_allclose(g, ref, atol=1e-12)


def test_snis_gradient_check_against_marginal(rng):
    q = random_sampler(3, 2, 2, rng)
    x = np.array([1, 0, 1])
    trajs = trajectories_ending_at(q, x)
    g = snis_grad_from_trajectories(q, trajs, np.zeros(len(trajs)))
    err = nn.gradient_check(lambda t: marginal_logprob_exact(q.with_params(t), x), g, q.get_params(),
                            indices=rng.choice(q.n_params, 60, replace=False))
    assert err < 1e-4


def test_inverse_snis_converges_when_support_is_complete():
    # with T = 1 every trajectory ending at x is reachable by the inverse proposal
    q = random_sampler(3, 2, 1, make_rng(4, "conv"))
    x = np.array([1, 1, 0])
    trajs = trajectories_ending_at(q, x)
    exact = snis_grad_from_trajectories(q, trajs, np.zeros(len(trajs)))
    est = snis_grad_log_marginal(q, x, "inverse", 20000, make_rng(4, "draws"), geo_p=0.5)
    assert np.abs(est - exact).max() < 0.05 * np.abs(exact).max()


def test_batch_rows_are_independent_means(rng):
    q = random_sampler(4, 2, 2, rng)
    X = rng.integers(0, 2, (3, 4))
    res = snis_grad_batch(q, X, "inverse", 5, make_rng(1), per_target=True)
    np.testing.assert_allclose(res.per_target.mean(axis=0), res.grad, atol=1e-13)
    assert res.n_used == 15 and 1.0 <= res.ess <= 5.0


# parameters -----------------------------------------------------------------------

def test_no_edit_variant(rng):
    q = SamplerParams.create(6, 2, "factorized", 0, rng=rng)
    assert q.editor is None and q.stop is None
    trajs, lp = sample_trajectories(q, 50, rng)
    assert all(tr.t == 0 and tr.forced_stop for tr in trajs)
    np.testing.assert_allclose(lp, q.q0.log_prob(np.stack([t.final for t in trajs])), atol=1e-14)
    g = snis_grad_batch(q, rng.integers(0, 2, (4, 6)), "inverse", 3, rng).grad
    assert g.shape == (q.n_params,)
    with pytest.raises(ValueError):
        SamplerParams(q.q0, None, None, 2)


@pytest.mark.parametrize("kind", ["factorized", "autoregressive"])
def test_save_load(tmp_path, rng, kind):
    q = random_sampler(5, 2, 3, rng, kind)
    q.save(tmp_path / "q.ckpt")
    q2 = SamplerParams.load(tmp_path / "q.ckpt")
    assert q2.max_steps == 3 and q2.get_params().tobytes() == q.get_params().tobytes()
    x = rng.integers(0, 2, 5)
    assert marginal_logprob_exact(q2, x) == marginal_logprob_exact(q, x)


def test_param_round_trip(rng):
    q = random_sampler(4, 2, 2, rng, "autoregressive")
    p = q.get_params()
    assert q.with_params(p).get_params().tobytes() == p.tobytes()
    s = q.slices()
    assert s["stop"].stop == q.n_params
    with pytest.raises(nn.ShapeError):
        q.with_params(p[:-1])


def test_trajectory_json(rng):
    tr, _ = sample_trajectory(random_sampler(4, 2, 2, rng), rng)
    assert '"forced_stop"' in tr.to_json()
