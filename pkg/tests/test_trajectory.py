"""Trajectory calculus: dynamics, rewards, masks, returns, and the
exhaustive pattern enumeration, all checked against table-driven oracles."""

import itertools

import numpy as np
import pytest

from oracles import (TRANSITION_TABLE, enumerate_reference,
                     padded_return_reference, simulate_reference)
from spglab import trajectory as tj


# --- observed-state dynamics ------------------------------------------------


def test_truth_table_exact():
    for (state, correct), want in TRANSITION_TABLE.items():
        assert tj.step_observed(state, correct) == want
    assert [tj.step_observed(s, c) for s, c in
            [(1, 1), (1, 0), (0, 1), (0, 0), (-1, 1), (-1, 0)]] == [1, 0, -1, -1, -1, 0]


def test_step_observed_validation():
    with pytest.raises(ValueError):
        tj.step_observed(2, 1)
    with pytest.raises(ValueError):
        tj.step_observed(1, 2)


def test_step_observed_batch_matches_scalar():
    states, correct = np.meshgrid([-1, 0, 1], [0, 1], indexing="ij")
    out = tj.step_observed_batch(states, correct)
    for i in range(3):
        for j in range(2):
            assert out[i, j] == tj.step_observed(int(states[i, j]), int(correct[i, j]))
    with pytest.raises(ValueError):
        tj.step_observed_batch(np.ones(3), np.ones(4))


def test_state_reward():
    assert tj.state_reward(1) == 1
    assert tj.state_reward(0) == 1
    assert tj.state_reward(-1) == 0
    np.testing.assert_array_equal(tj.state_reward(np.array([-1, 0, 1])),
                                  np.array([0, 1, 1]))
    with pytest.raises(ValueError):
        tj.state_reward(3)


# --- return weights -----------------------------------------------------------


def test_return_weights_indexing():
    w = tj.ReturnWeights((0.4, 0.2, 0.1))
    assert w.weight(0) == 1.0
    assert w.weight(1) == 0.4
    assert w.weight(3) == 0.1
    np.testing.assert_array_equal(w.vector(3), [1.0, 0.4, 0.2, 0.1])
    with pytest.raises(ValueError):
        w.weight(4)
    with pytest.raises(ValueError):
        tj.ReturnWeights((0.4, -0.1))


def test_default_return_weights_recipe_and_halving():
    assert tj.default_return_weights(0).lambdas == ()
    assert tj.default_return_weights(2).lambdas == (0.4, 0.2)
    assert tj.default_return_weights(3).lambdas == (0.4, 0.2, 0.1)
    assert tj.default_return_weights(5).lambdas == (0.4, 0.2, 0.1, 0.05, 0.025)
    with pytest.raises(ValueError):
        tj.default_return_weights(-1)


def test_padded_return_against_reference():
    weights = tj.ReturnWeights((0.4, 0.2, 0.1))
    for rewards in itertools.product((0, 1), repeat=4):
        want_w, want_u = padded_return_reference(rewards, (0.4, 0.2, 0.1))
        assert tj.padded_return(rewards, weights) == pytest.approx(want_w, abs=1e-15)
        assert tj.padded_return(rewards) == pytest.approx(want_u, abs=1e-15)
    with pytest.raises(ValueError):
        tj.padded_return([])


def test_policy_readout():
    probs = np.array([0.5, 0.3, 0.2])
    cont, stop = tj.policy_readout(probs, 1)
    assert cont == pytest.approx(0.3)
    assert stop == pytest.approx(0.7)
    with pytest.raises(ValueError):
        tj.policy_readout(probs, 3)
    with pytest.raises(ValueError):
        tj.policy_readout(probs.reshape(1, 3), 0)


# --- positional masks ---------------------------------------------------------


def test_mask_series_matches_reference_per_pattern():
    for horizon in range(1, 6):
        for pattern in itertools.product((0, 1), repeat=horizon):
            ref = simulate_reference(pattern)
            series = tj.MaskSeries.from_correctness(np.asarray(pattern, dtype=float))
            got = [int(m.item()) for m in series.masks]
            assert got == ref["masks"], pattern
            assert int(series.step_lengths().item()) == ref["step_length"], pattern
            series.validate()


def test_mask_series_worked_step_lengths():
    # horizon 3: failing immediately, surviving throughout, failing at depth 2
    cases = {(0, 1, 1): 1, (1, 1, 1): 3, (1, 0, 1): 2}
    for pattern, want in cases.items():
        series = tj.MaskSeries.from_correctness(np.asarray(pattern, dtype=float))
        assert int(series.step_lengths().item()) == want


def test_mask_series_zero_horizon_step_length_is_one():
    series = tj.MaskSeries(masks=[np.ones((4,))])
    assert series.horizon == 0
    np.testing.assert_array_equal(series.step_lengths(), np.ones(4))


def test_mask_series_batch_survival_fractions():
    correct = np.array([[1, 1], [1, 0], [0, 1], [0, 0]], dtype=float)
    series = tj.MaskSeries.from_correctness(correct)
    assert series.survival_fractions() == [1.0, 0.5, 0.25]


def test_mask_series_validate_rejections():
    with pytest.raises(ValueError):
        tj.MaskSeries(masks=[]).validate()
    with pytest.raises(ValueError):
        tj.MaskSeries(masks=[np.zeros(2)]).validate()
    with pytest.raises(ValueError):
        tj.MaskSeries(masks=[np.ones(2), np.full(2, 0.5)]).validate()
    with pytest.raises(ValueError):  # resurrection across depths
        tj.MaskSeries(masks=[np.ones(1), np.zeros(1), np.ones(1)]).validate()
    with pytest.raises(ValueError):
        tj.MaskSeries.from_correctness(np.array([0.0, 0.5]))


# --- batch bookkeeping ---------------------------------------------------------


def test_effective_batch_size_cases():
    assert tj.effective_batch_size(tj.TASK_CLASSIFICATION, 3) == 3
    assert tj.effective_batch_size(tj.TASK_SEGMENTATION, 1, height=180, width=360) == 129_600
    assert tj.effective_batch_size(tj.TASK_LANGUAGE_MODELING, 2, context_len=3) == 6
    with pytest.raises(ValueError):
        tj.effective_batch_size(tj.TASK_CLASSIFICATION, 0)
    with pytest.raises(ValueError):
        tj.effective_batch_size(tj.TASK_SEGMENTATION, 1)
    with pytest.raises(ValueError):
        tj.effective_batch_size(tj.TASK_LANGUAGE_MODELING, 1)
    with pytest.raises(ValueError):
        tj.effective_batch_size("regression", 1)


def test_grouped_scale_examples_and_validation():
    np.testing.assert_allclose(tj.grouped_scale(2, np.array([3.0])), [1 / 6], rtol=1e-15)
    np.testing.assert_allclose(tj.grouped_scale(3, np.array([3.0])), [1 / 9], rtol=1e-15)
    np.testing.assert_allclose(tj.grouped_scale(3, np.array([1.0])), [1 / 3], rtol=1e-15)
    with pytest.raises(ValueError):
        tj.grouped_scale(0, np.array([1.0]))
    with pytest.raises(ValueError):
        tj.grouped_scale(2, np.array([0.5]))


def _logits_for_patterns(patterns, horizon, classes=3):
    """Per-depth logits whose argmax hits target 0 exactly per pattern bit."""
    n = len(patterns)
    out = []
    for t in range(horizon + 1):
        block = np.zeros((n, classes))
        for i, pattern in enumerate(patterns):
            hit = pattern[t] if t < horizon else 1
            block[i, 0 if hit else 1] = 1.0
        out.append(block)
    return out


def test_episode_batch_matches_reference():
    horizon = 3
    patterns = list(itertools.product((0, 1), repeat=horizon))
    targets = np.zeros(len(patterns), dtype=np.int64)
    batch = tj.EpisodeBatch.build(_logits_for_patterns(patterns, horizon), targets)
    batch.validate()
    assert batch.m == len(patterns)
    assert batch.horizon == horizon
    for i, pattern in enumerate(patterns):
        ref = simulate_reference(pattern)
        assert list(batch.correctness[i].astype(int)) == list(pattern)
        assert list(batch.states[:, i]) == ref["states"]
        assert list(batch.rewards[:, i]) == ref["rewards"]
        assert [int(m[i]) for m in batch.masks.masks] == ref["masks"]
        assert batch.step_lengths[i] == ref["step_length"]
        want_w, want_u = padded_return_reference(ref["rewards"], (0.4, 0.2, 0.1))
        assert batch.returns_weighted[i] == pytest.approx(want_w, abs=1e-15)
        assert batch.returns_unweighted[i] == pytest.approx(want_u, abs=1e-15)


def test_episode_batch_argmax_ties_break_low():
    logits = [np.array([[0.5, 0.5, 0.1]]), np.array([[0.0, 0.0, 0.0]])]
    batch = tj.EpisodeBatch.build(logits, np.array([0]))
    assert batch.correctness[0, 0] == 1.0  # tie between 0 and 1 goes to 0
    batch2 = tj.EpisodeBatch.build(logits, np.array([1]))
    assert batch2.correctness[0, 0] == 0.0


def test_episode_batch_build_validation():
    with pytest.raises(ValueError):
        tj.EpisodeBatch.build([], np.array([0]))
    with pytest.raises(ValueError):
        tj.EpisodeBatch.build([np.zeros((3, 3)), np.zeros((2, 3))], np.zeros(2, dtype=int))


def test_episode_batch_validate_catches_corruption():
    batch = tj.EpisodeBatch.build(_logits_for_patterns([(1, 1)], 2), np.zeros(1, dtype=int))
    batch.states = batch.states.copy()
    batch.states[0, 0] = 0
    with pytest.raises(ValueError):
        batch.validate()


# --- pattern enumeration --------------------------------------------------------


def test_simulate_pattern_full_agreement_with_reference():
    for horizon in range(1, 7):
        for pattern in itertools.product((0, 1), repeat=horizon):
            ref = simulate_reference(pattern)
            trace = tj.simulate_pattern(pattern)
            assert list(trace.states) == ref["states"]
            assert list(trace.rewards) == ref["rewards"]
            assert list(trace.masks) == ref["masks"]
            assert trace.step_length == ref["step_length"]
            assert trace.resurrected == ref["resurrected"]
            assert trace.characterization_member == ref["member"]
            assert list(trace.mask_reward_divergences) == ref["divergences"]
            lams = tj.default_return_weights(horizon).lambdas
            want_w, want_u = padded_return_reference(ref["rewards"], lams)
            assert trace.return_weighted == pytest.approx(want_w, abs=1e-15)
            assert trace.return_unweighted == pytest.approx(want_u, abs=1e-15)


def test_simulate_pattern_validation():
    with pytest.raises(ValueError):
        tj.simulate_pattern([])
    with pytest.raises(ValueError):
        tj.simulate_pattern([2])


def test_known_sets_at_small_horizons():
    two = tj.enumerate_nonzero_returns(2)
    assert set(two.nonzero_patterns) == {(1, 1), (1, 0)}
    assert set(two.characterized_patterns) == {(1, 1), (1, 0)}
    assert two.identity_holds_exactly
    assert ((1, 0), 2) in two.divergences

    three = tj.enumerate_nonzero_returns(3)
    assert set(three.mismatch_patterns) == {(0, 1, 0)}
    assert not three.identity_holds_exactly
    assert three.mismatches_all_resurrections
    zeros = next(tr for tr in three.traces if tr.pattern == (0, 0, 0))
    assert zeros.characterization_member and zeros.nonzero_return and zeros.resurrected


def test_enumeration_agrees_with_reference_up_to_horizon_eight():
    for horizon in range(1, 9):
        ref = enumerate_reference(horizon)
        result = tj.enumerate_nonzero_returns(horizon)
        lams = tj.default_return_weights(horizon).lambdas
        ref_nonzero = {p for p, sim in ref.items()
                       if padded_return_reference(sim["rewards"], lams)[0] != 0.0}
        ref_member = {p for p, sim in ref.items() if sim["member"]}
        assert set(result.nonzero_patterns) == ref_nonzero
        assert set(result.characterized_patterns) == ref_member
        assert ref_member <= ref_nonzero
        assert set(result.mismatch_patterns) == ref_nonzero - ref_member
        assert len(result.traces) == 2 ** horizon


def test_enumeration_horizon_bounds():
    with pytest.raises(ValueError):
        tj.enumerate_nonzero_returns(0)
    with pytest.raises(ValueError):
        tj.enumerate_nonzero_returns(9)


def test_trace_record_schema():
    record = tj.simulate_pattern((1, 0)).to_record(2)
    assert record == {
        "horizon": 2,
        "pattern": [1, 0],
        "o_trace": [1, 1, 0],
        "rewards": [1, 1, 1],
        "masks": [1, 1, 0],
        "step_length": 2,
        "return_weighted": pytest.approx(1.4 + 0.2),
        "return_unweighted": 3.0,
        "characterization_member": True,
        "resurrected": False,
        "mask_reward_divergences": [2],
    }
