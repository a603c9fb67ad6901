import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import wasserstein_distance

from conftest import random_stack, random_stochastic
from oracles import kl_direct, softmax_row
from trace_edges.aggregation import AggregatedAttention
from trace_edges.emergence import (
    DivergenceMetric,
    map_divergence,
    row_kl,
    select_emergence_step,
)
from trace_edges.errors import LengthMismatch, TooFewTimesteps, WidthMismatch
from trace_edges.synthetic import (
    mean_fisher_info,
    random_similarity_field,
    smoothstep_schedule,
    synth_attention,
)
from trace_edges.tensor_io import AttentionBlock, AttentionStack


class TestRowKl:
    def test_identical_uniform_is_zero(self):
        assert row_kl([0.25] * 4, [0.25] * 4) == 0.0

    def test_one_hot_vs_uniform_is_ln2(self):
        assert row_kl([1, 0], [0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-12)

    def test_half_half_vs_quarter(self):
        expected = 0.5 * math.log(2) + 0.5 * math.log(2 / 3)
        assert row_kl([0.5, 0.5], [0.25, 0.75]) == pytest.approx(expected, abs=1e-9)
        assert expected == pytest.approx(0.1438, abs=1e-4)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            row_kl([1.0], [0.5, 0.5])

    def test_asymmetry_witness(self):
        p, q = [0.9, 0.1], [0.2, 0.8]
        assert row_kl(p, q) != pytest.approx(row_kl(q, p))

    @given(st.integers(0, 2**32 - 1), st.integers(2, 16))
    @settings(max_examples=100, deadline=None)
    def test_gibbs_and_oracle_agreement(self, seed, n):
        rng = np.random.default_rng(seed)
        p = rng.dirichlet(np.ones(n))
        q = rng.dirichlet(np.ones(n))
        val = row_kl(p, q)
        assert val >= 0.0
        assert val == pytest.approx(kl_direct(p, q), abs=1e-10)
        assert row_kl(p, p) == pytest.approx(0.0, abs=1e-9)


def agg(mat):
    mat = np.asarray(mat, dtype=np.float64)
    w = int(round(math.sqrt(mat.shape[0])))
    return AggregatedAttention(width=w, map=mat)


class TestMapDivergence:
    def test_zero_for_identical_all_metrics(self, rng):
        mat = random_stochastic(rng, 4, dtype=np.float64)
        for metric in DivergenceMetric:
            assert map_divergence(agg(mat), agg(mat), metric) == pytest.approx(0.0, abs=1e-9)

    def test_degenerate_single_pixel(self):
        one = agg([[1.0]])
        for metric in DivergenceMetric:
            assert map_divergence(one, one, metric) == pytest.approx(0.0, abs=1e-9)

    def test_kl_mean_over_rows(self):
        prev = agg([[1.0, 0.0], [1.0, 0.0]])
        curr = agg([[0.5, 0.5], [0.5, 0.5]])
        # kl of each row is ln 2; the mean over two identical rows is ln 2
        assert map_divergence(prev, curr, "kl") == pytest.approx(math.log(2), abs=1e-6)

    def test_width_mismatch(self, rng):
        a = agg(random_stochastic(rng, 4, np.float64))
        b = agg(random_stochastic(rng, 16, np.float64))
        with pytest.raises(WidthMismatch):
            map_divergence(a, b, "kl")

    def test_jsd_matches_definition(self, rng):
        P = random_stochastic(rng, 4, np.float64)
        Q = random_stochastic(rng, 4, np.float64)
        measured = map_divergence(agg(P), agg(Q), "jsd")
        expected = 0.0
        for i in range(4):
            m = 0.5 * (P[i] + Q[i])
            expected += 0.5 * kl_direct(P[i], m) + 0.5 * kl_direct(Q[i], m)
        assert measured == pytest.approx(expected / 4, abs=1e-9)

    def test_mse_mae(self):
        P = np.array([[1.0, 0.0], [0.0, 1.0]])
        Q = np.array([[0.5, 0.5], [0.5, 0.5]])
        assert map_divergence(agg(P), agg(Q), "mse") == pytest.approx(0.25)
        assert map_divergence(agg(P), agg(Q), "mae") == pytest.approx(0.5)

    def test_wasserstein_matches_scipy(self, rng):
        P = random_stochastic(rng, 4, np.float64)
        Q = random_stochastic(rng, 4, np.float64)
        measured = map_divergence(agg(P), agg(Q), "wasserstein")
        p, q = P.ravel() / P.sum(), Q.ravel() / Q.sum()
        support = np.arange(p.size)
        expected = wasserstein_distance(support, support, p, q)
        assert measured == pytest.approx(expected, abs=1e-9)

    def test_entropy_diff(self):
        P = np.array([[0.5, 0.5]])
        Q = np.array([[1.0, 0.0]])
        assert map_divergence(agg(P), agg(Q), "entropy") == pytest.approx(math.log(2), abs=1e-6)


class TestSelectStep:
    def test_identical_maps_tie_break_to_first_pair(self, rng):
        mat = random_stochastic(rng, 4)
        blk = AttentionBlock(2, mat)
        stack = AttentionStack(timesteps=[0, 100, 200, 300], blocks=[[blk]] * 4)
        result = select_emergence_step(stack)
        assert result.t_star == 100
        assert all(v == pytest.approx(0.0, abs=1e-7) for _, v in result.per_step_divergence)

    def test_two_timesteps_always_selects_second(self, rng):
        stack = random_stack(rng, n_steps=2, widths=(2,))
        assert select_emergence_step(stack).t_star == stack.timesteps[1]

    def test_too_few_timesteps(self, rng):
        stack = random_stack(rng, n_steps=1, widths=(2,))
        with pytest.raises(TooFewTimesteps):
            select_emergence_step(stack)

    def test_matches_fisher_prediction_on_synthetic_stack(self):
        field = random_similarity_field(5, 5, bound=1.0, seed=7)
        schedule = smoothstep_schedule()
        stack = synth_attention(field, schedule)
        result = select_emergence_step(stack)
        gammas = np.asarray(schedule.values)
        predicted = [
            0.5 * (gammas[k] - gammas[k - 1]) ** 2 * mean_fisher_info(field, float(gammas[k]))
            for k in range(1, gammas.size)
        ]
        t_pred = schedule.timesteps[1 + int(np.argmax(predicted))]
        t_measured_idx = schedule.timesteps.index(result.t_star)
        t_pred_idx = schedule.timesteps.index(t_pred)
        assert abs(t_measured_idx - t_pred_idx) <= 1

    def test_invariant_to_common_query_permutation(self, rng):
        stack = random_stack(rng, n_steps=3, widths=(2,))
        perm = rng.permutation(4)
        permuted_blocks = [
            [AttentionBlock(2, per_t[0].map[perm][:, perm])] for per_t in stack.blocks
        ]
        permuted = AttentionStack(timesteps=stack.timesteps, blocks=permuted_blocks)
        a = select_emergence_step(stack)
        b = select_emergence_step(permuted)
        assert a.t_star == b.t_star
        for (t1, v1), (t2, v2) in zip(a.per_step_divergence, b.per_step_divergence):
            assert t1 == t2 and v1 == pytest.approx(v2, abs=1e-9)

    def test_selected_map_rows_renormalized(self, rng):
        stack = random_stack(rng, n_steps=3, widths=(2, 4))
        result = select_emergence_step(stack)
        np.testing.assert_allclose(result.selected_map.map.sum(axis=1), 1.0, atol=1e-12)

    def test_kl_and_jsd_argmax_agree_for_small_steps(self):
        field = random_similarity_field(4, 4, bound=1.0, seed=11)
        # dense schedule with steps <= 0.02
        values = np.linspace(0.9, 0.7, 11)
        schedule_values = values
        from trace_edges.synthetic import GammaSchedule

        schedule = GammaSchedule(
            timesteps=list(range(0, 1100, 100)), values=schedule_values
        )
        stack = synth_attention(field, schedule)
        kl_curve = select_emergence_step(stack, "kl").per_step_divergence
        jsd_curve = select_emergence_step(stack, "jsd").per_step_divergence
        kl_arg = int(np.argmax([v for _, v in kl_curve]))
        jsd_arg = int(np.argmax([v for _, v in jsd_curve]))
        assert abs(kl_arg - jsd_arg) <= 1
