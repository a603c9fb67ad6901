import math

import numpy as np
import pytest

from oracles import central_difference, kl_direct, softmax_row
from trace_edges.errors import BadSplit, DegenerateRow, ShapeMismatch
from trace_edges.synthetic import (
    GammaSchedule,
    SimilarityField,
    entropy_derivative,
    fisher_info,
    kl_second_order_check,
    mean_fisher_info,
    random_similarity_field,
    row_entropy,
    smoothstep_schedule,
    synth_attention,
    synth_two_instance_field,
)


class TestSchedules:
    def test_smoothstep_endpoints_and_monotonicity(self):
        sched = smoothstep_schedule()
        assert sched.values[0] == pytest.approx(1.0)
        assert sched.values[-1] == pytest.approx(0.0)
        assert (np.diff(sched.values) < 0).all()

    def test_non_decreasing_schedule_rejected(self):
        with pytest.raises(ValueError):
            GammaSchedule(timesteps=[0, 100], values=np.array([0.5, 0.5])).validate()

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            GammaSchedule(timesteps=[0, 100], values=np.array([1.2, 0.0])).validate()


class TestSynthAttention:
    def test_gamma_zero_rows_uniform(self):
        field = random_similarity_field(2, 2, seed=1)
        sched = GammaSchedule(timesteps=[0, 100], values=np.array([1e-12, 0.0]))
        # gamma numerically zero in the last step -> uniform rows
        stack = synth_attention(field, sched)
        np.testing.assert_allclose(stack.blocks[1][0].map, 0.25, atol=1e-9)

    def test_large_gamma_concentrates(self):
        # unique row maxima with a wide top-2 gap: effective logit scale 50
        rng = np.random.default_rng(3)
        s = rng.uniform(-0.3, 0.3, (4, 4))
        np.fill_diagonal(s, 1.0)
        field = SimilarityField(s=s * 50, height=2, width=2, bound=50.0)
        sched = GammaSchedule(timesteps=[0, 100], values=np.array([1.0, 0.0]))
        stack = synth_attention(field, sched)
        probs = stack.blocks[0][0].map.astype(np.float64)
        for i in range(4):
            assert int(np.argmax(s[i])) == i
            assert probs[i, i] > 1 - 1e-9

    def test_softmax_example_row(self):
        # one row [0, 1] at gamma 1 -> [1/(1+e), e/(1+e)]
        p = softmax_row([0.0, 1.0], 1.0)
        assert p[0] == pytest.approx(1 / (1 + math.e), abs=1e-12)
        assert p[1] == pytest.approx(math.e / (1 + math.e), abs=1e-12)

    def test_rows_sum_to_one_exactly(self):
        field = random_similarity_field(3, 3, seed=5)
        stack = synth_attention(field, smoothstep_schedule())
        for per_t in stack.blocks:
            sums = per_t[0].map.sum(axis=1, dtype=np.float64)
            np.testing.assert_allclose(sums, 1.0, atol=1e-6)

    def test_degenerate_field_rejected(self):
        field = synth_two_instance_field(2, 2, 1, contrast=0.0)
        with pytest.raises(DegenerateRow):
            synth_attention(field, smoothstep_schedule())

    def test_non_square_grid_rejected(self):
        field = SimilarityField(
            s=np.random.default_rng(0).uniform(-1, 1, (6, 6)),
            height=2,
            width=3,
            bound=1.0,
        )
        with pytest.raises(ShapeMismatch):
            synth_attention(field, smoothstep_schedule())


class TestEntropyIdentities:
    def test_gamma_zero_max_entropy(self):
        s = np.array([0.3, -0.2, 0.9, 0.1])
        assert row_entropy(s, 0.0) == pytest.approx(math.log(4), abs=1e-12)
        assert entropy_derivative(s, 0.0) == 0.0

    def test_derivative_example_two_point_row(self):
        p = math.e / (1 + math.e)
        expected = -(p * (1 - p))
        assert entropy_derivative([0.0, 1.0], 1.0) == pytest.approx(expected, abs=1e-9)
        assert expected == pytest.approx(-0.1966, abs=1e-4)

    def test_central_difference_matches_closed_form(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            s = rng.uniform(-1, 1, rng.integers(2, 20))
            gamma = float(rng.uniform(0.05, 1.0))
            numeric = central_difference(lambda g: row_entropy(s, g), gamma)
            assert numeric == pytest.approx(entropy_derivative(s, gamma), abs=1e-6)

    def test_entropy_monotone_in_gamma(self):
        rng = np.random.default_rng(17)
        s = rng.uniform(-1, 1, 16)
        gammas = np.linspace(0.0, 1.0, 50)
        values = [row_entropy(s, g) for g in gammas]
        assert all(a >= b - 1e-12 for a, b in zip(values, values[1:]))


class TestFisher:
    def test_constant_row_zero(self):
        field = synth_two_instance_field(2, 2, 1, contrast=0.0)
        assert fisher_info(field.s[0], 0.7) == 0.0

    def test_uniform_two_point(self):
        assert fisher_info([0.0, 1.0], 0.0) == pytest.approx(0.25, abs=1e-12)

    def test_bounded_by_square(self):
        rng = np.random.default_rng(23)
        for _ in range(50):
            bound = float(rng.uniform(0.5, 3.0))
            s = rng.uniform(-bound, bound, 12)
            assert fisher_info(s, float(rng.uniform(0, 1))) <= bound**2 + 1e-12


class TestSecondOrderLaw:
    def test_zero_delta_gives_zero(self):
        field = random_similarity_field(2, 2, seed=2)
        # nearly flat schedule: machine-size steps
        sched = GammaSchedule(
            timesteps=[0, 100], values=np.array([0.5 + 1e-13, 0.5])
        )
        reports = kl_second_order_check(field, sched)
        assert reports[0].measured_kl == pytest.approx(0.0, abs=1e-12)
        assert reports[0].predicted_kl == pytest.approx(0.0, abs=1e-12)

    def test_cubic_remainder_bound_over_random_fields(self):
        rng = np.random.default_rng(31)
        for trial in range(100):
            bound = 1.0
            field = random_similarity_field(3, 3, bound=bound, seed=int(rng.integers(2**31)))
            g0 = float(rng.uniform(0.3, 0.9))
            dg = float(rng.uniform(0.002, 0.01))
            sched = GammaSchedule(timesteps=[0, 100], values=np.array([g0 + dg, g0]))
            rep = kl_second_order_check(field, sched)[0]
            assert abs(rep.measured_kl - rep.predicted_kl) <= 5 * dg**3 * bound**3

    def test_measured_matches_direct_kl(self):
        field = random_similarity_field(2, 2, seed=9)
        sched = GammaSchedule(timesteps=[0, 100], values=np.array([0.9, 0.7]))
        rep = kl_second_order_check(field, sched)[0]
        expected = np.mean(
            [
                kl_direct(softmax_row(row, 0.9), softmax_row(row, 0.7), epsilon=0.0)
                for row in field.s
            ]
        )
        assert rep.measured_kl == pytest.approx(float(expected), abs=1e-9)

    def test_endpoint_kl_small_for_smoothstep_fixture(self):
        field = random_similarity_field(4, 4, seed=41)
        reports = kl_second_order_check(field, smoothstep_schedule())
        kls = [r.measured_kl for r in reports]
        peak = max(kls)
        assert kls[0] <= 0.1 * peak
        assert kls[-1] <= 0.1 * peak


class TestTwoInstanceField:
    def test_block_constant_structure(self):
        field = synth_two_instance_field(2, 4, 2, contrast=3.0)
        s = field.s
        # same-side pairs carry the contrast, cross pairs zero
        assert s[0, 1] == 3.0 and s[0, 2] == 0.0
        assert field.bound == 3.0

    def test_bad_split(self):
        with pytest.raises(BadSplit):
            synth_two_instance_field(4, 4, 0, 1.0)
        with pytest.raises(BadSplit):
            synth_two_instance_field(4, 4, 4, 1.0)

    def test_mean_fisher_matches_row_fisher(self):
        field = random_similarity_field(2, 3, seed=13)
        gamma = 0.6
        expected = np.mean([fisher_info(row, gamma) for row in field.s])
        assert mean_fisher_info(field, gamma) == pytest.approx(float(expected), abs=1e-12)
