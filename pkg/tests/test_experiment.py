import numpy as np
import pytest
from scipy.linalg import expm

from hamtomo.errors import ValidationError
from hamtomo.experiment import (
    PROTOCOL_FIXED,
    PROTOCOL_SUPER,
    SamplingPlan,
    TraceSet,
    propagate_probabilities,
    propagate_state,
    read_traces,
    run_fixed_basis,
    run_two_step,
    sidecar_path,
    superposition_signal,
    write_traces,
)
from hamtomo.model import GaugePhases, signal_model_of, evaluate_traces

from conftest import random_gauge, random_hermitian, random_state

PAIR_COUPLING = np.zeros((4, 4), dtype=complex)
PAIR_COUPLING[0, 1] = PAIR_COUPLING[1, 0] = 1.0  # |1><2| + |2><1|


class TestSamplingPlan:
    def test_times(self):
        plan = SamplingPlan(dt=0.1, n_samples=5, shots=10, seed=1)
        assert np.allclose(plan.times, [0.0, 0.1, 0.2, 0.3, 0.4])
        assert plan.duration == pytest.approx(0.4)

    @pytest.mark.parametrize("kwargs", [
        dict(dt=0.0, n_samples=4, shots=1),
        dict(dt=0.1, n_samples=1, shots=1),
        dict(dt=0.1, n_samples=4, shots=0),
    ])
    def test_validation(self, kwargs):
        with pytest.raises(ValidationError):
            SamplingPlan(seed=0, **kwargs)


class TestFixedBasis:
    def test_diagonal_is_deterministic(self):
        plan = SamplingPlan(dt=0.1, n_samples=32, shots=7, seed=3)
        traces = run_fixed_basis(np.diag([0.0, 1.0, 2.5, 4.5]), plan)
        expected = np.broadcast_to(np.eye(4)[:, :, None], (4, 4, 32))
        assert np.array_equal(traces.data, expected)
        assert traces.counts.sum(axis=1).min() == plan.shots

    def test_counts_sum_to_shots_exactly(self):
        plan = SamplingPlan(dt=0.1, n_samples=64, shots=125, seed=9)
        traces = run_fixed_basis(random_hermitian(1), plan)
        assert np.all(traces.counts.sum(axis=1) == plan.shots)
        # every estimate is a multiple of 1/shots
        scaled = traces.data * plan.shots
        assert np.max(np.abs(scaled - np.rint(scaled))) < 1e-9

    def test_reproducible(self):
        plan = SamplingPlan(dt=0.1, n_samples=40, shots=50, seed=123)
        h = random_hermitian(4)
        a = run_fixed_basis(h, plan)
        b = run_fixed_basis(h, plan)
        assert np.array_equal(a.data, b.data)
        c = run_fixed_basis(h, SamplingPlan(dt=0.1, n_samples=40, shots=50, seed=124))
        assert not np.array_equal(a.data, c.data)

    def test_binomial_moments_at_half(self):
        # |1>-|2> coupling gives p = 0.5 at t = pi/4; check multinomial moments
        plan_proto = dict(dt=np.pi / 4, n_samples=2, shots=1000)
        values = []
        for seed in range(800):
            traces = run_fixed_basis(PAIR_COUPLING, SamplingPlan(seed=seed, **plan_proto))
            values.append(traces.data[0, 0, 1])
        values = np.array(values)
        assert abs(values.mean() - 0.5) < 0.005
        expected_std = np.sqrt(0.25 / 1000)
        assert abs(values.std() - expected_std) < 0.15 * expected_std

    def test_statistical_soundness(self):
        # sample variance of one cell tracks p(1-p)/shots
        h = random_hermitian(7)
        p_exact = propagate_probabilities(h, [0.0, 1.3])[2, 1, 1]
        cell = []
        for seed in range(1500):
            plan = SamplingPlan(dt=1.3, n_samples=2, shots=200, seed=seed)
            cell.append(run_fixed_basis(h, plan).data[2, 1, 1])
        cell = np.array(cell)
        assert abs(cell.mean() - p_exact) < 0.01
        target = p_exact * (1 - p_exact) / 200
        assert cell.var() <= 1.2 * target + 1e-12
        assert cell.var() >= 0.8 * target - 1e-12

    def test_trace_character(self):
        # noisy quasi-periodic signals stay inside [0, 1]
        plan = SamplingPlan(dt=0.1, n_samples=1025, shots=250, seed=2)
        traces = run_fixed_basis(random_hermitian(11), plan)
        assert traces.data.min() >= 0.0 and traces.data.max() <= 1.0
        assert traces.protocol == PROTOCOL_FIXED
        # signals move around (not constant): every row-k trace set varies
        assert np.all(traces.data.std(axis=2).max(axis=1) > 0.01)


class TestTwoStep:
    def test_zero_prep_time_matches_first_row(self):
        h0 = random_hermitian(3)
        hf = random_hermitian(5)
        plan = SamplingPlan(dt=0.1, n_samples=30, shots=80, seed=21)
        two = run_two_step(h0, 0.0, hf, plan)
        fixed = run_fixed_basis(hf, plan)
        assert np.array_equal(two.data, fixed.data[0])
        assert two.protocol == PROTOCOL_SUPER
        assert two.t_star == 0.0

    def test_same_hamiltonian_composes(self):
        h = random_hermitian(6)
        t_star = 1.7
        times = np.arange(20) * 0.1
        phi = propagate_state(h, t_star, np.array([1, 0, 0, 0], dtype=complex))
        probs = np.array([np.abs(propagate_state(h, t, phi)) ** 2 for t in times]).T
        expected = propagate_probabilities(h, times + t_star)[0]
        assert np.max(np.abs(probs - expected)) < 1e-10

    def test_negative_prep_time_rejected(self):
        with pytest.raises(ValidationError):
            run_two_step(random_hermitian(1), -0.1, random_hermitian(2),
                         SamplingPlan(dt=0.1, n_samples=4, shots=5, seed=0))

    def test_large_shots_convergence(self):
        h0 = random_hermitian(8)
        hf = random_hermitian(9)
        plan = SamplingPlan(dt=0.1, n_samples=40, shots=1_000_000, seed=17)
        traces = run_two_step(h0, 2.0, hf, plan)
        phi = propagate_state(h0, 2.0, np.array([1, 0, 0, 0], dtype=complex))
        exact = np.array([np.abs(propagate_state(hf, t, phi)) ** 2
                          for t in plan.times]).T
        assert np.max(np.abs(traces.data - exact)) < 3e-3


class TestSuperpositionSignal:
    def test_basis_state_limit(self):
        h = random_hermitian(12)
        h0 = h - np.trace(h).real / 4 * np.eye(4)
        model = signal_model_of(h0)
        times = np.linspace(0, 15, 120)
        p = superposition_signal(h0, GaugePhases(0, 0, 0),
                                 np.array([1, 0, 0, 0], dtype=complex), times)
        assert np.max(np.abs(p - evaluate_traces(model, times)[0])) < 1e-9

    def test_initial_point(self):
        alphas = random_state(3)
        p = superposition_signal(random_hermitian(2), random_gauge(2), alphas, [0.0])
        assert np.max(np.abs(p[:, 0] - np.abs(alphas) ** 2)) < 1e-10

    def test_gauge_observable_for_balanced_state(self):
        h = random_hermitian(14)
        alphas = 0.5 * np.ones(4, dtype=complex)
        times = np.linspace(0, 10, 80)
        p0 = superposition_signal(h, GaugePhases(0, 0, 0), alphas, times)
        p1 = superposition_signal(h, GaugePhases(np.pi / 3, np.pi / 5, np.pi / 7),
                                  alphas, times)
        assert np.max(np.abs(p0 - p1)) > 1e-3

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_matrix_exponential(self, seed):
        h_tilde = random_hermitian(seed + 70)
        g = random_gauge(seed + 70)
        alphas = random_state(seed + 70)
        times = np.linspace(0.0, 12.0, 60)
        p = superposition_signal(h_tilde, g, alphas, times)
        d = g.matrix()
        h = d.conj().T @ h_tilde @ d
        ref = np.array([np.abs(expm(-1j * h * t) @ alphas) ** 2 for t in times]).T
        assert np.max(np.abs(p - ref)) < 1e-9

    def test_rejects_unnormalized(self):
        with pytest.raises(ValidationError):
            superposition_signal(random_hermitian(1), GaugePhases(0, 0, 0),
                                 np.array([1.0, 1.0, 0, 0]), [0.0])


class TestTraceIO:
    def _roundtrip(self, traces, tmp_path, name):
        path = tmp_path / name
        write_traces(traces, path)
        return read_traces(path)

    def test_fixed_basis_round_trip(self, tmp_path):
        plan = SamplingPlan(dt=0.1, n_samples=16, shots=40, seed=5)
        traces = run_fixed_basis(random_hermitian(3), plan)
        back = self._roundtrip(traces, tmp_path, "fixed.csv")
        assert back.protocol == PROTOCOL_FIXED
        assert back.plan == plan
        assert np.array_equal(back.data, traces.data)
        assert np.array_equal(back.counts, traces.counts)

    def test_two_step_round_trip(self, tmp_path):
        plan = SamplingPlan(dt=0.1, n_samples=12, shots=30, seed=6)
        traces = run_two_step(random_hermitian(4), 1.5, random_hermitian(5), plan)
        back = self._roundtrip(traces, tmp_path, "two.csv")
        assert back.protocol == PROTOCOL_SUPER
        assert back.t_star == pytest.approx(1.5)
        assert np.array_equal(back.data, traces.data)

    def test_rejects_non_multiple_values(self, tmp_path):
        plan = SamplingPlan(dt=0.1, n_samples=8, shots=40, seed=7)
        traces = run_fixed_basis(random_hermitian(6), plan)
        path = tmp_path / "bad.csv"
        write_traces(traces, path)
        lines = path.read_text().splitlines()
        t, k, l, d = lines[1].split(",")
        lines[1] = ",".join([t, k, l, repr(float(d) + 0.0001)])
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ValidationError):
            read_traces(path)

    def test_rejects_missing_rows(self, tmp_path):
        plan = SamplingPlan(dt=0.1, n_samples=8, shots=40, seed=7)
        traces = run_fixed_basis(random_hermitian(6), plan)
        path = tmp_path / "short.csv"
        write_traces(traces, path)
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:-2]) + "\n")
        with pytest.raises(ValidationError):
            read_traces(path)

    def test_sidecar_records_rng(self, tmp_path):
        import json

        plan = SamplingPlan(dt=0.1, n_samples=8, shots=5, seed=1)
        traces = run_fixed_basis(np.diag([0.0, 1.0, 2.5, 4.5]), plan)
        path = tmp_path / "t.csv"
        write_traces(traces, path)
        meta = json.loads(sidecar_path(path).read_text())
        assert "Philox" in meta["rng"]
        assert meta["shots"] == 5


class TestAppendixEquivalence:
    def test_mixed_instances(self):
        for seed in range(10):
            h_tilde = random_hermitian(seed + 200)
            g = random_gauge(seed + 200)
            alphas = random_state(seed + 200)
            times = np.linspace(0.0, 8.0, 33)
            p = superposition_signal(h_tilde, g, alphas, times)
            d = g.matrix()
            h = d.conj().T @ h_tilde @ d
            ref = np.array([np.abs(expm(-1j * h * t) @ alphas) ** 2 for t in times]).T
            assert np.max(np.abs(p - ref)) < 1e-9
            assert np.max(np.abs(p.sum(axis=0) - 1.0)) < 1e-9
