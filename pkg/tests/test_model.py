import numpy as np
import pytest
from scipy.linalg import expm

from hamtomo.errors import DegenerateSpectrumError, ValidationError
from hamtomo.model import (
    GaugePhases,
    apply_gauge,
    assemble_hamiltonian,
    eigendecompose,
    evaluate_traces,
    hamiltonian_from_dict,
    hamiltonian_to_dict,
    signal_model_of,
    traceless_levels,
    validate_hamiltonian,
)

from conftest import random_gauge, random_hermitian

SIGMA_X_TENSOR_I = np.zeros((4, 4), dtype=complex)
SIGMA_X_TENSOR_I[0, 2] = SIGMA_X_TENSOR_I[2, 0] = 1.0
SIGMA_X_TENSOR_I[1, 3] = SIGMA_X_TENSOR_I[3, 1] = 1.0


def propagation_oracle(h, times):
    """Outcome probabilities by direct matrix exponential (scipy)."""
    p = np.empty((4, 4, len(times)))
    for n, t in enumerate(times):
        u = expm(-1j * np.asarray(h, dtype=complex) * t)
        p[:, :, n] = np.abs(u.T) ** 2  # p[k, l] = |<l|U|k>|^2
    return p


class TestEigendecompose:
    def test_diagonal(self):
        es = eigendecompose(np.diag([0.0, 1.0, 2.0, 4.0]))
        assert np.allclose(es.values, [0, 1, 2, 4])
        assert np.allclose(es.magnitudes, np.eye(4), atol=1e-12)

    def test_sigma_x_tensor_identity(self):
        es = eigendecompose(SIGMA_X_TENSOR_I)
        assert np.allclose(es.values, [-1, -1, 1, 1], atol=1e-12)
        coupled = es.magnitudes[es.magnitudes > 1e-8]
        assert np.allclose(coupled, 1 / np.sqrt(2), atol=1e-10)

    @pytest.mark.parametrize("seed", range(6))
    def test_reconstruction_residual(self, seed):
        h = random_hermitian(seed)
        es = eigendecompose(h)
        rebuilt = (es.vectors * es.values[None, :]) @ es.vectors.conj().T
        assert np.max(np.abs(rebuilt - h)) < 1e-10

    @pytest.mark.parametrize("seed", range(4))
    def test_orthonormality_and_row_normalization(self, seed):
        es = eigendecompose(random_hermitian(seed + 50))
        gram = es.vectors.conj().T @ es.vectors
        assert np.max(np.abs(gram - np.eye(4))) < 1e-10
        assert np.max(np.abs(np.sum(es.magnitudes**2, axis=1) - 1.0)) < 1e-10
        assert np.all(es.phases > -np.pi) and np.all(es.phases <= np.pi)

    def test_phase_convention_largest_component_real_positive(self):
        es = eigendecompose(random_hermitian(3))
        for nu in range(4):
            idx = np.argmax(np.abs(es.vectors[:, nu]))
            val = es.vectors[idx, nu]
            assert abs(val.imag) < 1e-12 and val.real > 0

    def test_rejects_non_hermitian(self):
        bad = np.eye(4, dtype=complex)
        bad[0, 1] = 0.5
        with pytest.raises(ValidationError):
            eigendecompose(bad)

    def test_rejects_wrong_shape(self):
        with pytest.raises(ValidationError):
            validate_hamiltonian(np.eye(3))


class TestSignalModel:
    def test_diagonal_distinct_gaps(self):
        model = signal_model_of(np.diag([0.0, 1.0, 2.5, 4.5]))
        assert np.allclose(model.frequencies, [1.0, 1.5, 2.0, 2.5, 3.5, 4.5])
        assert np.allclose(model.cos_coeffs, 0.0, atol=1e-14)
        assert np.allclose(model.sin_coeffs, 0.0, atol=1e-14)
        assert np.allclose(model.offsets, np.eye(4), atol=1e-14)

    def test_degenerate_spectrum_rejected(self):
        with pytest.raises(DegenerateSpectrumError):
            signal_model_of(SIGMA_X_TENSOR_I)
        with pytest.raises(DegenerateSpectrumError):
            signal_model_of(np.diag([0.0, 1.0, 2.0, 4.0]))  # two gaps equal 1

    def test_rabi_limit_via_propagation(self):
        # sigma_x (x) I has a degenerate spectrum, outside the generic signal
        # model; the underlying physics is still checked via propagation
        times = np.linspace(0.0, 3.0, 50)
        p = propagation_oracle(SIGMA_X_TENSOR_I, times)
        assert np.max(np.abs(p[0, 0] - np.cos(times) ** 2)) < 1e-10

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_propagation_oracle(self, seed):
        h = random_hermitian(seed + 10)
        model = signal_model_of(h)
        times = np.linspace(0.0, 100.0, 1000)
        p_model = evaluate_traces(model, times)
        p_ref = propagation_oracle(h, times)
        assert np.max(np.abs(p_model - p_ref)) < 1e-9

    def test_initial_time_is_identity(self):
        model = signal_model_of(random_hermitian(2))
        p0 = evaluate_traces(model, [0.0])[:, :, 0]
        assert np.max(np.abs(p0 - np.eye(4))) < 1e-9

    @pytest.mark.parametrize("seed", range(4))
    def test_row_stochastic(self, seed):
        model = signal_model_of(random_hermitian(seed + 20))
        p = evaluate_traces(model, np.linspace(0.0, 50.0, 300))
        assert np.max(np.abs(p.sum(axis=1) - 1.0)) < 1e-9

    @pytest.mark.parametrize("seed", range(4))
    def test_gauge_invariance_of_signals(self, seed):
        h = random_hermitian(seed + 30)
        g = random_gauge(seed)
        base = signal_model_of(h)
        gauged = signal_model_of(apply_gauge(h, g))
        assert np.max(np.abs(base.frequencies - gauged.frequencies)) < 1e-9
        assert np.max(np.abs(base.cos_coeffs - gauged.cos_coeffs)) < 1e-9
        assert np.max(np.abs(base.sin_coeffs - gauged.sin_coeffs)) < 1e-9
        assert np.max(np.abs(base.offsets - gauged.offsets)) < 1e-9

    def test_offset_identity(self):
        h = random_hermitian(5)
        model = signal_model_of(h)
        es = eigendecompose(h)
        s = es.magnitudes[:, None, :] * es.magnitudes[None, :, :]
        assert np.max(np.abs(model.offsets - np.sum(s**2, axis=2))) < 1e-10

    def test_amplitude_identity(self):
        # a^2 + b^2 equals the squared overlap product for the assigned pair
        h = random_hermitian(6)
        model = signal_model_of(h)
        es = eigendecompose(h)
        s = es.magnitudes[:, None, :] * es.magnitudes[None, :, :]
        for m, (mu, nu) in enumerate(model.pairs):
            lhs = model.cos_coeffs[:, :, m] ** 2 + model.sin_coeffs[:, :, m] ** 2
            rhs = (s[:, :, mu] * s[:, :, nu]) ** 2
            assert np.max(np.abs(lhs - rhs)) < 1e-12

    def test_evaluate_rejects_nonfinite_times(self):
        model = signal_model_of(random_hermitian(2))
        with pytest.raises(ValidationError):
            evaluate_traces(model, [0.0, np.inf])


class TestAssemble:
    def _exact_parts(self, h):
        h0 = h - np.trace(h).real / 4.0 * np.eye(4)
        es = eigendecompose(h0)
        levels = es.values - es.values.mean()
        r, phi = es.magnitudes, es.phases
        overlaps = r[:, None, :] * r[None, :, :]
        delta = phi[None, :, :] - phi[:, None, :]
        offs = delta - delta[:, :, :1]
        return h0, es, levels, overlaps, offs

    @pytest.mark.parametrize("seed", range(4))
    def test_gauge_relation_from_exact_eigendata(self, seed):
        h = random_hermitian(seed + 40)
        h0, es, levels, overlaps, offs = self._exact_parts(h)
        built = assemble_hamiltonian(levels, overlaps, offs)
        phi = es.phases
        g = GaugePhases(phi[1, 0] - phi[0, 0], phi[2, 0] - phi[0, 0], phi[3, 0] - phi[0, 0])
        assert np.max(np.abs(built - apply_gauge(h0, g))) < 1e-8
        assert abs(np.trace(built)) < 1e-8

    def test_real_symmetric_when_phases_vanish(self):
        rng = np.random.default_rng(8)
        sym = rng.standard_normal((4, 4))
        sym = 0.5 * (sym + sym.T)
        _, _, levels, overlaps, _ = self._exact_parts(sym)
        built = assemble_hamiltonian(levels, overlaps, np.zeros((4, 4, 4)))
        assert np.max(np.abs(built.imag)) < 1e-12
        assert np.max(np.abs(built - built.T)) < 1e-12

    def test_zero_levels_give_zero(self):
        _, _, _, overlaps, offs = self._exact_parts(random_hermitian(9))
        built = assemble_hamiltonian(np.zeros(4), overlaps, offs)
        assert np.max(np.abs(built)) == 0.0

    def test_traceless_levels_sum_to_zero(self):
        levels = traceless_levels(1.0, 2.5, 4.0)
        assert abs(levels.sum()) < 1e-12
        assert np.allclose(np.diff(levels), [1.0, 1.5, 1.5])


class TestGauge:
    def test_identity_gauge(self):
        h = random_hermitian(11)
        assert np.allclose(apply_gauge(h, GaugePhases(0, 0, 0)), h)

    def test_diagonal_commutes(self):
        h = np.diag([0.0, 1.0, 2.5, 4.5])
        g = GaugePhases(0.3, 1.1, 2.2)
        assert np.allclose(apply_gauge(h, g), h)

    @pytest.mark.parametrize("seed", range(4))
    def test_spectrum_preserved(self, seed):
        h = random_hermitian(seed + 60)
        g = random_gauge(seed + 60)
        w0 = np.linalg.eigvalsh(h)
        w1 = np.linalg.eigvalsh(apply_gauge(h, g))
        assert np.max(np.abs(w0 - w1)) < 1e-10

    def test_wrapped(self):
        g = GaugePhases(-0.5, 7.0, 2.0).wrapped()
        arr = g.as_array()
        assert np.all(arr >= 0) and np.all(arr < 2 * np.pi)


class TestSerialization:
    def test_round_trip(self, tmp_path):
        h = random_hermitian(13)
        payload = hamiltonian_to_dict(h)
        back = hamiltonian_from_dict(payload)
        assert np.allclose(back, h, atol=1e-12)

    def test_reader_validates_hermiticity(self):
        payload = {"re": np.eye(4).tolist(), "im": (0.1 * np.ones((4, 4))).tolist()}
        with pytest.raises(ValidationError):
            hamiltonian_from_dict(payload)

    def test_reader_validates_shape(self):
        with pytest.raises(ValidationError):
            hamiltonian_from_dict({"re": [[1.0]], "im": [[0.0]]})
