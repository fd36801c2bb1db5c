import os
import subprocess
import sys

import numpy as np
import pytest

import hamtomo.kernels as kernels


@pytest.fixture
def random_inputs():
    rng = np.random.default_rng(0)
    times = np.arange(2049) * 0.1
    data = rng.random((16, 2049))
    freqs = np.sort(rng.uniform(0.3, 7.0, 6))
    omegas = np.arange(0.0, 7.5, np.pi / (times[-1] * 4.0))
    return times, data, freqs, omegas


def test_design_matrix_layout():
    times = np.arange(8) * 0.25
    g = kernels.design_matrix(np.array([1.0, 2.0]), times)
    assert g.shape == (5, 8)
    assert np.allclose(g[0], np.cos(times))
    assert np.allclose(g[1], np.sin(times))
    assert np.allclose(g[2], np.cos(2 * times))
    assert np.allclose(g[3], np.sin(2 * times))
    assert np.allclose(g[4], 1.0)


def test_gram_matches_brute_force(random_inputs):
    times, data, freqs, _ = random_inputs
    gram, proj = kernels.gram_and_projections(freqs, times, data)
    g = kernels.design_matrix(freqs, times)
    assert np.max(np.abs(gram - g @ g.T)) < 1e-8
    assert np.max(np.abs(proj - g @ data.T)) < 1e-8


def test_power_matches_brute_force(random_inputs):
    times, data, freqs, omegas = random_inputs
    sub = omegas[:200]
    out = kernels.power_rows(data, times, sub)
    brute = np.abs(np.exp(1j * np.outer(sub, times)) @ data.T / times.size).T ** 2
    assert np.max(np.abs(out - brute)) < 1e-12


def test_backends_agree(random_inputs):
    times, data, freqs, omegas = random_inputs
    g_a, p_a = kernels.gram_and_projections_numba(freqs, times, data)
    g_b, p_b = kernels.gram_and_projections_numpy(freqs, times, data)
    assert np.max(np.abs(g_a - g_b)) < 1e-8 * np.max(np.abs(g_b))
    assert np.max(np.abs(p_a - p_b)) < 1e-8 * np.max(np.abs(p_b))
    c_a = kernels.power_rows_numba(data, times, omegas[:500])
    c_b = kernels.power_rows_numpy(data, times, omegas[:500])
    assert np.max(np.abs(c_a - c_b)) < 1e-10 * np.max(c_b)


def test_nonuniform_grid_supported(random_inputs):
    _, data, freqs, _ = random_inputs
    rng = np.random.default_rng(1)
    times = np.sort(rng.uniform(0.0, 100.0, data.shape[1]))
    g_a, p_a = kernels.gram_and_projections_numba(freqs, times, data)
    g_b, p_b = kernels.gram_and_projections_numpy(freqs, times, data)
    assert np.max(np.abs(g_a - g_b)) < 1e-8 * np.max(np.abs(g_b))
    assert np.max(np.abs(p_a - p_b)) < 1e-8 * np.max(np.abs(p_b))


def test_env_flag_selects_numpy_backend():
    code = ("import hamtomo.kernels as k; "
            "print(k.backend_name())")
    env = dict(os.environ, HAMTOMO_NO_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env,
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"


def test_default_backend_reports_name():
    assert kernels.backend_name() in ("numba", "numpy")


def test_benchmark_script_quick():
    script = os.path.join(os.path.dirname(__file__), "..", "benchmarks",
                          "bench_kernels.py")
    out = subprocess.run([sys.executable, script, "--quick"],
                         capture_output=True, text=True, check=True)
    assert "power_rows" in out.stdout
    assert "gram_and_projections" in out.stdout
