"""Numeric hot kernels: numba-jitted implementations with a pure-numpy fallback.

The two inner loops that dominate batch runtime are the direct power-spectrum
evaluation (grid frequencies x samples) and the Gram-matrix/projection build
behind every marginal-likelihood evaluation.  Both exist in two variants:

* ``*_numba`` -- ``@njit`` compiled, used by default when numba imports.
* ``*_numpy`` -- vectorized numpy, used when numba is unavailable or when the
  environment variable ``HAMTOMO_NO_NUMBA`` is set to ``1``/``true``/``yes``.

``benchmarks/bench_kernels.py`` times the two paths against each other.
"""

import os

import numpy as np

_ENV_DISABLE = os.environ.get("HAMTOMO_NO_NUMBA", "0").strip().lower() in ("1", "true", "yes")

if not _ENV_DISABLE:
    try:
        from numba import njit, prange

        HAVE_NUMBA = True
    except ImportError:  # pragma: no cover - exercised only without numba installed
        HAVE_NUMBA = False
else:
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# power spectrum rows: C[i, j] = |(1/N) sum_n data[i, n] exp(1i w_j t_n)|^2
# ---------------------------------------------------------------------------

def power_rows_numpy(data: np.ndarray, times: np.ndarray, omegas: np.ndarray) -> np.ndarray:
    data = np.ascontiguousarray(data, dtype=np.float64)
    n = times.size
    out = np.empty((data.shape[0], omegas.size))
    # chunk the frequency grid to bound the (chunk x N) phase matrix
    chunk = max(1, int(4.0e6 // max(n, 1)))
    for start in range(0, omegas.size, chunk):
        w = omegas[start:start + chunk]
        phase = np.exp(1j * np.outer(w, times))
        proj = phase @ data.T / n
        out[:, start:start + chunk] = (proj.real**2 + proj.imag**2).T
    return out


if HAVE_NUMBA:

    # phase recurrences replace per-sample trig on uniform grids; exact trig is
    # re-evaluated every _RESET samples to keep rounding drift near 1e-13
    _RESET = 512

    @njit(cache=True, parallel=True)
    def _power_rows_numba(data_t, times, omegas, uniform):  # pragma: no cover - jitted
        n, n_rows = data_t.shape
        out = np.empty((n_rows, omegas.size))
        for j in prange(omegas.size):
            w = omegas[j]
            re = np.zeros(n_rows)
            im = np.zeros(n_rows)
            step = times[1] - times[0] if n > 1 else 0.0
            cd = np.cos(w * step)
            sd = np.sin(w * step)
            c = 1.0
            s = 0.0
            for t_idx in range(n):
                if not uniform or t_idx % _RESET == 0:
                    c = np.cos(w * times[t_idx])
                    s = np.sin(w * times[t_idx])
                for i in range(n_rows):
                    re[i] += data_t[t_idx, i] * c
                    im[i] += data_t[t_idx, i] * s
                if uniform:
                    c_new = c * cd - s * sd
                    s = s * cd + c * sd
                    c = c_new
            for i in range(n_rows):
                out[i, j] = (re[i] * re[i] + im[i] * im[i]) / (n * n)
        return out

    def _is_uniform(times: np.ndarray) -> bool:
        if times.size < 3:
            return True
        steps = np.diff(times)
        return bool(np.all(np.abs(steps - steps[0]) <= 1e-12 * max(abs(steps[0]), 1e-300)))

    def power_rows_numba(data, times, omegas):
        times = np.ascontiguousarray(times, dtype=np.float64)
        data_t = np.ascontiguousarray(np.asarray(data, dtype=np.float64).T)
        return _power_rows_numba(
            data_t,
            times,
            np.ascontiguousarray(omegas, dtype=np.float64),
            _is_uniform(times),
        )

else:
    power_rows_numba = power_rows_numpy


def power_rows(data: np.ndarray, times: np.ndarray, omegas: np.ndarray) -> np.ndarray:
    """Per-trace power spectrum on an arbitrary frequency grid."""
    if USE_NUMBA:
        return power_rows_numba(data, times, omegas)
    return power_rows_numpy(data, times, omegas)


# ---------------------------------------------------------------------------
# trig design matrix, Gram matrix and data projections for the marginal
# likelihood: basis rows are cos(w_m t), sin(w_m t) interleaved, then 1.
# ---------------------------------------------------------------------------

def design_matrix(freqs: np.ndarray, times: np.ndarray) -> np.ndarray:
    n_basis = 2 * freqs.size + 1
    g = np.empty((n_basis, times.size))
    wt = np.outer(freqs, times)
    g[0:-1:2] = np.cos(wt)
    g[1:-1:2] = np.sin(wt)
    g[-1] = 1.0
    return g


def gram_and_projections_numpy(freqs, times, data):
    g = design_matrix(freqs, times)
    gram = g @ g.T
    proj = g @ np.ascontiguousarray(data, dtype=np.float64).T
    return gram, proj


if HAVE_NUMBA:

    @njit(cache=True)
    def _trig_table_numba(freqs, times, uniform):  # pragma: no cover - jitted
        n_freq = freqs.size
        n = times.size
        table = np.empty((2 * n_freq + 1, n))
        step = times[1] - times[0] if n > 1 else 0.0
        for m in range(n_freq):
            cd = np.cos(freqs[m] * step)
            sd = np.sin(freqs[m] * step)
            c = 1.0
            s = 0.0
            for t_idx in range(n):
                if not uniform or t_idx % _RESET == 0:
                    c = np.cos(freqs[m] * times[t_idx])
                    s = np.sin(freqs[m] * times[t_idx])
                table[2 * m, t_idx] = c
                table[2 * m + 1, t_idx] = s
                if uniform:
                    c_new = c * cd - s * sd
                    s = s * cd + c * sd
                    c = c_new
        for t_idx in range(n):
            table[2 * n_freq, t_idx] = 1.0
        return table

    def gram_and_projections_numba(freqs, times, data):
        # numba builds the trig table by phase recurrence (the scalar-trig hot
        # spot); the two dense products go through BLAS
        times = np.ascontiguousarray(times, dtype=np.float64)
        table = _trig_table_numba(
            np.ascontiguousarray(freqs, dtype=np.float64), times, _is_uniform(times)
        )
        gram = table @ table.T
        proj = table @ np.ascontiguousarray(data, dtype=np.float64).T
        return gram, proj

else:
    gram_and_projections_numba = gram_and_projections_numpy


def gram_and_projections(freqs: np.ndarray, times: np.ndarray, data: np.ndarray):
    """Gram matrix of the trig basis and projections of each data row onto it.

    Returns ``(gram, proj)`` with shapes ``(P, P)`` and ``(P, n_rows)`` where
    ``P = 2 * len(freqs) + 1``.
    """
    if USE_NUMBA:
        return gram_and_projections_numba(freqs, times, data)
    return gram_and_projections_numpy(freqs, times, data)


def warmup() -> None:
    """Trigger jit compilation so later timings are steady-state."""
    if not USE_NUMBA:
        return
    t = np.linspace(0.0, 1.0, 8)
    d = np.ones((2, 8))
    power_rows(d, t, np.array([1.0, 2.0]))
    gram_and_projections(np.array([1.0]), t, d)
