"""Bretthorst-style frequency estimation for the measurement traces.

The sampled traces are modeled as linear combinations of ``cos(w_m t)``,
``sin(w_m t)`` (one pair per unknown frequency) plus a constant.  Integrating
the linear amplitudes and the per-trace noise variance out of a Gaussian
likelihood leaves a marginal posterior that depends on the frequency vector
alone:

    log10 P(w | data) = (P - N)/2 * sum_traces log10(1 - sum_h2 / sum_d2)

where ``P = 2F + 1`` counts basis functions, ``sum_d2`` is the squared norm
of a trace and ``sum_h2`` the squared norm of its projection onto the
orthonormalized basis.  This surface is sharply peaked with many local
extrema, so it is climbed with BFGS from power-spectrum seeds (plus jittered
restarts), and closely spaced frequencies that the spectrum cannot resolve
are recovered by scanning candidate frequency pairs on a coarse 2D grid and
letting the marginal posterior arbitrate between models of different size.
"""

from dataclasses import dataclass, field
import json
import math

import numpy as np
from scipy.optimize import minimize

from . import kernels
from .errors import DegenerateBasisError, ValidationError
from .experiment import TraceSet
from .model import SignalModel

_LOG_FLOOR = 1e-300
_COND_TOL = 1e-12


@dataclass(frozen=True)
class BasisSet:
    """Trig design basis on a time grid, with its Gram eigendecomposition."""

    frequencies: np.ndarray   # (F,)
    times: np.ndarray         # (N,)
    gram: np.ndarray          # (P, P), P = 2F + 1
    gram_eigvals: np.ndarray  # (P,) ascending, all > 0
    gram_eigvecs: np.ndarray  # (P, P), columns are eigenvectors

    @property
    def n_basis(self) -> int:
        return self.gram.shape[0]

    def design(self) -> np.ndarray:
        return kernels.design_matrix(self.frequencies, self.times)

    def orthonormal_rows(self) -> np.ndarray:
        """Rows H_m(t_n) with sum_n H_m1 H_m2 = delta(m1, m2)."""
        scale = self.gram_eigvecs / np.sqrt(self.gram_eigvals)[None, :]
        return scale.T @ self.design()


def build_basis(frequencies, times) -> BasisSet:
    freqs = np.sort(np.asarray(frequencies, dtype=float))
    t = np.asarray(times, dtype=float)
    n_basis = 2 * freqs.size + 1
    if freqs.size and freqs[0] <= 0:
        raise ValidationError("basis frequencies must be positive")
    if np.any(np.diff(freqs) == 0):
        raise ValidationError("basis frequencies must be distinct")
    if n_basis > t.size:
        raise ValidationError(f"need at least {n_basis} samples for {freqs.size} frequencies")
    g = kernels.design_matrix(freqs, t)
    gram = g @ g.T
    eigvals, eigvecs = np.linalg.eigh(gram)
    if eigvals[0] <= 0 or eigvals[0] / eigvals[-1] < _COND_TOL:
        raise DegenerateBasisError(
            f"trig basis is numerically degenerate for this grid "
            f"(eigenvalue ratio {eigvals[0] / eigvals[-1]:.2e}); frequencies too close"
        )
    return BasisSet(frequencies=freqs, times=t, gram=gram,
                    gram_eigvals=eigvals, gram_eigvecs=eigvecs)


def _marginal_stats(freqs: np.ndarray, times: np.ndarray, data: np.ndarray):
    """Gram eigendecomposition plus per-trace projection norms.

    Returns ``(eigvals, eigvecs, proj, sum_h2, sum_d2)`` where ``proj`` holds
    raw basis projections of each trace (column) and ``sum_h2`` the squared
    norms after orthonormalization.

    The marginal posterior hinges on the fit residual ``sum_d2 - sum_h2``;
    when a trace is fit almost perfectly that difference of two large sums
    cancels catastrophically, so it is recomputed as an explicit (positive)
    residual norm, which keeps the posterior surface smooth for noiseless
    data instead of degenerating into rounding chaos near the optimum.
    """
    gram, proj = kernels.gram_and_projections(freqs, times, data)
    eigvals, eigvecs = np.linalg.eigh(gram)
    if eigvals[0] <= 0 or eigvals[0] / eigvals[-1] < _COND_TOL:
        raise DegenerateBasisError(
            f"trig basis is numerically degenerate (eigenvalue ratio "
            f"{eigvals[0] / max(eigvals[-1], 1e-300):.2e})"
        )
    ortho = (eigvecs.T @ proj) / np.sqrt(eigvals)[:, None]
    sum_h2 = np.sum(ortho**2, axis=0)
    sum_d2 = np.sum(data**2, axis=1)

    near_perfect = (sum_d2 - sum_h2) < 1e-9 * sum_d2
    if np.any(near_perfect):
        design = kernels.design_matrix(freqs, times)
        coeffs = eigvecs @ ((eigvecs.T @ proj[:, near_perfect]) / eigvals[:, None])
        resid = data[near_perfect] - coeffs.T @ design
        sum_h2 = sum_h2.copy()
        sum_h2[near_perfect] = sum_d2[near_perfect] - np.sum(resid**2, axis=1)
    return eigvals, eigvecs, proj, sum_h2, sum_d2


def _log_posterior_from_stats(sum_h2, sum_d2, n_basis, n_samples):
    total = 0.0
    clamped = False
    for h2, d2 in zip(sum_h2, sum_d2):
        if d2 <= 0.0:
            continue  # empty trace carries no information
        bracket = 1.0 - h2 / d2
        if bracket < _LOG_FLOOR:
            bracket = _LOG_FLOOR
            clamped = True
        total += math.log10(bracket)
    return 0.5 * (n_basis - n_samples) * total, clamped


def _as_rows(traces) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(traces, TraceSet):
        return traces.times, traces.flat_data()
    raise ValidationError(f"expected a TraceSet, got {type(traces).__name__}")


def log_likelihood(frequencies, traces) -> float:
    """Marginal log10-posterior of the frequency vector given the traces."""
    times, data = _as_rows(traces)
    freqs = np.abs(np.asarray(frequencies, dtype=float))
    if 2 * freqs.size + 1 > times.size:
        raise ValidationError("more basis functions than samples")
    _, _, _, sum_h2, sum_d2 = _marginal_stats(freqs, times, data)
    value, _ = _log_posterior_from_stats(sum_h2, sum_d2, 2 * freqs.size + 1, times.size)
    return value


@dataclass(frozen=True)
class ModelFit:
    """Frequencies plus per-trace linear coefficients and their uncertainties."""

    frequencies: np.ndarray       # (F,) ascending
    cos_coeffs: np.ndarray        # (4, 4, F), symmetric in the trace indices
    sin_coeffs: np.ndarray        # (4, 4, F), antisymmetric in the trace indices
    offsets: np.ndarray           # (4, 4)
    noise_variance: np.ndarray    # (4, 4), estimated per-trace
    cos_uncert: np.ndarray        # (4, 4, F)
    sin_uncert: np.ndarray        # (4, 4, F)
    offset_uncert: np.ndarray     # (4, 4)
    log_posterior: float
    converged: bool = True
    flags: tuple[str, ...] = field(default=())

    @property
    def n_frequencies(self) -> int:
        return int(self.frequencies.size)

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "frequencies": self.frequencies.tolist(),
            "cos_coeffs": self.cos_coeffs.reshape(16, -1).tolist(),
            "sin_coeffs": self.sin_coeffs.reshape(16, -1).tolist(),
            "offsets": self.offsets.reshape(16).tolist(),
            "noise_variance": self.noise_variance.reshape(16).tolist(),
            "cos_uncert": self.cos_uncert.reshape(16, -1).tolist(),
            "sin_uncert": self.sin_uncert.reshape(16, -1).tolist(),
            "offset_uncert": self.offset_uncert.reshape(16).tolist(),
            "log_posterior": self.log_posterior,
            "converged": self.converged,
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ModelFit":
        freqs = np.asarray(payload["frequencies"], dtype=float)
        n_f = freqs.size
        return cls(
            frequencies=freqs,
            cos_coeffs=np.asarray(payload["cos_coeffs"], dtype=float).reshape(4, 4, n_f),
            sin_coeffs=np.asarray(payload["sin_coeffs"], dtype=float).reshape(4, 4, n_f),
            offsets=np.asarray(payload["offsets"], dtype=float).reshape(4, 4),
            noise_variance=np.asarray(payload["noise_variance"], dtype=float).reshape(4, 4),
            cos_uncert=np.asarray(payload["cos_uncert"], dtype=float).reshape(4, 4, n_f),
            sin_uncert=np.asarray(payload["sin_uncert"], dtype=float).reshape(4, 4, n_f),
            offset_uncert=np.asarray(payload["offset_uncert"], dtype=float).reshape(4, 4),
            log_posterior=float(payload["log_posterior"]),
            converged=bool(payload.get("converged", True)),
            flags=tuple(payload.get("flags", ())),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "ModelFit":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def model_fit_from_signal(model: SignalModel) -> ModelFit:
    """Exact ModelFit built from an analytic signal model (no noise, no data)."""
    n_f = model.frequencies.size
    return ModelFit(
        frequencies=model.frequencies.copy(),
        cos_coeffs=model.cos_coeffs.copy(),
        sin_coeffs=model.sin_coeffs.copy(),
        offsets=model.offsets.copy(),
        noise_variance=np.zeros((4, 4)),
        cos_uncert=np.zeros((4, 4, n_f)),
        sin_uncert=np.zeros((4, 4, n_f)),
        offset_uncert=np.zeros((4, 4)),
        log_posterior=math.inf,
        converged=True,
        flags=("exact",),
    )


def estimate_coefficients(frequencies, traces, *, converged: bool = True,
                          extra_flags: tuple[str, ...] = ()) -> ModelFit:
    """Posterior-mean linear coefficients, noise variances and uncertainties.

    The raw per-trace estimates are symmetrized at the end: cosine amplitudes
    and offsets belong to ``|<l|U|k>|^2 = |<k|U^dag|l>|^2`` so the cosine part
    is averaged across the (k, l)/(l, k) pair while the sine part picks up a
    sign, making the stored arrays exactly (anti)symmetric.
    """
    times, data = _as_rows(traces)
    freqs = np.sort(np.abs(np.asarray(frequencies, dtype=float)))
    n_f = freqs.size
    n_basis = 2 * n_f + 1
    n_samples = times.size
    if n_samples <= n_basis + 2:
        raise ValidationError("not enough samples for a variance estimate")

    eigvals, eigvecs, proj, sum_h2, sum_d2 = _marginal_stats(freqs, times, data)
    log_post, clamped = _log_posterior_from_stats(sum_h2, sum_d2, n_basis, n_samples)

    # posterior means: x = G^{-1} q through the Gram eigensystem
    coeffs = eigvecs @ ((eigvecs.T @ proj) / eigvals[:, None])   # (P, 16)

    sigma2 = (sum_d2 - sum_h2) / (n_samples - (n_basis + 2))
    flags = list(extra_flags)
    if clamped:
        flags.append("posterior-clamped")
    if np.any(sigma2 < 0):
        flags.append("variance-clamped")
        sigma2 = np.maximum(sigma2, 0.0)

    # Var(x_m) = sigma2 * sum_m' e[m, m']^2 / alpha[m']
    var_scale = np.sum(eigvecs**2 / eigvals[None, :], axis=1)    # (P,)
    var = sigma2[None, :] * var_scale[:, None]                   # (P, 16)

    # the trace model reads p = c + 2 * sum(a cos + b sin): the raw basis
    # amplitudes are twice the stored cosine/sine coefficients
    cos_coeffs = 0.5 * coeffs[0:-1:2].T.reshape(4, 4, n_f)
    sin_coeffs = 0.5 * coeffs[1:-1:2].T.reshape(4, 4, n_f)
    offsets = coeffs[-1].reshape(4, 4)
    cos_unc = 0.5 * np.sqrt(var[0:-1:2]).T.reshape(4, 4, n_f)
    sin_unc = 0.5 * np.sqrt(var[1:-1:2]).T.reshape(4, 4, n_f)
    off_unc = np.sqrt(var[-1]).reshape(4, 4)

    for k in range(4):
        for l in range(k, 4):
            avg_cos = 0.5 * (cos_coeffs[k, l] + cos_coeffs[l, k])
            avg_sin = 0.5 * (sin_coeffs[k, l] - sin_coeffs[l, k])
            cos_coeffs[k, l] = avg_cos
            cos_coeffs[l, k] = avg_cos
            sin_coeffs[k, l] = avg_sin
            sin_coeffs[l, k] = -avg_sin

    return ModelFit(
        frequencies=freqs,
        cos_coeffs=cos_coeffs,
        sin_coeffs=sin_coeffs,
        offsets=offsets,
        noise_variance=sigma2.reshape(4, 4),
        cos_uncert=cos_unc,
        sin_uncert=sin_unc,
        offset_uncert=off_unc,
        log_posterior=log_post,
        converged=converged,
        flags=tuple(flags),
    )


_PENALTY = 1e30


def _objective_factory(times, data, n_samples):
    def objective(freqs):
        try:
            _, _, _, sum_h2, sum_d2 = _marginal_stats(np.abs(freqs), times, data)
        except DegenerateBasisError:
            return _PENALTY
        value, _ = _log_posterior_from_stats(sum_h2, sum_d2, 2 * freqs.size + 1, n_samples)
        return -value

    return objective


def _central_gradient(fun, x, step):
    grad = np.empty_like(x)
    for i in range(x.size):
        hi = x.copy()
        lo = x.copy()
        hi[i] += step
        lo[i] -= step
        grad[i] = (fun(hi) - fun(lo)) / (2.0 * step)
    return grad


def optimize_frequencies(seed_frequencies, traces, *, restarts: int = 5,
                         fd_step: float | None = None, gtol: float = 1e-7,
                         ftol: float = 1e-12, maxiter: int = 150,
                         seed: int | None = None) -> ModelFit:
    """Climb the marginal posterior from a seed frequency vector.

    Runs BFGS from the seed and from ``restarts`` jittered copies (uniform
    within +-pi/(2T) per coordinate); the best final posterior wins.  A run
    terminates when the gradient infinity-norm drops below ``gtol``, when the
    posterior stalls (relative change below ``ftol`` on consecutive
    iterations), or on line-search failure; only the last case marks the
    returned fit as non-converged (best iterate is still used).
    """
    times, data = _as_rows(traces)
    seeds = np.asarray(seed_frequencies, dtype=float)
    if seeds.size == 0:
        raise ValidationError("need at least one seed frequency")
    duration = float(times[-1] - times[0])
    if fd_step is None:
        fd_step = 1e-6 * (2.0 * math.pi / duration)
    jitter = 0.5 * math.pi / duration

    objective = _objective_factory(times, data, times.size)
    jac = lambda x: _central_gradient(objective, x, fd_step)  # noqa: E731

    if seed is None:
        seed = traces.plan.seed if isinstance(traces, TraceSet) else 0
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0x0F,)))
    starts = [seeds]
    for _ in range(restarts):
        starts.append(seeds + rng.uniform(-jitter, jitter, size=seeds.shape))

    best_x = None
    best_val = math.inf
    any_clean = False
    for start in starts:
        last = {"f": objective(start), "stalled": 0}

        def stall_check(xk):
            f_now = objective(xk)
            if abs(last["f"] - f_now) <= ftol * max(abs(f_now), 1.0):
                last["stalled"] += 1
            else:
                last["stalled"] = 0
            last["f"] = f_now
            if last["stalled"] >= 2:
                raise StopIteration

        res = minimize(objective, start, jac=jac, method="BFGS", callback=stall_check,
                       options={"gtol": gtol, "maxiter": maxiter})
        val = float(res.fun)
        if val < best_val:
            best_val = val
            best_x = np.asarray(res.x, dtype=float)
        if res.success or res.status == 99:  # gtol reached or posterior stalled
            any_clean = True
    if best_x is None or not np.isfinite(best_val):
        raise ValidationError("frequency optimization failed from every start")

    flags = () if any_clean else ("line-search",)
    return estimate_coefficients(np.sort(np.abs(best_x)), traces,
                                 converged=any_clean, extra_flags=flags)


def refine_degenerate(fit: ModelFit, traces, *, target: int = 6,
                      grid_points: int = 21, candidate_restarts: int = 2,
                      seed: int | None = None) -> ModelFit:
    """Split unresolved spectral peaks until six frequencies win the posterior.

    For each current frequency ``w_m`` the pair ``(w, w')`` is scanned over a
    coarse grid on ``[w_m - 10/T, w_m + 10/T]^2`` (upper triangle only; the
    posterior is symmetric under swapping the pair) with the remaining
    frequencies held fixed.  The best grid point seeds a full optimization of
    the enlarged model, and the enlarged model replaces the incumbent only if
    its posterior is higher.  Iterates until ``target`` frequencies are
    reached or no candidate wins.
    """
    times, data = _as_rows(traces)
    duration = float(times[-1] - times[0])
    span = 10.0 / duration
    objective = _objective_factory(times, data, times.size)

    current = fit
    while current.n_frequencies < target:
        freqs = current.frequencies
        best_candidate = None
        for m in range(freqs.size):
            lo = max(freqs[m] - span, 1e-6)
            hi = freqs[m] + span
            grid = np.linspace(lo, hi, grid_points)
            others = np.delete(freqs, m)
            best_pair = None
            best_val = math.inf
            for i in range(grid_points):
                for j in range(i + 1, grid_points):
                    candidate = np.concatenate((others, (grid[i], grid[j])))
                    val = objective(candidate)
                    if val < best_val:
                        best_val = val
                        best_pair = (grid[i], grid[j])
            if best_pair is None:
                continue
            seed_vec = np.sort(np.concatenate((others, best_pair)))
            candidate_fit = optimize_frequencies(
                seed_vec, traces, restarts=candidate_restarts, seed=seed
            )
            if best_candidate is None or candidate_fit.log_posterior > best_candidate.log_posterior:
                best_candidate = candidate_fit
        if best_candidate is None or best_candidate.log_posterior <= current.log_posterior:
            break
        current = best_candidate
    return current

