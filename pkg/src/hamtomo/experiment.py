"""Monte Carlo simulation of the measurement protocols, plus trace file IO.

Projection noise is modeled by drawing, for every prepared state and sample
time, a single four-outcome multinomial of size ``shots`` over the exact
outcome probabilities (computed by direct propagation through the
eigensystem, never through the trace signal model, so simulated data remains
an independent check on that model).

Randomness: ``numpy.random.Philox`` (counter-based) keyed through
``SeedSequence(seed, spawn_key=(row,))`` - one substream per prepared state -
so runs are reproducible bit-for-bit for a fixed seed and the per-row streams
are independent.  The algorithm name is recorded in the trace sidecar.
"""

import csv
from dataclasses import dataclass
import json
import math
from pathlib import Path

import numpy as np

from .errors import SimulationError, ValidationError
from .model import GaugePhases, eigendecompose

RNG_DESCRIPTION = "numpy.random.Philox via SeedSequence(seed, spawn_key=(row,))"
PROTOCOL_FIXED = "fixed-basis"
PROTOCOL_SUPER = "superposition"
_PROB_SLACK = 1e-9


@dataclass(frozen=True)
class SamplingPlan:
    """Uniform time grid ``t_n = n * dt`` with per-point repetition count."""

    dt: float
    n_samples: int
    shots: int
    seed: int = 0

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValidationError(f"dt must be positive and finite, got {self.dt}")
        if self.n_samples < 2:
            raise ValidationError(f"need at least 2 sample times, got {self.n_samples}")
        if self.shots < 1:
            raise ValidationError(f"shots must be >= 1, got {self.shots}")

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_samples) * self.dt

    @property
    def duration(self) -> float:
        return (self.n_samples - 1) * self.dt

    def to_dict(self) -> dict:
        return {
            "dt": self.dt,
            "n_samples": self.n_samples,
            "shots": self.shots,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class TraceSet:
    """Sampled probability estimates on a time grid.

    ``data`` has shape (4, 4, N) for the fixed-basis protocol (prepared state
    k, outcome l) and (4, N) for the superposition protocol (outcome l).
    ``counts`` holds the underlying integer outcome counts, so per-time-column
    sums are exactly ``shots``.
    """

    plan: SamplingPlan
    protocol: str
    data: np.ndarray
    counts: np.ndarray
    t_star: float | None = None

    @property
    def times(self) -> np.ndarray:
        return self.plan.times

    def flat_data(self) -> np.ndarray:
        """Traces as rows: (16, N) for fixed-basis, (4, N) for superposition."""
        if self.protocol == PROTOCOL_FIXED:
            return self.data.reshape(16, -1)
        return self.data


def propagate_probabilities(h, times) -> np.ndarray:
    """Exact ``|<l| exp(-1j H t) |k>|^2`` on a grid; shape (4, 4, len(times))."""
    es = eigendecompose(h)
    t = np.asarray(times, dtype=float)
    phases = np.exp(-1j * np.outer(es.values, t))          # (4, N)
    amp = np.einsum("lv,kv,vn->kln", es.vectors, es.vectors.conj(), phases)
    return (amp.real**2 + amp.imag**2)


def propagate_state(h, t: float, state) -> np.ndarray:
    """Exact ``exp(-1j H t) @ state``."""
    es = eigendecompose(h)
    psi = np.asarray(state, dtype=complex)
    return es.vectors @ (np.exp(-1j * es.values * t) * (es.vectors.conj().T @ psi))


def _checked_pvals(probs: np.ndarray) -> np.ndarray:
    """Clamp slightly-out-of-range probabilities and renormalize outcome rows."""
    low, high = probs.min(), probs.max()
    if low < -_PROB_SLACK or high > 1.0 + _PROB_SLACK:
        raise SimulationError(
            f"outcome probabilities out of range: min {low:.3e}, max {high:.3e}"
        )
    p = np.clip(probs, 0.0, 1.0)
    return p / p.sum(axis=-1, keepdims=True)


def _row_rng(seed: int, row: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(row,))))


def run_fixed_basis(h, plan: SamplingPlan) -> TraceSet:
    """Simulate the fixed-basis protocol: 16 noisy traces, multinomial per (k, t)."""
    probs = propagate_probabilities(h, plan.times)         # (4, 4, N)
    counts = np.empty((4, 4, plan.n_samples), dtype=np.int64)
    for k in range(4):
        pvals = _checked_pvals(probs[k].T)                 # (N, 4)
        rng = _row_rng(plan.seed, k)
        counts[k] = rng.multinomial(plan.shots, pvals).T
    data = counts / float(plan.shots)
    return TraceSet(plan=plan, protocol=PROTOCOL_FIXED, data=data, counts=counts)


def run_two_step(h0, t_star: float, hf, plan: SamplingPlan) -> TraceSet:
    """Simulate the two-step protocol: prepare ``exp(-1j t* H0)|1>``, evolve under ``hf``."""
    if t_star < 0:
        raise ValidationError(f"t_star must be >= 0, got {t_star}")
    basis_1 = np.array([1.0, 0.0, 0.0, 0.0], dtype=complex)
    phi = propagate_state(h0, t_star, basis_1)
    es = eigendecompose(hf)
    modes = es.vectors.conj().T @ phi
    amp = np.einsum(
        "lv,vn->ln", es.vectors, np.exp(-1j * np.outer(es.values, plan.times)) * modes[:, None]
    )
    probs = amp.real**2 + amp.imag**2                      # (4, N)
    pvals = _checked_pvals(probs.T)
    rng = _row_rng(plan.seed, 0)
    counts = rng.multinomial(plan.shots, pvals).T.astype(np.int64)
    data = counts / float(plan.shots)
    return TraceSet(
        plan=plan, protocol=PROTOCOL_SUPER, data=data, counts=counts, t_star=float(t_star)
    )


def superposition_signal(h_tilde, gauge: GaugePhases, amplitudes, times) -> np.ndarray:
    """Outcome probabilities for a superposition start, as an explicit cosine series.

    Evaluates ``p_l(t) = |<l| D^dag exp(-1j t H~) D |Phi>|^2`` expanded into a
    constant plus one cosine/sine term per eigenvalue pair of ``h_tilde`` - no
    matrix exponential is formed, which is what makes this an independent
    cross-check target for the propagation-based simulators (and fast enough
    to sit inside the gauge-phase fit).
    """
    alphas = np.asarray(amplitudes, dtype=complex)
    if alphas.shape != (4,):
        raise ValidationError(f"need 4 amplitudes, got shape {alphas.shape}")
    norm = float(np.sum(np.abs(alphas) ** 2))
    if abs(norm - 1.0) > 1e-9:
        raise ValidationError(f"amplitudes must be normalized, got |Phi|^2 = {norm:.12f}")
    es = eigendecompose(h_tilde)
    t = np.asarray(times, dtype=float)

    rotated = np.exp(1j * np.array([0.0, gauge.delta12, gauge.delta13, gauge.delta14])) * alphas
    modes = es.vectors.conj().T @ rotated                  # (4,)
    z = es.vectors * modes[None, :]                        # z[l, mu]

    out = np.sum(np.abs(z) ** 2, axis=1)[:, None] * np.ones((4, t.size))
    for mu in range(4):
        for nu in range(mu + 1, 4):
            omega = es.values[nu] - es.values[mu]
            cross = z[:, mu] * z[:, nu].conj()             # (4,)
            out += 2.0 * (
                np.outer(cross.real, np.cos(omega * t))
                - np.outer(cross.imag, np.sin(omega * t))
            )
    return out


# ---------------------------------------------------------------------------
# trace file format: CSV rows `t,k,l,d` plus a JSON sidecar with the plan
# ---------------------------------------------------------------------------

def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".meta.json")


def write_traces(traces: TraceSet, path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "k", "l", "d"])
        times = traces.times
        if traces.protocol == PROTOCOL_FIXED:
            for k in range(4):
                for l in range(4):
                    for n, t in enumerate(times):
                        writer.writerow([repr(float(t)), k + 1, l + 1,
                                         repr(float(traces.data[k, l, n]))])
        else:
            for l in range(4):
                for n, t in enumerate(times):
                    writer.writerow([repr(float(t)), 0, l + 1,
                                     repr(float(traces.data[l, n]))])
    meta = {
        "schema_version": 1,
        "protocol": traces.protocol,
        "rng": RNG_DESCRIPTION,
        **traces.plan.to_dict(),
    }
    if traces.t_star is not None:
        meta["t_star"] = traces.t_star
    with sidecar_path(path).open("w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1)


def read_traces(path) -> TraceSet:
    path = Path(path)
    with sidecar_path(path).open("r", encoding="utf-8") as fh:
        meta = json.load(fh)
    plan = SamplingPlan(
        dt=meta["dt"], n_samples=meta["n_samples"], shots=meta["shots"], seed=meta["seed"]
    )
    protocol = meta["protocol"]
    if protocol == PROTOCOL_FIXED:
        data = np.full((4, 4, plan.n_samples), np.nan)
    elif protocol == PROTOCOL_SUPER:
        data = np.full((4, plan.n_samples), np.nan)
    else:
        raise ValidationError(f"unknown protocol {protocol!r}")
    times = plan.times
    with path.open("r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["t", "k", "l", "d"]:
            raise ValidationError(f"unexpected trace CSV header: {header}")
        for row in reader:
            t, k, l, d = float(row[0]), int(row[1]), int(row[2]), float(row[3])
            n = int(round(t / plan.dt))
            if n < 0 or n >= plan.n_samples or abs(times[n] - t) > 1e-9 * max(1.0, abs(t)):
                raise ValidationError(f"time {t} not on the sampling grid")
            if abs(d * plan.shots - round(d * plan.shots)) > 1e-12 * plan.shots:
                raise ValidationError(
                    f"value {d} at t={t} is not a multiple of 1/shots (shots={plan.shots})"
                )
            if protocol == PROTOCOL_FIXED:
                data[k - 1, l - 1, n] = d
            else:
                data[l - 1, n] = d
    if np.any(np.isnan(data)):
        raise ValidationError("trace CSV is missing grid cells")
    counts = np.rint(data * plan.shots).astype(np.int64)
    return TraceSet(
        plan=plan, protocol=protocol, data=counts / float(plan.shots), counts=counts,
        t_star=meta.get("t_star"),
    )

