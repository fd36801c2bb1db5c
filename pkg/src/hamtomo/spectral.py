"""Power spectrum of the sampled traces and peak detection for seeding."""

import csv
from dataclasses import dataclass
import math
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ValidationError
from .experiment import TraceSet


@dataclass(frozen=True)
class PowerSpectrum:
    """Combined (and optionally per-trace) spectral power on a uniform grid."""

    omegas: np.ndarray            # (G,)
    values: np.ndarray            # (G,) combined power, >= 0
    resolution: float             # pi / T, the physical peak width scale
    n_samples: int                # time-grid size behind the spectrum
    dt: float                     # time-grid spacing
    per_trace: np.ndarray | None = None  # (n_traces, G) when retained

    def leakage_envelope(self, offset) -> np.ndarray:
        """Upper bound on |spectral window|^2 at a frequency offset.

        A line of power ``C`` leaks at most ``C * leakage_envelope(delta)``
        into a bin ``delta`` away; the bound is tight at sidelobe maxima.
        """
        delta = np.abs(np.asarray(offset, dtype=float))
        s = self.n_samples * np.abs(np.sin(0.5 * delta * self.dt))
        with np.errstate(divide="ignore"):
            env = 1.0 / s**2
        return np.minimum(env, 1.0)


def power_spectrum(traces: TraceSet, omega_max: float,
                   resolution_factor: float = 4.0, keep_per_trace: bool = False,
                   subtract_mean: bool = False) -> PowerSpectrum:
    """Direct power spectrum ``|mean(d * exp(1j w t))|^2`` summed over traces.

    The grid runs from 0 to ``omega_max`` with spacing
    ``pi / (T * resolution_factor)``: ``resolution_factor`` > 1 oversamples the
    natural linewidth so peak positions can be interpolated.

    ``subtract_mean`` removes each trace's sample mean first, which kills the
    zero-frequency line together with its leakage skirt; peak seeding uses
    this so that weak transitions near the low end of the band are not buried
    under (or displaced by) sidelobes of the DC component.
    """
    if omega_max <= 0:
        raise ValidationError("omega_max must be positive")
    if resolution_factor <= 0:
        raise ValidationError("resolution_factor must be positive")
    times = traces.times
    duration = float(times[-1] - times[0])
    spacing = math.pi / (duration * resolution_factor)
    omegas = np.arange(0.0, omega_max + 0.5 * spacing, spacing)
    data = traces.flat_data()
    if subtract_mean:
        data = data - data.mean(axis=1, keepdims=True)
    per_trace = kernels.power_rows(data, times, omegas)
    values = per_trace.sum(axis=0)
    return PowerSpectrum(
        omegas=omegas,
        values=values,
        resolution=math.pi / duration,
        n_samples=traces.plan.n_samples,
        dt=traces.plan.dt,
        per_trace=per_trace if keep_per_trace else None,
    )


def default_floor(spec: PowerSpectrum, dead_zone: float = 0.1) -> float:
    """Robust noise-floor estimate: median + 5 * MAD outside the DC dead zone."""
    valid = spec.values[spec.omegas >= dead_zone]
    if valid.size == 0:
        return 0.0
    med = float(np.median(valid))
    mad = float(np.median(np.abs(valid - med)))
    return med + 5.0 * mad


def _parabolic_refine(omegas: np.ndarray, values: np.ndarray, idx: int) -> float:
    """Three-point parabolic interpolation of the peak position in log power."""
    if idx <= 0 or idx >= values.size - 1:
        return float(omegas[idx])
    with np.errstate(divide="ignore"):
        left, mid, right = np.log(values[idx - 1:idx + 2])
    if not np.all(np.isfinite((left, mid, right))):
        return float(omegas[idx])
    denom = left - 2.0 * mid + right
    if denom >= 0 or abs(denom) < 1e-300:
        return float(omegas[idx])
    shift = 0.5 * (left - right) / denom
    shift = float(np.clip(shift, -1.0, 1.0))
    return float(omegas[idx] + shift * (omegas[1] - omegas[0]))


def find_peaks(spec: PowerSpectrum, floor: float | None = None,
               max_peaks: int = 6, dead_zone: float = 0.1,
               min_separation: float | None = None,
               leakage_guard: float = 2.0) -> np.ndarray:
    """Locate up to ``max_peaks`` spectral peaks, returned as ascending frequencies.

    Local maxima below ``floor`` (default: median + 5 MAD) or inside the DC
    ``dead_zone`` are discarded; the survivors are accepted tallest-first.  A
    candidate is skipped when it lies closer than ``min_separation`` (default:
    two linewidths) to an accepted peak, or when its power does not exceed
    ``leakage_guard`` squared times what spectral leakage of the
    already-accepted peaks can produce at its location - anything below that
    bound is indistinguishable from a sidelobe.  Dropping a weak true peak
    this way is recoverable downstream (posterior-guided splitting); seeding
    on a sidelobe is not.  Raising the floor can only remove peaks, never add
    them.  May legitimately return fewer than ``max_peaks`` entries (or none)
    when peaks are unresolved or absent.
    """
    if floor is None:
        floor = default_floor(spec, dead_zone)
    elif floor < 0:
        raise ValidationError("floor must be >= 0")
    if min_separation is None:
        min_separation = 2.0 * spec.resolution

    c = spec.values
    interior = np.arange(1, c.size - 1)
    is_max = (c[interior] > c[interior - 1]) & (c[interior] >= c[interior + 1])
    candidates = interior[is_max]
    candidates = candidates[(spec.omegas[candidates] >= dead_zone)
                            & (c[candidates] >= floor)]
    order = candidates[np.argsort(c[candidates])[::-1]]

    accepted: list[int] = []
    for idx in order:
        if len(accepted) >= max_peaks:
            break
        dists = np.array([abs(spec.omegas[idx] - spec.omegas[j]) for j in accepted])
        if dists.size:
            if dists.min() < min_separation:
                continue
            # amplitudes of leaking lines add coherently in the worst case
            leak_amp = sum(
                math.sqrt(c[j] * spec.leakage_envelope(d))
                for j, d in zip(accepted, dists)
            )
            if c[idx] < (leakage_guard * leak_amp) ** 2:
                continue
        accepted.append(int(idx))

    peaks = np.array(sorted(_parabolic_refine(spec.omegas, c, i) for i in accepted))
    return peaks


def write_spectrum_csv(spec: PowerSpectrum, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["omega", "C"])
        for w, v in zip(spec.omegas, spec.values):
            writer.writerow([repr(float(w)), repr(float(v))])
