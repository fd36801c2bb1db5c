"""Exact four-level quantum model: eigensystem, trace signal model, gauge algebra.

Conventions used throughout the package
---------------------------------------
A Hamiltonian ``H`` (4x4 complex Hermitian, hbar = 1) has eigenvalues
``lam[0] <= ... <= lam[3]`` and orthonormal eigenvectors ``xi[nu]``.  Writing
``<k|xi_nu> = r[k, nu] * exp(1j * phi[k, nu])`` the probability of measuring
basis outcome ``l`` at time ``t`` after preparing basis state ``k`` is

    p[k, l](t) = c[k, l] + 2 * sum_m ( a[k, l, m] * cos(w_m t)
                                     + b[k, l, m] * sin(w_m t) )

with one term per level pair ``mu < nu`` (transition frequency
``w = lam[nu] - lam[mu]``) and

    s[k, l, nu]      = r[k, nu] * r[l, nu]
    delta[k, l, nu]  = phi[l, nu] - phi[k, nu]
    Delta[k, l, mu, nu] = delta[k, l, nu] - delta[k, l, mu]
    a = s_mu * s_nu * cos(Delta),   b = s_mu * s_nu * sin(Delta)
    c[k, l] = sum_nu s[k, l, nu]^2

The orientation of ``delta`` (``l`` minus ``k``) is what makes the expansion
above reproduce ``|<l| exp(-1j H t) |k>|^2`` exactly; tests pin this against
direct matrix-exponential propagation.

Diagonal gauge: with ``D = diag(1, e^{i g12}, e^{i g13}, e^{i g14})`` the map
``H -> D^dag H D`` changes eigenvector phases but none of the signal
parameters above, so a fixed-basis experiment determines ``H`` only up to
``D`` and a global energy shift.
"""

from dataclasses import dataclass
import json
import math

import numpy as np

from .errors import DegenerateSpectrumError, ValidationError

# level pairs (mu < nu), fixed ordering used for constraint rows and maps
PAIRS: tuple[tuple[int, int], ...] = ((0, 1), (1, 2), (2, 3), (0, 2), (1, 3), (0, 3))

HERMITICITY_TOL = 1e-12


def validate_hamiltonian(h, tol: float = HERMITICITY_TOL) -> np.ndarray:
    """Return ``h`` as a complex (4, 4) array, raising if it is not Hermitian."""
    arr = np.asarray(h, dtype=complex)
    if arr.shape != (4, 4):
        raise ValidationError(f"expected a 4x4 matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr.view(float))):
        raise ValidationError("matrix entries must be finite")
    dev = np.max(np.abs(arr - arr.conj().T))
    if dev > tol:
        raise ValidationError(f"matrix is not Hermitian (max deviation {dev:.3e} > {tol:.0e})")
    return 0.5 * (arr + arr.conj().T)


@dataclass(frozen=True)
class EigenSystem:
    """Eigendecomposition with the per-eigenvector phase freedom fixed.

    Each eigenvector is rotated so its largest-magnitude component is real and
    positive (ties broken by lowest component index), which makes the stored
    magnitudes/phases deterministic.
    """

    values: np.ndarray      # (4,) ascending
    vectors: np.ndarray     # (4, 4) complex, column nu is the nu-th eigenvector
    magnitudes: np.ndarray  # (4, 4) r[k, nu] >= 0
    phases: np.ndarray      # (4, 4) in (-pi, pi]


def eigendecompose(h) -> EigenSystem:
    """Eigensystem of a Hermitian 4x4 matrix, eigenvalues ascending."""
    arr = validate_hamiltonian(h)
    values, vectors = np.linalg.eigh(arr)
    vectors = vectors.copy()
    for nu in range(4):
        col = vectors[:, nu]
        idx = int(np.argmax(np.abs(col)))
        ref = col[idx]
        vectors[:, nu] = col * (abs(ref) / ref)
    magnitudes = np.abs(vectors)
    phases = np.angle(vectors)
    # angle() returns values in [-pi, pi]; fold the open end
    phases[phases <= -math.pi] = math.pi
    return EigenSystem(values=values, vectors=vectors, magnitudes=magnitudes, phases=phases)


@dataclass(frozen=True)
class SignalModel:
    """Analytic content of the 16 fixed-basis measurement traces."""

    frequencies: np.ndarray                   # (6,) ascending, > 0
    cos_coeffs: np.ndarray                    # (4, 4, 6)
    sin_coeffs: np.ndarray                    # (4, 4, 6)
    offsets: np.ndarray                       # (4, 4)
    pairs: tuple[tuple[int, int], ...] = ()   # level pair behind each sorted frequency


@dataclass(frozen=True)
class GaugePhases:
    """Three phases defining the diagonal basis-redefinition matrix."""

    delta12: float
    delta13: float
    delta14: float

    def wrapped(self) -> "GaugePhases":
        two_pi = 2.0 * math.pi

        def fold(x: float) -> float:
            v = x % two_pi
            return 0.0 if v >= two_pi else v  # x % 2pi can round up to 2pi

        return GaugePhases(fold(self.delta12), fold(self.delta13), fold(self.delta14))

    def as_array(self) -> np.ndarray:
        return np.array([self.delta12, self.delta13, self.delta14])

    def matrix(self) -> np.ndarray:
        return np.diag(np.exp(1j * np.array([0.0, self.delta12, self.delta13, self.delta14])))


def transition_frequencies(values: np.ndarray) -> np.ndarray:
    """The six pairwise eigenvalue gaps, in PAIRS order (not sorted)."""
    return np.array([values[nu] - values[mu] for mu, nu in PAIRS])


def signal_model_of(h, degeneracy_tol: float = 1e-9) -> SignalModel:
    """Signal parameters of all 16 traces from the eigensystem of ``h``.

    Raises :class:`DegenerateSpectrumError` when two transition frequencies
    agree to within ``degeneracy_tol`` relative to the spectral width (any gap
    near zero also counts: it means two eigenvalues coincide).
    """
    es = eigendecompose(h)
    gaps = transition_frequencies(es.values)
    scale = max(float(es.values[-1] - es.values[0]), 1.0e-300)
    for i in range(6):
        if gaps[i] <= degeneracy_tol * scale:
            raise DegenerateSpectrumError(PAIRS[i], PAIRS[i], float(gaps[i]))
        for j in range(i + 1, 6):
            if abs(gaps[i] - gaps[j]) <= degeneracy_tol * scale:
                raise DegenerateSpectrumError(PAIRS[i], PAIRS[j], float(gaps[i]))

    order = np.argsort(gaps)
    freqs = gaps[order]
    sorted_pairs = tuple(PAIRS[i] for i in order)

    r = es.magnitudes
    phi = es.phases
    s = r[:, None, :] * r[None, :, :]                    # s[k, l, nu]
    delta = phi[None, :, :] - phi[:, None, :]            # delta[k, l, nu] = phi[l] - phi[k]

    cos_coeffs = np.empty((4, 4, 6))
    sin_coeffs = np.empty((4, 4, 6))
    for m, (mu, nu) in enumerate(sorted_pairs):
        amp = s[:, :, mu] * s[:, :, nu]
        big_delta = delta[:, :, nu] - delta[:, :, mu]
        cos_coeffs[:, :, m] = amp * np.cos(big_delta)
        sin_coeffs[:, :, m] = amp * np.sin(big_delta)
    offsets = np.sum(s**2, axis=2)

    return SignalModel(
        frequencies=freqs,
        cos_coeffs=cos_coeffs,
        sin_coeffs=sin_coeffs,
        offsets=offsets,
        pairs=sorted_pairs,
    )


def evaluate_traces(model: SignalModel, times) -> np.ndarray:
    """Evaluate all 16 trace probabilities on a time grid; shape (4, 4, len(times)).

    Values are reported raw (no clamping); tiny excursions outside [0, 1] are
    the caller's concern.
    """
    t = np.asarray(times, dtype=float)
    if not np.all(np.isfinite(t)):
        raise ValidationError("times must be finite")
    wt = np.outer(model.frequencies, t)
    cos_t = np.cos(wt)
    sin_t = np.sin(wt)
    p = model.offsets[:, :, None] + 2.0 * (
        np.tensordot(model.cos_coeffs, cos_t, axes=(2, 0))
        + np.tensordot(model.sin_coeffs, sin_t, axes=(2, 0))
    )
    return p


def traceless_levels(omega_12: float, omega_13: float, omega_14: float) -> np.ndarray:
    """Eigenvalues of the traceless representative from first-level gaps."""
    shift = (omega_12 + omega_13 + omega_14) / 4.0
    return np.array([0.0, omega_12, omega_13, omega_14]) - shift


def assemble_hamiltonian(levels, overlaps, phase_offsets) -> np.ndarray:
    """Build the gauge-fixed Hamiltonian from estimated signal quantities.

    Parameters
    ----------
    levels : (4,) traceless eigenvalue estimates.
    overlaps : (4, 4, 4) per-trace overlap products ``s[k, l, nu]``.
    phase_offsets : (4, 4, 4) per-trace phases ``Delta[k, l, 0, nu]`` relative
        to the lowest level (entry ``[..., 0]`` is 0 by construction).

    The entry ``<l|H|k>`` is ``sum_nu levels[nu] * s[k, l, nu] *
    exp(1j * Delta[k, l, 0, nu])``; the result is Hermitized by averaging with
    its conjugate transpose and projected to zero trace.
    """
    levels = np.asarray(levels, dtype=float)
    overlaps = np.asarray(overlaps, dtype=float)
    phase_offsets = np.asarray(phase_offsets, dtype=float)
    raw = np.empty((4, 4), dtype=complex)
    for k in range(4):
        for l in range(4):
            raw[l, k] = np.sum(levels * overlaps[k, l] * np.exp(1j * phase_offsets[k, l]))
    herm = 0.5 * (raw + raw.conj().T)
    herm -= np.trace(herm).real / 4.0 * np.eye(4)
    return herm


def apply_gauge(h, gauge: GaugePhases) -> np.ndarray:
    """Conjugate by the diagonal gauge matrix: returns ``D^dag @ h @ D``."""
    arr = validate_hamiltonian(h)
    d = gauge.matrix()
    return d.conj().T @ arr @ d


def hamiltonian_to_dict(h) -> dict:
    arr = validate_hamiltonian(h)
    return {"re": arr.real.tolist(), "im": arr.imag.tolist()}


def hamiltonian_from_dict(payload: dict) -> np.ndarray:
    try:
        re = np.asarray(payload["re"], dtype=float)
        im = np.asarray(payload["im"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"bad Hamiltonian payload: {exc}") from exc
    if re.shape != (4, 4) or im.shape != (4, 4):
        raise ValidationError("Hamiltonian payload must hold 4x4 're' and 'im' arrays")
    return validate_hamiltonian(re + 1j * im, tol=1e-9)


def save_hamiltonian(h, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(hamiltonian_to_dict(h), fh, indent=1)


def load_hamiltonian(path) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        return hamiltonian_from_dict(json.load(fh))
