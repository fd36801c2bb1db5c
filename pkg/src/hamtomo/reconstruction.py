"""Hamiltonian reconstruction from a six-frequency trace fit.

Stages: match the sorted frequencies to level-pair transitions via linear sum
rules, read phase differences off the cosine/sine amplitude pairs, project
the phases onto the telescoping consistency constraints, complete each
per-trace outer-product matrix to rank one to recover overlap magnitudes, and
assemble the gauge-fixed (traceless) Hamiltonian.

A fixed-basis experiment cannot distinguish ``H`` from ``-conj(H)`` (time
reversal composed with energy inversion leaves every trace invariant), nor
from any diagonal-gauge conjugation.  The error metric here compensates both:
it aligns first-row phases and takes the better of the two inversion
branches.
"""

from dataclasses import dataclass, field
import itertools
import json
import math

import numpy as np
from scipy.optimize import minimize

from .errors import AmbiguousArrangementError, IdentificationError, ValidationError
from .estimator import ModelFit
from .model import PAIRS, assemble_hamiltonian, traceless_levels, validate_hamiltonian

TWO_PI = 2.0 * math.pi

# sum-rule matrices for the five generic level arrangements, acting on the
# ascending frequency vector; a consistent spectrum satisfies A @ w = 0
ARRANGEMENT_MATRICES = np.array([
    [[1, 1, 1, 0, 0, -1], [1, 1, 0, -1, 0, 0], [0, 1, 1, 0, -1, 0]],
    [[1, 1, 1, 0, 0, -1], [1, 0, 1, -1, 0, 0], [0, 1, 1, 0, -1, 0]],
    [[1, 1, 1, 0, 0, -1], [1, 1, 0, -1, 0, 0], [1, 0, 1, 0, -1, 0]],
    [[1, 1, 0, 1, 0, -1], [1, 1, -1, 0, 0, 0], [1, 0, 0, 1, -1, 0]],
    [[1, 1, 0, 1, 0, -1], [1, 1, -1, 0, 0, 0], [0, 1, 0, 1, -1, 0]],
], dtype=float)

# sorted-frequency index -> level pair (0-based), one map per arrangement,
# in the canonical (non-inverted) orientation
ARRANGEMENT_MAPS: tuple[tuple[tuple[int, int], ...], ...] = (
    ((0, 1), (1, 2), (2, 3), (0, 2), (1, 3), (0, 3)),
    ((0, 1), (2, 3), (1, 2), (0, 2), (1, 3), (0, 3)),
    ((1, 2), (0, 1), (2, 3), (0, 2), (1, 3), (0, 3)),
    ((1, 2), (0, 1), (0, 2), (2, 3), (1, 3), (0, 3)),
    ((0, 1), (1, 2), (0, 2), (2, 3), (1, 3), (0, 3)),
)

# telescoping phase identities in PAIRS order: (01)+(12)=(02), (01)+(13)=(03),
# (23)+(02)=(03)
PHASE_CONSTRAINTS_PAIR_SPACE = np.array([
    [1, 1, 0, -1, 0, 0],
    [1, 0, 0, 0, 1, -1],
    [0, 0, 1, 1, 0, -1],
], dtype=float)

_PAIR_INDEX = {pair: i for i, pair in enumerate(PAIRS)}


def wrap_angle(x):
    """Wrap to [-pi, pi)."""
    return (np.asarray(x) + math.pi) % TWO_PI - math.pi


@dataclass(frozen=True)
class LevelAssignment:
    """Match of the six sorted frequencies to level-pair transitions."""

    arrangement: int                            # 1..5
    pair_map: tuple[tuple[int, int], ...]       # sorted index m -> (mu, nu)
    residuals: np.ndarray                       # (5,) squared sum-rule residuals
    inverted: bool = False                      # True marks the reflected branch
    flags: tuple[str, ...] = ()

    def frequency_of(self, pair: tuple[int, int], frequencies: np.ndarray) -> float:
        return float(frequencies[self.pair_map.index(pair)])

    def index_of(self, pair: tuple[int, int]) -> int:
        return self.pair_map.index(pair)


def identify_levels(frequencies, abs_tol: float | None = None,
                    ratio_tol: float = 0.1) -> LevelAssignment:
    """Pick the level arrangement whose sum rules best fit the frequencies.

    Raises :class:`IdentificationError` when the best residual exceeds
    ``abs_tol`` (the data does not look like a four-level system) and
    :class:`AmbiguousArrangementError` when the runner-up is too close
    (``best >= ratio_tol * runner_up``); exact input has residual ~ 0 so the
    generic case is unambiguous.
    """
    freqs = np.asarray(frequencies, dtype=float)
    if freqs.shape != (6,):
        raise ValidationError(f"need six frequencies, got shape {freqs.shape}")
    if np.any(freqs <= 0) or np.any(np.diff(freqs) <= 0):
        raise ValidationError("frequencies must be positive, distinct and ascending")

    residuals = np.array([float(np.sum((a @ freqs) ** 2)) for a in ARRANGEMENT_MATRICES])
    best = int(np.argmin(residuals))
    runner_up = float(np.min(np.delete(residuals, best)))
    if abs_tol is not None and residuals[best] > abs_tol:
        raise IdentificationError(
            f"no arrangement fits (best residual {residuals[best]:.3e} > {abs_tol:.3e}); "
            "the data may not come from a four-level Hamiltonian system"
        )
    if residuals[best] >= ratio_tol * runner_up:
        raise AmbiguousArrangementError(
            f"arrangements {best + 1} and another fit almost equally well "
            f"(residuals {residuals[best]:.3e} vs {runner_up:.3e}); further data is required"
        )
    flags = ()
    if residuals[best] > 0.1 * ratio_tol * runner_up:
        flags = ("weak-margin",)
    return LevelAssignment(
        arrangement=best + 1,
        pair_map=ARRANGEMENT_MAPS[best],
        residuals=residuals,
        inverted=False,
        flags=flags,
    )


def constraint_matrix(assign: LevelAssignment) -> np.ndarray:
    """Phase sum-rule rows permuted into sorted-frequency column order."""
    cols = [_PAIR_INDEX[pair] for pair in assign.pair_map]
    return PHASE_CONSTRAINTS_PAIR_SPACE[:, cols]


@dataclass(frozen=True)
class PhaseTable:
    """Per-trace phase differences (sorted-frequency order) and their quality."""

    phases: np.ndarray            # (4, 4, 6) in [-pi, pi]
    variances: np.ndarray         # (4, 4, 6) propagated from amplitude uncertainties
    constraints: np.ndarray       # (3, 6) in sorted-frequency order
    violations: np.ndarray        # (4, 4) squared wrapped constraint residuals
    flags: tuple[str, ...] = ()

    @property
    def max_violation(self) -> float:
        return float(self.violations.max())


def _violations(phases: np.ndarray, constraints: np.ndarray) -> np.ndarray:
    resid = wrap_angle(np.tensordot(phases, constraints, axes=(2, 1)))
    return np.sum(resid**2, axis=2)


def extract_phases(fit: ModelFit, assign: LevelAssignment) -> PhaseTable:
    """Four-quadrant phases from the cosine/sine amplitude pairs.

    A vanishing amplitude pair leaves the phase undefined: it is set to zero
    and flagged, since the corresponding transition carries no weight anyway.
    """
    if fit.n_frequencies != 6:
        raise ValidationError("phase extraction requires a six-frequency fit")
    a = fit.cos_coeffs
    b = fit.sin_coeffs
    phases = np.arctan2(b, a)
    flags: list[str] = []
    dead = (a == 0.0) & (b == 0.0)
    if np.any(dead):
        phases = np.where(dead, 0.0, phases)
        flags.append("vanishing-amplitude")

    # enforce exact antisymmetry in the trace indices (upper triangle wins)
    for k in range(4):
        for l in range(k + 1, 4):
            phases[l, k] = -phases[k, l]

    amp2 = a**2 + b**2
    with np.errstate(divide="ignore", invalid="ignore"):
        variances = (a**2 * fit.sin_uncert**2 + b**2 * fit.cos_uncert**2) / amp2**2
    # vanished amplitudes carry no phase information at all
    variances = np.where(dead | ~np.isfinite(variances), np.inf, variances)

    constraints = constraint_matrix(assign)
    violations = _violations(phases, constraints)
    return PhaseTable(
        phases=phases,
        variances=variances,
        constraints=constraints,
        violations=violations,
        flags=tuple(flags),
    )


def refine_phases(table: PhaseTable, *, large_violation: float = 0.5) -> PhaseTable:
    """Project the phases onto the consistency constraints.

    Each trace's six phases receive the smallest inverse-variance-weighted
    correction that zeroes the wrapped constraint residuals; well-determined
    phases are tethered hard, noisy ones absorb the adjustment.  The
    post-refinement violation never exceeds the pre-refinement one, but a
    large initial violation is flagged: projecting garbage merely hides it.
    """
    phases = table.phases.copy()
    constraints = table.constraints
    flags = list(table.flags)
    if table.max_violation > large_violation:
        flags.append("large-violation")

    var_floor = 1e-12
    for k in range(4):
        for l in range(k, 4):
            resid = wrap_angle(constraints @ phases[k, l])
            if not np.any(resid):
                continue
            weights = np.minimum(table.variances[k, l], 1e6) + var_floor
            gain = (weights[:, None] * constraints.T) @ np.linalg.inv(
                constraints @ (weights[:, None] * constraints.T)
            )
            phases[k, l] = phases[k, l] - gain @ resid
            phases[l, k] = -phases[k, l]
    phases = np.asarray(wrap_angle(phases))
    for k in range(4):
        for l in range(k + 1, 4):
            phases[l, k] = -phases[k, l]

    violations = _violations(phases, constraints)
    return PhaseTable(
        phases=phases,
        variances=table.variances,
        constraints=constraints,
        violations=violations,
        flags=tuple(dict.fromkeys(flags)),
    )


@dataclass(frozen=True)
class RankOneCompletion:
    """Per-trace overlap-magnitude vectors recovered by rank-1 completion."""

    vectors: np.ndarray       # (4, 4, 4): s[k, l, nu] >= 0
    residuals: np.ndarray     # (4, 4) completion objective at the optimum
    flags: tuple[str, ...] = ()


def _completion_objective(diag: np.ndarray, off2: np.ndarray):
    """Sum over ordered pairs of (d_m d_n - M_mn^2)^2 and its gradient."""
    outer = np.outer(diag, diag)
    dev = outer - off2
    np.fill_diagonal(dev, 0.0)
    value = float(np.sum(dev**2))
    grad = 4.0 * (dev @ diag)
    return value, grad


def _triangle_estimate(off_abs: np.ndarray, cap: float) -> np.ndarray:
    """Closed-form diagonal seed: d_m = |M_mp||M_mq|/|M_pq| for the best p, q."""
    est = np.full(4, 0.25 * cap)
    for m in range(4):
        others = [i for i in range(4) if i != m]
        best = 0.0
        found = False
        for p, q in itertools.combinations(others, 2):
            denom = off_abs[p, q]
            if denom > 1e-12 and off_abs[p, q] >= best:
                best = denom
                est[m] = off_abs[m, p] * off_abs[m, q] / denom
                found = True
        if not found:
            est[m] = 0.25 * cap
    return np.clip(est, 0.0, cap)


def complete_rank1(fit: ModelFit, table: PhaseTable,
                   assign: LevelAssignment, *, residual_tol: float = 1e-6
                   ) -> RankOneCompletion:
    """Recover per-trace overlap vectors from off-diagonal products.

    The off-diagonal entries ``M[mu, nu] = a cos(Delta) + b sin(Delta)`` are
    the products ``s_mu s_nu``; the unknown diagonal is chosen (multi-start
    bounded minimization over ``[0, c]^4``) to make the matrix rank one, and
    the top eigenvector, scaled to ``|s|^2 = c``, gives the overlaps.
    """
    vectors = np.zeros((4, 4, 4))
    residuals = np.zeros((4, 4))
    flags: set[str] = set()

    for k in range(4):
        for l in range(4):
            m_mat = np.zeros((4, 4))
            for m, (mu, nu) in enumerate(assign.pair_map):
                delta = table.phases[k, l, m]
                val = (fit.cos_coeffs[k, l, m] * math.cos(delta)
                       + fit.sin_coeffs[k, l, m] * math.sin(delta))
                m_mat[mu, nu] = val
                m_mat[nu, mu] = val
            cap = float(fit.offsets[k, l])
            if cap <= 0.0:
                flags.add("nonpositive-offset")
                residuals[k, l] = float(np.sum(m_mat**2))
                continue

            off2 = m_mat**2
            off_abs = np.abs(m_mat)
            starts = [_triangle_estimate(off_abs, cap),
                      np.full(4, 0.5 * cap), np.full(4, 0.25 * cap), np.full(4, cap)]
            starts.extend(cap * np.eye(4)[i] for i in range(4))

            best_diag = starts[0]
            best_val = math.inf
            for start in starts:
                res = minimize(_completion_objective, start, args=(off2,), jac=True,
                               method="L-BFGS-B", bounds=[(0.0, cap)] * 4)
                if res.fun < best_val:
                    best_val = float(res.fun)
                    best_diag = np.asarray(res.x)
            residuals[k, l] = best_val
            if best_val > residual_tol:
                flags.add("low-confidence")

            completed = m_mat.copy()
            np.fill_diagonal(completed, best_diag)
            eigvals, eigvecs = np.linalg.eigh(completed)
            top = eigvecs[:, -1]
            trace = float(np.trace(completed))
            if trace > 0 and eigvals[-1] < 0.9 * trace:
                flags.add("weak-rank1")
            if top[np.argmax(np.abs(top))] < 0:
                top = -top
            if np.any(top < -1e-6):
                flags.add("negative-overlap")
            top = np.clip(top, 0.0, None)
            norm2 = float(np.sum(top**2))
            if norm2 <= 0:
                flags.add("nonpositive-offset")
                continue
            vectors[k, l] = top * math.sqrt(cap / norm2)

    return RankOneCompletion(vectors=vectors, residuals=residuals, flags=tuple(sorted(flags)))


@dataclass(frozen=True)
class ReconstructionDiagnostics:
    assignment: LevelAssignment
    violation_pre: float          # max squared constraint violation before refinement
    violation_post: float
    completion_residuals: np.ndarray
    flags: tuple[str, ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "arrangement": self.assignment.arrangement,
            "arrangement_residuals": self.assignment.residuals.tolist(),
            "pair_map": [list(p) for p in self.assignment.pair_map],
            "inverted": self.assignment.inverted,
            "violation_pre": self.violation_pre,
            "violation_post": self.violation_post,
            "completion_residuals": self.completion_residuals.tolist(),
            "flags": list(self.flags),
        }


def reconstruct(fit: ModelFit, *, refine: bool = True,
                abs_tol: float | None = None, ratio_tol: float = 0.1
                ) -> tuple[np.ndarray, ReconstructionDiagnostics]:
    """Full pipeline from a six-frequency fit to the traceless Hamiltonian."""
    if fit.n_frequencies != 6:
        raise ValidationError(
            f"reconstruction requires six frequencies, fit has {fit.n_frequencies}"
        )
    assign = identify_levels(fit.frequencies, abs_tol=abs_tol, ratio_tol=ratio_tol)
    table = extract_phases(fit, assign)
    violation_pre = table.max_violation
    if refine:
        table = refine_phases(table)
    completion = complete_rank1(fit, table, assign)

    levels = traceless_levels(
        assign.frequency_of((0, 1), fit.frequencies),
        assign.frequency_of((0, 2), fit.frequencies),
        assign.frequency_of((0, 3), fit.frequencies),
    )
    phase_offsets = np.zeros((4, 4, 4))
    for nu in range(1, 4):
        phase_offsets[:, :, nu] = table.phases[:, :, assign.index_of((0, nu))]
    h_est = assemble_hamiltonian(levels, completion.vectors, phase_offsets)

    flags = tuple(dict.fromkeys(assign.flags + table.flags + completion.flags))
    diag = ReconstructionDiagnostics(
        assignment=assign,
        violation_pre=violation_pre,
        violation_post=table.max_violation,
        completion_residuals=completion.residuals,
        flags=flags,
    )
    return h_est, diag


def save_reconstruction(h_est, diag: ReconstructionDiagnostics, path) -> None:
    payload = {
        "schema_version": 1,
        "hamiltonian": {"re": h_est.real.tolist(), "im": h_est.imag.tolist()},
        **diag.to_dict(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)


# ---------------------------------------------------------------------------
# gauge-compensated error metric
# ---------------------------------------------------------------------------

def _traceless(h: np.ndarray) -> np.ndarray:
    return h - (np.trace(h).real / 4.0) * np.eye(4)


def _op_norm(x: np.ndarray) -> float:
    return float(np.linalg.norm(x, 2))


def _branch_error(branch: np.ndarray, act: np.ndarray, norm_act: float,
                  grid_points: int) -> tuple[float, np.ndarray]:
    scale = max(norm_act, _op_norm(branch))
    tiny = 1e-10 * scale
    fixed: list[np.ndarray] = []
    scanned = []
    for l in (1, 2, 3):
        if abs(act[0, l]) > tiny and abs(branch[0, l]) > tiny:
            fixed.append(np.array([float(np.angle(act[0, l]) - np.angle(branch[0, l]))]))
        else:
            fixed.append(np.linspace(0.0, TWO_PI, grid_points, endpoint=False))
            scanned.append(l - 1)

    def rotated_error(deltas):
        phase = np.exp(1j * np.array([0.0, *deltas]))
        return _op_norm(branch * np.outer(phase.conj(), phase) - act) / norm_act

    best = math.inf
    best_deltas = np.zeros(3)
    for d12 in fixed[0]:
        for d13 in fixed[1]:
            for d14 in fixed[2]:
                err = rotated_error((d12, d13, d14))
                if err < best:
                    best = err
                    best_deltas = np.array([d12, d13, d14])
    if scanned:
        # polish the grid-scanned phases locally
        def objective(free):
            deltas = best_deltas.copy()
            deltas[scanned] = free
            return rotated_error(deltas)

        res = minimize(objective, best_deltas[scanned], method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 400})
        if res.fun < best:
            best = float(res.fun)
            best_deltas[scanned] = res.x
    return best, best_deltas


def gauge_match(h_est, h_act, *, grid_points: int = 64
                ) -> tuple[float, int, np.ndarray]:
    """Best relative error over the gauge orbit and inversion branch.

    Returns ``(error, sign, deltas)`` such that with
    ``D = diag(1, exp(1j d))`` the matrix ``D^dag @ branch @ D`` best matches
    the traceless actual Hamiltonian, where ``branch`` is the traceless
    estimate (``sign=+1``) or its inversion image ``-conj(.)`` (``sign=-1``).
    The diagonal phases come from aligning first-row phases; a vanishing
    first-row entry leaves its phase unconstrained, which is resolved by a
    grid scan.
    """
    est = _traceless(validate_hamiltonian(h_est))
    act = _traceless(validate_hamiltonian(h_act))
    norm_act = _op_norm(act)
    if norm_act == 0.0:
        raise ValidationError("actual Hamiltonian is zero; relative error undefined")
    best = (math.inf, 1, np.zeros(3))
    for sign, branch in ((1, est), (-1, -est.conj())):
        err, deltas = _branch_error(branch, act, norm_act, grid_points)
        if err < best[0]:
            best = (err, sign, deltas)
    return best


def gauge_compensated_error(h_est, h_act, *, grid_points: int = 64) -> float:
    """Relative operator-norm error modulo gauge phases, trace and inversion."""
    return gauge_match(h_est, h_act, grid_points=grid_points)[0]


def frame_transform(h, sign: int, deltas: np.ndarray) -> np.ndarray:
    """Map a truth-side matrix into the estimated frame fixed by gauge_match.

    If ``gauge_match(h_est, h_act)`` returned ``(err, sign, deltas)`` then
    ``frame_transform(h_act, sign, deltas)`` reproduces ``h_est`` up to the
    residual error, and the same transform expresses any other Hamiltonian of
    the same physical system in the estimate's frame.
    """
    x = _traceless(validate_hamiltonian(h))
    phase = np.exp(1j * np.array([0.0, *np.asarray(deltas, dtype=float)]))
    if sign < 0:
        # branch = -est* ~= D act D^dag unwinds to est = D^dag (-act*) D
        return (-x.conj()) * np.outer(phase.conj(), phase)
    # est ~= D act D^dag directly
    return x * np.outer(phase, phase.conj())
