"""Control propagator, adjoint rotation trajectory and its Fourier modes.

The rotation matrix is defined by ``U0^dag S_a U0 = Q[a, b] S_b`` so that
the toggling-frame perturbation reads ``(Q^T J) . S / 2``.  Fourier modes
follow ``Q(t) = sum_m A_m exp(i Omega_m t)`` with ``Omega_m = 2 pi m / tau``.
"""

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import evolution
from .algebra import OperatorBasis, StructureConstants

UNITARITY_TOL = 1e-9
ORTHOGONALITY_TOL = 1e-8
PERIODICITY_WARN = 1e-3
FIRST_ORDER_TOL = 1e-8


class PeriodicityWarning(UserWarning):
    pass


class RefocusingPreconditionError(ValueError):
    pass


@dataclass(frozen=True)
class ControlTrajectory:
    U0: np.ndarray = field(repr=False)  # (n+1, N, N)
    times: np.ndarray = field(repr=False)
    period: float = 0.0
    fields: Optional[np.ndarray] = field(default=None, repr=False)  # (n, N**2-1)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0


@dataclass(frozen=True)
class RotationTrajectory:
    """Q on the grid; ``generators[k]`` gives ``Q(t_k + s) = expm(s G_k) Q_k``."""

    Q: np.ndarray = field(repr=False)  # (n+1, d, d), d = N**2 - 1
    times: np.ndarray = field(repr=False)
    period: float = 0.0
    generators: Optional[np.ndarray] = field(default=None, repr=False)


@dataclass(frozen=True)
class FloquetSpectrum:
    """Fourier modes ``A_m`` for ``m = -M..M`` stored in ``modes[m + M]``."""

    modes: np.ndarray = field(repr=False)
    M: int
    period: float
    n_samples: int
    sum_rule_residual: float
    periodicity_residual: float

    @property
    def omega(self) -> float:
        return 2 * np.pi / self.period

    @property
    def dim(self) -> int:
        return self.modes.shape[-1]

    def A(self, m: int) -> np.ndarray:
        if abs(m) > self.M:
            return np.zeros((self.dim, self.dim), dtype=complex)
        return self.modes[m + self.M]

    @property
    def m_values(self) -> np.ndarray:
        return np.arange(-self.M, self.M + 1)

    def frobenius_norms(self) -> np.ndarray:
        return np.linalg.norm(self.modes, axis=(-2, -1))

    def truncated(self, M: int) -> "FloquetSpectrum":
        M = min(M, self.M)
        return FloquetSpectrum(
            self.modes[self.M - M:self.M + M + 1], M, self.period, self.n_samples,
            self.sum_rule_residual, self.periodicity_residual,
        )


def propagate_control(waveform, basis: OperatorBasis) -> ControlTrajectory:
    """U0 at every grid time of one period (right-continuous at hard pulses)."""
    evolution.check_step_angles(waveform.samples, waveform.dt, "control")
    U = evolution.cumulative_unitaries(waveform, basis)
    dev = np.abs(np.einsum("tji,tjk->tik", U.conj(), U) - np.eye(basis.n_levels)).max()
    if dev > UNITARITY_TOL:
        raise ArithmeticError(f"control propagator lost unitarity ({dev:.2e})")
    return ControlTrajectory(U, waveform.times, waveform.period, np.asarray(waveform.samples, float))


def rotation_matrices(U, basis: OperatorBasis) -> np.ndarray:
    """``Q[a, b] = tr(S_b U^dag S_a U) / N`` for a stack of unitaries."""
    S = basis.traceless
    U = np.asarray(U)
    X = np.einsum("...ji,ajk,...kl->...ail", U.conj(), S, U)
    return np.einsum("...aij,bji->...ab", X, S).real / basis.n_levels


def adjoint_generators(fields, basis: OperatorBasis) -> np.ndarray:
    """Real generators ``G`` with ``e^{iHs} S_a e^{-iHs} = expm(s G)[a, c] S_c``.

    ``H = v.S / 2`` for each row ``v`` of ``fields``.
    """
    S = basis.traceless
    N = basis.n_levels
    # gen[b, a, c] = tr(S_c i[S_b/2, S_a]) / N
    comm = np.einsum("bij,ajk->baik", S, S) - np.einsum("ajk,bki->baji", S, S)
    gen = (0.5j * np.einsum("baik,cki->bac", comm, S) / N).real
    return np.tensordot(np.asarray(fields, dtype=float), gen, axes=([-1], [0]))


def rotation_trajectory(traj: ControlTrajectory, basis: OperatorBasis) -> RotationTrajectory:
    gens = None
    if traj.fields is not None:
        gens = adjoint_generators(traj.fields, basis)
    return RotationTrajectory(rotation_matrices(traj.U0, basis), traj.times, traj.period, gens)


def fourier_modes(rot: RotationTrajectory, M: Optional[int] = None,
                  method: str = "dft") -> FloquetSpectrum:
    """Fourier modes of Q(t) over one period.

    ``method="dft"`` transforms the grid samples directly; ``M`` defaults
    to every mode the grid resolves and the sum rule is evaluated as the
    cyclic convolution of the discrete spectrum, where it holds exactly for
    orthogonal samples.  ``method="exact"`` integrates the piecewise
    constant control exactly inside each step (any ``M``); its sum rule is
    the linear convolution over ``|k| <= M`` and measures the truncation.
    """
    if method not in ("dft", "exact"):
        raise ValueError(f"unknown method {method!r}")
    Q = rot.Q
    t = rot.times
    n = len(t) - 1
    if n < 2:
        raise ValueError("need at least two samples per period")
    steps = np.diff(t)
    if np.abs(steps - steps[0]).max() > 1e-9 * steps[0]:
        raise ValueError("Fourier modes need a uniform grid")
    if abs(t[-1] - t[0] - rot.period) > 1e-9 * rot.period:
        raise ValueError("samples must span exactly one period")
    d = Q.shape[-1]
    periodicity = float(np.linalg.norm(Q[-1] - Q[0]))
    if periodicity > PERIODICITY_WARN:
        warnings.warn(
            f"Q(tau) differs from Q(0) by {periodicity:.3g}: sequence is not periodic",
            PeriodicityWarning,
            stacklevel=2,
        )
    full = np.fft.fft(Q[:-1], axis=0) / n  # index k <-> m = k (mod n)
    if M is None:
        M = (n - 1) // 2
    if method == "exact":
        if rot.generators is None:
            raise ValueError("exact modes need the step generators")
        modes = _exact_modes(Q[:-1], rot.generators * (rot.period / n), M)
        conv = _linear_sum_rule(modes)  # index m + 2M
        conv[2 * M] -= np.eye(d)
        half = M // 2
        res = float(np.abs(conv[2 * M - half:2 * M + half + 1]).max())
        return FloquetSpectrum(modes, M, rot.period, n, res, periodicity)
    if M > (n - 1) // 2:
        raise ValueError(f"M={M} exceeds the resolved band ({(n - 1) // 2})")
    idx = np.arange(-M, M + 1) % n
    modes = full[idx]
    # cyclic sum rule: sum_k A_k A_{m-k}^T, computed by convolution theorem
    prod = np.einsum("tab,tcb->tac", np.fft.ifft(full, axis=0) * n, np.fft.ifft(full, axis=0) * n)
    conv = np.fft.fft(prod, axis=0) / n
    conv[0] -= np.eye(d)
    check = np.arange(-(M // 2), M // 2 + 1) % n
    sum_rule = float(np.abs(conv[check]).max())
    return FloquetSpectrum(modes, M, rot.period, n, sum_rule, periodicity)


def _step_weights(x, a_max):
    """``g_a(x) = sum_i C(a+i, a) x^i / (a+i+1)!`` for a = 0..a_max."""
    x = np.asarray(x, dtype=complex)
    out = np.zeros((a_max + 1,) + x.shape, dtype=complex)
    small = np.abs(x) < 2.0
    xs = x[small]
    for a in range(a_max + 1):
        term = np.full(xs.shape, 1.0 / math.factorial(a + 1), dtype=complex)
        acc = term.copy()
        for i in range(1, 60):
            term = term * xs * (a + i) / (i * (a + i + 1))
            acc += term
        out[a][small] = acc
    xl = x[~small]
    if xl.size:
        ex = np.exp(xl)
        g = (ex - 1) / xl
        out[0][~small] = g
        for a in range(1, a_max + 1):
            g = (ex / math.factorial(a) - g) / xl
            out[a][~small] = g
    return out


def _linear_sum_rule(modes):
    """``sum_k A_k A_{m-k}^T`` over the stored modes, m = -2M..2M."""
    L = 2 * modes.shape[0] - 1
    size = 1 << (L - 1).bit_length()
    fa = np.fft.fft(modes, n=size, axis=0)
    prod = np.einsum("kab,kcb->kac", fa, fa)
    return np.fft.ifft(prod, axis=0)[:L]


def _exact_modes(Q, Gdt, M):
    """Exact Fourier integrals of ``Q(t_k + s) = expm(s G_k) Q_k``.

    ``Gdt`` holds the step generators multiplied by the step length.
    """
    n = Q.shape[0]
    dt_rel = 1.0 / n  # dt / tau
    ms = np.arange(-M, M + 1)
    terms = []
    X = Q.astype(float)
    a = 0
    while True:
        terms.append(np.fft.fft(X, axis=0))
        size = np.abs(X).max() / math.factorial(a + 1)
        if size < 1e-18 or a >= 40:
            break
        X = np.einsum("kab,kbc->kac", Gdt, X)
        a += 1
    w = _step_weights(-2j * np.pi * ms / n, len(terms) - 1)
    idx = ms % n
    modes = np.zeros((len(ms),) + Q.shape[1:], dtype=complex)
    for a, D in enumerate(terms):
        modes += w[a][:, None, None] * D[idx]
    return modes * dt_rel


def sum_rule_direct(spec: FloquetSpectrum, m: int) -> np.ndarray:
    """Linear (truncated) sum ``sum_k A_k A_{m-k}^T`` over available modes."""
    ks = [k for k in range(-spec.M, spec.M + 1) if abs(m - k) <= spec.M]
    return sum(spec.A(k) @ spec.A(m - k).T for k in ks)


def check_first_order(spec: FloquetSpectrum, J) -> float:
    """Norm of ``A_0^T J``; zero for a first-order refocusing sequence."""
    J = np.asarray(J, dtype=float)
    return float(np.linalg.norm(spec.A(0).T @ J))


def second_order_vector(spec: FloquetSpectrum, J, C: np.ndarray):
    """Vector ``C^g_ab sum_{m != 0} [A_-m^T J J^T A_m]_ab / (i Omega_-m)``.

    ``C`` is the traceless block of the commutator structure constants,
    indexed ``[g, a, b]``.  Pairs ``m, -m`` are summed together.  Returns the
    vector and the contribution of the upper half of the harmonic range as
    a truncation estimate.
    """
    J = np.asarray(J, dtype=float)
    JJ = np.outer(J, J)
    Om = spec.omega
    total = np.zeros((spec.dim, spec.dim), dtype=complex)
    tail = np.zeros_like(total)
    for m in range(1, spec.M + 1):
        Ap, Am = spec.A(m), spec.A(-m)
        # m and -m: Omega_-m = -Omega_m
        term = (Am.T @ JJ @ Ap) / (-1j * m * Om) + (Ap.T @ JJ @ Am) / (1j * m * Om)
        total += term
        if m > spec.M // 2:
            tail += term
    vec = np.einsum("gab,ab->g", C, total)
    return vec, float(np.linalg.norm(np.einsum("gab,ab->g", C, tail)))


def check_second_order(spec: FloquetSpectrum, J, constants: StructureConstants,
                       first_order_tol: float = FIRST_ORDER_TOL):
    """Residual norm of the second-order refocusing condition.

    Requires the first-order condition; returns ``(residual, truncation)``.
    """
    J = np.asarray(J, dtype=float)
    r1 = check_first_order(spec, J)
    scale = max(np.linalg.norm(J), 1e-300)
    if r1 > first_order_tol * scale:
        raise RefocusingPreconditionError(
            f"first-order condition fails (residual {r1:.3g}); second-order test undefined"
        )
    vec, trunc = second_order_vector(spec, J, constants.C_traceless)
    return float(np.linalg.norm(vec)), trunc


def spectrum_rows(spec: FloquetSpectrum, tau_p: float = 1.0):
    """Rows ``(m, Omega_m tau_p, ||A_m||_F, truncation_flag)`` for m >= 0.

    Modes above half the resolved band are flagged: the DFT of the sampled
    trajectory is aliased there.
    """
    norms = spec.frobenius_norms()
    rows = []
    for m in range(0, spec.M + 1):
        flag = int(m > spec.n_samples // 4)
        rows.append((m, m * spec.omega * tau_p, float(norms[m + spec.M]), flag))
    return rows


def write_spectrum_csv(path, spec: FloquetSpectrum, tau_p: float = 1.0):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["m", "omega_m_tau_p", "frobenius_norm", "truncation_flag"])
        for m, om, nrm, flag in spectrum_rows(spec, tau_p):
            w.writerow([m, repr(float(om)), repr(nrm), flag])


def waveform_spectrum(waveform, basis: OperatorBasis, M: Optional[int] = None,
                      method: str = "exact") -> FloquetSpectrum:
    """Propagate ``waveform`` and return its Fourier modes."""
    rot = rotation_trajectory(propagate_control(waveform, basis), basis)
    if M is None and method == "exact":
        M = 256
    return fourier_modes(rot, M, method)


SECOND_ORDER_TOL = 1e-10


def passes_second_order(spec: FloquetSpectrum, J, constants: StructureConstants,
                        tol: float = SECOND_ORDER_TOL) -> bool:
    """First- and second-order conditions hold, relative to ``|J|^2 tau``."""
    try:
        r2, trunc = check_second_order(spec, J, constants)
    except RefocusingPreconditionError:
        return False
    return r2 + trunc <= tol * float(np.dot(J, J)) * spec.period
