"""Kinetic-equation predictions for refocused and free decoherence.

Conventions: the coherence vector obeys ``dR/dt = Pi R`` in the slow
sector; ``C`` and ``B`` are the traceless blocks of the structure constants
indexed ``[g, a, b]``.  Bath correlators are ``F(t) = F1(t) + i F2(t)``
with real matrices ``F1``, ``F2`` over the traceless sector.  Laplace
transforms are ``L[f](z) = int_0^inf exp(-z s) f(s) ds``.
"""

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate, special

from .algebra import StructureConstants

LAPLACE_SPAN = 12.0  # quadrature range in units of tau0
P_OFFSET = 1e-6  # default p = P_OFFSET / tau
DERIVATIVE_ORDER = 4


class ResonanceError(ValueError):
    pass


class ExpansionWarning(UserWarning):
    pass


# --- exact free decay ---------------------------------------------------------


def gamma_exact(b0: float, tau0: float) -> float:
    return b0**2 * tau0 * math.sqrt(math.pi / 2)


def phase_variance_half(b0, tau0, t):
    """``<phi^2>/2`` for a single-axis field with the Gaussian correlator."""
    x = np.asarray(t, dtype=float) / (math.sqrt(2) * tau0)
    return b0**2 * tau0**2 * (math.sqrt(math.pi) * x * special.erf(x) + np.exp(-x * x) - 1)


def exact_free_decay(b0: float, tau0: float, t):
    """``1 - <cos phi>`` without control for x-only Gaussian noise."""
    if b0 < 0 or tau0 <= 0 or np.any(np.asarray(t) < 0):
        raise ValueError("need b0 >= 0, tau0 > 0, t >= 0")
    return -np.expm1(-phase_variance_half(b0, tau0, t))


def free_decay_asymptote(b0: float, tau0: float):
    """Long-time form ``<cos phi> -> prefactor * exp(-gamma t)``."""
    return math.exp(b0**2 * tau0**2), gamma_exact(b0, tau0)


# --- bath correlators ---------------------------------------------------------


@dataclass(frozen=True)
class BathCorrelator:
    """``F1(t) = f1(t) M`` and ``F2(t) = f2(t) M`` for a fixed coupling matrix ``M``.

    ``deriv(k)`` returns ``(f1^(k)(0), f2^(k)(0))``; ``laplace(z)`` returns
    ``(L[f1](z), L[f2](z))`` and ``laplace_moment(z)`` the transforms of
    ``-s f(s)`` (the z-derivatives).
    """

    M: np.ndarray = field(repr=False)
    f1: Callable = field(repr=False)
    f2: Callable = field(repr=False)
    deriv: Callable = field(repr=False)
    laplace: Callable = field(repr=False)
    laplace_moment: Callable = field(repr=False)
    tau0: float
    beta: float = math.inf
    omega_c: float = math.inf
    classical: bool = True

    def F1(self, t):
        return np.multiply.outer(np.asarray(self.f1(t)), self.M)

    def F2(self, t):
        return np.multiply.outer(np.asarray(self.f2(t)), self.M)

    def derivatives(self, k):
        d1, d2 = self.deriv(k)
        return d1 * self.M, d2 * self.M

    def laplace_matrices(self, z):
        l1, l2 = self.laplace(z)
        return l1 * self.M, l2 * self.M

    @property
    def delta0(self) -> float:
        """``Delta(0) = ||F(0)||``."""
        d1, d2 = self.deriv(0)
        return float(np.linalg.norm((d1 + 1j * d2) * self.M, 2))

    @property
    def delta2_0(self) -> float:
        return float(abs(self.deriv(0)[1]) * np.linalg.norm(self.M, 2))


def axis_projector(axes, dim=3):
    idx = {"x": 0, "y": 1, "z": 2}
    P = np.zeros((dim, dim))
    for a in axes:
        P[idx[a], idx[a]] = 1.0
    return P


def _hermite_deriv(k, tau0):
    # d^k/dt^k exp(-t^2 / (2 tau0^2)) at t = 0
    if k % 2:
        return 0.0
    j = k // 2
    return (-1) ** j * float(special.factorial2(k - 1, exact=True) if k else 1) / tau0**k


def _numeric_laplace(f, z, upper):
    """``int_0^upper exp(-z s) f(s) ds`` by adaptive quadrature."""
    z = complex(z)
    a, w = z.real, z.imag
    if w == 0.0:
        re = integrate.quad(lambda s: math.exp(-a * s) * f(s), 0, upper, limit=400)[0]
        return complex(re, 0.0)
    g = lambda s: math.exp(-a * s) * f(s)  # noqa: E731
    re = integrate.quad(g, 0, upper, weight="cos", wvar=w, limit=400)[0]
    im = integrate.quad(g, 0, upper, weight="sin", wvar=w, limit=400)[0]
    return complex(re, -im)


def gaussian_correlator(b0: float, tau0: float, axes=("x",), dim: int = 3) -> BathCorrelator:
    """Classical Gaussian correlator ``b0^2 exp(-t^2 / 2 tau0^2)`` on ``axes``.

    Laplace transforms use quadrature on ``[0, 12 tau0]``; the neglected
    tail is below ``b0^2 tau0 exp(-72)``.
    """
    upper = LAPLACE_SPAN * tau0

    def f1(t):
        return b0**2 * np.exp(-np.asarray(t, dtype=float) ** 2 / (2 * tau0**2))

    def f2(t):
        return np.zeros_like(np.asarray(t, dtype=float))

    def deriv(k):
        return b0**2 * _hermite_deriv(k, tau0), 0.0

    def laplace(z):
        if complex(z).real < -1.0 / tau0:
            raise ValueError("Laplace argument too far left of the imaginary axis")
        return _numeric_laplace(lambda s: b0**2 * math.exp(-s * s / (2 * tau0**2)), z, upper), 0j

    def laplace_moment(z):
        return _numeric_laplace(lambda s: -s * b0**2 * math.exp(-s * s / (2 * tau0**2)), z, upper), 0j

    return BathCorrelator(axis_projector(axes, dim), f1, f2, deriv, laplace, laplace_moment,
                          tau0, math.inf, math.inf, True)


def gaussian_laplace_closed(b0: float, tau0: float, z):
    """Closed form of the Gaussian-correlator Laplace transform (erfcx)."""
    u = np.asarray(z, dtype=complex) * tau0 / math.sqrt(2)
    return b0**2 * tau0 * math.sqrt(math.pi / 2) * special.erfcx(u)


def thermal_correlator(spectral: Callable, M, beta: float = math.inf, omega_c: float = math.inf,
                       tau0: Optional[float] = None) -> BathCorrelator:
    """Correlator from a real scalar spectral function ``F(omega) = G(omega) M``.

    ``f1(t) = int dw/pi G coth(beta w / 2) cos(w t)`` and
    ``f2(t) = int dw/pi G sin(w t)``, integrated over ``(0, omega_c)``.
    """
    M = np.asarray(M, dtype=float)
    if not math.isfinite(omega_c):
        raise ValueError("a finite cutoff omega_c is required")
    classical_limit = False

    def occ(w):
        if math.isinf(beta):
            return 1.0
        return 1.0 / math.tanh(beta * w / 2)

    def q(fun, **kw):
        with warnings.catch_warnings():
            warnings.simplefilter("error", integrate.IntegrationWarning)
            try:
                val = integrate.quad(fun, 0, omega_c, limit=400, **kw)[0]
            except integrate.IntegrationWarning as exc:
                raise ValueError(f"spectral integral does not converge: {exc}") from exc
        if not math.isfinite(val):
            raise ValueError("spectral integral is not finite")
        return val / math.pi

    # integrability check, including the classical 1/w behaviour of coth
    q(lambda w: spectral(w) * occ(w))

    def f1(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.array([q(lambda w: spectral(w) * occ(w), weight="cos", wvar=tt) if tt else
                        q(lambda w: spectral(w) * occ(w)) for tt in t])
        return out

    def f2(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.array([q(spectral, weight="sin", wvar=tt) if tt else 0.0 for tt in t])

    def deriv(k):
        j = k // 2
        if k % 2 == 0:
            return (-1) ** j * q(lambda w: spectral(w) * occ(w) * w**k), 0.0
        return 0.0, (-1) ** j * q(lambda w: spectral(w) * w**k)

    def laplace(z):
        z = complex(z)
        if z.real <= 0 and -omega_c < z.imag < omega_c:
            raise ResonanceError("Laplace argument on the spectral support needs Re p > 0")
        l1 = _cq(lambda w: spectral(w) * occ(w) * z / (z * z + w * w), omega_c)
        l2 = _cq(lambda w: spectral(w) * w / (z * z + w * w), omega_c)
        return l1, l2

    def laplace_moment(z):
        z = complex(z)
        if z.real <= 0 and -omega_c < z.imag < omega_c:
            raise ResonanceError("Laplace argument on the spectral support needs Re p > 0")
        # d/dz of the transforms above
        l1 = _cq(lambda w: spectral(w) * occ(w) * (w * w - z * z) / (z * z + w * w) ** 2, omega_c)
        l2 = _cq(lambda w: -spectral(w) * w * 2 * z / (z * z + w * w) ** 2, omega_c)
        return l1, l2

    return BathCorrelator(M, f1, f2, deriv, laplace, laplace_moment,
                          tau0 if tau0 is not None else 1.0 / omega_c, beta, omega_c,
                          classical_limit)


def _cq(fun, upper):
    kw = dict(limit=400, epsabs=0.0, epsrel=1e-10)
    re = integrate.quad(lambda w: fun(w).real, 0, upper, **kw)[0]
    im = integrate.quad(lambda w: fun(w).imag, 0, upper, **kw)[0]
    return complex(re, im) / math.pi


# --- kernels -------------------------------------------------------------------


def _cc(C, X):
    """``X_ab C^g_{a a'} C^{a'}_{b d}`` -> matrix [g, d]."""
    return np.einsum("ab,gac,cbd->gd", X, C, C)


def _cb(C, B, X):
    return np.einsum("ab,gac,cbd->gd", X, C, B)


def _j_term(C, v):
    """``v_a C^g_{a d}`` -> matrix [g, d]."""
    return np.einsum("a,gad->gd", v, C)


def stationary_kernel(J, corr: BathCorrelator, constants: StructureConstants, p=0.0):
    """Kernel ``Pi(p)`` without control."""
    C = constants.C_traceless
    B = constants.B[1:, 1:, 1:]
    J = np.asarray(J, dtype=float)
    L1, L2 = corr.laplace_matrices(p)
    return _j_term(C, J).astype(complex) + _cc(C, L1) + _cb(C, B, L2)


def stationary_kernel_derivative(corr: BathCorrelator, constants: StructureConstants, p=0.0):
    C = constants.C_traceless
    B = constants.B[1:, 1:, 1:]
    l1, l2 = corr.laplace_moment(p)
    return _cc(C, l1 * corr.M) + _cb(C, B, l2 * corr.M)


def stationary_rates(J, corr, constants, p=0.0):
    """Eigenvalues of ``Pi(p)`` and the estimate ``Gamma0 = max(|J|, Delta(0) tau0)``."""
    ev = np.linalg.eigvals(stationary_kernel(J, corr, constants, p))
    gamma0 = max(float(np.linalg.norm(J)), corr.delta0 * corr.tau0)
    return ev, gamma0


def refined_poles(J, corr, constants):
    """Poles from ``p (1 - Pi'(0)) = Pi(0)`` and the residue prefactor ``(1 - Pi'(0))^-1``."""
    P0 = stationary_kernel(J, corr, constants, 0.0)
    P1 = stationary_kernel_derivative(corr, constants, 0.0)
    pref = np.linalg.inv(np.eye(P0.shape[0]) - P1)
    return np.linalg.eigvals(pref @ P0), pref


def _p_default(spec, p):
    if p is None:
        return P_OFFSET / spec.period
    return p


def floquet_kernel_block(spec, J, corr: BathCorrelator, constants: StructureConstants,
                         p=None, m: int = 0):
    """``Pi_m(p)`` with bath terms from Laplace transforms at ``p - i Omega_{m-m'}``."""
    p = complex(_p_default(spec, p))
    C = constants.C_traceless
    B = constants.B[1:, 1:, 1:]
    J = np.asarray(J, dtype=float)
    M = spec.M
    if abs(m) > M:
        raise ValueError(f"harmonic {m} outside the spectrum truncation M={M}")
    Om = spec.omega
    out = _j_term(C, spec.A(m).T @ J).astype(complex)
    X1 = np.zeros((spec.dim, spec.dim), dtype=complex)
    X2 = np.zeros_like(X1)
    cache = {}
    for mp in range(-M, M + 1):
        j = m - mp
        if abs(j) > M:
            continue
        if j not in cache:
            z = p - 1j * Om * j
            cache[j] = corr.laplace(z)
        l1, l2 = cache[j]
        core = spec.A(j).T @ corr.M @ spec.A(mp)
        X1 += l1 * core
        X2 += l2 * core
    return out + _cc(C, X1) + _cb(C, B, X2)


def j_bilinear(spec, J, constants: StructureConstants, p=0.0):
    """J-bilinear part of ``Pi^[0]_{0,0}(p)`` and the sum of its term norms.

    Also returns the matrix ``Mcal = sum_{m != 0} [A_-m^T J J^T A_m] / (-i Omega_-m)``.
    """
    C = constants.C_traceless
    J = np.asarray(J, dtype=float)
    JJ = np.outer(J, J)
    Om = spec.omega
    total = np.zeros((spec.dim, spec.dim), dtype=complex)
    Mcal = np.zeros_like(total)
    unsummed = 0.0
    for m in range(1, spec.M + 1):
        for s in (m, -m):
            X = spec.A(-s).T @ JJ @ spec.A(s)
            den = p - 1j * Om * (-s)
            term = _cc(C, X / den)
            unsummed += np.linalg.norm(term)
            total += term
            Mcal += X / (1j * Om * s)
    return total, unsummed, Mcal


def derivative_terms(spec, corr: BathCorrelator, constants: StructureConstants, K: int = DERIVATIVE_ORDER,
                     p=0.0):
    """Per-order bath contributions ``k = 0..K`` of the expanded kernel at ``p``."""
    C = constants.C_traceless
    B = constants.B[1:, 1:, 1:]
    Om = spec.omega
    terms = []
    for k in range(K + 1):
        D1, D2 = corr.derivatives(k)
        X1 = np.zeros((spec.dim, spec.dim), dtype=complex)
        X2 = np.zeros_like(X1)
        if np.any(D1) or np.any(D2):
            for m in range(1, spec.M + 1):
                for s in (m, -m):
                    den = (p - 1j * Om * (-s)) ** (k + 1)
                    Am, Ap = spec.A(-s), spec.A(s)
                    X1 += Am.T @ D1 @ Ap / den
                    X2 += Am.T @ D2 @ Ap / den
        terms.append(_cc(C, X1) + _cb(C, B, X2))
    return terms


def resonant_term(spec, corr, constants, p=0.0):
    """``A_0^T L[F](p) A_0`` contribution; zero when the noise is refocused at first order."""
    C = constants.C_traceless
    B = constants.B[1:, 1:, 1:]
    A0 = spec.A(0)
    if np.linalg.norm(corr.M @ A0) < 1e-14 * max(1.0, np.linalg.norm(corr.M)):
        return np.zeros((spec.dim, spec.dim), dtype=complex)
    L1, L2 = corr.laplace_matrices(p if p != 0 else P_OFFSET / spec.period)
    return _cc(C, A0.T @ L1 @ A0) + _cb(C, B, A0.T @ L2 @ A0)


@dataclass(frozen=True)
class RatePrediction:
    eigenvalues: np.ndarray
    gamma_max: float
    Gamma0: float
    Gamma1: float
    Gamma2: float
    truncation: tuple
    kernel: np.ndarray = field(repr=False, default=None)
    term_norms: tuple = ()
    converged: bool = True


def rate_spectrum(spec, J, corr: BathCorrelator, constants: StructureConstants,
                  M: Optional[int] = None, K: int = DERIVATIVE_ORDER,
                  include_resonant: bool = True) -> RatePrediction:
    """Slow-sector kernel to quadratic order with the derivative expansion."""
    if spec.periodicity_residual > 1e-3:
        raise ValueError("sequence is not periodic (zeroth-order refocusing fails)")
    if M is not None:
        spec = spec.truncated(M)
    J = np.asarray(J, dtype=float)
    jj, _, _ = j_bilinear(spec, J, constants)
    first = _j_term(constants.C_traceless, spec.A(0).T @ J)
    terms = derivative_terms(spec, corr, constants, K)
    kernel = first + jj + sum(terms)
    if include_resonant:
        kernel = kernel + resonant_term(spec, corr, constants)
    norms = tuple(float(np.linalg.norm(t)) for t in terms)
    # roundoff-level terms carry no information about convergence
    nz = [v for v in norms if v > 1e-10 * max(norms + (0.0,))]
    converged = len(nz) < 2 or nz[-1] < nz[-2]
    if not converged:
        warnings.warn(f"derivative expansion not decreasing: {norms}", ExpansionWarning, stacklevel=2)
    ev = np.linalg.eigvals(kernel)
    tau = spec.period
    Jn = float(np.linalg.norm(J))
    return RatePrediction(
        ev,
        float(np.max(np.abs(ev.real))) if ev.size else 0.0,
        max(Jn, corr.delta0 * corr.tau0),
        max(Jn**2 * tau, corr.delta0 * tau),
        corr.delta2_0 * tau,
        (spec.M, K),
        kernel,
        norms,
        converged,
    )


def nonsingular_kernel(spec, J, corr, constants, l: int, l1: int, l2: int, p=None, cutoff: int = 8):
    """``Pi^[l]_{l1,l2}(p)`` to second order in the kernel blocks.

    ``cutoff`` bounds the intermediate harmonic ``|m1 - l| <= cutoff``.
    """
    p = complex(_p_default(spec, p))
    Om = spec.omega
    base = floquet_kernel_block(spec, J, corr, constants, p - 1j * Om * l1, l2 - l1)
    acc = base.copy()
    for m1 in range(l - cutoff, l + cutoff + 1):
        if m1 == l or abs(m1 - l1) > spec.M or abs(l2 - m1) > spec.M:
            continue
        p1 = p - 1j * Om * m1
        a = floquet_kernel_block(spec, J, corr, constants, p - 1j * Om * l1, m1 - l1)
        b = floquet_kernel_block(spec, J, corr, constants, p1, l2 - m1)
        acc += a @ b / p1
    return acc


# --- initial decoherence -----------------------------------------------------------


@dataclass(frozen=True)
class InitialDecoherence:
    q_hat: np.ndarray = field(repr=False)
    kappa: np.ndarray = field(repr=False)
    kappa_deviation: float
    q_hat_norm: float
    q_tail: float
    symmetric_estimate: Optional[float] = None

    @property
    def intercept(self) -> float:
        """Error intercept ``1 - <cos phi>`` implied by ``kappa`` (single spin)."""
        return float(-np.trace(self.kappa - np.eye(self.kappa.shape[0])).real / 2)


def q_hat(spec):
    """``sum_{m != 0} A_m / (-i Omega_m)`` and a bound on the omitted tail.

    Terms fall off at least as ``1/m^2``, so ``M |term_M|`` bounds the rest.
    """
    Om = spec.omega
    total = np.zeros((spec.dim, spec.dim), dtype=complex)
    term = total
    for m in range(1, spec.M + 1):
        term = spec.A(m) / (-1j * Om * m) + spec.A(-m) / (1j * Om * m)
        total += term
    return total.real, float(spec.M * np.linalg.norm(term))


def q_hat_time_domain(rot, A0):
    """Period average of ``int_0^t (Q - A_0)`` by trapezoid integration."""
    t = rot.times
    Q = rot.Q - A0.real
    I = integrate.cumulative_trapezoid(Q, t, axis=0, initial=0)
    return integrate.trapezoid(I, t, axis=0) / (t[-1] - t[0])


def initial_decoherence(spec, corr: BathCorrelator, constants: StructureConstants,
                        tail_tol: float = 1e-3) -> InitialDecoherence:
    q, tail = q_hat(spec)
    if tail > tail_tol * max(np.linalg.norm(q), 1e-3 * spec.period):
        warnings.warn(f"q_hat truncation tail {tail:.2e} is large", ExpansionWarning, stacklevel=2)
    C = constants.C_traceless
    F0, _ = corr.derivatives(0)
    km1 = _cc(C, q.T @ F0 @ q)
    kappa = np.eye(spec.dim) + km1
    qn = float(np.linalg.norm(q))
    sym = None
    if qn < 1e-6 * spec.period:
        F2, _ = corr.derivatives(2)
        sym = float(np.linalg.norm(F2, 2) * spec.period**4)
    return InitialDecoherence(q, kappa, float(np.linalg.norm(km1)), qn, tail, sym)


def prediction_report(rates: RatePrediction, init: InitialDecoherence) -> dict:
    ev = rates.eigenvalues
    return {
        "gamma_eigenvalues": [[float(v.real), float(v.imag)] for v in ev],
        "gamma_max": rates.gamma_max,
        "Gamma0": rates.Gamma0,
        "Gamma1": rates.Gamma1,
        "Gamma2": rates.Gamma2,
        "q_hat_norm": init.q_hat_norm,
        "kappa_deviation": init.kappa_deviation,
        "intercept": init.intercept,
        "truncation": {"M": rates.truncation[0], "K": rates.truncation[1]},
    }


def report_json(rates, init) -> str:
    return json.dumps(prediction_report(rates, init), indent=2, sort_keys=True)
