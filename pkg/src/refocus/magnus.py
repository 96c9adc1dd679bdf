"""Perturbative expansion of the toggling-frame propagator and refocusing order.

``R(tau) = U0(tau)^dag U(tau) = 1 + R_1 + R_2 + ...`` with ``R_k`` of order
``(J tau)^k``.  Two routes are provided: exact power-series coefficients for
the piecewise constant sampled control (used for order tables) and nested
quadrature of ``dR_{k+1}/dt = -i H(t) R_k`` on the grid (an independent check).
"""

import csv
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
from scipy.integrate import cumulative_simpson, cumulative_trapezoid

from . import evolution, pulses
from .algebra import OperatorBasis, build_basis

K_MAX = 10
ORDER_TOL = 1e-13
STAR_SMALL = 1e-2
STAR_VERY_SMALL = 1e-4
QUAD_TOL = 1e-6

FIELD_CONFIGS = {
    "x": np.array([1.0, 0.0, 0.0]),
    "z": np.array([0.0, 0.0, 1.0]),
    "xyz": np.ones(3) / np.sqrt(3.0),
}


class QuadratureError(ValueError):
    pass


@dataclass(frozen=True)
class PerturbativeStack:
    R_terms: np.ndarray = field(repr=False)  # (K, N, N), R_1..R_K
    scale: float  # |J| tau used
    n_levels: int = 2

    @property
    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.R_terms, axis=(-2, -1))

    @property
    def K(self) -> int:
        return self.R_terms.shape[0]


@dataclass(frozen=True)
class OrderReport:
    order: int
    norms_by_order: tuple
    cumulant_norms: tuple
    tolerance_used: float
    scale: float
    first_surviving_norm: Optional[float]
    starred: str = ""

    @property
    def order_label(self) -> str:
        return f">={self.order}" if self.first_surviving_norm is None else str(self.order)


def toggling_hamiltonian(rot, J, basis: OperatorBasis) -> np.ndarray:
    """``H(t_k) = (Q(t_k)^T J) . S / 2`` on the rotation grid."""
    J = np.asarray(J, dtype=float)
    Q = np.asarray(rot.Q if hasattr(rot, "Q") else rot)
    if J.shape != (Q.shape[-1],):
        raise ValueError(f"J must have {Q.shape[-1]} components")
    v = np.einsum("tab,a->tb", Q, J)
    return basis.field_operator(v)


def _cumulative(rule, f, dt):
    # scipy's cumulative rules are real-only
    return rule(f.real, dx=dt, axis=0, initial=0) + 1j * rule(f.imag, dx=dt, axis=0, initial=0)


def perturbative_terms(H, dt: float, K_max: int = K_MAX, scale: Optional[float] = None,
                       quad_tol: float = QUAD_TOL) -> PerturbativeStack:
    """Nested quadrature of ``R_{k+1}(t) = -i int_0^t H R_k`` on a uniform grid.

    Composite Simpson gives the cumulative integrals; the difference to the
    trapezoid rule for ``R_1(tau)`` estimates the quadrature error, which
    must stay below ``quad_tol`` relative to ``|H| tau``.
    """
    if K_max < 1 or K_max > K_MAX:
        raise ValueError(f"K_max must be in 1..{K_MAX}")
    H = np.asarray(H, dtype=complex)
    n = H.shape[0] - 1
    if n < 2:
        raise ValueError("need at least three grid points")
    N = H.shape[-1]
    tau = n * dt
    hnorm = np.abs(np.linalg.eigvalsh(H)).max()
    if scale is None:
        scale = 2 * hnorm * tau
    R = np.broadcast_to(np.eye(N, dtype=complex), H.shape)
    terms = []
    for k in range(K_max):
        integrand = -1j * np.einsum("tij,tjk->tik", H, R)
        R_next = _cumulative(cumulative_simpson, integrand, dt)
        if k == 0:
            trap = _cumulative(cumulative_trapezoid, integrand, dt)
            err = np.linalg.norm(R_next[-1] - trap[-1])
            if hnorm > 0 and err > quad_tol * hnorm * tau:
                raise QuadratureError(
                    f"estimated quadrature error {err:.2e} exceeds tolerance; refine the grid"
                )
        terms.append(R_next[-1])
        R = R_next
    return PerturbativeStack(np.array(terms), float(scale), N)


def series_terms(waveform, J, basis: OperatorBasis, K_max: int = K_MAX) -> PerturbativeStack:
    """Exact ``R_k(tau)`` for the sampled control, from truncated power series."""
    if K_max < 1 or K_max > K_MAX:
        raise ValueError(f"K_max must be in 1..{K_MAX}")
    J = np.asarray(J, dtype=float)
    S = evolution.waveform_series(waveform, J, basis, K_max)
    U0_dag = S[0].conj().T
    R = np.einsum("ij,kjl->kil", U0_dag, S[1:])
    return PerturbativeStack(R, float(np.linalg.norm(J) * waveform.period), basis.n_levels)


def cumulants(stack: PerturbativeStack) -> np.ndarray:
    """``C_1..C_K`` from ``log(1 + sum_k R_k)`` as a power series."""
    K = stack.K
    N = stack.R_terms.shape[-1]
    X = np.zeros((K + 1, N, N), dtype=complex)
    X[1:] = stack.R_terms
    out = np.zeros_like(X)
    power = X.copy()
    for j in range(1, K + 1):
        out += ((-1) ** (j + 1) / j) * power
        power = evolution.series_mul(power, X)
    return out[1:]


def naive_norm(k: int, scale: float, n_levels: int = 2) -> float:
    """Norm of an uncancelled ``k``-th term, ``sqrt(N) (scale/2)^k / k!``."""
    return math.sqrt(n_levels) * (scale / 2) ** k / math.factorial(k)


def refocusing_order(stack: PerturbativeStack, tol: float = ORDER_TOL) -> OrderReport:
    """Number of leading terms with ``|R_k| < tol * naive_norm(k)``."""
    norms = stack.norms
    order = 0
    for k, v in enumerate(norms, start=1):
        if v < tol * naive_norm(k, stack.scale, stack.n_levels):
            order = k
        else:
            break
    first = None
    star = ""
    if order < stack.K:
        first = float(norms[order])
        ratio = first / naive_norm(order + 1, stack.scale, stack.n_levels)
        if ratio < STAR_VERY_SMALL:
            star = "**"
        elif ratio < STAR_SMALL:
            star = "*"
    cn = np.linalg.norm(cumulants(stack), axis=(-2, -1))
    return OrderReport(order, tuple(float(v) for v in norms), tuple(float(v) for v in cn),
                       tol, stack.scale, first, star)


def analyze(waveform, direction, basis: Optional[OperatorBasis] = None,
            scale: float = 0.1, K_max: int = K_MAX, tol: float = ORDER_TOL) -> OrderReport:
    """Refocusing order of a waveform for a static field along ``direction``.

    ``direction`` is a field-configuration key or a vector; its strength is
    set so that ``|J| tau = scale``.
    """
    if basis is None:
        basis = build_basis(1)
    d = FIELD_CONFIGS[direction] if isinstance(direction, str) else np.asarray(direction, float)
    J = d / np.linalg.norm(d) * scale / waveform.period
    return refocusing_order(series_terms(waveform, J, basis, K_max), tol)


def order_table(sequences: Sequence[str], pulse_shapes: Dict[str, pulses.PulseShape],
                field_configs: Iterable[str] = ("x", "z", "xyz"), K_max: int = K_MAX,
                tol: float = ORDER_TOL, scale: float = 0.1) -> List[dict]:
    """Order table rows for every (sequence, pulse, field configuration)."""
    basis = build_basis(1)
    rows = []
    for seq in sequences:
        for pname, shape in pulse_shapes.items():
            wf = pulses.build_sequence(seq, shape)
            for fc in field_configs:
                rep = analyze(wf, fc, basis, scale, K_max, tol)
                rows.append({
                    "sequence": seq,
                    "pulse": pname,
                    "field_config": fc,
                    "order": rep.order_label,
                    "first_surviving_norm": rep.first_surviving_norm,
                    "star": rep.starred,
                })
    return rows


def write_order_table(path, rows: List[dict]):
    cols = ["sequence", "pulse", "field_config", "order", "first_surviving_norm", "star"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            v = r["first_surviving_norm"]
            w.writerow([r["sequence"], r["pulse"], r["field_config"], r["order"],
                        "" if v is None else repr(v), r["star"]])
