"""Low-level propagation helpers shared by the analysis modules.

Fields are piecewise constant over grid steps.  A step with field vector
``v`` (components over the traceless basis) contributes the factor
``exp(-i dt v.S/2)``.  Series routines expand products of such factors in
powers of a perturbation strength ``lam`` and keep coefficients exactly up
to a given order.
"""

import numpy as np
from scipy.linalg import expm

MAX_STEP_ANGLE = np.pi / 4


class ResolutionError(ValueError):
    """Raised when a single grid step rotates the system too far."""


def su2_steps(fields, dt):
    """SU(2) factors ``exp(-i dt B.sigma/2)`` for rows of ``fields`` (..., 3).

    Works for complex field vectors as well (analytic continuation).
    """
    b = np.asarray(fields) * (0.5 * dt)
    s2 = np.einsum("...i,...i->...", b, b)
    s = np.sqrt(s2 + 0j) if np.iscomplexobj(b) else np.sqrt(s2)
    c = np.cos(s)
    sinc = np.sinc(s / np.pi) if not np.iscomplexobj(s) else _csinc(s)
    k = sinc[..., None] * b
    out = np.empty(b.shape[:-1] + (2, 2), dtype=complex)
    out[..., 0, 0] = c - 1j * k[..., 2]
    out[..., 1, 1] = c + 1j * k[..., 2]
    out[..., 0, 1] = -1j * k[..., 0] - k[..., 1]
    out[..., 1, 0] = -1j * k[..., 0] + k[..., 1]
    return out


def _csinc(z):
    small = np.abs(z) < 1e-4
    zs = np.where(small, 1.0, z)
    return np.where(small, 1 - z * z / 6 + z**4 / 120, np.sin(zs) / zs)


def step_unitaries(fields, dt, basis):
    """Per-step unitaries for arbitrary basis; SU(2) closed form when N == 2."""
    fields = np.asarray(fields)
    if basis.n_levels == 2:
        return su2_steps(fields, dt)
    H = basis.field_operator(fields)
    return expm(-1j * dt * H)


def check_step_angles(fields, dt, label="field"):
    if len(fields) == 0:
        return
    peak = np.max(np.linalg.norm(fields, axis=-1)) * dt
    if peak > MAX_STEP_ANGLE:
        raise ResolutionError(
            f"{label}: step rotation {peak:.3g} rad exceeds pi/4; refine the grid"
        )


def hard_rotation(axis_vec, angle, basis):
    """Unitary of an instantaneous rotation ``exp(-i angle n.S/2)``."""
    n = np.asarray(axis_vec, dtype=float)
    return step_unitaries(n[None, :] * angle, 1.0, basis)[0]


def cumulative_unitaries(waveform, basis):
    """Control propagator ``U0`` at every grid point ``t_k = k dt``, k=0..n.

    Hard events scheduled at step index ``k`` act at time ``t_k`` and are
    included in the value reported at ``t_k`` (right-continuous samples).
    """
    n = waveform.n_steps
    N = basis.n_levels
    steps = step_unitaries(waveform.samples, waveform.dt, basis) if n else None
    events = waveform.events_by_step()
    out = np.empty((n + 1, N, N), dtype=complex)
    U = np.eye(N, dtype=complex)
    for k in range(n + 1):
        for axis_vec, angle in events.get(k, ()):
            U = hard_rotation(axis_vec, angle, basis) @ U
        out[k] = U
        if k < n:
            U = steps[k] @ U
    return out


# --- truncated power series in the perturbation strength -------------------


def series_step_factors(fields, pert, dt, basis, order):
    """Coefficients of ``exp(-i dt (v.S + lam p.S)/2)`` up to ``lam**order``.

    Uses the block-bidiagonal exponential identity; identical rows of
    ``fields`` are evaluated once.  Returns an array (n, order+1, N, N).
    """
    fields = np.asarray(fields, dtype=float)
    N = basis.n_levels
    K = order
    uniq, inverse = np.unique(fields, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    A = -1j * dt * basis.field_operator(uniq)
    Bm = -1j * dt * basis.field_operator(np.asarray(pert, dtype=float))
    size = (K + 1) * N
    big = np.zeros((len(uniq), size, size), dtype=complex)
    for j in range(K + 1):
        big[:, j * N:(j + 1) * N, j * N:(j + 1) * N] = A
        if j < K:
            big[:, j * N:(j + 1) * N, (j + 1) * N:(j + 2) * N] = Bm
    E = expm(big)
    coeffs = np.stack(
        [E[:, 0:N, j * N:(j + 1) * N] for j in range(K + 1)], axis=1
    )
    return coeffs[inverse]


def series_mul(P, Q):
    """Truncated product ``P @ Q`` of matrix-valued polynomials (..., K+1, N, N)."""
    K = P.shape[-3] - 1
    out = np.zeros(np.broadcast_shapes(P.shape, Q.shape), dtype=complex)
    for j in range(K + 1):
        acc = 0
        for i in range(j + 1):
            acc = acc + P[..., i, :, :] @ Q[..., j - i, :, :]
        out[..., j, :, :] = acc
    return out


def series_chain(factors):
    """Time-ordered product ``F[n-1] ... F[1] F[0]`` of series factors."""
    F = np.asarray(factors)
    if F.shape[0] == 0:
        raise ValueError("empty factor list")
    while F.shape[0] > 1:
        if F.shape[0] % 2:
            last = F[-1:]
            F = F[:-1]
        else:
            last = None
        F = series_mul(F[1::2], F[0::2])
        if last is not None:
            F = np.concatenate([F, last], axis=0)
    return F[0]


def constant_series(U, order):
    """A lam-independent factor as a series."""
    N = U.shape[-1]
    out = np.zeros((order + 1, N, N), dtype=complex)
    out[0] = U
    return out


def free_series(pert, duration, basis, order):
    """Series of ``exp(-i duration lam p.S/2)``."""
    X = -1j * duration * basis.field_operator(np.asarray(pert, dtype=float))
    N = basis.n_levels
    out = np.zeros((order + 1, N, N), dtype=complex)
    term = np.eye(N, dtype=complex)
    for j in range(order + 1):
        out[j] = term
        term = term @ X / (j + 1)
    return out


def waveform_series(waveform, pert, basis, order):
    """Series of the full propagator over the waveform with static ``pert``."""
    N = basis.n_levels
    n = waveform.n_steps
    events = waveform.events_by_step()
    factors = []
    step_f = (
        series_step_factors(waveform.samples, pert, waveform.dt, basis, order)
        if n
        else np.zeros((0, order + 1, N, N))
    )
    for k in range(n + 1):
        for axis_vec, angle in events.get(k, ()):
            factors.append(constant_series(hard_rotation(axis_vec, angle, basis), order))
        if k < n:
            factors.append(step_f[k])
    if not factors:
        return constant_series(np.eye(N, dtype=complex), order)
    return series_chain(np.array(factors))
