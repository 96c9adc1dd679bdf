"""Pure-numpy implementation of the Monte-Carlo stepping kernel.

Same contract as the compiled ``_kernels.evolve_cos_phi``.  Instead of a
step loop it multiplies the per-step quaternions by pairwise (tree)
reduction between consecutive record steps, vectorized over realizations.
"""

import numpy as np


def qmul(a, b):
    """Quaternion product for ``U = w - i v.sigma`` (last axis of size 4)."""
    a0, a1, a2, a3 = np.moveaxis(a, -1, 0)
    b0, b1, b2, b3 = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            a0 * b0 - a1 * b1 - a2 * b2 - a3 * b3,
            a0 * b1 + b0 * a1 + a2 * b3 - a3 * b2,
            a0 * b2 + b0 * a2 + a3 * b1 - a1 * b3,
            a0 * b3 + b0 * a3 + a1 * b2 - a2 * b1,
        ],
        axis=-1,
    )


def step_quaternions(fields, dt):
    b = np.asarray(fields) * (0.5 * dt)
    th = np.sqrt(np.einsum("...i,...i->...", b, b))
    s = np.sinc(th / np.pi)
    return np.concatenate([np.cos(th)[..., None], s[..., None] * b], axis=-1)


def _reduce(x):
    """Ordered product ``x[..., L-1, :] ... x[..., 0, :]`` along axis -2."""
    while x.shape[-2] > 1:
        if x.shape[-2] % 2:
            pad = np.zeros(x.shape[:-2] + (1, 4))
            pad[..., 0] = 1.0
            x = np.concatenate([x, pad], axis=-2)
        x = qmul(x[..., 1::2, :], x[..., 0::2, :])
    return x[..., 0, :]


def evolve_cos_phi(ctrl, noise, dt, ev_steps, ev_quats, rec_steps, u0_rec):
    noise = np.asarray(noise, dtype=float)
    R, n, _ = noise.shape
    g = step_quaternions(np.asarray(ctrl)[None] + noise, dt)  # (R, n, 4)
    # events at step k < n act before step k: fold them into factor k
    for k, q in zip(ev_steps, ev_quats):
        if k < n:
            g[:, k] = qmul(g[:, k], np.broadcast_to(q, (R, 4)))
    out = np.empty((R, len(rec_steps)))
    state = np.zeros((R, 4))
    state[:, 0] = 1.0
    prev = 0
    for p, k in enumerate(rec_steps):
        if k > prev:
            state = qmul(_reduce(g[:, prev:k]), state)
            prev = k
        rec = state
        for ke, q in zip(ev_steps, ev_quats):
            if ke == k:
                rec = qmul(np.broadcast_to(q, (R, 4)), rec)
        wr = rec @ np.asarray(u0_rec[p])
        out[:, p] = 2 * wr * wr - 1
    return out


def prefix_quaternions(ctrl, dt, ev_steps, ev_quats, rec_steps):
    """Control-only states at the record steps (events at a record step included)."""
    zeros = np.zeros((1,) + np.shape(ctrl))
    g = step_quaternions(np.asarray(ctrl)[None] + zeros, dt)
    n = g.shape[1]
    for k, q in zip(ev_steps, ev_quats):
        if k < n:
            g[:, k] = qmul(g[:, k], np.asarray(q)[None])
    out = np.empty((len(rec_steps), 4))
    state = np.array([[1.0, 0, 0, 0]])
    prev = 0
    for p, k in enumerate(rec_steps):
        if k > prev:
            state = qmul(_reduce(g[:, prev:k]), state)
            prev = k
        rec = state
        for ke, q in zip(ev_steps, ev_quats):
            if ke == k:
                rec = qmul(np.asarray(q)[None], rec)
        out[p] = rec[0]
    return out
