# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled SU(2) stepping for the Monte-Carlo ensemble.

Unitaries are stored as quaternions ``(w, v)`` with ``U = w - i v.sigma``.
"""

import numpy as np
from libc.math cimport sqrt, sin, cos


cdef inline void _qmul(double a0, double a1, double a2, double a3,
                       double b0, double b1, double b2, double b3,
                       double* out) noexcept nogil:
    out[0] = a0 * b0 - a1 * b1 - a2 * b2 - a3 * b3
    out[1] = a0 * b1 + b0 * a1 + a2 * b3 - a3 * b2
    out[2] = a0 * b2 + b0 * a2 + a3 * b1 - a1 * b3
    out[3] = a0 * b3 + b0 * a3 + a1 * b2 - a2 * b1


def evolve_cos_phi(double[:, ::1] ctrl, double[:, :, ::1] noise, double dt,
                   long[::1] ev_steps, double[:, ::1] ev_quats,
                   long[::1] rec_steps, double[:, ::1] u0_rec):
    """cos(phi) of ``U0^dag U`` at the record steps for every realization.

    ``ctrl`` (n, 3) is the control field, ``noise`` (R, n, 3) the noise
    paths.  Events at step k act before step k; records at step k are taken
    after the events at k.
    """
    cdef Py_ssize_t R = noise.shape[0]
    cdef Py_ssize_t n = noise.shape[1]
    cdef Py_ssize_t E = ev_steps.shape[0]
    cdef Py_ssize_t P = rec_steps.shape[0]
    out_arr = np.empty((R, P), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t r, k, ei, pi
    cdef double q[4]
    cdef double tmp[4]
    cdef double bx, by, bz, h, th, s, c, wr
    cdef double half = 0.5 * dt
    with nogil:
        for r in range(R):
            q[0] = 1.0; q[1] = 0.0; q[2] = 0.0; q[3] = 0.0
            ei = 0
            pi = 0
            for k in range(n + 1):
                while ei < E and ev_steps[ei] == k:
                    _qmul(ev_quats[ei, 0], ev_quats[ei, 1], ev_quats[ei, 2], ev_quats[ei, 3],
                          q[0], q[1], q[2], q[3], tmp)
                    q[0] = tmp[0]; q[1] = tmp[1]; q[2] = tmp[2]; q[3] = tmp[3]
                    ei += 1
                while pi < P and rec_steps[pi] == k:
                    wr = (u0_rec[pi, 0] * q[0] + u0_rec[pi, 1] * q[1]
                          + u0_rec[pi, 2] * q[2] + u0_rec[pi, 3] * q[3])
                    out[r, pi] = 2.0 * wr * wr - 1.0
                    pi += 1
                if k == n:
                    break
                bx = (ctrl[k, 0] + noise[r, k, 0]) * half
                by = (ctrl[k, 1] + noise[r, k, 1]) * half
                bz = (ctrl[k, 2] + noise[r, k, 2]) * half
                th = sqrt(bx * bx + by * by + bz * bz)
                if th > 1e-8:
                    s = sin(th) / th
                else:
                    s = 1.0 - th * th / 6.0
                c = cos(th)
                _qmul(c, s * bx, s * by, s * bz, q[0], q[1], q[2], q[3], tmp)
                q[0] = tmp[0]; q[1] = tmp[1]; q[2] = tmp[2]; q[3] = tmp[3]
    return out_arr
