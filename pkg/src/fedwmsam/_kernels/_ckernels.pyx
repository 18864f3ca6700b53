# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops.

``quad_local_steps`` runs one client's local epoch on a diagonal quadratic
``0.5 * sum(a * (x - b)**2)`` with pre-drawn gradient noise.  The operation
order matches ``_pykernels.quad_local_steps`` step for step.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, NAN

cnp.import_array()

DEF PERT_NONE = 0
DEF PERT_SAM = 1
DEF PERT_MOMENTUM = 2


def quad_local_steps(const double[::1] x_r, const double[::1] mom,
                     const double[::1] a, const double[::1] b,
                     const double[:, ::1] noise, const double[::1] shift,
                     int steps, double eta, double alpha, double rho,
                     int pert, bint blend, bint use_shift, double eps_zero):
    cdef Py_ssize_t d = x_r.shape[0]
    cdef bint noisy = noise.shape[0] > 0
    x_np = np.array(x_r, dtype=np.float64)
    z_np = np.empty(d, dtype=np.float64)
    e_np = np.empty(d, dtype=np.float64)
    loss_np = np.empty(steps, dtype=np.float64)
    pn_np = np.full(steps, NAN, dtype=np.float64)
    dn_np = np.full(steps, NAN, dtype=np.float64)
    cdef double[::1] x = x_np
    cdef double[::1] z = z_np
    cdef double[::1] e = e_np
    cdef double[::1] loss = loss_np
    cdef double[::1] pnorm = pn_np
    cdef double[::1] dnorm = dn_np
    cdef Py_ssize_t s, j
    cdef double nd, scale, acc, r, g, v, fb, one_m_alpha = 1.0 - alpha
    with nogil:
        for s in range(steps):
            nd = 0.0
            if pert == PERT_MOMENTUM:
                fb = <double>s
                for j in range(d):
                    e[j] = (x_r[j] + fb * mom[j]) - x[j]
                    nd += e[j] * e[j]
            elif pert == PERT_SAM:
                for j in range(d):
                    e[j] = a[j] * (x[j] - b[j])
                    if noisy:
                        e[j] = e[j] + noise[s, j]
                    nd += e[j] * e[j]
            if pert != PERT_NONE:
                nd = sqrt(nd)
                dnorm[s] = nd
            if pert != PERT_NONE and nd >= eps_zero:
                scale = rho / nd
                acc = 0.0
                for j in range(d):
                    e[j] = e[j] * scale
                    acc += e[j] * e[j]
                    z[j] = x[j] + e[j]
                pnorm[s] = sqrt(acc)
            else:
                for j in range(d):
                    z[j] = x[j]
            acc = 0.0
            for j in range(d):
                r = z[j] - b[j]
                g = a[j] * r
                acc += g * r
                if noisy:
                    g = g + noise[s, j]
                if use_shift:
                    g = g + shift[j]
                if blend:
                    v = alpha * g + one_m_alpha * mom[j]
                else:
                    v = g
                x[j] = x[j] - eta * v
            loss[s] = 0.5 * acc
    return x_np, loss_np, pn_np, dn_np


def subset_mean_sq(const double[:, ::1] V, int s):
    """Average of ||mean(V[S])||^2 over all size-``s`` subsets S of the rows.

    Subsets are visited in lexicographic order; the running sum vector is
    rebuilt from scratch for every subset so no cancellation error builds up.
    """
    cdef Py_ssize_t N = V.shape[0], d = V.shape[1]
    if s < 1 or s > N:
        raise ValueError("need 1 <= s <= N")
    idx_np = np.arange(s, dtype=np.intp)
    acc_np = np.zeros(d, dtype=np.float64)
    cdef Py_ssize_t[::1] idx = idx_np
    cdef double[::1] acc = acc_np
    cdef Py_ssize_t i, j, k
    cdef double total = 0.0, sq, inv_s = 1.0 / s
    cdef long count = 0
    with nogil:
        while True:
            for j in range(d):
                acc[j] = 0.0
            for k in range(s):
                for j in range(d):
                    acc[j] += V[idx[k], j]
            sq = 0.0
            for j in range(d):
                sq += (acc[j] * inv_s) * (acc[j] * inv_s)
            total += sq
            count += 1
            # advance to the next combination
            i = s - 1
            while i >= 0 and idx[i] == N - s + i:
                i -= 1
            if i < 0:
                break
            idx[i] += 1
            for k in range(i + 1, s):
                idx[k] = idx[k - 1] + 1
    return total / count
