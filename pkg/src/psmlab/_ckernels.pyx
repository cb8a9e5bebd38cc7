# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled pair-potential kernels. Semantics mirror ``_pykernels`` exactly."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def lj_energy_forces(double[:, ::1] x, double r_m, double tau, bint oscillator,
                     double min_distance):
    """Return (energy, forces, bad_i, bad_j, bad_distance); bad_i is -1 when no pair clashes."""
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double dx, dy, dz, d2, d, inv2, s6, s12, coef, energy = 0.0
    cdef double rm6 = r_m ** 6
    cdef double inv_tau = 1.0 / tau
    cdef double mx = 0.0, my = 0.0, mz = 0.0
    forces_arr = np.zeros((n, 3), dtype=np.float64)
    cdef double[:, ::1] f = forces_arr
    cdef double min2 = min_distance * min_distance

    for i in range(n):
        for j in range(i + 1, n):
            dx = x[i, 0] - x[j, 0]
            dy = x[i, 1] - x[j, 1]
            dz = x[i, 2] - x[j, 2]
            d2 = dx * dx + dy * dy + dz * dz
            if d2 < min2:
                return 0.0, forces_arr, i, j, sqrt(d2)
            inv2 = 1.0 / d2
            s6 = rm6 * inv2 * inv2 * inv2
            s12 = s6 * s6
            energy += inv_tau * (s12 - 2.0 * s6)
            # -dU/dd * (1/d) with U = (s12 - 2 s6)/tau
            coef = inv_tau * 12.0 * (s12 - s6) * inv2
            f[i, 0] += coef * dx
            f[i, 1] += coef * dy
            f[i, 2] += coef * dz
            f[j, 0] -= coef * dx
            f[j, 1] -= coef * dy
            f[j, 2] -= coef * dz

    if oscillator:
        for i in range(n):
            mx += x[i, 0]
            my += x[i, 1]
            mz += x[i, 2]
        mx /= n
        my /= n
        mz /= n
        for i in range(n):
            dx = x[i, 0] - mx
            dy = x[i, 1] - my
            dz = x[i, 2] - mz
            energy += 0.5 * (dx * dx + dy * dy + dz * dz)
            f[i, 0] -= dx
            f[i, 1] -= dy
            f[i, 2] -= dz

    return energy, forces_arr, -1, -1, 0.0


def pair_distances(double[:, :, ::1] frames):
    """Distances for every unordered pair i<j (row-major pair order) of every frame."""
    cdef Py_ssize_t s = frames.shape[0]
    cdef Py_ssize_t n = frames.shape[1]
    cdef Py_ssize_t dim = frames.shape[2]
    cdef Py_ssize_t a, i, j, k, p
    cdef double acc, diff
    out_arr = np.empty((s, n * (n - 1) // 2), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for a in range(s):
        p = 0
        for i in range(n):
            for j in range(i + 1, n):
                acc = 0.0
                for k in range(dim):
                    diff = frames[a, i, k] - frames[a, j, k]
                    acc += diff * diff
                out[a, p] = sqrt(acc)
                p += 1
    return out_arr
