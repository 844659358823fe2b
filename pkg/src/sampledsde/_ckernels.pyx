# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled coupled-path kernel for the builtin models.

Mirrors ``integrators.coupled_metrics_batch``: same update order, one path at
a time, streaming the error metrics instead of storing Z.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, fabs, isfinite, NAN

cnp.import_array()

cdef enum Kind:
    SCALAR_LINEAR = 0
    PENDULUM = 1

KINDS = {"scalar_linear": SCALAR_LINEAR, "pendulum": PENDULUM}


cdef inline void _drift_linear(double a, double k, const double* x, const double* y,
                               double* out) noexcept nogil:
    out[0] = a * x[0] + 1.0 * (-k * y[0])


cdef inline void _drift_pendulum(const double* x, const double* y, double* out) noexcept nogil:
    cdef double cy = cos(y[0])
    cdef double u = 2.0 * sin(y[0]) + 1.35 * y[1] * cy * cy - 0.22 * y[1] * cy
    out[0] = x[1] + 0.0 * u
    out[1] = sin(x[0]) + (-cos(x[0])) * u


def coupled_paths(str kind, dict params, const double[::1] x0, const double[::1] h,
                  const cnp.intp_t[::1] sample_index, const double[:, :, ::1] dW, double eps,
                  const double[:, ::1] x_lim, A, b, S, bint with_z):
    """Per-path ``(lln_sup, clt_sup, terminal)`` for a batch of coupled runs.

    ``dW`` has shape ``(n_paths, n_steps, n)``. ``A, b, S`` are the fluctuation
    coefficients on the grid (ignored unless ``with_z``).
    """
    if kind not in KINDS:
        raise KeyError(f"no compiled kernel for model {kind!r}")
    cdef int code = KINDS[kind]
    cdef Py_ssize_t n_paths = dW.shape[0]
    cdef Py_ssize_t n_steps = dW.shape[1]
    cdef Py_ssize_t n = dW.shape[2]
    cdef Py_ssize_t n_nodes = n_steps + 1
    if x0.shape[0] != n or h.shape[0] != n_steps or sample_index.shape[0] != n_nodes:
        raise ValueError("inconsistent array shapes")
    if (code == SCALAR_LINEAR and n != 1) or (code == PENDULUM and n != 2):
        raise ValueError("state dimension does not match the model")

    cdef double a = 0.0, k = 0.0, s = 1.0
    if code == SCALAR_LINEAR:
        a = params["a"]
        k = params["k"]
        s = params.get("sigma", 1.0)

    cdef const double[:, :, ::1] Av
    cdef const double[:, ::1] bv
    cdef const double[:, :, ::1] Sv
    if with_z:
        Av = np.ascontiguousarray(A, dtype=float)
        bv = np.ascontiguousarray(b, dtype=float)
        Sv = np.ascontiguousarray(S, dtype=float)

    lln_out = np.empty(n_paths)
    clt_out = np.full(n_paths, np.nan)
    term_out = np.empty((n_paths, n))
    cdef double[::1] lln = lln_out
    cdef double[::1] clt = clt_out
    cdef double[:, ::1] term = term_out

    X_buf = np.empty((n_nodes, n))
    cdef double[:, ::1] X = X_buf
    cdef double[8] z, znew, drift, held, r
    if n > 8:
        raise ValueError("state dimension too large for the compiled kernel")

    cdef Py_ssize_t p, i, j, q
    cdef double acc, acc_r, best, best_r, noise, dz
    cdef bint bad
    with nogil:
        for p in range(n_paths):
            for j in range(n):
                X[0, j] = x0[j]
                z[j] = 0.0
            best = 0.0
            best_r = 0.0
            bad = False
            for i in range(n_nodes):
                # metrics at node i
                acc = 0.0
                acc_r = 0.0
                for j in range(n):
                    r[j] = X[i, j] - x_lim[i, j]
                    acc = acc + fabs(r[j])
                    if with_z:
                        r[j] = r[j] - eps * z[j]
                        acc_r = acc_r + fabs(r[j])
                if not isfinite(acc) or not isfinite(acc_r):
                    bad = True
                    break
                if acc > best:
                    best = acc
                if acc_r > best_r:
                    best_r = acc_r
                if i == n_steps:
                    break
                # sampled SDE step
                q = sample_index[i]
                for j in range(n):
                    held[j] = X[q, j]
                if code == SCALAR_LINEAR:
                    _drift_linear(a, k, &X[i, 0], held, drift)
                    X[i + 1, 0] = X[i, 0] + drift[0] * h[i] + eps * (s * dW[p, i, 0])
                else:
                    _drift_pendulum(&X[i, 0], held, drift)
                    for j in range(n):
                        X[i + 1, j] = X[i, j] + drift[j] * h[i] + eps * dW[p, i, j]
                # fluctuation step
                if with_z:
                    for j in range(n):
                        dz = bv[i, j]
                        noise = 0.0
                        for q in range(n):
                            dz = dz + Av[i, j, q] * z[q]
                            noise = noise + Sv[i, j, q] * dW[p, i, q]
                        znew[j] = z[j] + dz * h[i] + noise
                    for j in range(n):
                        z[j] = znew[j]
            if bad:
                lln[p] = NAN
                clt[p] = NAN
                for j in range(n):
                    term[p, j] = NAN
            else:
                lln[p] = best
                if with_z:
                    clt[p] = best_r / eps
                for j in range(n):
                    term[p, j] = r[j]
    return lln_out, clt_out, term_out
