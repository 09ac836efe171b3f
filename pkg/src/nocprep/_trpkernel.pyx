# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled DOP853 kernel for the detector-frame TRP Schrodinger equation.

Mirrors ``_pykernel.propagate_trp`` step for step. The Hamiltonian is
assembled entry by entry in the basis |00>, |01>, |10>, |11> (qubit 1 is the
most significant factor) instead of through Kronecker products.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, sqrt, fabs, floor, pow, M_PI
from libc.stdlib cimport malloc, free

from ._pykernel import A, B, C, E3, E5, N_STAGES

cnp.import_array()

cdef double SAFETY = 0.9
cdef double MIN_FACTOR = 0.2
cdef double MAX_FACTOR = 10.0
cdef double ERROR_EXPONENT = -1.0 / 8.0


cdef struct Drive:
    double twist, lam, d1, d2, d3, dz, dxy
    double *dF
    Py_ssize_t n_dF
    double dF_t0, dF_dt
    Py_ssize_t cell
    double noise


cdef inline double complex cconj(double complex z) nogil:
    return z.real - 1j * z.imag


cdef void build_h(Drive *p, double tau, double complex *H) noexcept nogil:
    cdef double phi = p.twist * tau * tau * tau * tau + p.noise
    cdef double cx = cos(phi)
    cdef double cy = sin(phi)
    cdef double fz = 0.0
    cdef double w, z1, z2, jz, jxy
    cdef Py_ssize_t i
    cdef double complex a1, a2
    if p.dF != NULL:
        i = p.cell
        w = (tau - (p.dF_t0 + i * p.dF_dt)) / p.dF_dt
        cx += (1.0 - w) * p.dF[3 * i] + w * p.dF[3 * i + 3]
        cy += (1.0 - w) * p.dF[3 * i + 1] + w * p.dF[3 * i + 4]
        fz = (1.0 - w) * p.dF[3 * i + 2] + w * p.dF[3 * i + 5]
    a1 = -(p.d3 / p.lam) * (cx + 1j * cy)
    a2 = -(1.0 / p.lam) * (cx + 1j * cy)
    z1 = -(p.d1 + p.d2) / 2.0 + tau / p.lam - (p.d3 / p.lam) * fz
    z2 = -p.d2 / 2.0 + tau / p.lam - fz / p.lam
    jz = 0.5 * M_PI * p.dz
    jxy = M_PI * p.dxy
    H[0] = z1 + z2 - jz
    H[5] = z1 - z2 + jz
    H[10] = -z1 + z2 + jz
    H[15] = -z1 - z2 - jz
    H[3] = 0.0
    H[12] = 0.0
    H[6] = -jxy
    H[9] = -jxy
    # qubit 2 flips: |a0> <-> |a1>
    H[4] = a2
    H[1] = cconj(a2)
    H[14] = a2
    H[11] = cconj(a2)
    # qubit 1 flips: |0b> <-> |1b>
    H[8] = a1
    H[2] = cconj(a1)
    H[13] = a1
    H[7] = cconj(a1)


cdef void rhs(Drive *p, double tau, double complex *y, Py_ssize_t k,
              double complex *out, double complex *H) noexcept nogil:
    cdef Py_ssize_t i, j, c
    cdef double complex acc
    build_h(p, tau, H)
    for i in range(4):
        for c in range(k):
            acc = 0.0
            for j in range(4):
                acc = acc + H[4 * i + j] * y[j * k + c]
            out[i * k + c] = -1j * acc


cdef void prepare(Drive *p, double tau_mid, double *noise_times,
                  double *noise_vals, Py_ssize_t n_noise) noexcept nogil:
    cdef Py_ssize_t i, lo, hi, mid
    if p.dF != NULL:
        i = <Py_ssize_t>floor((tau_mid - p.dF_t0) / p.dF_dt)
        if i < 0:
            i = 0
        if i > p.n_dF - 2:
            i = p.n_dF - 2
        p.cell = i
    if n_noise > 0:
        # number of event times <= tau_mid
        lo = 0
        hi = n_noise
        while lo < hi:
            mid = (lo + hi) // 2
            if noise_times[mid] <= tau_mid:
                lo = mid + 1
            else:
                hi = mid
        p.noise = noise_vals[lo - 1] if lo > 0 else 0.0


def propagate_trp(coeffs, double tau_start, double tau_end, y0, double rtol,
                  double atol, stops, store, dF=None, double dF_t0=0.0,
                  double dF_dt=1.0, noise_times=None, noise_vals=None,
                  double h0=0.0, long max_steps=10_000_000):
    """Compiled counterpart of ``_pykernel.propagate_trp`` (same contract)."""
    cdef double[::1] cf = np.ascontiguousarray(coeffs, dtype=np.float64)
    cdef cnp.ndarray[cnp.complex128_t, ndim=2] yarr = np.array(y0, dtype=np.complex128, order="C", copy=True)
    cdef double[::1] st = np.ascontiguousarray(stops, dtype=np.float64)
    cdef cnp.uint8_t[::1] sf = np.ascontiguousarray(store, dtype=np.uint8)
    cdef double[:, ::1] a_t = A
    cdef double[::1] b_t = B
    cdef double[::1] c_t = C
    cdef double[::1] e3_t = E3
    cdef double[::1] e5_t = E5
    cdef double[:, ::1] dfv
    cdef double[::1] ntv
    cdef double[::1] nvv
    cdef Py_ssize_t k = yarr.shape[1]
    cdef Py_ssize_t n = 4 * k
    cdef Py_ssize_t ns = N_STAGES
    cdef Py_ssize_t n_stops = st.shape[0]
    cdef Py_ssize_t n_store = 0
    cdef Py_ssize_t i, s, q, istop, n_noise = 0
    cdef Drive p
    cdef double complex *y = <double complex *> yarr.data
    cdef double complex *K
    cdef double complex *ynew
    cdef double complex *ytmp
    cdef double complex H[16]
    cdef double complex acc, e5c, e3c
    cdef double tau, target, h, h_nat, err, factor, proposal, sc, e5, e3, denom, ay, ayn
    cdef double *nt_ptr = NULL
    cdef double *nv_ptr = NULL
    cdef bint clipped, rejected
    cdef long n_acc = 0, n_rej = 0, nfev = 0
    cdef int status = 0
    cdef double fail_tau = tau_start

    for i in range(n_stops):
        if sf[i]:
            n_store += 1
    out = np.empty((n_store, 4, k), dtype=np.complex128)
    cdef cnp.complex128_t[:, :, ::1] outv = out
    cdef Py_ssize_t istore = 0

    p.twist = cf[0] / (2.0 * cf[1])
    p.lam = cf[1]
    p.d1 = cf[2]
    p.d2 = cf[3]
    p.d3 = cf[4]
    p.dz = cf[5]
    p.dxy = cf[6]
    p.dF = NULL
    p.n_dF = 0
    p.dF_t0 = dF_t0
    p.dF_dt = dF_dt
    p.cell = 0
    p.noise = 0.0
    if dF is not None:
        dfv = np.ascontiguousarray(dF, dtype=np.float64)
        p.dF = &dfv[0, 0]
        p.n_dF = dfv.shape[0]
    if noise_times is not None and len(noise_times) > 0:
        ntv = np.ascontiguousarray(noise_times, dtype=np.float64)
        nvv = np.ascontiguousarray(noise_vals, dtype=np.float64)
        nt_ptr = &ntv[0]
        nv_ptr = &nvv[0]
        n_noise = ntv.shape[0]

    K = <double complex *> malloc((ns + 1) * n * sizeof(double complex))
    ynew = <double complex *> malloc(n * sizeof(double complex))
    ytmp = <double complex *> malloc(n * sizeof(double complex))
    if K == NULL or ynew == NULL or ytmp == NULL:
        free(K); free(ynew); free(ytmp)
        raise MemoryError()

    with nogil:
        tau = tau_start
        h_nat = h0 if h0 > 0.0 else (0.01 if tau_end - tau_start > 0.01 else tau_end - tau_start)
        istop = 0
        while istop < n_stops:
            target = st[istop]
            if target <= tau:
                if sf[istop]:
                    for q in range(n):
                        outv[istore, q // k, q % k] = y[q]
                    istore += 1
                istop += 1
                continue
            rejected = False
            while True:
                h = h_nat
                clipped = False
                if tau + h >= target - 1e-13 * (fabs(target) if fabs(target) > 1.0 else 1.0):
                    h = target - tau
                    clipped = True
                prepare(&p, tau + 0.5 * h, nt_ptr, nv_ptr, n_noise)
                rhs(&p, tau, y, k, K, H)
                for s in range(1, ns):
                    for q in range(n):
                        acc = 0.0
                        for i in range(s):
                            acc = acc + a_t[s, i] * K[i * n + q]
                        ytmp[q] = y[q] + h * acc
                    rhs(&p, tau + c_t[s] * h, ytmp, k, &K[s * n], H)
                for q in range(n):
                    acc = 0.0
                    for i in range(ns):
                        acc = acc + b_t[i] * K[i * n + q]
                    ynew[q] = y[q] + h * acc
                rhs(&p, tau + h, ynew, k, &K[ns * n], H)
                nfev += ns + 1
                e5 = 0.0
                e3 = 0.0
                for q in range(n):
                    ay = sqrt(y[q].real * y[q].real + y[q].imag * y[q].imag)
                    ayn = sqrt(ynew[q].real * ynew[q].real + ynew[q].imag * ynew[q].imag)
                    sc = atol + rtol * (ay if ay > ayn else ayn)
                    e5c = 0.0
                    e3c = 0.0
                    for i in range(ns + 1):
                        e5c = e5c + e5_t[i] * K[i * n + q]
                        e3c = e3c + e3_t[i] * K[i * n + q]
                    e5 += (e5c.real * e5c.real + e5c.imag * e5c.imag) / (sc * sc)
                    e3 += (e3c.real * e3c.real + e3c.imag * e3c.imag) / (sc * sc)
                if e5 == 0.0 and e3 == 0.0:
                    err = 0.0
                else:
                    denom = e5 + 0.01 * e3
                    err = fabs(h) * e5 / sqrt(denom * n)
                if err <= 1.0:
                    if err == 0.0:
                        factor = MAX_FACTOR
                    else:
                        factor = SAFETY * pow(err, ERROR_EXPONENT)
                        if factor > MAX_FACTOR:
                            factor = MAX_FACTOR
                    if rejected and factor > 1.0:
                        factor = 1.0
                    proposal = h * factor
                    if clipped and factor >= 1.0:
                        if proposal > h_nat:
                            h_nat = proposal
                    else:
                        h_nat = proposal
                    for q in range(n):
                        y[q] = ynew[q]
                    tau = target if clipped else tau + h
                    n_acc += 1
                    break
                factor = SAFETY * pow(err, ERROR_EXPONENT)
                if factor < MIN_FACTOR:
                    factor = MIN_FACTOR
                h_nat = h * factor
                rejected = True
                n_rej += 1
                if h_nat < 1e-14 * (fabs(tau) if fabs(tau) > 1.0 else 1.0):
                    status = -1
                    fail_tau = tau
                    break
            if status != 0:
                break
            if n_acc + n_rej > max_steps:
                status = -2
                fail_tau = tau
                break

    free(K)
    free(ynew)
    free(ytmp)
    stats = {"n_accepted": n_acc, "n_rejected": n_rej, "nfev": nfev,
             "status": status, "fail_tau": fail_tau}
    return out[:istore], yarr, stats
