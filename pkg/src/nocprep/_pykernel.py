"""Pure-Python Dormand-Prince 8(5,3) integrator for the TRP Schrodinger equation.

This is the reference/fallback implementation of the propagation kernel. The
compiled module ``_trpkernel`` implements the same step-control algorithm; the
public entry point :func:`propagate_trp` has the same signature in both.

Conventions shared with the compiled kernel
-------------------------------------------
* ``y`` is a ``(4, k)`` complex array (``k = 4`` for a full unitary, ``k = 1``
  for a state vector).
* ``stops`` is a sorted array of breakpoints ending at ``tau_end``. A step
  never crosses a stop, so piecewise data (linearly interpolated controls,
  piecewise-constant phase noise) is smooth inside every step.
* Piecewise data is looked up once per step at the step midpoint.
"""

import math

import numpy as np
from scipy.integrate._ivp import dop853_coefficients as _dop

N_STAGES = _dop.N_STAGES
A = np.ascontiguousarray(_dop.A[:N_STAGES, :N_STAGES])
B = np.ascontiguousarray(_dop.B)
C = np.ascontiguousarray(_dop.C[:N_STAGES])
E3 = np.ascontiguousarray(_dop.E3)
E5 = np.ascontiguousarray(_dop.E5)

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0
ERROR_EXPONENT = -1.0 / 8.0

STATUS_OK = 0
STATUS_UNDERFLOW = -1
STATUS_MAX_STEPS = -2

_SX = np.array([[0, 1], [1, 0]], dtype=complex)
_SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
_SZ = np.array([[1, 0], [0, -1]], dtype=complex)
_I2 = np.eye(2, dtype=complex)
_X1, _Y1, _Z1 = (np.kron(s, _I2) for s in (_SX, _SY, _SZ))
_X2, _Y2, _Z2 = (np.kron(_I2, s) for s in (_SX, _SY, _SZ))


def _error_norm(K, h, y, y_new, rtol, atol):
    scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
    err5 = np.tensordot(E5, K, axes=1) / scale
    err3 = np.tensordot(E3, K, axes=1) / scale
    e5 = np.sum(np.abs(err5) ** 2)
    e3 = np.sum(np.abs(err3) ** 2)
    if e5 == 0.0 and e3 == 0.0:
        return 0.0
    denom = e5 + 0.01 * e3
    return abs(h) * e5 / math.sqrt(denom * y.size)


def integrate(rhs, tau_start, tau_end, y0, rtol, atol, stops, store, h0=0.0,
              max_steps=10_000_000, prepare=None):
    """Adaptive DOP853 integration of ``dy/dtau = rhs(tau, y)``.

    ``prepare(tau_mid)``, when given, is called once per attempted step
    before any stage evaluation so ``rhs`` can cache piecewise data.

    Returns ``(stored, y_final, stats)``; ``stored`` holds ``y`` at every stop
    whose ``store`` flag is set, in order.
    """
    y = np.array(y0, dtype=complex, copy=True)
    span = tau_end - tau_start
    h_nat = h0 if h0 > 0.0 else min(0.01, span)
    stored = []
    K = np.empty((N_STAGES + 1,) + y.shape, dtype=complex)
    tau = tau_start
    istop = 0
    n_acc = n_rej = nfev = 0
    status = STATUS_OK
    fail_tau = tau
    while istop < len(stops):
        target = stops[istop]
        if target <= tau:
            if store[istop]:
                stored.append(y.copy())
            istop += 1
            continue
        rejected = False
        while True:
            h = h_nat
            clipped = False
            if tau + h >= target - 1e-13 * max(1.0, abs(target)):
                h = target - tau
                clipped = True
            if prepare is not None:
                prepare(tau + 0.5 * h)
            K[0] = rhs(tau, y)
            for s in range(1, N_STAGES):
                dy = np.tensordot(A[s, :s], K[:s], axes=1) * h
                K[s] = rhs(tau + C[s] * h, y + dy)
            y_new = y + h * np.tensordot(B, K[:N_STAGES], axes=1)
            K[N_STAGES] = rhs(tau + h, y_new)
            nfev += N_STAGES + 1
            err = _error_norm(K, h, y, y_new, rtol, atol)
            if err <= 1.0:
                if err == 0.0:
                    factor = MAX_FACTOR
                else:
                    factor = min(MAX_FACTOR, SAFETY * err ** ERROR_EXPONENT)
                if rejected:
                    factor = min(1.0, factor)
                proposal = h * factor
                if clipped and factor >= 1.0:
                    h_nat = max(h_nat, proposal)
                else:
                    h_nat = proposal
                y = y_new
                tau = target if clipped else tau + h
                n_acc += 1
                break
            h_nat = h * max(MIN_FACTOR, SAFETY * err ** ERROR_EXPONENT)
            rejected = True
            n_rej += 1
            if h_nat < 1e-14 * max(1.0, abs(tau)):
                status = STATUS_UNDERFLOW
                fail_tau = tau
                break
        if status != STATUS_OK:
            break
        if n_acc + n_rej > max_steps:
            status = STATUS_MAX_STEPS
            fail_tau = tau
            break
    stats = {"n_accepted": n_acc, "n_rejected": n_rej, "nfev": nfev,
             "status": status, "fail_tau": fail_tau}
    if stored:
        out = np.stack(stored)
    else:
        out = np.empty((0,) + y.shape, dtype=complex)
    return out, y, stats


class _TrpRhs:
    """Right-hand side ``-i H(tau) y`` of the detector-frame TRP Hamiltonian."""

    def __init__(self, coeffs, dF, dF_t0, dF_dt, noise_times, noise_vals):
        eta4, lam, d1, d2, d3, dz, dxy = (float(c) for c in coeffs)
        self.twist = eta4 / (2.0 * lam)
        self.lam = lam
        self.d3 = d3
        self.static = (-(d1 + d2) / 2.0 * _Z1 - d2 / 2.0 * _Z2
                       - 0.5 * math.pi * (dz * _Z1 @ _Z2 + dxy * (_X1 @ _X2 + _Y1 @ _Y2)))
        self.zsum = (_Z1 + _Z2) / lam
        self.gx = -(d3 * _X1 + _X2) / lam
        self.gy = -(d3 * _Y1 + _Y2) / lam
        self.gz = -(d3 * _Z1 + _Z2) / lam
        self.dF = dF
        self.dF_t0 = dF_t0
        self.dF_dt = dF_dt
        self.noise_times = noise_times
        self.noise_vals = noise_vals
        self.cell = 0
        self.noise = 0.0

    def prepare(self, tau_mid):
        if self.dF is not None:
            n = self.dF.shape[0]
            i = int(math.floor((tau_mid - self.dF_t0) / self.dF_dt))
            self.cell = min(max(i, 0), n - 2)
        if self.noise_times is not None and len(self.noise_times):
            j = int(np.searchsorted(self.noise_times, tau_mid, side="right"))
            self.noise = self.noise_vals[j - 1] if j > 0 else 0.0

    def hamiltonian(self, tau):
        phi = self.twist * tau ** 4 + self.noise
        cx, cy = math.cos(phi), math.sin(phi)
        h = self.static + tau * self.zsum + cx * self.gx + cy * self.gy
        if self.dF is not None:
            i = self.cell
            w = (tau - (self.dF_t0 + i * self.dF_dt)) / self.dF_dt
            f = (1.0 - w) * self.dF[i] + w * self.dF[i + 1]
            h = h + f[0] * self.gx + f[1] * self.gy + f[2] * self.gz
        return h

    def __call__(self, tau, y):
        return -1j * (self.hamiltonian(tau) @ y)


def propagate_trp(coeffs, tau_start, tau_end, y0, rtol, atol, stops, store,
                  dF=None, dF_t0=0.0, dF_dt=1.0, noise_times=None,
                  noise_vals=None, h0=0.0, max_steps=10_000_000):
    """Integrate ``i dy/dtau = H(tau) y`` for the TRP Hamiltonian.

    ``coeffs`` is ``(eta4, lam, d1, d2, d3, dz, dxy)``. ``dF`` is an optional
    ``(n, 3)`` control modification sampled on the uniform grid
    ``dF_t0 + i * dF_dt``; ``noise_vals[j]`` is the twist phase offset on
    ``[noise_times[j], noise_times[j+1])``.
    """
    rhs = _TrpRhs(coeffs, dF, dF_t0, dF_dt, noise_times, noise_vals)
    return integrate(rhs, tau_start, tau_end, y0, rtol, atol,
                     np.asarray(stops, dtype=float), np.asarray(store, dtype=bool),
                     h0=h0, max_steps=max_steps, prepare=rhs.prepare)
